//! Reverse-mode gradients of the full model.
//!
//! The recurrence is differentiated on the converged trajectory (exact BPTT).
//! Because each step's Jacobian is diagonal, the adjoint recursion
//! `adj_t = g_t + λ_{t+1}∘adj_{t+1}` is itself a diagonal affine recurrence
//! and runs on the reverse prefix scan.

use rayon::prelude::*;

use crate::cell::Cell;
use crate::error::{Error, Result};
use crate::network::{
    affine_norm_into, gelu, gelu_grad, layer_norm_backward, ActivationCache, GradientSet,
    ModelParams, Pooling, SequenceCache,
};
use crate::scan::{reverse_scan_affine_flat, DEFAULT_BLOCK};
use crate::tensor::Matrix;

fn shifted_lambdas(lambdas: &Matrix) -> Vec<f64> {
    let d = lambdas.cols();
    let t_len = lambdas.rows();
    let mut a_next = vec![0.0; t_len * d];
    if t_len > 1 {
        a_next[..(t_len - 1) * d].copy_from_slice(&lambdas.as_slice()[d..]);
    }
    a_next
}

/// `a_t = (∏_{s>t} λ_s)∘seed` for `t = 0..T`, so `a_{T-1} = seed`.
pub fn adjoint_reverse_scan(lambdas: &Matrix, seed_grad: &[f64]) -> Result<Matrix> {
    let d = lambdas.cols();
    if seed_grad.len() != d {
        return Err(Error::config(format!(
            "seed gradient has length {}, lambdas have {d} columns",
            seed_grad.len()
        )));
    }
    if lambdas.rows() == 0 {
        return Err(Error::config("lambdas must have at least one row"));
    }
    let mut a_next = shifted_lambdas(lambdas);
    let t_len = lambdas.rows();
    a_next[(t_len - 1) * d..].fill(1.0);
    let zeros = vec![0.0; t_len * d];
    let (out, _) = reverse_scan_affine_flat(&a_next, &zeros, d, seed_grad, DEFAULT_BLOCK);
    Ok(Matrix::from_vec(t_len, d, out))
}

/// Full BPTT adjoint `adj_t = g_t + λ_{t+1}∘adj_{t+1}` for per-step
/// gradients `g` (both `T × D`).
pub fn bptt_adjoint(lambdas: &Matrix, step_grads: &Matrix, block: usize) -> Matrix {
    let d = lambdas.cols();
    let a_next = shifted_lambdas(lambdas);
    let (out, _) = reverse_scan_affine_flat(&a_next, step_grads.as_slice(), d, &vec![0.0; d], block);
    Matrix::from_vec(lambdas.rows(), d, out)
}

fn sequence_backward(
    params: &ModelParams,
    cache: &ActivationCache,
    seq: &SequenceCache,
    d_logits: &[f64],
) -> GradientSet {
    let cfg = &cache.config;
    let h = params.encoder.output_dim();
    let t_len = seq.seq_len;
    let mut g = GradientSet::zeros_like(params);

    let mut post = vec![0.0; h];
    affine_norm_into(&params.post_norm, &seq.post_xhat, &mut post);
    let mut d_post = vec![0.0; h];
    params
        .decoder
        .backward_acc(&post, d_logits, &mut g.params.decoder, &mut d_post);
    let mut d_feat = vec![0.0; h];
    layer_norm_backward(
        &params.post_norm,
        &seq.post_xhat,
        seq.post_rstd,
        &d_post,
        &mut g.params.post_norm,
        &mut d_feat,
    );

    let mut d_seq = Matrix::zeros(t_len, h);
    match cfg.pooling {
        Pooling::Last => d_seq.row_mut(t_len - 1).copy_from_slice(&d_feat),
        Pooling::Mean => {
            let inv = 1.0 / t_len as f64;
            for t in 0..t_len {
                for (o, v) in d_seq.row_mut(t).iter_mut().zip(&d_feat) {
                    *o = v * inv;
                }
            }
        }
    }

    for (l, (bp, bc)) in params.blocks.iter().zip(&seq.blocks).enumerate().rev() {
        let d = bp.lrc.state_dim();
        let gb = &mut g.params.blocks[l];

        let mut d_states = Matrix::zeros(t_len, d);
        let mut act = vec![0.0; h];
        let mut d_act = vec![0.0; h];
        for t in 0..t_len {
            let d_out = d_seq.row(t);
            if d_out.iter().all(|&v| v == 0.0) {
                continue;
            }
            let pre = bc.mlp_pre.row(t);
            for (a, z) in act.iter_mut().zip(pre) {
                *a = gelu(*z);
            }
            d_act.fill(0.0);
            bp.mlp_out.backward_acc(&act, d_out, &mut gb.mlp_out, &mut d_act);
            for (da, z) in d_act.iter_mut().zip(pre) {
                *da *= gelu_grad(*z);
            }
            bp.mlp_in
                .backward_acc(bc.states.row(t), &d_act, &mut gb.mlp_in, d_states.row_mut(t));
        }

        let adj = bptt_adjoint(&bc.lambdas, &d_states, cfg.solver.block);
        for ((gx, lam), a) in g.grad_x0[l].iter_mut().zip(bc.lambdas.row(0)).zip(adj.row(0)) {
            *gx += lam * a;
        }

        let cell = Cell::new(&bp.lrc, cfg.cell_options());
        let x0 = vec![0.0; d];
        let mut u = vec![0.0; h];
        let mut d_u = vec![0.0; h];
        let mut scratch = vec![0.0; d];
        for t in 0..t_len {
            let upstream = adj.row(t);
            if upstream.iter().all(|&v| v == 0.0) {
                continue;
            }
            let x_prev = if t == 0 { &x0[..] } else { bc.states.row(t - 1) };
            affine_norm_into(&bp.norm, bc.xhat.row(t), &mut u);
            d_u.fill(0.0);
            cell.step_backward_acc(
                x_prev,
                &u,
                bc.drive.gate.row(t),
                bc.drive.elastance.row(t),
                upstream,
                &mut gb.lrc,
                &mut d_u,
                &mut scratch,
            );
            layer_norm_backward(
                &bp.norm,
                bc.xhat.row(t),
                bc.rstd[t],
                &d_u,
                &mut gb.norm,
                d_seq.row_mut(t),
            );
        }
    }

    let mut d_in = vec![0.0; params.encoder.input_dim()];
    for t in 0..t_len {
        params
            .encoder
            .backward_acc(seq.inputs.row(t), d_seq.row(t), &mut g.params.encoder, &mut d_in);
    }
    g
}

/// Gradients of `Σ_b Σ_c d_logits[b,c]·logits[b,c]` with respect to every
/// parameter, for the parameters that produced `cache`.
///
/// Per-sequence gradients are computed in parallel and summed in batch
/// order, so the result does not depend on the thread count.
pub fn model_backward(
    params: &ModelParams,
    cache: &ActivationCache,
    d_logits: &Matrix,
) -> Result<GradientSet> {
    if params.fingerprint() != cache.fingerprint {
        return Err(Error::Usage(
            "activation cache was produced with different parameters".into(),
        ));
    }
    if d_logits.rows() != cache.sequences.len() || d_logits.cols() != params.decoder.output_dim() {
        return Err(Error::Usage(format!(
            "d_logits is {}x{}, cache holds {} sequences with {} classes",
            d_logits.rows(),
            d_logits.cols(),
            cache.sequences.len(),
            params.decoder.output_dim()
        )));
    }
    let parts: Vec<GradientSet> = cache
        .sequences
        .par_iter()
        .enumerate()
        .map(|(b, seq)| sequence_backward(params, cache, seq, d_logits.row(b)))
        .collect();
    let mut total = GradientSet::zeros_like(params);
    for p in &parts {
        total.add_assign(p);
    }
    Ok(total)
}
