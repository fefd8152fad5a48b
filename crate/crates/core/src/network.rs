//! The stacked classifier: encoder, `L` blocks of
//! (pre-norm → LRC → MLP, with a skip connection), post-norm and decoder.

use std::hash::{DefaultHasher, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{Cell, CellOptions, DependenceMode, LrcLayerParams};
use crate::error::{Error, Result};
use crate::solver::{solve_with_drive, SequenceDrive, SolveReport, SolverConfig};
use crate::tensor::{Affine, Matrix};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Sequence-to-vector reduction before the post-norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Last,
    Mean,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Last => "last",
            Pooling::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Pooling::Last),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::config(format!(
                "unknown pooling '{other}' (expected last or mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub state_dim: usize,
    pub num_blocks: usize,
    pub num_classes: usize,
    pub dt: f64,
    pub dependence_mode: DependenceMode,
    pub rho_clamp: Option<f64>,
    pub solver: SolverConfig,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden_dim: 16,
            state_dim: 16,
            num_blocks: 2,
            num_classes: 2,
            dt: 1.0,
            dependence_mode: DependenceMode::Full,
            rho_clamp: None,
            solver: SolverConfig::default(),
            pooling: Pooling::Last,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn cell_options(&self) -> CellOptions {
        CellOptions {
            dt: self.dt,
            mode: self.dependence_mode,
            rho_clamp: self.rho_clamp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("state_dim", self.state_dim),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be >= 1")));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("model.dt must be > 0, got {}", self.dt)));
        }
        self.cell_options().validate()?;
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(h: usize) -> Self {
        Self {
            scale: vec![1.0; h],
            offset: vec![0.0; h],
        }
    }

    fn zeros(h: usize) -> Self {
        Self {
            scale: vec![0.0; h],
            offset: vec![0.0; h],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub norm: LayerNorm,
    pub lrc: LrcLayerParams,
    /// `D → H`
    pub mlp_in: Affine,
    /// `H → H`
    pub mlp_out: Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `p → H`
    pub encoder: Affine,
    pub blocks: Vec<BlockParams>,
    pub post_norm: LayerNorm,
    /// `H → C`
    pub decoder: Affine,
}

impl ModelParams {
    /// Zero-valued parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (p, h, d, c) = (cfg.input_dim, cfg.hidden_dim, cfg.state_dim, cfg.num_classes);
        Self {
            encoder: Affine::zeros(p, h),
            blocks: (0..cfg.num_blocks)
                .map(|_| BlockParams {
                    norm: LayerNorm::zeros(h),
                    lrc: LrcLayerParams::zeros(d, h),
                    mlp_in: Affine::zeros(d, h),
                    mlp_out: Affine::zeros(h, h),
                })
                .collect(),
            post_norm: LayerNorm::zeros(h),
            decoder: Affine::zeros(h, c),
        }
    }

    /// Every parameter array with a stable dotted name, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("encoder.weight".into(), self.encoder.weight.as_slice()),
            ("encoder.bias".into(), &self.encoder.bias),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{l}.norm.scale"), &b.norm.scale));
            out.push((format!("block{l}.norm.offset"), &b.norm.offset));
            for (name, t) in b.lrc.tensors() {
                out.push((format!("block{l}.lrc.{name}"), t));
            }
            out.push((format!("block{l}.mlp_in.weight"), b.mlp_in.weight.as_slice()));
            out.push((format!("block{l}.mlp_in.bias"), &b.mlp_in.bias));
            out.push((format!("block{l}.mlp_out.weight"), b.mlp_out.weight.as_slice()));
            out.push((format!("block{l}.mlp_out.bias"), &b.mlp_out.bias));
        }
        out.push(("post_norm.scale".into(), &self.post_norm.scale));
        out.push(("post_norm.offset".into(), &self.post_norm.offset));
        out.push(("decoder.weight".into(), self.decoder.weight.as_slice()));
        out.push(("decoder.bias".into(), &self.decoder.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("encoder.weight".into(), self.encoder.weight.as_mut_slice()),
            ("encoder.bias".into(), &mut self.encoder.bias),
        ];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{l}.norm.scale"), &mut b.norm.scale));
            out.push((format!("block{l}.norm.offset"), &mut b.norm.offset));
            for (name, t) in b.lrc.tensors_mut() {
                out.push((format!("block{l}.lrc.{name}"), t));
            }
            out.push((format!("block{l}.mlp_in.weight"), b.mlp_in.weight.as_mut_slice()));
            out.push((format!("block{l}.mlp_in.bias"), &mut b.mlp_in.bias));
            out.push((format!("block{l}.mlp_out.weight"), b.mlp_out.weight.as_mut_slice()));
            out.push((format!("block{l}.mlp_out.bias"), &mut b.mlp_out.bias));
        }
        out.push(("post_norm.scale".into(), &mut self.post_norm.scale));
        out.push(("post_norm.offset".into(), &mut self.post_norm.offset));
        out.push(("decoder.weight".into(), self.decoder.weight.as_mut_slice()));
        out.push(("decoder.bias".into(), &mut self.decoder.bias));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Flattened copy of every parameter, in [`ModelParams::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    /// Hash of the exact bit patterns of all parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (_, t) in self.tensors() {
            h.write_usize(t.len());
            for v in t {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    /// Checks shapes against `cfg` and that every entry is finite.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = ModelParams::zeros(cfg);
        let mine = self.tensors();
        let want = reference.tensors();
        if mine.len() != want.len() {
            return Err(Error::config(format!(
                "parameters hold {} arrays, config implies {}",
                mine.len(),
                want.len()
            )));
        }
        for ((name, t), (_, w)) in mine.iter().zip(&want) {
            if t.len() != w.len() {
                return Err(Error::config(format!(
                    "parameter {name} has {} entries, config implies {}",
                    t.len(),
                    w.len()
                )));
            }
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow {
                    context: format!("parameter {name}"),
                    index: i,
                });
            }
        }
        Ok(())
    }
}

fn fill_uniform(rng: &mut ChaCha8Rng, xs: &mut [f64], lo: f64, hi: f64) {
    for v in xs {
        *v = rng.random_range(lo..hi);
    }
}

fn init_affine(rng: &mut ChaCha8Rng, a: &mut Affine) {
    let bound = 1.0 / (a.input_dim() as f64).sqrt();
    fill_uniform(rng, a.weight.as_mut_slice(), -bound, bound);
}

/// Seeded initialization.
///
/// Affine weights (including the LRC input matrices) are uniform in
/// `±1/√fan_in`; `a_x`, `w_x` in `±0.5`; the four gains in `[0, 1)`;
/// `g_leak = 0.1`; `e_leak` in `±1`; biases and offsets 0; norm scales 1.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = ModelParams::zeros(cfg);
    init_affine(&mut rng, &mut p.encoder);
    for b in &mut p.blocks {
        b.norm = LayerNorm::identity(cfg.hidden_dim);
        let lrc = &mut b.lrc;
        for g in [&mut lrc.g_max_x, &mut lrc.g_max_u, &mut lrc.k_max_x, &mut lrc.k_max_u] {
            fill_uniform(&mut rng, g, 0.0, 1.0);
        }
        fill_uniform(&mut rng, &mut lrc.a_x, -0.5, 0.5);
        fill_uniform(&mut rng, &mut lrc.w_x, -0.5, 0.5);
        let bound = 1.0 / (cfg.hidden_dim as f64).sqrt();
        fill_uniform(&mut rng, lrc.a_u.as_mut_slice(), -bound, bound);
        fill_uniform(&mut rng, lrc.w_u.as_mut_slice(), -bound, bound);
        lrc.g_leak.fill(0.1);
        fill_uniform(&mut rng, &mut lrc.e_leak, -1.0, 1.0);
        init_affine(&mut rng, &mut b.mlp_in);
        init_affine(&mut rng, &mut b.mlp_out);
    }
    p.post_norm = LayerNorm::identity(cfg.hidden_dim);
    init_affine(&mut rng, &mut p.decoder);
    Ok(p)
}

/// Normalized features and `1/σ` of one layer-norm application.
pub(crate) fn normalize_into(x: &[f64], xhat: &mut [f64]) -> f64 {
    let h = x.len() as f64;
    let mean = x.iter().sum::<f64>() / h;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for (o, v) in xhat.iter_mut().zip(x) {
        *o = (v - mean) * rstd;
    }
    rstd
}

pub(crate) fn affine_norm_into(norm: &LayerNorm, xhat: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] = norm.scale[i] * xhat[i] + norm.offset[i];
    }
}

/// Layer normalization over features with `ε = 1e-5` in the variance.
pub fn layer_norm(x: &[f64], scale: &[f64], offset: &[f64]) -> Vec<f64> {
    let mut xhat = vec![0.0; x.len()];
    normalize_into(x, &mut xhat);
    xhat.iter()
        .zip(scale.iter().zip(offset))
        .map(|(v, (s, o))| s * v + o)
        .collect()
}

/// Accumulates scale/offset gradients; adds the input gradient to `d_x`.
pub(crate) fn layer_norm_backward(
    norm: &LayerNorm,
    xhat: &[f64],
    rstd: f64,
    d_y: &[f64],
    grad: &mut LayerNorm,
    d_x: &mut [f64],
) {
    let h = xhat.len() as f64;
    let mut mean_d = 0.0;
    let mut mean_dx = 0.0;
    for i in 0..xhat.len() {
        grad.scale[i] += d_y[i] * xhat[i];
        grad.offset[i] += d_y[i];
        let dxh = d_y[i] * norm.scale[i];
        mean_d += dxh;
        mean_dx += dxh * xhat[i];
    }
    mean_d /= h;
    mean_dx /= h;
    for i in 0..xhat.len() {
        let dxh = d_y[i] * norm.scale[i];
        d_x[i] += rstd * (dxh - mean_d - xhat[i] * mean_dx);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Per-block activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    /// Normalized (pre scale/offset) LRC inputs, `T × H`.
    pub xhat: Matrix,
    pub rstd: Vec<f64>,
    pub drive: SequenceDrive,
    /// LRC trajectory, `T × D`.
    pub states: Matrix,
    /// `∂x_t/∂x_{t-1}` along the trajectory, `T × D`.
    pub lambdas: Matrix,
    /// MLP hidden pre-activations, `T × H`.
    pub mlp_pre: Matrix,
    pub report: SolveReport,
}

/// Activations of one sequence.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    pub inputs: Matrix,
    pub blocks: Vec<BlockCache>,
    /// Pooled feature before the post-norm.
    pub feature: Vec<f64>,
    pub post_xhat: Vec<f64>,
    pub post_rstd: f64,
    pub seq_len: usize,
}

/// Everything [`crate::backward::model_backward`] needs.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub fingerprint: u64,
    pub config: ModelConfig,
    pub sequences: Vec<SequenceCache>,
    pub logits: Matrix,
}

impl ActivationCache {
    /// Recomputes the logits from the cached pooled features.
    pub fn replay_logits(&self, params: &ModelParams) -> Result<Matrix> {
        if params.fingerprint() != self.fingerprint {
            return Err(Error::Usage("cache was produced with different parameters".into()));
        }
        let c = params.decoder.output_dim();
        let mut out = Matrix::zeros(self.sequences.len(), c);
        for (b, s) in self.sequences.iter().enumerate() {
            let post = layer_norm(&s.feature, &params.post_norm.scale, &params.post_norm.offset);
            params.decoder.apply_into(&post, out.row_mut(b));
        }
        Ok(out)
    }

    /// All solver reports, sequence-major.
    pub fn solver_reports(&self) -> impl Iterator<Item = &SolveReport> {
        self.sequences.iter().flat_map(|s| s.blocks.iter().map(|b| &b.report))
    }

    pub fn mean_solver_iterations(&self) -> f64 {
        let (sum, n) = self
            .solver_reports()
            .fold((0usize, 0usize), |(s, n), r| (s + r.iterations, n + 1));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    pub fn unconverged_solves(&self) -> usize {
        self.solver_reports().filter(|r| !r.converged).count()
    }
}

fn encode(encoder: &Affine, inputs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(inputs.rows(), encoder.output_dim());
    for t in 0..inputs.rows() {
        encoder.apply_into(inputs.row(t), out.row_mut(t));
    }
    out
}

/// One block on one sequence; `seq` is overwritten with the block output.
fn block_apply(seq: &mut Matrix, bp: &BlockParams, cfg: &ModelConfig, block: usize) -> Result<BlockCache> {
    let t_len = seq.rows();
    let h = seq.cols();
    let d = bp.lrc.state_dim();
    let mut xhat = Matrix::zeros(t_len, h);
    let mut normed = Matrix::zeros(t_len, h);
    let mut rstd = vec![0.0; t_len];
    for t in 0..t_len {
        rstd[t] = normalize_into(seq.row(t), xhat.row_mut(t));
        affine_norm_into(&bp.norm, xhat.row(t), normed.row_mut(t));
    }
    let cell = Cell::new(&bp.lrc, cfg.cell_options());
    let drive = SequenceDrive::new(&cell, &normed);
    let x0 = vec![0.0; d];
    let sol = solve_with_drive(&cell, &x0, &drive, &cfg.solver, None).map_err(|e| match e {
        Error::NumericOverflow { context, .. } => Error::NumericOverflow {
            context: format!("block {block}: {context}"),
            index: block,
        },
        other => other,
    })?;
    if !sol.report.converged {
        log::debug!(
            "block {block}: solver stopped after {} iterations without converging",
            sol.report.iterations
        );
    }
    let mut mlp_pre = Matrix::zeros(t_len, h);
    let mut act = vec![0.0; h];
    let mut out = vec![0.0; h];
    for t in 0..t_len {
        bp.mlp_in.apply_into(sol.states.row(t), mlp_pre.row_mut(t));
        for (a, z) in act.iter_mut().zip(mlp_pre.row(t)) {
            *a = gelu(*z);
        }
        bp.mlp_out.apply_into(&act, &mut out);
        for (s, o) in seq.row_mut(t).iter_mut().zip(&out) {
            *s += o;
        }
    }
    if let Some(i) = seq.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow {
            context: format!("block {block} output (row {})", i / h),
            index: block,
        });
    }
    Ok(BlockCache {
        xhat,
        rstd,
        drive,
        states: sol.states,
        lambdas: sol.lambdas,
        mlp_pre,
        report: sol.report,
    })
}

/// `seq + mlp(lrc(layer_norm(seq)))` for one `T × H` sequence.
pub fn block_forward(seq: &Matrix, bp: &BlockParams, cfg: &ModelConfig) -> Result<Matrix> {
    Ok(block_forward_with_report(seq, bp, cfg)?.0)
}

/// [`block_forward`] plus the solver report of the LRC layer.
pub fn block_forward_with_report(
    seq: &Matrix,
    bp: &BlockParams,
    cfg: &ModelConfig,
) -> Result<(Matrix, SolveReport)> {
    if seq.cols() != bp.norm.scale.len() || bp.lrc.input_dim() != seq.cols() {
        return Err(Error::config("block input width does not match hidden_dim"));
    }
    if seq.rows() == 0 {
        return Err(Error::config("sequence must contain at least one step"));
    }
    let mut out = seq.clone();
    let cache = block_apply(&mut out, bp, cfg, 0)?;
    Ok((out, cache.report))
}

fn pool(seq: &Matrix, pooling: Pooling) -> Vec<f64> {
    match pooling {
        Pooling::Last => seq.row(seq.rows() - 1).to_vec(),
        Pooling::Mean => {
            let mut acc = vec![0.0; seq.cols()];
            for r in seq.row_iter() {
                for (a, v) in acc.iter_mut().zip(r) {
                    *a += v;
                }
            }
            let n = seq.rows() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        }
    }
}

fn forward_sequence(params: &ModelParams, inputs: &Matrix, cfg: &ModelConfig, logits: &mut [f64]) -> Result<SequenceCache> {
    let mut seq = encode(&params.encoder, inputs);
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for (l, bp) in params.blocks.iter().enumerate() {
        blocks.push(block_apply(&mut seq, bp, cfg, l)?);
    }
    let feature = pool(&seq, cfg.pooling);
    let mut post_xhat = vec![0.0; feature.len()];
    let post_rstd = normalize_into(&feature, &mut post_xhat);
    let mut post = vec![0.0; feature.len()];
    affine_norm_into(&params.post_norm, &post_xhat, &mut post);
    params.decoder.apply_into(&post, logits);
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow {
            context: format!("logits (class {i})"),
            index: params.blocks.len(),
        });
    }
    Ok(SequenceCache {
        inputs: inputs.clone(),
        blocks,
        feature,
        post_xhat,
        post_rstd,
        seq_len: inputs.rows(),
    })
}

fn check_batch(params: &ModelParams, batch: &[Matrix], cfg: &ModelConfig) -> Result<()> {
    if params.blocks.len() != cfg.num_blocks {
        return Err(Error::config(format!(
            "parameters hold {} blocks, config says {}",
            params.blocks.len(),
            cfg.num_blocks
        )));
    }
    for (b, s) in batch.iter().enumerate() {
        if s.cols() != params.encoder.input_dim() {
            return Err(Error::config(format!(
                "sequence {b} has {} channels, model expects {}",
                s.cols(),
                params.encoder.input_dim()
            )));
        }
        if s.rows() == 0 {
            return Err(Error::config(format!("sequence {b} is empty")));
        }
    }
    Ok(())
}

/// Batched forward pass. Sequences are processed in parallel; each one's
/// result is independent of the others and of the thread count.
pub fn forward(
    params: &ModelParams,
    batch: &[Matrix],
    cfg: &ModelConfig,
) -> Result<(Matrix, ActivationCache)> {
    check_batch(params, batch, cfg)?;
    let c = params.decoder.output_dim();
    let results: Vec<Result<(Vec<f64>, SequenceCache)>> = batch
        .par_iter()
        .map(|inputs| {
            let mut logits = vec![0.0; c];
            let cache = forward_sequence(params, inputs, cfg, &mut logits)?;
            Ok((logits, cache))
        })
        .collect();
    let mut logits = Matrix::zeros(batch.len(), c);
    let mut sequences = Vec::with_capacity(batch.len());
    for (b, r) in results.into_iter().enumerate() {
        let (l, s) = r?;
        logits.row_mut(b).copy_from_slice(&l);
        sequences.push(s);
    }
    let cache = ActivationCache {
        fingerprint: params.fingerprint(),
        config: cfg.clone(),
        sequences,
        logits: logits.clone(),
    };
    if cache.unconverged_solves() > 0 {
        log::warn!(
            "{} of {} LRC solves did not reach tolerance {:e}",
            cache.unconverged_solves(),
            batch.len() * params.blocks.len(),
            cfg.solver.tol
        );
    }
    Ok((logits, cache))
}

/// Logits only; keeps no activations.
pub fn predict(params: &ModelParams, batch: &[Matrix], cfg: &ModelConfig) -> Result<Matrix> {
    check_batch(params, batch, cfg)?;
    let c = params.decoder.output_dim();
    let rows: Vec<Result<Vec<f64>>> = batch
        .par_iter()
        .map(|inputs| {
            let mut seq = encode(&params.encoder, inputs);
            for (l, bp) in params.blocks.iter().enumerate() {
                block_apply(&mut seq, bp, cfg, l)?;
            }
            let post = layer_norm(
                &pool(&seq, cfg.pooling),
                &params.post_norm.scale,
                &params.post_norm.offset,
            );
            let logits = params.decoder.apply(&post);
            if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow {
                    context: format!("logits (class {i})"),
                    index: params.blocks.len(),
                });
            }
            Ok(logits)
        })
        .collect();
    let mut out = Matrix::zeros(batch.len(), c);
    for (b, r) in rows.into_iter().enumerate() {
        out.row_mut(b).copy_from_slice(&r?);
    }
    Ok(out)
}

/// Gradient of a scalar loss with respect to every parameter, shaped like
/// [`ModelParams`], plus the gradient with respect to each block's initial
/// state (summed over the batch).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub params: ModelParams,
    pub grad_x0: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let mut params = p.clone();
        for (_, t) in params.tensors_mut() {
            t.fill(0.0);
        }
        let grad_x0 = p.blocks.iter().map(|b| vec![0.0; b.lrc.state_dim()]).collect();
        Self { params, grad_x0 }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for ((_, a), (_, b)) in self.params.tensors_mut().into_iter().zip(other.params.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.grad_x0.iter_mut().zip(&other.grad_x0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.params.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
        for g in &mut self.grad_x0 {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.params
            .tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
