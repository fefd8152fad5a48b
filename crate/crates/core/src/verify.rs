//! Executable stability checks, flop accounting and runtime scaling.
//!
//! The stability checks work on the coefficient recurrence
//! `x_t = λ_t∘x_{t-1} + b_t` with `λ_t = 1 + dt·a(x_{t-1}, u_t)` and
//! `b_t = dt·b(x_{t-1}, u_t)`. Evaluated along a trajectory this recurrence
//! reproduces the Euler rollout exactly. Full-Jacobian statistics (which
//! include gate-derivative terms) are reported next to each check but do not
//! decide pass/fail.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::backward::adjoint_reverse_scan;
use crate::cell::{Cell, CellOptions, LrcLayerParams};
use crate::error::{Error, Result};
use crate::flops::{GATE_EVAL_FLOPS, JACOBIAN_FLOPS, KALMAN_FLOPS, SCAN_FLOPS};
use crate::network::{forward, init_params, ActivationCache, ModelConfig};
use crate::scan::sync_round_bound;
use crate::solver::{rollout_with_drive, solve_with_drive, SequenceDrive, SolverConfig, SolverMode};
use crate::tensor::{norm2, Matrix};

/// Relative slack allowed on every bound comparison.
pub const BOUND_SLACK: f64 = 1e-12;

/// Where a check came closest to (or crossed) its bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    /// Trial, step or `τ` index.
    pub index: usize,
    pub observed: f64,
    pub bound: f64,
}

impl Witness {
    fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.observed / self.bound
        } else if self.observed > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

fn within(observed: f64, bound: f64) -> bool {
    observed <= bound + BOUND_SLACK * bound.abs().max(f64::MIN_POSITIVE)
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Coefficients of one sequence's recurrence, both `T × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRun {
    pub lambdas: Matrix,
    pub offsets: Matrix,
}

impl CoefficientRun {
    pub fn rho_hat(&self) -> f64 {
        max_abs(self.lambdas.as_slice())
    }

    /// `states[t] = λ_t∘states[t-1] + b_t` from `x0`.
    pub fn replay(&self, x0: &[f64]) -> Matrix {
        let d = self.lambdas.cols();
        let mut out = Matrix::zeros(self.lambdas.rows(), d);
        let mut prev = x0.to_vec();
        for t in 0..self.lambdas.rows() {
            let row = out.row_mut(t);
            for i in 0..d {
                row[i] = self.lambdas.get(t, i) * prev[i] + self.offsets.get(t, i);
            }
            prev.copy_from_slice(row);
        }
        out
    }
}

/// Coefficients along the trajectory `states` (row `t` is `x_t`).
pub fn coefficients_along(
    cell: &Cell<'_>,
    x0: &[f64],
    states: &Matrix,
    drive: &SequenceDrive,
) -> CoefficientRun {
    let d = cell.state_dim();
    let dt = cell.opts.dt;
    let t_len = states.rows();
    let mut lambdas = Matrix::zeros(t_len, d);
    let mut offsets = Matrix::zeros(t_len, d);
    for t in 0..t_len {
        let prev = if t == 0 { x0 } else { states.row(t - 1) };
        let (a, b) = cell.coefficients_with_drive(prev, drive.gate.row(t), drive.elastance.row(t));
        for i in 0..d {
            lambdas.set(t, i, 1.0 + dt * a[i]);
            offsets.set(t, i, dt * b[i]);
        }
    }
    CoefficientRun { lambdas, offsets }
}

/// Rolls `inputs` through `cell` and returns the coefficient run.
pub fn coefficient_run(cell: &Cell<'_>, x0: &[f64], inputs: &Matrix) -> Result<CoefficientRun> {
    if inputs.cols() != cell.input_dim() || x0.len() != cell.state_dim() {
        return Err(Error::config("coefficient run: input or state width mismatch"));
    }
    let drive = SequenceDrive::new(cell, inputs);
    let states = rollout_with_drive(cell, x0, &drive)?;
    Ok(coefficients_along(cell, x0, &states, &drive))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub passed: bool,
    pub trials: usize,
    /// `max |λ|` over all sampled coefficient rows.
    pub rho_hat: f64,
    pub max_ratio: f64,
    pub violations: usize,
    pub worst: Option<Witness>,
    /// Largest `‖F(x)−F(y)‖/‖x−y‖` of the full Euler map (reported only).
    pub full_map_max_ratio: Option<f64>,
    /// Largest `|∂F/∂x|` entry at the sampled points (reported only).
    pub full_jacobian_max: Option<f64>,
}

/// Contraction of the frozen-coefficient map `x ↦ λ∘x + b` for pairs drawn
/// uniformly from `[-radius, radius]^D`, cycling through `lambda_rows`.
/// Passes when `ρ̂ < 1` and every ratio is at most `ρ̂`.
pub fn check_contraction(lambda_rows: &Matrix, trials: usize, radius: f64, seed: u64) -> ContractionReport {
    let rho_hat = max_abs(lambda_rows.as_slice());
    let d = lambda_rows.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    let mut worst: Option<Witness> = None;
    let mut violations = 0;
    let mut diff = vec![0.0; d];
    let mut img = vec![0.0; d];
    for k in 0..trials {
        let lam = lambda_rows.row(k % lambda_rows.rows().max(1));
        for i in 0..d {
            let x: f64 = rng.random_range(-radius..=radius);
            let y: f64 = rng.random_range(-radius..=radius);
            diff[i] = x - y;
            img[i] = lam[i] * x - lam[i] * y;
        }
        let den = norm2(&diff);
        let ratio = if den > 0.0 { norm2(&img) / den } else { 0.0 };
        if !within(ratio, rho_hat) {
            violations += 1;
        }
        if worst.is_none() || ratio > max_ratio {
            max_ratio = ratio;
            worst = Some(Witness {
                index: k,
                observed: ratio,
                bound: rho_hat,
            });
        }
    }
    ContractionReport {
        passed: rho_hat < 1.0 && violations == 0,
        trials,
        rho_hat,
        max_ratio,
        violations,
        worst,
        full_map_max_ratio: None,
        full_jacobian_max: None,
    }
}

/// Samples `trials` points `(x, u)` with `x ~ U[-2, 2]^D`, `u ~ N(0, 1)^n`,
/// collects `λ(x, u)` and runs [`check_contraction`] on them. Also records
/// full-map and full-Jacobian statistics at the same points.
pub fn verify_contraction(
    params: &LrcLayerParams,
    opts: CellOptions,
    trials: usize,
    seed: u64,
) -> Result<ContractionReport> {
    params.validate()?;
    opts.validate()?;
    let cell = Cell::new(params, opts);
    let (d, n) = (cell.state_dim(), cell.input_dim());
    let radius = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambdas = Matrix::zeros(trials.max(1), d);
    let mut full_ratio = 0.0f64;
    let mut full_jac = 0.0f64;
    for k in 0..trials {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let (a, _) = cell.coefficients(&x, &u)?;
        for (l, ai) in lambdas.row_mut(k).iter_mut().zip(&a) {
            *l = 1.0 + opts.dt * ai;
        }
        let fx = cell.euler_step(&x, &u)?;
        let fy = cell.euler_step(&y, &u)?;
        let num: Vec<f64> = fx.iter().zip(&fy).map(|(p, q)| p - q).collect();
        let den: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
        if norm2(&den) > 0.0 {
            full_ratio = full_ratio.max(norm2(&num) / norm2(&den));
        }
        full_jac = full_jac.max(max_abs(&cell.step_jacobian_diag(&x, &u)?));
    }
    let mut report = check_contraction(&lambdas, trials, radius, seed ^ 0x5eed);
    report.full_map_max_ratio = Some(full_ratio);
    report.full_jacobian_max = Some(full_jac);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardBoundReport {
    pub passed: bool,
    pub steps: usize,
    pub rho_hat: f64,
    /// `max_s ‖b_s‖₂`
    pub offset_max: f64,
    pub violations: usize,
    /// Step with the largest `‖x_t‖/bound_t`.
    pub worst: Option<Witness>,
}

/// Checks `‖x_t‖ ≤ ρ̂^t‖x0‖ + (1+ρ̂+…+ρ̂^{t-1})·max_s‖b_s‖` for `t = 1..=T`
/// on the replayed coefficient recurrence. Passes when `ρ̂ < 1` and the bound
/// holds at every step.
pub fn check_forward_bound(x0: &[f64], run: &CoefficientRun) -> ForwardBoundReport {
    let rho = run.rho_hat();
    let b_max = run.offsets.row_iter().map(norm2).fold(0.0, f64::max);
    let states = run.replay(x0);
    let x0_norm = norm2(x0);
    let mut rho_pow = 1.0;
    let mut geo = 0.0;
    let mut violations = 0;
    let mut worst: Option<Witness> = None;
    for (t, row) in states.row_iter().enumerate() {
        geo += rho_pow;
        rho_pow *= rho;
        let bound = rho_pow * x0_norm + geo * b_max;
        let w = Witness {
            index: t + 1,
            observed: norm2(row),
            bound,
        };
        if !within(w.observed, w.bound) {
            violations += 1;
        }
        if worst.as_ref().is_none_or(|cur| w.ratio() > cur.ratio()) {
            worst = Some(w);
        }
    }
    ForwardBoundReport {
        passed: rho < 1.0 && violations == 0,
        steps: states.rows(),
        rho_hat: rho,
        offset_max: b_max,
        violations,
        worst,
    }
}

/// Rolls `inputs` through the layer from `x0` and checks the forward bound.
pub fn verify_forward_bound(
    params: &LrcLayerParams,
    opts: CellOptions,
    x0: &[f64],
    inputs: &Matrix,
) -> Result<ForwardBoundReport> {
    params.validate()?;
    opts.validate()?;
    let cell = Cell::new(params, opts);
    Ok(check_forward_bound(x0, &coefficient_run(&cell, x0, inputs)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    pub tau: usize,
    pub norm: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientDecayReport {
    pub passed: bool,
    pub rho_hat: f64,
    pub violations: usize,
    pub worst: Option<Witness>,
    /// `‖adj(τ)‖` against `ρ̂^{T-1-τ}‖adj(T-1)‖` for every `τ`.
    pub curve: Vec<DecayPoint>,
}

/// Propagates `seed` backwards through the coefficients (`adj(T-1) = seed`,
/// `adj(τ) = λ_{τ+1}∘adj(τ+1)`) and checks the geometric bound at every `τ`.
/// Passes when `ρ̂ < 1` and no `τ` exceeds the bound.
pub fn check_gradient_decay(lambdas: &Matrix, seed: &[f64]) -> Result<GradientDecayReport> {
    let rho = max_abs(lambdas.as_slice());
    let adj = adjoint_reverse_scan(lambdas, seed)?;
    let t_len = lambdas.rows();
    let top = norm2(seed);
    let mut curve = Vec::with_capacity(t_len);
    let mut violations = 0;
    let mut worst: Option<Witness> = None;
    let mut bound = top;
    for tau in (0..t_len).rev() {
        let norm = norm2(adj.row(tau));
        if !within(norm, bound) {
            violations += 1;
        }
        let w = Witness {
            index: tau,
            observed: norm,
            bound,
        };
        if worst.as_ref().is_none_or(|cur| w.ratio() > cur.ratio()) {
            worst = Some(w);
        }
        curve.push(DecayPoint { tau, norm, bound });
        bound *= rho;
    }
    curve.reverse();
    Ok(GradientDecayReport {
        passed: rho < 1.0 && violations == 0,
        rho_hat: rho,
        violations,
        worst,
        curve,
    })
}

/// Stability results for one block of a model run, worst case over the batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockStability {
    pub block: usize,
    pub contraction: ContractionReport,
    pub forward: ForwardBoundReport,
    pub gradient: GradientDecayReport,
    /// Largest full-Jacobian entry seen along the run (reported only).
    pub full_jacobian_max: f64,
}

impl BlockStability {
    pub fn passed(&self) -> bool {
        self.contraction.passed && self.forward.passed && self.gradient.passed
    }
}

/// Runs the three stability checks on every block of a forward pass over
/// `batch`. Contraction trials cycle through the coefficient rows realised
/// by the run; the gradient seed is the all-ones direction.
pub fn verify_model_stability(
    params: &crate::network::ModelParams,
    cfg: &ModelConfig,
    batch: &[Matrix],
    trials: usize,
    seed: u64,
) -> Result<Vec<BlockStability>> {
    let (_, cache) = forward(params, batch, cfg)?;
    model_stability_from_cache(params, &cache, trials, seed)
}

pub fn model_stability_from_cache(
    params: &crate::network::ModelParams,
    cache: &ActivationCache,
    trials: usize,
    seed: u64,
) -> Result<Vec<BlockStability>> {
    let cfg = &cache.config;
    let mut out = Vec::with_capacity(params.blocks.len());
    for (l, bp) in params.blocks.iter().enumerate() {
        let cell = Cell::new(&bp.lrc, cfg.cell_options());
        let d = cell.state_dim();
        let x0 = vec![0.0; d];
        let seed_vec = vec![1.0 / (d as f64).sqrt(); d];
        let mut all_lambdas = Vec::new();
        let mut forward_worst: Option<ForwardBoundReport> = None;
        let mut grad_worst: Option<GradientDecayReport> = None;
        let mut full_jac = 0.0f64;
        for seq in &cache.sequences {
            let bc = &seq.blocks[l];
            let run = coefficients_along(&cell, &x0, &bc.states, &bc.drive);
            full_jac = full_jac.max(max_abs(bc.lambdas.as_slice()));
            let fwd = check_forward_bound(&x0, &run);
            let grad = check_gradient_decay(&run.lambdas, &seed_vec)?;
            all_lambdas.extend_from_slice(run.lambdas.as_slice());
            if forward_worst.as_ref().is_none_or(|w| fwd.violations > w.violations || fwd.rho_hat > w.rho_hat) {
                forward_worst = Some(fwd);
            }
            if grad_worst.as_ref().is_none_or(|w| grad.violations > w.violations || grad.rho_hat > w.rho_hat) {
                grad_worst = Some(grad);
            }
        }
        let rows = all_lambdas.len() / d;
        let lam = Matrix::from_vec(rows, d, all_lambdas);
        let mut contraction = check_contraction(&lam, trials, 2.0, seed.wrapping_add(l as u64));
        contraction.full_jacobian_max = Some(full_jac);
        out.push(BlockStability {
            block: l,
            contraction,
            forward: forward_worst.ok_or_else(|| Error::config("empty batch"))?,
            gradient: grad_worst.ok_or_else(|| Error::config("empty batch"))?,
            full_jacobian_max: full_jac,
        });
    }
    Ok(out)
}

/// Newton iteration count assumed by [`flop_estimate`].
pub const NOMINAL_NEWTON_ITERS: u64 = 8;

/// Per state-coordinate, per step, per layer cost of forward plus backward
/// through the LRC core, split by operation class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopModel {
    /// Total multiply-adds per coordinate-step.
    pub c_f: u64,
    /// Drive projection forward (`2n`) and its gradient (`4n`).
    pub dense: u64,
    pub gate_evals: u64,
    pub jacobian_evals: u64,
    pub scan: u64,
}

impl FlopModel {
    /// `input_width` is the LRC input width (the block width `H`).
    pub fn new(input_width: usize, mode: SolverMode, newton_iters: u64) -> Self {
        let n = input_width as u64;
        let dense = 6 * n;
        // forward evaluations, plus one in the backward pass
        let (evals, scan) = match mode {
            SolverMode::Sequential => (1 + 1, SCAN_FLOPS),
            SolverMode::NewtonScan => (newton_iters + 1 + 1, SCAN_FLOPS * (newton_iters + 1)),
            SolverMode::ElkDamped => (
                newton_iters + 1 + 1,
                (SCAN_FLOPS + KALMAN_FLOPS) * newton_iters + SCAN_FLOPS,
            ),
        };
        let c_f = dense + evals * (GATE_EVAL_FLOPS + JACOBIAN_FLOPS) + scan;
        Self {
            c_f,
            dense,
            gate_evals: evals,
            jacobian_evals: evals,
            scan,
        }
    }

    pub fn for_config(cfg: &ModelConfig) -> Self {
        Self::new(cfg.hidden_dim, cfg.solver.mode, NOMINAL_NEWTON_ITERS)
    }
}

/// `c_f·B·T·D·L` multiply-adds for forward plus backward through the LRC
/// cores of a model. Linear in each of `B`, `T`, `D` and `L`.
pub fn flop_estimate(cfg: &ModelConfig, seq_len: usize, batch: usize) -> u64 {
    FlopModel::for_config(cfg).c_f
        * batch as u64
        * seq_len as u64
        * cfg.state_dim as u64
        * cfg.num_blocks as u64
}

/// Multiply-adds of the dense layers around the cores (encoder, block MLPs,
/// decoder), forward plus backward counted as three forward passes.
pub fn dense_layer_flops(cfg: &ModelConfig, seq_len: usize, batch: usize) -> u64 {
    let (p, h, d, c) = (
        cfg.input_dim as u64,
        cfg.hidden_dim as u64,
        cfg.state_dim as u64,
        cfg.num_classes as u64,
    );
    let per_step = p * h + cfg.num_blocks as u64 * (d * h + h * h);
    3 * (batch as u64 * seq_len as u64 * per_step + batch as u64 * h * c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub seq_len: usize,
    pub threads: usize,
    pub state_dim: usize,
    pub mode: &'static str,
    /// Best-of-N wall time of the sequential rollout.
    pub sequential_ms: f64,
    /// Best-of-N wall time of the parallel solve.
    pub parallel_ms: f64,
    pub newton_iters: usize,
    pub converged: bool,
    pub sync_rounds_per_scan: u64,
    pub sync_round_bound: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub lengths: Vec<usize>,
    pub threads: Vec<usize>,
    pub state_dim: usize,
    pub input_dim: usize,
    pub repeats: usize,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            lengths: vec![256, 1024, 4096, 16384],
            threads: vec![1],
            state_dim: 16,
            input_dim: 16,
            repeats: 3,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

fn best_of<R>(repeats: usize, mut f: impl FnMut() -> Result<R>) -> Result<(f64, R)> {
    // warm-up, discarded
    f()?;
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let r = f()?;
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
        last = Some(r);
    }
    Ok((best, last.expect("at least one repeat")))
}

/// Times sequential rollout against the parallel solve for every
/// `(T, threads)` pair on a default-initialised layer with `N(0, 1)` inputs.
pub fn runtime_scaling(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if cfg.solver.mode == SolverMode::Sequential {
        return Err(Error::config("runtime scaling needs a parallel solver mode"));
    }
    cfg.solver.validate()?;
    let model_cfg = ModelConfig {
        input_dim: cfg.input_dim,
        hidden_dim: cfg.input_dim,
        state_dim: cfg.state_dim,
        num_blocks: 1,
        num_classes: 2,
        seed: cfg.seed,
        solver: cfg.solver,
        ..ModelConfig::default()
    };
    let params = init_params(&model_cfg)?;
    let lrc = &params.blocks[0].lrc;
    let cell = Cell::new(lrc, model_cfg.cell_options());
    let x0 = vec![0.0; cfg.state_dim];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &t_len in &cfg.lengths {
        let inputs = Matrix::from_vec(
            t_len,
            cfg.input_dim,
            (0..t_len * cfg.input_dim).map(|_| rng.sample(StandardNormal)).collect(),
        );
        let drive = SequenceDrive::new(&cell, &inputs);
        for &threads in &cfg.threads {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::config(format!("cannot build a {threads}-thread pool: {e}")))?;
            let row = pool.install(|| -> Result<ScalingRow> {
                let (sequential_ms, _) = best_of(cfg.repeats, || rollout_with_drive(&cell, &x0, &drive))?;
                let (parallel_ms, sol) =
                    best_of(cfg.repeats, || solve_with_drive(&cell, &x0, &drive, &cfg.solver, None))?;
                let iters = sol.report.iterations;
                Ok(ScalingRow {
                    seq_len: t_len,
                    threads,
                    state_dim: cfg.state_dim,
                    mode: cfg.solver.mode.as_str(),
                    sequential_ms,
                    parallel_ms,
                    newton_iters: iters,
                    converged: sol.report.converged,
                    sync_rounds_per_scan: if iters > 0 { sol.report.sync_rounds / iters as u64 } else { 0 },
                    sync_round_bound: sync_round_bound(t_len),
                })
            })?;
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)
            .map_err(|e| Error::Validation(format!("csv write failed: {e}")))?;
    }
    wr.flush()
        .map_err(|e| Error::Validation(format!("csv write failed: {e}")))
}

pub fn write_scaling_jsonl<W: Write>(rows: &[ScalingRow], mut w: W) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::DependenceMode;

    fn random_layer(d: usize, n: usize, seed: u64) -> LrcLayerParams {
        let cfg = ModelConfig {
            input_dim: n,
            hidden_dim: n,
            state_dim: d,
            num_blocks: 1,
            num_classes: 2,
            seed,
            ..ModelConfig::default()
        };
        init_params(&cfg).unwrap().blocks.remove(0).lrc
    }

    #[test]
    fn zero_parameters_contract_by_three_quarters() {
        let p = LrcLayerParams::zeros(4, 3);
        let r = verify_contraction(&p, CellOptions::default(), 200, 1).unwrap();
        assert!(r.passed);
        assert_eq!(r.rho_hat, 0.75);
        assert!((r.max_ratio - 0.75).abs() <= 1e-15, "{}", r.max_ratio);
    }

    #[test]
    fn equal_points_give_zero_ratio() {
        let lam = Matrix::filled(1, 1, 0.5);
        let r = check_contraction(&lam, 10, 0.0, 3);
        assert_eq!(r.max_ratio, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn random_layers_contract() {
        for mode in [DependenceMode::Full, DependenceMode::InputOnly] {
            let p = random_layer(8, 5, 9);
            let opts = CellOptions {
                mode,
                ..CellOptions::default()
            };
            let r = verify_contraction(&p, opts, 2000, 4).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.rho_hat < 1.0 && r.max_ratio <= r.rho_hat + 1e-12);
        }
    }

    #[test]
    fn expanding_coefficients_fail_every_check() {
        let lam = Matrix::filled(50, 3, 1.05);
        assert!(!check_contraction(&lam, 100, 1.0, 0).passed);
        let run = CoefficientRun {
            lambdas: lam.clone(),
            offsets: Matrix::filled(50, 3, 0.1),
        };
        assert!(!check_forward_bound(&[1.0, 1.0, 1.0], &run).passed);
        assert!(!check_gradient_decay(&lam, &[1.0, 0.0, 0.0]).unwrap().passed);
    }

    #[test]
    fn forward_bound_is_tight_without_offsets() {
        let run = CoefficientRun {
            lambdas: Matrix::filled(30, 2, 0.9),
            offsets: Matrix::zeros(30, 2),
        };
        let r = check_forward_bound(&[3.0, 4.0], &run);
        assert!(r.passed);
        let w = r.worst.unwrap();
        assert!((w.observed / w.bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_bound_from_zero_reduces_to_offset_term() {
        let run = CoefficientRun {
            lambdas: Matrix::filled(5, 1, 0.5),
            offsets: Matrix::filled(5, 1, 1.0),
        };
        let r = check_forward_bound(&[0.0], &run);
        assert!(r.passed);
        // constant positive offsets reach the bound exactly
        let w = r.worst.unwrap();
        assert!((w.observed - w.bound).abs() < 1e-12);
    }

    #[test]
    fn coefficient_replay_reproduces_rollout() {
        let p = random_layer(4, 3, 2);
        let cell = Cell::new(&p, CellOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs = Matrix::from_vec(64, 3, (0..192).map(|_| rng.sample(StandardNormal)).collect());
        let x0 = [0.3, -0.2, 0.0, 1.0];
        let run = coefficient_run(&cell, &x0, &inputs).unwrap();
        let roll = crate::solver::rollout(&cell, &x0, &inputs).unwrap();
        assert!(run.replay(&x0).max_abs_diff(&roll) <= 1e-14);
        let r = verify_forward_bound(&p, CellOptions::default(), &x0, &inputs).unwrap();
        assert!(r.passed && r.steps == 64);
    }

    #[test]
    fn constant_lambda_decay_is_an_equality() {
        let lam = Matrix::filled(100, 3, 0.8);
        let r = check_gradient_decay(&lam, &[1.0, 2.0, 2.0]).unwrap();
        assert!(r.passed);
        for pt in &r.curve {
            assert!((pt.norm - pt.bound).abs() <= 1e-10 * pt.bound.max(1e-300));
        }
        assert_eq!(r.curve.last().unwrap().norm, 3.0);
    }

    #[test]
    fn flop_estimate_is_linear() {
        let cfg = ModelConfig {
            hidden_dim: 16,
            state_dim: 8,
            num_blocks: 2,
            ..ModelConfig::default()
        };
        let base = flop_estimate(&cfg, 100, 3);
        assert_eq!(flop_estimate(&cfg, 200, 3), 2 * base);
        assert_eq!(flop_estimate(&cfg, 100, 6), 2 * base);
        let wide = ModelConfig { state_dim: 16, ..cfg.clone() };
        assert_eq!(flop_estimate(&wide, 100, 3), 2 * base);
        let deep = ModelConfig { num_blocks: 4, ..cfg.clone() };
        assert_eq!(flop_estimate(&deep, 100, 3), 2 * base);
        assert!(dense_layer_flops(&cfg, 100, 3) > 0);
    }

    #[test]
    fn scaling_rows_respect_sync_bound() {
        let cfg = ScalingConfig {
            lengths: vec![1, 100, 1024],
            threads: vec![1, 2],
            state_dim: 4,
            input_dim: 3,
            repeats: 1,
            ..ScalingConfig::default()
        };
        let rows = runtime_scaling(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.converged);
            assert!(r.sync_rounds_per_scan <= u64::from(r.sync_round_bound), "{r:?}");
        }
        let mut csv_buf = Vec::new();
        write_scaling_csv(&rows, &mut csv_buf).unwrap();
        assert_eq!(String::from_utf8(csv_buf).unwrap().lines().count(), 7);
        let mut js = Vec::new();
        write_scaling_jsonl(&rows, &mut js).unwrap();
        assert_eq!(js.iter().filter(|&&b| b == b'\n').count(), 6);
    }
}
