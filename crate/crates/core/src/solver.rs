//! Trajectory evaluation: the sequential Euler rollout (ground truth) and the
//! parallel-in-time Newton solver whose linear solves are prefix scans.
//!
//! Each Newton iteration linearizes every step around the shifted current
//! guess, `x_t ≈ j_t∘x_{t-1} + c_t` with `j_t` the exact diagonal Jacobian,
//! and solves the resulting linear recurrence for all `t` at once. Because
//! the Jacobian is diagonal by construction, no diagonal approximation is
//! involved and the iteration is plain Newton on the whole trajectory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{Cell, CellOptions, LrcLayerParams};
use crate::error::{Error, Result};
use crate::kalman::damped_affine_solve;
use crate::scan::{scan_affine_flat, DEFAULT_BLOCK};
use crate::tensor::Matrix;

/// Rows handled per rayon task when linearizing.
const ROWS_PER_TASK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Sequential,
    NewtonScan,
    ElkDamped,
}

impl SolverMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverMode::Sequential => "sequential",
            SolverMode::NewtonScan => "newton_scan",
            SolverMode::ElkDamped => "elk_damped",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(SolverMode::Sequential),
            "newton_scan" => Ok(SolverMode::NewtonScan),
            "elk_damped" => Ok(SolverMode::ElkDamped),
            other => Err(Error::config(format!(
                "unknown solver mode '{other}' (expected sequential, newton_scan or elk_damped)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stopping threshold on the ∞-norm fixed-point residual.
    pub tol: f64,
    pub max_iters: usize,
    pub mode: SolverMode,
    /// `r/q` of the damped solve; only read in [`SolverMode::ElkDamped`].
    /// The penalty is in state units, so shrinking `dt` calls for a larger ratio.
    pub trust_ratio: f64,
    /// Scan block size (power of two, >= 2).
    pub block: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 50,
            mode: SolverMode::NewtonScan,
            trust_ratio: 1e4,
            block: DEFAULT_BLOCK,
        }
    }
}

impl SolverConfig {
    pub fn newton(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::config(format!("solver tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::config("solver max_iters must be >= 1"));
        }
        if !(self.trust_ratio > 0.0 && self.trust_ratio.is_finite()) {
            return Err(Error::config(format!(
                "solver trust_ratio must be > 0, got {}",
                self.trust_ratio
            )));
        }
        if self.block < 2 || !self.block.is_power_of_two() {
            return Err(Error::config(format!(
                "solver block must be a power of two >= 2, got {}",
                self.block
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Newton updates performed.
    pub iterations: usize,
    /// Fixed-point residual `‖x - F(x)‖_∞` after each update; the stopping test.
    pub residuals: Vec<f64>,
    /// Change between consecutive iterates `‖x_k - x_{k-1}‖_∞`.
    pub step_norms: Vec<f64>,
    pub converged: bool,
    /// Synchronisation rounds summed over every scan of the solve.
    pub sync_rounds: u64,
    /// Linearizations (cell + Jacobian evaluations over the whole sequence).
    pub linearizations: usize,
}

/// Per-step diagonal Jacobians and offsets of the affine surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    /// `T × D`
    pub j: Matrix,
    /// `T × D`
    pub c: Matrix,
}

/// Result of a trajectory solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub states: Matrix,
    /// Diagonal Jacobians `∂x_t/∂x_{t-1}` at the returned trajectory.
    pub lambdas: Matrix,
    pub report: SolveReport,
}

/// Input drives for a whole sequence (see [`Cell::drive_sequence`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDrive {
    pub gate: Matrix,
    pub elastance: Matrix,
}

impl SequenceDrive {
    pub fn new(cell: &Cell<'_>, inputs: &Matrix) -> Self {
        let (gate, elastance) = cell.drive_sequence(inputs);
        Self { gate, elastance }
    }

    pub fn len(&self) -> usize {
        self.gate.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.gate.rows() == 0
    }
}

fn check_inputs(cell: &Cell<'_>, x0: &[f64], inputs: &Matrix) -> Result<()> {
    if x0.len() != cell.state_dim() {
        return Err(Error::config(format!(
            "x0 has length {}, layer expects {}",
            x0.len(),
            cell.state_dim()
        )));
    }
    if inputs.cols() != cell.input_dim() {
        return Err(Error::config(format!(
            "inputs have {} channels, layer expects {}",
            inputs.cols(),
            cell.input_dim()
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::config("sequence must contain at least one step"));
    }
    Ok(())
}

/// Sequential Euler rollout with precomputed drive.
pub fn rollout_with_drive(cell: &Cell<'_>, x0: &[f64], drive: &SequenceDrive) -> Result<Matrix> {
    let d = cell.state_dim();
    let mut states = Matrix::zeros(drive.len(), d);
    let mut prev = x0.to_vec();
    for t in 0..drive.len() {
        let row = states.row_mut(t);
        cell.step_with_drive(&prev, drive.gate.row(t), drive.elastance.row(t), row)
            .map_err(|e| match e {
                Error::NumericOverflow { index, .. } => Error::NumericOverflow {
                    context: format!("sequential rollout step {t}"),
                    index,
                },
                other => other,
            })?;
        prev.copy_from_slice(row);
    }
    Ok(states)
}

pub fn rollout(cell: &Cell<'_>, x0: &[f64], inputs: &Matrix) -> Result<Matrix> {
    check_inputs(cell, x0, inputs)?;
    rollout_with_drive(cell, x0, &SequenceDrive::new(cell, inputs))
}

/// `states[t] = euler_step(states[t-1], inputs[t])` with `states[-1] = x0`.
pub fn sequential_rollout(
    x0: &[f64],
    inputs: &Matrix,
    p: &LrcLayerParams,
    dt: f64,
) -> Result<Matrix> {
    rollout(&Cell::new(p, CellOptions::with_dt(dt)), x0, inputs)
}

/// Linearizes every step around the shifted guess. Also returns the step
/// values `F(guess)[t] = step(guess[t-1])`.
pub fn linearize_with_drive(
    cell: &Cell<'_>,
    guess: &Matrix,
    x0: &[f64],
    drive: &SequenceDrive,
) -> (Linearization, Matrix) {
    let d = cell.state_dim();
    let t_len = guess.rows();
    let mut j = Matrix::zeros(t_len, d);
    let mut c = Matrix::zeros(t_len, d);
    let mut f = Matrix::zeros(t_len, d);
    let chunk = ROWS_PER_TASK * d;
    j.as_mut_slice()
        .par_chunks_mut(chunk)
        .zip(c.as_mut_slice().par_chunks_mut(chunk))
        .zip(f.as_mut_slice().par_chunks_mut(chunk))
        .enumerate()
        .for_each(|(blk, ((jb, cb), fb))| {
            let t0 = blk * ROWS_PER_TASK;
            for (k, ((jr, cr), fr)) in jb
                .chunks_exact_mut(d)
                .zip(cb.chunks_exact_mut(d))
                .zip(fb.chunks_exact_mut(d))
                .enumerate()
            {
                let t = t0 + k;
                let s = if t == 0 { x0 } else { guess.row(t - 1) };
                cell.step_and_jacobian(s, drive.gate.row(t), drive.elastance.row(t), fr, jr);
                for i in 0..d {
                    cr[i] = fr[i] - jr[i] * s[i];
                }
            }
        });
    (Linearization { j, c }, f)
}

/// Linearization of the default (full-dependence) cell from raw parameters.
pub fn linearize(
    guess: &Matrix,
    x0: &[f64],
    inputs: &Matrix,
    p: &LrcLayerParams,
    dt: f64,
) -> Result<Linearization> {
    let cell = Cell::new(p, CellOptions::with_dt(dt));
    check_inputs(&cell, x0, inputs)?;
    if guess.rows() != inputs.rows() || guess.cols() != cell.state_dim() {
        return Err(Error::config("guess must be T x D"));
    }
    Ok(linearize_with_drive(&cell, guess, x0, &SequenceDrive::new(&cell, inputs)).0)
}

fn first_non_finite_row(m: &Matrix) -> Option<usize> {
    m.as_slice()
        .iter()
        .position(|v| !v.is_finite())
        .map(|i| i / m.cols())
}

/// Solves the trajectory with the configured mode.
///
/// `init_guess` defaults to zeros. In the Newton modes the iteration stops
/// once the fixed-point residual `‖x - F(x)‖_∞` of the new iterate is at most
/// `tol`; the linearization computed for that test is reused by the next
/// update, so the check is free. On non-convergence the iterate with the
/// smallest residual is returned with `converged = false`.
pub fn solve_with_drive(
    cell: &Cell<'_>,
    x0: &[f64],
    drive: &SequenceDrive,
    cfg: &SolverConfig,
    init_guess: Option<&Matrix>,
) -> Result<Solution> {
    let d = cell.state_dim();
    let t_len = drive.len();
    if cfg.mode == SolverMode::Sequential {
        let mut states = Matrix::zeros(t_len, d);
        let mut lambdas = Matrix::zeros(t_len, d);
        let mut prev = x0.to_vec();
        for t in 0..t_len {
            let row = states.row_mut(t);
            cell.step_and_jacobian(&prev, drive.gate.row(t), drive.elastance.row(t), row, lambdas.row_mut(t));
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow {
                    context: format!("sequential rollout step {t}, coordinate {i}"),
                    index: t,
                });
            }
            prev.copy_from_slice(row);
        }
        return Ok(Solution {
            states,
            lambdas,
            report: SolveReport {
                converged: true,
                linearizations: 1,
                ..SolveReport::default()
            },
        });
    }

    let mut states = match init_guess {
        Some(g) => {
            if g.rows() != t_len || g.cols() != d {
                return Err(Error::config("initial guess must be T x D"));
            }
            g.clone()
        }
        None => Matrix::zeros(t_len, d),
    };
    let mut report = SolveReport::default();
    let (mut lin, _) = linearize_with_drive(cell, &states, x0, drive);
    report.linearizations = 1;
    let mut best: Option<(f64, Matrix, Matrix)> = None;

    for _ in 0..cfg.max_iters {
        let (next, stats) = match cfg.mode {
            SolverMode::NewtonScan => {
                scan_affine_flat(lin.j.as_slice(), lin.c.as_slice(), d, x0, cfg.block)
            }
            SolverMode::ElkDamped => damped_affine_solve(
                lin.j.as_slice(),
                lin.c.as_slice(),
                states.as_slice(),
                x0,
                cfg.trust_ratio,
                cfg.block,
            ),
            SolverMode::Sequential => unreachable!(),
        };
        report.sync_rounds += u64::from(stats.sync_rounds);
        let next = Matrix::from_vec(t_len, d, next);
        if let Some(t) = first_non_finite_row(&next) {
            return Err(Error::NumericOverflow {
                context: format!("newton iterate {}", report.iterations + 1),
                index: t,
            });
        }
        report.iterations += 1;
        report.step_norms.push(next.max_abs_diff(&states));

        let (next_lin, f) = linearize_with_drive(cell, &next, x0, drive);
        report.linearizations += 1;
        let residual = next.max_abs_diff(&f);
        report.residuals.push(residual);
        states = next;
        lin = next_lin;

        if residual <= cfg.tol {
            report.converged = true;
            return Ok(Solution {
                states,
                lambdas: lin.j,
                report,
            });
        }
        // NaN residual means F(x) overflowed; keep iterating from a finite x
        if residual.is_finite() && best.as_ref().is_none_or(|(r, _, _)| residual < *r) {
            best = Some((residual, states.clone(), lin.j.clone()));
        }
    }

    let (states, lambdas) = match best {
        Some((_, s, l)) => (s, l),
        None => (states, lin.j),
    };
    log::debug!(
        "solver did not converge in {} iterations (last residual {:?})",
        cfg.max_iters,
        report.residuals.last()
    );
    Ok(Solution {
        states,
        lambdas,
        report,
    })
}

pub fn solve(
    cell: &Cell<'_>,
    x0: &[f64],
    inputs: &Matrix,
    cfg: &SolverConfig,
    init_guess: Option<&Matrix>,
) -> Result<Solution> {
    cfg.validate()?;
    check_inputs(cell, x0, inputs)?;
    solve_with_drive(cell, x0, &SequenceDrive::new(cell, inputs), cfg, init_guess)
}

/// Parallel solve of the full-dependence cell, returning `(states, report)`.
pub fn solve_parallel(
    x0: &[f64],
    inputs: &Matrix,
    p: &LrcLayerParams,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<(Matrix, SolveReport)> {
    if cfg.mode == SolverMode::Sequential {
        return Err(Error::config("solve_parallel needs newton_scan or elk_damped mode"));
    }
    let cell = Cell::new(p, CellOptions::with_dt(dt));
    let sol = solve(&cell, x0, inputs, cfg, None)?;
    Ok((sol.states, sol.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{euler_step, DependenceMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, d: usize, n: usize) -> LrcLayerParams {
        let mut p = LrcLayerParams::zeros(d, n);
        for (name, t) in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = match name {
                    "g_max_x" | "g_max_u" | "k_max_x" | "k_max_u" => rng.random_range(0.0..1.0),
                    _ => rng.random_range(-1.0..1.0),
                };
            }
        }
        p
    }

    fn random_inputs(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Matrix {
        Matrix::from_vec(t, n, (0..t * n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_params_geometric_decay() {
        let p = LrcLayerParams::zeros(2, 1);
        let states = sequential_rollout(&[1.0, 1.0], &Matrix::zeros(3, 1), &p, 1.0).unwrap();
        assert_eq!(states.as_slice(), &[0.75, 0.75, 0.5625, 0.5625, 0.421875, 0.421875]);
    }

    #[test]
    fn rollout_is_fold_of_euler_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 3, 2);
        let u = random_inputs(&mut rng, 32, 2);
        let states = sequential_rollout(&[0.1, 0.2, 0.3], &u, &p, 1.0).unwrap();
        let mut x = vec![0.1, 0.2, 0.3];
        for t in 0..32 {
            x = euler_step(&x, u.row(t), &p, 1.0).unwrap();
            assert_eq!(states.row(t), x.as_slice());
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let p = LrcLayerParams::zeros(2, 1);
        assert!(sequential_rollout(&[0.0; 2], &Matrix::zeros(0, 1), &p, 1.0).is_err());
    }

    #[test]
    fn linearize_zero_params() {
        let p = LrcLayerParams::zeros(2, 1);
        let lin = linearize(&Matrix::filled(5, 2, 3.0), &[1.0, 1.0], &Matrix::zeros(5, 1), &p, 1.0)
            .unwrap();
        assert!(lin.j.as_slice().iter().all(|&v| v == 0.75));
        assert!(lin.c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linearize_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 4, 2);
        let u = random_inputs(&mut rng, 16, 2);
        let guess = random_inputs(&mut rng, 16, 4);
        let x0 = [0.5, -0.5, 0.0, 1.0];
        let lin = linearize(&guess, &x0, &u, &p, 1.0).unwrap();
        for t in 0..16 {
            let s = if t == 0 { x0.to_vec() } else { guess.row(t - 1).to_vec() };
            let j = crate::cell::step_jacobian_diag(&s, u.row(t), &p, 1.0).unwrap();
            let f = euler_step(&s, u.row(t), &p, 1.0).unwrap();
            for i in 0..4 {
                assert_eq!(lin.j.get(t, i), j[i]);
                assert!((lin.c.get(t, i) - (f[i] - j[i] * s[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exact_guess_is_a_fixed_point_of_the_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 4, 2);
        let u = random_inputs(&mut rng, 40, 2);
        let x0 = [0.0; 4];
        let exact = sequential_rollout(&x0, &u, &p, 1.0).unwrap();
        let lin = linearize(&exact, &x0, &u, &p, 1.0).unwrap();
        let (out, _) = scan_affine_flat(lin.j.as_slice(), lin.c.as_slice(), 4, &x0, 8);
        assert!(crate::tensor::max_abs_diff(&out, exact.as_slice()) < 1e-13);
    }

    #[test]
    fn affine_cell_converges_in_one_iteration() {
        let p = LrcLayerParams::zeros(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_inputs(&mut rng, 50, 2);
        let x0 = [1.0, -2.0, 0.5];
        let (states, report) = solve_parallel(&x0, &u, &p, 1.0, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        let want = sequential_rollout(&x0, &u, &p, 1.0).unwrap();
        assert!(states.max_abs_diff(&want) <= 1e-15);
    }

    #[test]
    fn random_stable_instance_matches_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 4, 3);
        let u = random_inputs(&mut rng, 64, 3);
        let x0 = [0.0; 4];
        let (states, report) = solve_parallel(&x0, &u, &p, 1.0, &SolverConfig::newton(1e-9)).unwrap();
        assert!(report.converged, "{report:?}");
        assert!(report.residuals.last().unwrap() <= &1e-9);
        let want = sequential_rollout(&x0, &u, &p, 1.0).unwrap();
        assert!(states.max_abs_diff(&want) <= 1e-8);
    }

    #[test]
    fn exact_initial_guess_needs_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(&mut rng, 8, 2);
        let u = random_inputs(&mut rng, 300, 2);
        let cell = Cell::new(&p, CellOptions::default());
        let x0 = [0.0; 8];
        let exact = rollout(&cell, &x0, &u).unwrap();
        let sol = solve(&cell, &x0, &u, &SolverConfig::default(), Some(&exact)).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert!(sol.report.residuals[0] <= 1e-12);
        assert!(sol.report.step_norms[0] <= 1e-12);
    }

    #[test]
    fn elk_damped_converges_to_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_params(&mut rng, 4, 2);
        let u = random_inputs(&mut rng, 128, 2);
        let cell = Cell::new(&p, CellOptions::default());
        let x0 = [0.2; 4];
        let cfg = SolverConfig {
            mode: SolverMode::ElkDamped,
            trust_ratio: 5.0,
            max_iters: 200,
            ..SolverConfig::default()
        };
        let sol = solve(&cell, &x0, &u, &cfg, None).unwrap();
        assert!(sol.report.converged, "{:?}", sol.report);
        let want = rollout(&cell, &x0, &u).unwrap();
        assert!(sol.states.max_abs_diff(&want) <= 1e-8);
    }

    #[test]
    fn returned_lambdas_are_jacobians_at_the_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 3, 2);
        let u = random_inputs(&mut rng, 20, 2);
        let opts = CellOptions {
            mode: DependenceMode::AInputOnly,
            ..CellOptions::default()
        };
        let cell = Cell::new(&p, opts);
        let sol = solve(&cell, &[0.0; 3], &u, &SolverConfig::default(), None).unwrap();
        for t in 0..20 {
            let s = if t == 0 { vec![0.0; 3] } else { sol.states.row(t - 1).to_vec() };
            let lam = cell.step_jacobian_diag(&s, u.row(t)).unwrap();
            for i in 0..3 {
                assert!((lam[i] - sol.lambdas.get(t, i)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn non_convergence_returns_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng, 4, 2);
        let u = random_inputs(&mut rng, 500, 2);
        let cfg = SolverConfig {
            max_iters: 1,
            tol: 1e-14,
            ..SolverConfig::default()
        };
        let (_, report) = solve_parallel(&[0.0; 4], &u, &p, 1.0, &cfg).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = [
            SolverConfig { tol: 0.0, ..SolverConfig::default() },
            SolverConfig { max_iters: 0, ..SolverConfig::default() },
            SolverConfig { trust_ratio: -1.0, ..SolverConfig::default() },
            SolverConfig { block: 6, ..SolverConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        let p = LrcLayerParams::zeros(1, 1);
        let seq = SolverConfig { mode: SolverMode::Sequential, ..SolverConfig::default() };
        assert!(solve_parallel(&[0.0], &Matrix::zeros(2, 1), &p, 1.0, &seq).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [SolverMode::Sequential, SolverMode::NewtonScan, SolverMode::ElkDamped] {
            assert_eq!(SolverMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(SolverMode::parse("deer").is_err());
    }
}
