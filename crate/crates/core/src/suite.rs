//! Named check suites run by `lrcssm verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::json;

use crate::backward::model_backward;
use crate::cell::{Cell, CellOptions, LrcLayerParams};
use crate::error::{Error, Result};
use crate::network::{forward, init_params, predict, ModelConfig, ModelParams};
use crate::scan::{affine_compose, prefix_scan_affine, sequential_affine_fold, AffineElement};
use crate::solver::{rollout, solve, SolverConfig, SolverMode};
use crate::tensor::Matrix;
use crate::verify::{self, CoefficientRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Stability,
    Solver,
    Gradients,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "stability" => Ok(Suite::Stability),
            "solver" => Ok(Suite::Solver),
            "gradients" => Ok(Suite::Gradients),
            other => Err(Error::config(format!(
                "unknown suite '{other}' (expected all, stability, solver or gradients)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Adds a stability check on a constant-coefficient run with this `λ`.
    pub inject_lambda: Option<f64>,
    /// Model for the run-based stability check; a small default-initialised
    /// model when absent.
    pub model: Option<(ModelConfig, ModelParams)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

fn check(suite: &'static str, name: impl Into<String>, passed: bool, detail: serde_json::Value) -> CheckResult {
    CheckResult {
        suite,
        name: name.into(),
        passed,
        detail,
    }
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::All | Suite::Stability) {
        out.extend(stability_suite(opts)?);
    }
    if matches!(suite, Suite::All | Suite::Solver) {
        out.extend(solver_suite(opts.seed)?);
    }
    if matches!(suite, Suite::All | Suite::Gradients) {
        out.extend(gradient_suite(opts.seed)?);
    }
    Ok(out)
}

/// One LRC layer drawn with the model initialiser.
pub fn random_layer(state_dim: usize, input_dim: usize, seed: u64) -> Result<LrcLayerParams> {
    let cfg = ModelConfig {
        input_dim,
        hidden_dim: input_dim,
        state_dim,
        num_blocks: 1,
        num_classes: 2,
        seed,
        ..ModelConfig::default()
    };
    Ok(init_params(&cfg)?.blocks.remove(0).lrc)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

fn stability_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    const S: &str = "stability";
    let mut out = Vec::new();
    let seed = opts.seed;

    let zero = verify::verify_contraction(&LrcLayerParams::zeros(8, 8), CellOptions::default(), 1000, seed)?;
    let zero_ok = zero.passed && (zero.max_ratio - 0.75).abs() <= 1e-15;
    out.push(check(S, "contraction_zero_params", zero_ok, json!(zero)));

    let layer = random_layer(8, 8, seed)?;
    let rep = verify::verify_contraction(&layer, CellOptions::default(), 10_000, seed)?;
    out.push(check(S, "contraction_random_layer", rep.passed, json!(rep)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = normal_matrix(&mut rng, 2048, 8);
    let x0: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
    let fwd = verify::verify_forward_bound(&layer, CellOptions::default(), &x0, &inputs)?;
    out.push(check(S, "forward_bound_t2048", fwd.passed, json!(fwd)));

    let (cfg, params) = match &opts.model {
        Some((c, p)) => (c.clone(), p.clone()),
        None => {
            let c = ModelConfig {
                input_dim: 2,
                hidden_dim: 8,
                state_dim: 8,
                num_blocks: 2,
                num_classes: 2,
                seed,
                ..ModelConfig::default()
            };
            let p = init_params(&c)?;
            (c, p)
        }
    };
    let batch: Vec<Matrix> = (0..4).map(|_| normal_matrix(&mut rng, 512, cfg.input_dim)).collect();
    for b in verify::verify_model_stability(&params, &cfg, &batch, 10_000, seed)? {
        let ok = b.passed();
        out.push(check(S, format!("model_run_t512_block{}", b.block), ok, json!(b)));
    }

    if let Some(v) = opts.inject_lambda {
        let run = CoefficientRun {
            lambdas: Matrix::filled(64, 4, v),
            offsets: Matrix::filled(64, 4, 0.1),
        };
        let c = verify::check_contraction(&run.lambdas, 1000, 1.0, seed);
        let f = verify::check_forward_bound(&[1.0; 4], &run);
        let g = verify::check_gradient_decay(&run.lambdas, &[0.5; 4])?;
        let ok = c.passed && f.passed && g.passed;
        out.push(check(
            S,
            "injected_coefficients",
            ok,
            json!({"lambda": v, "contraction": c, "forward": f, "gradient_rho_hat": g.rho_hat, "gradient_passed": g.passed}),
        ));
    }
    Ok(out)
}

fn solver_suite(seed: u64) -> Result<Vec<CheckResult>> {
    const S: &str = "solver";
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let newton = SolverConfig::newton(1e-9);
    let elk = SolverConfig {
        mode: SolverMode::ElkDamped,
        ..newton
    };

    let mut worst_err = 0.0f64;
    let mut worst_elk = 0.0f64;
    let mut all_converged = true;
    let mut one_shot_ok = true;
    let mut worst_one_shot = 0.0f64;
    let mut instances = 0;
    for &d in &[1usize, 4, 8] {
        for &t_len in &[1usize, 2, 33, 1024] {
            let layer = random_layer(d, 3, rng.random())?;
            let cell = Cell::new(&layer, CellOptions::default());
            let inputs = normal_matrix(&mut rng, t_len, 3);
            let x0 = vec![0.0; d];
            let reference = rollout(&cell, &x0, &inputs)?;
            let sol = solve(&cell, &x0, &inputs, &newton, None)?;
            all_converged &= sol.report.converged;
            worst_err = worst_err.max(sol.states.max_abs_diff(&reference));
            let e = solve(&cell, &x0, &inputs, &elk, None)?;
            all_converged &= e.report.converged;
            worst_elk = worst_elk.max(e.states.max_abs_diff(&reference));
            let warm = solve(&cell, &x0, &inputs, &newton, Some(&reference))?;
            let res = warm.report.residuals.first().copied().unwrap_or(f64::INFINITY);
            one_shot_ok &= warm.report.iterations == 1 && res <= 1e-12;
            worst_one_shot = worst_one_shot.max(res);
            instances += 1;
        }
    }
    out.push(check(
        S,
        "oracle_equivalence",
        all_converged && worst_err <= 1e-8 && worst_elk <= 1e-8,
        json!({"instances": instances, "newton_max_err": worst_err, "elk_max_err": worst_elk, "converged": all_converged, "tol": 1e-8}),
    ));
    out.push(check(
        S,
        "fixed_point_one_shot",
        one_shot_ok,
        json!({"instances": instances, "max_residual": worst_one_shot}),
    ));

    let mut scan_err = 0.0f64;
    for &t_len in &[1usize, 2, 3, 7, 8, 1023, 1024, 1025] {
        let elems: Vec<AffineElement> = (0..t_len)
            .map(|_| {
                AffineElement::new(
                    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let x0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = prefix_scan_affine(&elems, &x0)?;
        scan_err = scan_err.max(got.max_abs_diff(&sequential_affine_fold(&elems, &x0)));
    }
    out.push(check(S, "scan_boundaries", scan_err <= 1e-10, json!({"max_err": scan_err})));

    let mut assoc = 0.0f64;
    let elem = |rng: &mut ChaCha8Rng| {
        AffineElement::new(
            (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
    };
    for _ in 0..1000 {
        let (a, b, c) = (elem(&mut rng), elem(&mut rng), elem(&mut rng));
        let left = affine_compose(&affine_compose(&a, &b), &c);
        let right = affine_compose(&a, &affine_compose(&b, &c));
        for (x, y) in left.a.iter().chain(&left.c).zip(right.a.iter().chain(&right.c)) {
            assoc = assoc.max((x - y).abs());
        }
    }
    out.push(check(S, "compose_associativity", assoc <= 1e-12, json!({"triples": 1000, "max_err": assoc})));
    Ok(out)
}

/// Result of comparing [`model_backward`] with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub num_params: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Floor on the denominator of the relative error. With `h = 1e-5` and an
/// O(1) loss, central differences carry ~1e-11 of rounding noise, so smaller
/// components are compared on an absolute scale.
pub const GRAD_REL_FLOOR: f64 = 1e-5;

/// Central differences of `Σ w∘logits` for every parameter against the
/// analytic gradient. Uses `|a − n| / max(|a|, |n|, GRAD_REL_FLOOR)`.
pub fn gradient_check(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[Matrix],
    weights: &Matrix,
    h: f64,
) -> Result<GradCheck> {
    let (_, cache) = forward(params, batch, cfg)?;
    let grads = model_backward(params, &cache, weights)?;
    let loss = |p: &ModelParams| -> Result<f64> {
        let logits = predict(p, batch, cfg)?;
        Ok(logits.as_slice().iter().zip(weights.as_slice()).map(|(l, w)| l * w).sum())
    };
    let analytic: Vec<(String, Vec<f64>)> = grads
        .params
        .tensors()
        .into_iter()
        .map(|(n, v)| (n, v.to_vec()))
        .collect();
    let mut probe = params.clone();
    let mut best = GradCheck {
        num_params: params.num_params(),
        max_rel_err: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
    };
    for (k, (name, ga)) in analytic.iter().enumerate() {
        for i in 0..ga.len() {
            let orig = probe.tensors_mut()[k].1[i];
            probe.tensors_mut()[k].1[i] = orig + h;
            let up = loss(&probe)?;
            probe.tensors_mut()[k].1[i] = orig - h;
            let down = loss(&probe)?;
            probe.tensors_mut()[k].1[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = ga[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
            if rel > best.max_rel_err || best.worst_param.is_empty() {
                best.max_rel_err = rel;
                best.worst_param = format!("{name}[{i}]");
                best.analytic = a;
                best.numeric = numeric;
            }
        }
    }
    Ok(best)
}

/// A small random model with at most `max_params` parameters.
pub fn tiny_model(rng: &mut ChaCha8Rng, max_params: usize) -> Result<(ModelConfig, ModelParams)> {
    loop {
        let cfg = ModelConfig {
            input_dim: rng.random_range(1..=3),
            hidden_dim: rng.random_range(2..=5),
            state_dim: rng.random_range(1..=4),
            num_blocks: rng.random_range(1..=2),
            num_classes: rng.random_range(2..=3),
            dt: rng.random_range(0.2..=1.0),
            pooling: if rng.random_bool(0.5) {
                crate::network::Pooling::Last
            } else {
                crate::network::Pooling::Mean
            },
            solver: SolverConfig {
                mode: SolverMode::Sequential,
                ..SolverConfig::default()
            },
            seed: rng.random(),
            ..ModelConfig::default()
        };
        let params = init_params(&cfg)?;
        if params.num_params() <= max_params {
            return Ok((cfg, params));
        }
    }
}

fn gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    const S: &str = "gradients";
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for _ in 0..3 {
        let (cfg, params) = tiny_model(&mut rng, 500)?;
        let t_len = rng.random_range(1..=16);
        let batch: Vec<Matrix> = (0..2).map(|_| normal_matrix(&mut rng, t_len, cfg.input_dim)).collect();
        let w = normal_matrix(&mut rng, 2, cfg.num_classes);
        let g = gradient_check(&params, &cfg, &batch, &w, 1e-5)?;
        worst = worst.max(g.max_rel_err);
        details.push(g);
    }
    out.push(check(S, "model_backward_fd", worst <= 1e-5, json!({"max_rel_err": worst, "models": details})));

    let mut jac_err = 0.0f64;
    let mut cross = 0.0f64;
    for k in 0..1000 {
        let d = 1 + k % 8;
        let layer = random_layer(d, 3, rng.random())?;
        let cell = Cell::new(&layer, CellOptions::default());
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let base = cell.euler_step(&x, &u)?;
        let j = rng.random_range(0..d);
        let mut xp = x.clone();
        xp[j] += 1e-3;
        let moved = cell.euler_step(&xp, &u)?;
        for i in (0..d).filter(|&i| i != j) {
            cross = cross.max((moved[i] - base[i]).abs() / 1e-3);
        }
        if k < 100 {
            let lam = cell.step_jacobian_diag(&x, &u)?;
            let h = 1e-6;
            let mut xm = x.clone();
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            let fd = (cell.euler_step(&xp, &u)?[j] - cell.euler_step(&xm, &u)?[j]) / (2.0 * h);
            jac_err = jac_err.max((fd - lam[j]).abs() / lam[j].abs().max(1e-2));
        }
    }
    out.push(check(S, "step_jacobian_fd", jac_err <= 1e-6, json!({"instances": 100, "max_rel_err": jac_err})));
    out.push(check(S, "jacobian_diagonality", cross <= 1e-12, json!({"probes": 1000, "max_cross": cross})));
    Ok(out)
}
