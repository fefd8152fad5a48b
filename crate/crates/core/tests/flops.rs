use lrcssm::backward::model_backward;
use lrcssm::cell::DependenceMode;
use lrcssm::flops;
use lrcssm::network::{forward, init_params, ModelConfig};
use lrcssm::solver::{SolverConfig, SolverMode};
use lrcssm::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn configs() -> Vec<(ModelConfig, usize, usize)> {
    let mut out = Vec::new();
    for mode in [SolverMode::Sequential, SolverMode::NewtonScan, SolverMode::ElkDamped] {
        for (h, d, l, t) in [(4, 3, 1, 16), (8, 8, 2, 100), (6, 16, 3, 257)] {
            let cfg = ModelConfig {
                input_dim: 2,
                hidden_dim: h,
                state_dim: d,
                num_blocks: l,
                num_classes: 3,
                dependence_mode: DependenceMode::Full,
                solver: SolverConfig {
                    mode,
                    ..SolverConfig::default()
                },
                seed: 5,
                ..ModelConfig::default()
            };
            out.push((cfg, t, 3));
        }
    }
    out
}

/// Counted forward and backward totals on one thread.
fn measure(cfg: &ModelConfig, t: usize, b: usize) -> (u64, u64) {
    let params = init_params(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch: Vec<Matrix> = (0..b)
        .map(|_| Matrix::from_vec(t, 2, (0..2 * t).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let ((logits, cache), fwd) = flops::count(|| forward(&params, &batch, cfg).unwrap());
        let seed = Matrix::from_vec(logits.rows(), logits.cols(), vec![1.0; logits.rows() * logits.cols()]);
        let (_, bwd) = flops::count(|| model_backward(&params, &cache, &seed).unwrap());
        (fwd.total(), bwd.total())
    })
}

#[test]
fn estimate_is_within_a_factor_of_two_of_the_counters() {
    for (cfg, t, b) in configs() {
        let (fwd, bwd) = measure(&cfg, t, b);
        let est = lrcssm::verify::flop_estimate(&cfg, t, b) as f64;
        let ratio = est / (fwd + bwd) as f64;
        assert!(
            (0.5..=2.0).contains(&ratio),
            "{:?} H={} D={} L={} T={t}: estimate {est} vs counted {} (ratio {ratio:.3})",
            cfg.solver.mode,
            cfg.hidden_dim,
            cfg.state_dim,
            cfg.num_blocks,
            fwd + bwd
        );
    }
}

#[test]
fn backward_costs_at_most_three_forwards() {
    for (cfg, t, b) in configs() {
        let (fwd, bwd) = measure(&cfg, t, b);
        assert!(fwd > 0);
        assert!(
            bwd <= 3 * fwd,
            "{:?} D={} T={t}: backward {bwd} > 3 × forward {fwd}",
            cfg.solver.mode,
            cfg.state_dim
        );
    }
}

#[test]
fn counted_work_is_linear_in_length() {
    let cfg = &configs()[0].0;
    // both lengths past one scan block, so the pass count per step matches
    let (f1, b1) = measure(cfg, 128, 2);
    let (f2, b2) = measure(cfg, 256, 2);
    assert_eq!(2 * (f1 + b1), f2 + b2);
}
