//! Cross-entropy training with Adam, early stopping on validation accuracy,
//! and grid search over model/optimizer settings.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backward::model_backward;
use crate::data::{normalize_splits, split, Dataset};
use crate::error::{Error, Result};
use crate::network::{forward, init_params, predict, GradientSet, ModelConfig, ModelParams};
use crate::tensor::Matrix;

/// Mean negative log-likelihood of the true class and its gradient with
/// respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::config(format!("{b} logit rows but {} labels", labels.len())));
    }
    if b == 0 {
        return Err(Error::config("cross entropy of an empty batch"));
    }
    let mut d = Matrix::zeros(b, c);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::config(format!("label {y} outside [0, {c})")));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        let drow = d.row_mut(r);
        for (k, v) in row.iter().enumerate() {
            drow[k] = (v - log_z).exp() * inv_b;
        }
        drow[y] -= inv_b;
    }
    Ok((loss * inv_b, d))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_of(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(r, &y)| argmax(logits.row(*r)) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Classification accuracy of `params` on `ds`, evaluated in chunks.
pub fn accuracy(params: &ModelParams, ds: &Dataset, cfg: &ModelConfig) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::config("accuracy of an empty dataset"));
    }
    let mut hits = 0usize;
    for (seqs, labels) in ds.sequences.chunks(256).zip(ds.labels.chunks(256)) {
        let logits = predict(params, seqs, cfg)?;
        hits += labels
            .iter()
            .enumerate()
            .filter(|(r, &y)| argmax(logits.row(*r)) == y)
            .count();
    }
    Ok(hits as f64 / ds.len() as f64)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments, flattened in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &ModelParams) -> Self {
        let n = params.num_params();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &GradientSet, opt: &mut OptimState, lr: f64) {
    opt.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(opt.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(opt.step as i32);
    let mut k = 0;
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.params.tensors()) {
        for (pi, gi) in p.iter_mut().zip(g) {
            let m = &mut opt.m[k];
            let v = &mut opt.v[k];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
            *pi -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Solver tolerance used for training steps; evaluation keeps the model's.
    pub train_tol: f64,
    /// Stop as soon as validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
    /// When false, `wall_ms` is written as 0 so metrics files are reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            train_tol: 1e-4,
            target_val_acc: None,
            log_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("train.lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs must be >= 1"));
        }
        if !(self.train_tol > 0.0) {
            return Err(Error::config("train.train_tol must be > 0"));
        }
        Ok(())
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub mean_solver_iters: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation accuracy.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub history: Vec<EpochRecord>,
    /// Training stopped because the loss or a forward pass became non-finite.
    pub diverged: bool,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NumericOverflow { .. })
}

/// Trains from `init_params(model_cfg)` and returns the best-validation
/// checkpoint. Metrics records are written to `metrics` as JSON lines.
pub fn train(
    model_cfg: &ModelConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    tcfg: &TrainConfig,
    mut metrics: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    model_cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training and validation sets must be non-empty"));
    }
    let mut params = init_params(model_cfg)?;
    let mut step_cfg = model_cfg.clone();
    step_cfg.solver.tol = tcfg.train_tol;

    let mut opt = OptimState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best_params = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut waited = 0;
    let mut history = Vec::new();
    let mut diverged = false;

    'epochs: for epoch in 1..=tcfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut iters_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(tcfg.batch_size) {
            let seqs: Vec<Matrix> = idx.iter().map(|&i| train_set.sequences[i].clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let (logits, cache) = match forward(&params, &seqs, &step_cfg) {
                Ok(r) => r,
                Err(e) if is_divergence(&e) => {
                    log::warn!("epoch {epoch}: forward pass diverged ({e}); keeping best checkpoint");
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let (loss, d_logits) = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                log::warn!("epoch {epoch}: loss became {loss}; keeping best checkpoint");
                diverged = true;
                break 'epochs;
            }
            let grads = model_backward(&params, &cache, &d_logits)?;
            if !grads.is_finite() {
                log::warn!("epoch {epoch}: non-finite gradient; keeping best checkpoint");
                diverged = true;
                break 'epochs;
            }
            adam_step(&mut params, &grads, &mut opt, tcfg.lr);
            loss_sum += loss;
            iters_sum += cache.mean_solver_iterations();
            batches += 1;
        }

        let val_acc = match accuracy(&params, val_set, model_cfg) {
            Ok(a) => a,
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_acc,
            mean_solver_iters: iters_sum / batches as f64,
            wall_ms: if tcfg.log_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val_acc {:.4} solver iters {:.2}",
            record.train_loss,
            record.val_acc,
            record.mean_solver_iters
        );
        if let Some(w) = metrics.as_deref_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::Usage(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io("<metrics>", e))?;
        }
        history.push(record);

        if val_acc > best_val {
            best_val = val_acc;
            best_params = params.clone();
            best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited > tcfg.patience {
                break;
            }
        }
        if tcfg.target_val_acc.is_some_and(|t| best_val >= t) {
            break;
        }
    }

    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_val_acc: best_val.max(0.0),
        history,
        diverged,
    })
}

/// Hyperparameter sets searched by [`grid_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lr: Vec<f64>,
    pub hidden: Vec<usize>,
    pub state: Vec<usize>,
    pub blocks: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lr: vec![1e-5, 1e-4, 1e-3],
            hidden: vec![16, 64, 128],
            state: vec![16, 64, 256],
            blocks: vec![2, 4, 6],
        }
    }
}

impl Grid {
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &lr in &self.lr {
            for &hidden in &self.hidden {
                for &state in &self.state {
                    for &blocks in &self.blocks {
                        out.push(GridPoint {
                            lr,
                            hidden,
                            state,
                            blocks,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub hidden: usize,
    pub state: usize,
    pub blocks: usize,
}

impl GridPoint {
    pub fn apply(&self, model: &ModelConfig, tcfg: &TrainConfig) -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                hidden_dim: self.hidden,
                state_dim: self.state,
                num_blocks: self.blocks,
                ..model.clone()
            },
            TrainConfig {
                lr: self.lr,
                ..tcfg.clone()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: GridPoint,
    pub num_params: usize,
    pub val_accs: Vec<f64>,
    pub mean_val_acc: f64,
    pub std_val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridPoint,
    pub table: Vec<GridRow>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluates every grid point on each split seed (train on the train part,
/// score the best checkpoint on the validation part) and selects the highest
/// mean validation accuracy; ties go to fewer parameters, then lower lr.
pub fn grid_search(
    data: &Dataset,
    grid: &Grid,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    split_seeds: &[u64],
    fractions: (f64, f64, f64),
) -> Result<GridResult> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::config("grid is empty"));
    }
    if split_seeds.is_empty() {
        return Err(Error::config("grid search needs at least one split seed"));
    }
    let mut splits = Vec::with_capacity(split_seeds.len());
    for &s in split_seeds {
        let (mut tr, mut va, mut te) = split(data, s, fractions)?;
        normalize_splits(&mut tr, &mut va, &mut te)?;
        splits.push((tr, va));
    }
    let mut table = Vec::with_capacity(points.len());
    for point in points {
        let (mcfg, tcfg) = point.apply(base_model, base_train);
        let mut accs = Vec::with_capacity(splits.len());
        for (tr, va) in &splits {
            let out = train(&mcfg, tr, va, &tcfg, None)?;
            accs.push(out.best_val_acc);
        }
        let (mean, std) = mean_std(&accs);
        log::info!("grid {point:?}: val acc {mean:.4} ± {std:.4}");
        table.push(GridRow {
            point,
            num_params: ModelParams::zeros(&mcfg).num_params(),
            val_accs: accs,
            mean_val_acc: mean,
            std_val_acc: std,
        });
    }
    let best = table
        .iter()
        .min_by(|a, b| {
            b.mean_val_acc
                .total_cmp(&a.mean_val_acc)
                .then(a.num_params.cmp(&b.num_params))
                .then(a.point.lr.total_cmp(&b.point.lr))
        })
        .map(|r| r.point)
        .expect("table is non-empty");
    Ok(GridResult { best, table })
}
