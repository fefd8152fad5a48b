//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, keys carry a section prefix
//! (`model.`, `solver.`, `train.`, `data.`, `bench.`). Unknown keys are
//! rejected. [`RunConfig::to_text`] writes every key and parses back to an
//! equal configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cell::DependenceMode;
use crate::data::SynthKind;
use crate::error::{Error, Result};
use crate::network::{ModelConfig, Pooling};
use crate::solver::SolverMode;
use crate::train::{Grid, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// `.ts` or `.csv` file; when absent a synthetic task is generated.
    pub path: Option<PathBuf>,
    pub synth_kind: SynthKind,
    pub synth_length: usize,
    pub synth_channels: usize,
    pub synth_samples: usize,
    pub synth_seed: u64,
    /// Split used by `train`.
    pub split_seed: u64,
    /// Splits averaged by `eval` and `gridsearch`.
    pub split_seeds: Vec<u64>,
    pub fractions: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            synth_kind: SynthKind::SignOfSum,
            synth_length: 1000,
            synth_channels: 2,
            synth_samples: 2000,
            synth_seed: 0,
            split_seed: 0,
            split_seeds: vec![0, 1, 2, 3, 4],
            fractions: crate::data::DEFAULT_FRACTIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub threads: Vec<usize>,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![256, 1024, 4096, 16384],
            threads: vec![1],
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `input_dim`/`num_classes` of 0 are filled in from the dataset.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: Grid,
    pub data: DataConfig,
    pub bench: BenchConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                input_dim: 0,
                num_classes: 0,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            grid: Grid::default(),
            data: DataConfig::default(),
            bench: BenchConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every accepted key with its description, in [`RunConfig::to_text`] order.
pub const KEYS: &[(&str, &str)] = &[
    ("model.input_dim", "input channels p; 0 = take from the dataset"),
    ("model.hidden_dim", "block width H"),
    ("model.state_dim", "LRC states per block D"),
    ("model.num_blocks", "number of stacked blocks L"),
    ("model.num_classes", "output classes C; 0 = take from the dataset"),
    ("model.dt", "Euler step size"),
    ("model.dependence_mode", "full | a_input_only | input_only"),
    ("model.rho_clamp", "none, or a radius in (0.5, 1) bounding the transition coefficient"),
    ("model.pooling", "last | mean"),
    ("model.seed", "parameter initialization seed"),
    ("solver.mode", "sequential | newton_scan | elk_damped"),
    ("solver.tol", "stopping threshold on the ∞-norm fixed-point residual (evaluation)"),
    ("solver.max_iters", "Newton iteration cap"),
    ("solver.trust_ratio", "damping ratio r/q for elk_damped"),
    ("solver.block", "scan block size (power of two)"),
    ("train.lr", "Adam learning rate"),
    ("train.batch_size", "sequences per step"),
    ("train.max_epochs", "epoch cap"),
    ("train.patience", "non-improving epochs before early stopping"),
    ("train.seed", "batch shuffling seed"),
    ("train.train_tol", "solver tolerance during training steps"),
    ("train.target_val_acc", "none, or stop once validation accuracy reaches this value"),
    ("train.log_wall_time", "record wall_ms in metrics (false writes 0 for reproducible files)"),
    ("train.output_dir", "directory for checkpoint, metrics and config echo"),
    ("train.grid.lr", "comma-separated learning rates searched by gridsearch"),
    ("train.grid.hidden", "comma-separated hidden widths"),
    ("train.grid.state", "comma-separated state sizes"),
    ("train.grid.blocks", "comma-separated block counts"),
    ("data.path", "none, or a .ts / .csv file"),
    ("data.synth_kind", "sign_of_sum | long_parity (used when data.path is none)"),
    ("data.synth_length", "synthetic sequence length T"),
    ("data.synth_channels", "synthetic channels p"),
    ("data.synth_samples", "synthetic sample count"),
    ("data.synth_seed", "synthetic generation seed"),
    ("data.split_seed", "split seed used by train"),
    ("data.split_seeds", "comma-separated split seeds used by eval and gridsearch"),
    ("data.fractions", "train,val,test fractions"),
    ("bench.lengths", "comma-separated sequence lengths"),
    ("bench.threads", "comma-separated worker counts"),
    ("bench.repeats", "timed repetitions per measurement (best is kept)"),
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| Error::config(format!("{key}: cannot parse '{v}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let out: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::config(format!("{key}: list is empty")));
    }
    Ok(out)
}

fn parse_opt_f64(key: &str, v: &str) -> Result<Option<f64>> {
    if v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn join<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:?}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "model.input_dim" => m.input_dim = parse_num(key, v)?,
            "model.hidden_dim" => m.hidden_dim = parse_num(key, v)?,
            "model.state_dim" => m.state_dim = parse_num(key, v)?,
            "model.num_blocks" => m.num_blocks = parse_num(key, v)?,
            "model.num_classes" => m.num_classes = parse_num(key, v)?,
            "model.dt" => m.dt = parse_num(key, v)?,
            "model.dependence_mode" => m.dependence_mode = DependenceMode::parse(v)?,
            "model.rho_clamp" => m.rho_clamp = parse_opt_f64(key, v)?,
            "model.pooling" => m.pooling = Pooling::parse(v)?,
            "model.seed" => m.seed = parse_num(key, v)?,
            "solver.mode" => m.solver.mode = SolverMode::parse(v)?,
            "solver.tol" => m.solver.tol = parse_num(key, v)?,
            "solver.max_iters" => m.solver.max_iters = parse_num(key, v)?,
            "solver.trust_ratio" => m.solver.trust_ratio = parse_num(key, v)?,
            "solver.block" => m.solver.block = parse_num(key, v)?,
            "train.lr" => t.lr = parse_num(key, v)?,
            "train.batch_size" => t.batch_size = parse_num(key, v)?,
            "train.max_epochs" => t.max_epochs = parse_num(key, v)?,
            "train.patience" => t.patience = parse_num(key, v)?,
            "train.seed" => t.seed = parse_num(key, v)?,
            "train.train_tol" => t.train_tol = parse_num(key, v)?,
            "train.target_val_acc" => t.target_val_acc = parse_opt_f64(key, v)?,
            "train.log_wall_time" => t.log_wall_time = parse_bool(key, v)?,
            "train.output_dir" => self.output_dir = PathBuf::from(v),
            "train.grid.lr" => self.grid.lr = parse_list(key, v)?,
            "train.grid.hidden" => self.grid.hidden = parse_list(key, v)?,
            "train.grid.state" => self.grid.state = parse_list(key, v)?,
            "train.grid.blocks" => self.grid.blocks = parse_list(key, v)?,
            "data.path" => {
                d.path = if v.eq_ignore_ascii_case("none") || v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "data.synth_kind" => d.synth_kind = SynthKind::parse(v)?,
            "data.synth_length" => d.synth_length = parse_num(key, v)?,
            "data.synth_channels" => d.synth_channels = parse_num(key, v)?,
            "data.synth_samples" => d.synth_samples = parse_num(key, v)?,
            "data.synth_seed" => d.synth_seed = parse_num(key, v)?,
            "data.split_seed" => d.split_seed = parse_num(key, v)?,
            "data.split_seeds" => d.split_seeds = parse_list(key, v)?,
            "data.fractions" => {
                let f: Vec<f64> = parse_list(key, v)?;
                if f.len() != 3 {
                    return Err(Error::config(format!("{key}: expected three fractions")));
                }
                d.fractions = (f[0], f[1], f[2]);
            }
            "bench.lengths" => self.bench.lengths = parse_list(key, v)?,
            "bench.threads" => self.bench.threads = parse_list(key, v)?,
            "bench.repeats" => self.bench.repeats = parse_num(key, v)?,
            _ => return Err(Error::config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        Some(match key {
            "model.input_dim" => m.input_dim.to_string(),
            "model.hidden_dim" => m.hidden_dim.to_string(),
            "model.state_dim" => m.state_dim.to_string(),
            "model.num_blocks" => m.num_blocks.to_string(),
            "model.num_classes" => m.num_classes.to_string(),
            "model.dt" => format!("{:?}", m.dt),
            "model.dependence_mode" => m.dependence_mode.as_str().into(),
            "model.rho_clamp" => opt_f64(m.rho_clamp),
            "model.pooling" => m.pooling.as_str().into(),
            "model.seed" => m.seed.to_string(),
            "solver.mode" => m.solver.mode.as_str().into(),
            "solver.tol" => format!("{:?}", m.solver.tol),
            "solver.max_iters" => m.solver.max_iters.to_string(),
            "solver.trust_ratio" => format!("{:?}", m.solver.trust_ratio),
            "solver.block" => m.solver.block.to_string(),
            "train.lr" => format!("{:?}", t.lr),
            "train.batch_size" => t.batch_size.to_string(),
            "train.max_epochs" => t.max_epochs.to_string(),
            "train.patience" => t.patience.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.train_tol" => format!("{:?}", t.train_tol),
            "train.target_val_acc" => opt_f64(t.target_val_acc),
            "train.log_wall_time" => t.log_wall_time.to_string(),
            "train.output_dir" => self.output_dir.display().to_string(),
            "train.grid.lr" => join(&self.grid.lr),
            "train.grid.hidden" => join(&self.grid.hidden),
            "train.grid.state" => join(&self.grid.state),
            "train.grid.blocks" => join(&self.grid.blocks),
            "data.path" => d
                .path
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
            "data.synth_kind" => d.synth_kind.as_str().into(),
            "data.synth_length" => d.synth_length.to_string(),
            "data.synth_channels" => d.synth_channels.to_string(),
            "data.synth_samples" => d.synth_samples.to_string(),
            "data.synth_seed" => d.synth_seed.to_string(),
            "data.split_seed" => d.split_seed.to_string(),
            "data.split_seeds" => join(&d.split_seeds),
            "data.fractions" => join(&[d.fractions.0, d.fractions.1, d.fractions.2]),
            "bench.lengths" => join(&self.bench.lengths),
            "bench.threads" => join(&self.bench.threads),
            "bench.repeats" => self.bench.repeats.to_string(),
            _ => return None,
        })
    }

    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key = value, got '{line}'", i + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key, one per line.
    pub fn to_text(&self) -> String {
        self.text_for(|_| true)
    }

    /// Only the `model.` and `solver.` keys.
    pub fn model_text(&self) -> String {
        self.text_for(|k| k.starts_with("model.") || k.starts_with("solver."))
    }

    fn text_for(&self, keep: impl Fn(&str) -> bool) -> String {
        KEYS.iter()
            .filter(|(k, _)| keep(k))
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("every listed key has a value")))
            .collect()
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        let mut probe = self.model.clone();
        probe.input_dim = probe.input_dim.max(1);
        probe.num_classes = probe.num_classes.max(1);
        probe.validate()?;
        self.train.validate()?;
        let (a, b, c) = self.data.fractions;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::config("data.fractions must be in [0, 1] and sum to 1"));
        }
        if self.bench.repeats == 0 || self.bench.threads.contains(&0) {
            return Err(Error::config("bench.repeats and bench.threads must be >= 1"));
        }
        Ok(())
    }

    /// Model configuration with data-derived dimensions filled in.
    pub fn resolved_model(&self, input_dim: usize, num_classes: usize) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        if m.input_dim == 0 {
            m.input_dim = input_dim;
        } else if m.input_dim != input_dim {
            return Err(Error::config(format!(
                "model.input_dim = {} but the data has {input_dim} channels",
                m.input_dim
            )));
        }
        if m.num_classes == 0 {
            m.num_classes = num_classes;
        } else if m.num_classes < num_classes {
            return Err(Error::config(format!(
                "model.num_classes = {} but the data has {num_classes} classes",
                m.num_classes
            )));
        }
        m.validate()?;
        Ok(m)
    }
}

/// `key  description` lines for `--help`.
pub fn keys_help() -> String {
    let defaults = RunConfig::default();
    KEYS.iter()
        .map(|(k, doc)| format!("  {k:<24} {doc} [default: {}]\n", defaults.get(k).unwrap_or_default()))
        .collect()
}
