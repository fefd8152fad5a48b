use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use lrcssm::checkpoint;
use lrcssm::config::RunConfig;
use lrcssm::data::{self, Dataset, SynthKind};
use lrcssm::suite::{run_suite, Suite, SuiteOptions};
use lrcssm::train::{accuracy, grid_search, mean_std, train as run_training};
use lrcssm::verify::{self, ScalingConfig};
use lrcssm::Error;
use serde_json::json;

/// A failed command with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 2,
            e if e.is_data_error() => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn output_failure(path: &Path, e: impl fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| output_failure(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| output_failure(path, e))
}

fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<(), Error> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{o}'")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Error> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Error> {
    let d = &cfg.data;
    let ds = match &d.path {
        Some(p) => data::load(p)?,
        None => data::synth_task(d.synth_kind, d.synth_length, d.synth_channels, d.synth_samples, d.synth_seed)?,
    };
    log::info!(
        "dataset '{}': {} sequences, {} channels, length {}, {} classes",
        ds.name,
        ds.len(),
        ds.num_channels(),
        ds.seq_len(),
        ds.class_count()
    );
    Ok(ds)
}

pub fn train(config: &Path, overrides: &[String]) -> CmdResult {
    let cfg = load_config(Some(config), overrides)?;
    let ds = load_dataset(&cfg)?;
    let (mut tr, mut va, mut te) = data::split(&ds, cfg.data.split_seed, cfg.data.fractions)?;
    data::normalize_splits(&mut tr, &mut va, &mut te)?;
    let model = cfg.resolved_model(ds.num_channels(), ds.class_count())?;

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| output_failure(out, e))?;
    let resolved = RunConfig {
        model: model.clone(),
        ..cfg.clone()
    };
    write_file(&out.join("config.resolved"), resolved.to_text().as_bytes())?;

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = create(&metrics_path)?;
    let outcome = run_training(&model, &tr, &va, &cfg.train, Some(&mut metrics))?;
    metrics.flush().map_err(|e| output_failure(&metrics_path, e))?;

    let ckpt = out.join("model.ckpt");
    checkpoint::save(&ckpt, &outcome.best_params, &model).map_err(|e| output_failure(&ckpt, e))?;
    let test_acc = if te.is_empty() {
        None
    } else {
        Some(accuracy(&outcome.best_params, &te, &model)?)
    };
    let summary = json!({
        "epochs": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_acc": outcome.best_val_acc,
        "test_acc": test_acc,
        "diverged": outcome.diverged,
        "num_params": outcome.best_params.num_params(),
    });
    write_file(&out.join("summary.json"), format!("{summary:#}\n").as_bytes())?;
    println!(
        "best epoch {} | val acc {:.4} | test acc {} | wrote {}",
        outcome.best_epoch,
        outcome.best_val_acc,
        test_acc.map_or_else(|| "n/a".into(), |a| format!("{a:.4}")),
        out.display()
    );
    Ok(0)
}

pub fn eval(ckpt: &Path, config: Option<&Path>, data_path: Option<&Path>, overrides: &[String]) -> CmdResult {
    let mut cfg = load_config(config, overrides)?;
    if let Some(p) = data_path {
        cfg.data.path = Some(p.to_path_buf());
    }
    let (model, params) = checkpoint::load(ckpt)?;
    let ds = load_dataset(&cfg)?;
    if ds.num_channels() != model.input_dim || ds.class_count() > model.num_classes {
        return Err(Error::Validation(format!(
            "data has {} channels and {} classes, checkpoint expects {} and {}",
            ds.num_channels(),
            ds.class_count(),
            model.input_dim,
            model.num_classes
        ))
        .into());
    }
    let mut accs = Vec::with_capacity(cfg.data.split_seeds.len());
    for &seed in &cfg.data.split_seeds {
        let (mut tr, mut va, mut te) = data::split(&ds, seed, cfg.data.fractions)?;
        data::normalize_splits(&mut tr, &mut va, &mut te)?;
        let acc = accuracy(&params, &te, &model)?;
        log::info!("split seed {seed}: test acc {acc:.4}");
        accs.push(acc);
    }
    let (mean, std) = mean_std(&accs);
    println!("test accuracy {mean:.4} ± {std:.4} over {} splits", accs.len());
    println!("{}", json!({"split_seeds": cfg.data.split_seeds, "test_accs": accs, "mean": mean, "std": std}));
    Ok(0)
}

pub fn gridsearch(config: &Path, overrides: &[String]) -> CmdResult {
    let cfg = load_config(Some(config), overrides)?;
    let ds = load_dataset(&cfg)?;
    let model = cfg.resolved_model(ds.num_channels(), ds.class_count())?;
    let result = grid_search(&ds, &cfg.grid, &model, &cfg.train, &cfg.data.split_seeds, cfg.data.fractions)?;

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| output_failure(out, e))?;
    let mut table = String::from("lr,hidden,state,blocks,num_params,mean_val_acc,std_val_acc\n");
    for r in &result.table {
        table.push_str(&format!(
            "{:?},{},{},{},{},{},{}\n",
            r.point.lr, r.point.hidden, r.point.state, r.point.blocks, r.num_params, r.mean_val_acc, r.std_val_acc
        ));
    }
    write_file(&out.join("grid.csv"), table.as_bytes())?;
    let js = serde_json::to_string_pretty(&result).expect("grid result serializes");
    write_file(&out.join("grid.json"), js.as_bytes())?;
    let b = result.best;
    println!(
        "best: lr={:?} hidden={} state={} blocks={}",
        b.lr, b.hidden, b.state, b.blocks
    );
    Ok(0)
}

pub fn bench(config: &Path, overrides: &[String]) -> CmdResult {
    let cfg = load_config(Some(config), overrides)?;
    let m = &cfg.model;
    let scaling = ScalingConfig {
        lengths: cfg.bench.lengths.clone(),
        threads: cfg.bench.threads.clone(),
        state_dim: m.state_dim,
        input_dim: m.hidden_dim,
        repeats: cfg.bench.repeats,
        solver: m.solver,
        seed: m.seed,
    };
    let rows = verify::runtime_scaling(&scaling)?;

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| output_failure(out, e))?;
    let csv_path = out.join("scaling.csv");
    verify::write_scaling_csv(&rows, create(&csv_path)?).map_err(|e| output_failure(&csv_path, e))?;
    let js_path = out.join("scaling.jsonl");
    verify::write_scaling_jsonl(&rows, create(&js_path)?).map_err(|e| output_failure(&js_path, e))?;

    let mut flop_cfg = m.clone();
    flop_cfg.input_dim = flop_cfg.input_dim.max(1);
    flop_cfg.num_classes = flop_cfg.num_classes.max(2);
    println!("{:>7} {:>7} {:>12} {:>12} {:>6} {:>6} {:>14}", "T", "threads", "seq_ms", "par_ms", "iters", "syncs", "core_flops");
    for r in &rows {
        println!(
            "{:>7} {:>7} {:>12.3} {:>12.3} {:>6} {:>6} {:>14}",
            r.seq_len,
            r.threads,
            r.sequential_ms,
            r.parallel_ms,
            r.newton_iters,
            r.sync_rounds_per_scan,
            verify::flop_estimate(&flop_cfg, r.seq_len, 1)
        );
    }
    println!("wrote {} and {}", csv_path.display(), js_path.display());
    Ok(0)
}

pub fn verify(
    suite: &str,
    seed: u64,
    ckpt: Option<&Path>,
    inject_lambda: Option<f64>,
    report: Option<&Path>,
) -> CmdResult {
    let suite = Suite::parse(suite)?;
    let model = ckpt.map(checkpoint::load).transpose()?;
    let opts = SuiteOptions {
        seed,
        inject_lambda,
        model,
    };
    let results = run_suite(suite, &opts)?;
    let mut sink = report.map(create).transpose()?;
    let mut failed = 0;
    for r in &results {
        if r.passed {
            println!("PASS {}/{}", r.suite, r.name);
        } else {
            failed += 1;
            println!("FAIL {}/{}: {}", r.suite, r.name, r.detail);
        }
        if let (Some(w), Some(path)) = (sink.as_mut(), report) {
            serde_json::to_writer(&mut *w, r).map_err(|e| output_failure(path, e))?;
            w.write_all(b"\n").map_err(|e| output_failure(path, e))?;
        }
    }
    if let (Some(mut w), Some(path)) = (sink, report) {
        w.flush().map_err(|e| output_failure(path, e))?;
    }
    println!("{} checks, {} failed", results.len(), failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

pub fn synth_gen(kind: &str, length: usize, channels: usize, samples: usize, seed: u64, out: &Path) -> CmdResult {
    let kind = SynthKind::parse(kind)?;
    let ds = data::synth_task(kind, length, channels, samples, seed)?;
    match out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ts") => data::write_ts(&ds, out)?,
        Some("csv") => data::write_csv(&ds, out)?,
        _ => {
            return Err(Error::Config(format!(
                "output {} must end in .ts or .csv",
                out.display()
            ))
            .into())
        }
    }
    println!("wrote {} sequences of length {length} to {}", ds.len(), out.display());
    Ok(0)
}
