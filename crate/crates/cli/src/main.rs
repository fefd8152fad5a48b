use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Exit codes: 0 ok, 1 runtime failure (including failed checks), 2 config error, 3 data error.
#[derive(Debug, Parser)]
#[command(name = "lrcssm", version, about = "LRC state-space sequence classifier", after_help = keys_after_help())]
struct Cli {
    /// Worker threads for the compute pool (default: all cores).
    #[arg(long, global = true, env = "LRC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes model.ckpt, metrics.jsonl, config.resolved and summary.json.
    Train(ConfigArgs),
    /// Test accuracy of a checkpoint, mean ± std over data.split_seeds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Supplies the data.* keys; defaults apply when omitted.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Dataset file, overriding data.path.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Hyperparameter grid search over train.grid.*; writes grid.csv and grid.json.
    Gridsearch(ConfigArgs),
    /// Runtime scaling of sequential rollout against the parallel solver;
    /// writes scaling.csv and scaling.jsonl.
    Bench(ConfigArgs),
    /// Run verification suites; exits 0 only if every check passes.
    Verify {
        #[arg(long, default_value = "all", value_parser = ["all", "stability", "solver", "gradients"])]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use this checkpoint for the run-based stability check.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Add a constant-coefficient stability fixture with this λ.
        #[arg(long, value_name = "LAMBDA")]
        inject_lambda: Option<f64>,
        /// Also write one JSON line per check to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as .ts or .csv (chosen by extension).
    SynthGen {
        #[arg(long, value_parser = ["sign_of_sum", "long_parity"])]
        kind: String,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 2)]
        channels: usize,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn keys_after_help() -> String {
    format!("Configuration keys:\n{}", lrcssm::config::keys_help())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(&a.config, &a.overrides),
        Command::Eval {
            checkpoint,
            config,
            data,
            overrides,
        } => commands::eval(&checkpoint, config.as_deref(), data.as_deref(), &overrides),
        Command::Gridsearch(a) => commands::gridsearch(&a.config, &a.overrides),
        Command::Bench(a) => commands::bench(&a.config, &a.overrides),
        Command::Verify {
            suite,
            seed,
            checkpoint,
            inject_lambda,
            report,
        } => commands::verify(&suite, seed, checkpoint.as_deref(), inject_lambda, report.as_deref()),
        Command::SynthGen {
            kind,
            length,
            channels,
            samples,
            seed,
            out,
        } => commands::synth_gen(&kind, length, channels, samples, seed, &out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
