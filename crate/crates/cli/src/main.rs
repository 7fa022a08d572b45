use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use piwno::config::ExperimentConfig;
use piwno::experiment::{self, Run, Source};
use piwno::Error;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "piwno", version = experiment::VERSION, about = "Physics-informed wavelet operator reliability experiments")]
struct Cli {
    /// Directory that relative `output_dir` settings resolve against
    #[arg(long, global = true, env = "PIWNO_OUTPUT_ROOT", default_value = ".")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML)
    #[arg(short, long)]
    config: PathBuf,
    /// Override one setting, e.g. `--set train.epochs=10` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Solver,
    Surrogate,
    Both,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Solver => Source::Solver,
            SourceArg::Surrogate => Source::Surrogate,
            SourceArg::Both => Source::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw the training input bank
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also solve every input with the reference solver
        #[arg(long)]
        solutions: bool,
    },
    /// Train the operator on the input bank
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the checkpoint in the run directory
        #[arg(long)]
        resume: bool,
    },
    /// Compare the trained operator with the reference solver
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        n_holdout: Option<usize>,
    },
    /// Monte Carlo failure probability and reliability index
    Reliability {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "solver")]
        source: SourceArg,
    },
    /// Failure probability over the configured thresholds
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "solver")]
        source: SourceArg,
    },
    /// First-order reliability method
    Form {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "solver")]
        source: SourceArg,
    },
    /// Second-order reliability method (Breitung)
    Sorm {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "solver")]
        source: SourceArg,
    },
    /// Karhunen–Loève intrinsic dimension of the random input
    Kle {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn load(args: &ConfigArgs, root: &std::path::Path) -> piwno::Result<Run> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    Run::new(ExperimentConfig::from_toml(&text, &args.overrides)?, root)
}

fn to_json<T: serde::Serialize>(v: piwno::Result<T>) -> piwno::Result<Value> {
    v.and_then(|v| serde_json::to_value(v).map_err(|e| Error::Internal(e.to_string())))
}

fn execute(cli: &Cli) -> piwno::Result<Value> {
    let root = &cli.output_root;
    let (name, result) = match &cli.command {
        Command::Sample { cfg, solutions } => ("sample", to_json(experiment::cmd_sample(&load(cfg, root)?, *solutions))),
        Command::Train { cfg, resume } => ("train", to_json(experiment::cmd_train(&load(cfg, root)?, *resume))),
        Command::Validate { cfg, n_holdout } => (
            "validate",
            to_json(experiment::cmd_validate(&load(cfg, root)?, *n_holdout).map(|s| s.stats)),
        ),
        Command::Reliability { cfg, source } => {
            let r = experiment::cmd_reliability(&load(cfg, root)?, (*source).into()).map(|r| {
                let brief = |x: &Option<piwno::reliability::ReliabilityReport>| {
                    x.as_ref().map(|r| json!({ "pf": r.pf, "beta": r.beta, "stderr": r.stderr, "n_samples": r.n_samples }))
                };
                json!({ "solver": brief(&r.solver), "surrogate": brief(&r.surrogate), "pf_delta": r.pf_delta })
            });
            ("reliability", r)
        }
        Command::Sweep { cfg, source } => ("sweep", to_json(experiment::cmd_sweep(&load(cfg, root)?, (*source).into()))),
        Command::Form { cfg, source } => {
            ("form", to_json(experiment::cmd_form(&load(cfg, root)?, (*source).into(), false).map(|s| s.mpp)))
        }
        Command::Sorm { cfg, source } => (
            "sorm",
            to_json(experiment::cmd_form(&load(cfg, root)?, (*source).into(), true).map(|s| s.sorm)),
        ),
        Command::Kle { cfg } => ("kle", to_json(experiment::cmd_kle(&load(cfg, root)?))),
    };
    Ok(json!({ "command": name, "result": result? }))
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string(), 2),
    };
    match execute(&cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), if matches!(e, Error::Config(_)) { 2 } else { 1 }),
    }
}
