use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use mcbf::experiment::{self, ExperimentConfig, ExperimentKind};
use mcbf::Error;

/// Runs beamforming experiments and writes CSV tables plus summary.json.
///
/// Every flag can also be set through an environment variable with the
/// `MCBF_` prefix, e.g. `MCBF_SEED=3`. Flags take precedence over the
/// variables, and both take precedence over the config file.
#[derive(Debug, Parser)]
#[command(name = "mcbf", version, about)]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, env = "MCBF_CONFIG")]
    config: Option<PathBuf>,

    /// Experiment to run; overrides the config file.
    #[arg(long, env = "MCBF_EXPERIMENT")]
    experiment: Option<ExperimentKind>,

    #[arg(long, env = "MCBF_SEED")]
    seed: Option<u64>,

    /// Gaussian randomization candidates per solve.
    #[arg(long, env = "MCBF_RANDOMIZATIONS")]
    randomizations: Option<usize>,

    /// Output directory.
    #[arg(long, env = "MCBF_OUT")]
    out: Option<PathBuf>,

    /// Only report errors.
    #[arg(long, env = "MCBF_QUIET")]
    quiet: bool,
}

fn load_config(cli: &Cli) -> mcbf::Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.experiment) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
                line: 0,
                field: "config".into(),
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(kind) = cli.experiment {
                cfg.experiment = kind;
            }
            cfg
        }
        (None, Some(kind)) => ExperimentConfig::defaults(kind),
        (None, None) => {
            return Err(Error::Config {
                line: 0,
                field: "experiment".into(),
                message: "pass --config or --experiment".into(),
            })
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.randomizations {
        cfg.n_rand = n;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn error_line(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::Solver { .. } => "solver",
        Error::Infeasible(_) => "infeasible",
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
    };
    let mut v = json!({ "error": kind, "message": e.to_string() });
    if let Error::Config { line, field, .. } = e {
        v["line"] = json!(line);
        v["field"] = json!(field);
    }
    v
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).parse_env("MCBF_LOG").init();

    let result = load_config(&cli).and_then(|cfg| experiment::run(&cfg));
    match result {
        Ok(summary) => {
            if !cli.quiet {
                println!(
                    "{}: {} points, {} failures, files: {}",
                    summary.experiment,
                    summary.points,
                    summary.failures.len(),
                    summary.files.join(" ")
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            match e {
                Error::Config { .. } | Error::InvalidInput(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
