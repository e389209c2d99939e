//! `flatcusp`: run a pipeline from a JSON config and write its artifacts.
//!
//! Exit status: 0 when every check passes, 1 when a check fails or the
//! computation errors, 2 on a configuration error (nothing is written).

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::{load, ConfigError, RunConfig};
use run::{Log, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "flatcusp",
    version,
    about = "Flat two-sided cusp toolkit: certificates, compositions, symbol fits, Radon artifacts and caustics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; keys not given take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized sampling; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Progress on stderr.
    #[arg(long)]
    verbose: bool,
    /// Validate the config, print it with defaults filled in, and stop.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Singularity reports and the flat two-sided cusp certificate of a chart.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Built-in chart name; overrides the config.
        #[arg(long)]
        chart: Option<String>,
    },
    /// Composition cloud with branch labels and the intersection codimension.
    Compose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        chart: Option<String>,
        /// Number of random seeds; overrides the config.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Open-umbrella certificates and isotropy defects.
    Umbrella {
        #[command(flatten)]
        common: Common,
    },
    /// Blow-up exponent fits of the symbol factors.
    Symbol {
        #[command(flatten)]
        common: Common,
    },
    /// Normal image of a point scatterer, predicted artifact locus and coverage.
    Radon {
        #[command(flatten)]
        common: Common,
    },
    /// Ray tracing through a sound-speed model and caustic classification.
    Caustics {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Run(String),
    /// `--dry-run`: the resolved config, already printed.
    Resolved,
}

fn prepare<T>(
    common: &Common,
    name: &str,
    tweak: impl FnOnce(&mut T),
    check: impl FnOnce(&T) -> Result<(), ConfigError>,
) -> Result<RunConfig<T>, Failure>
where
    T: DeserializeOwned + Serialize + Default,
{
    let mut cfg = load::<T>(common.config.as_deref(), name, common.seed)
        .map_err(|e| Failure::Config(e.to_string()))?;
    tweak(&mut cfg.body);
    check(&cfg.body).map_err(|e| Failure::Config(e.to_string()))?;
    if common.dry_run {
        let mut v = serde_json::to_value(&cfg.body).map_err(|e| Failure::Config(e.to_string()))?;
        if let Some(m) = v.as_object_mut() {
            m.insert("subcommand".into(), name.into());
            m.insert("seed".into(), cfg.seed.into());
        }
        println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
        return Err(Failure::Resolved);
    }
    Ok(cfg)
}

fn execute(cli: Cli, start: Instant) -> Result<(Outcome, PathBuf), Failure> {
    let run_err = |e: flatcusp::Error| Failure::Run(e.to_string());
    let log = |c: &Common| Log {
        verbose: c.verbose,
        start,
    };
    let out = |c: &Common| c.out.clone();
    match cli.command {
        Command::Classify { common, chart } => {
            let cfg = prepare(
                &common,
                "classify",
                |b: &mut config::ClassifyConfig| {
                    if let Some(c) = chart {
                        b.chart = c;
                    }
                },
                |b| run::classify_inputs(b).map(|_| ()),
            )?;
            Ok((
                run::classify(&cfg, log(&common)).map_err(run_err)?,
                out(&common),
            ))
        }
        Command::Compose {
            common,
            chart,
            seeds,
        } => {
            let cfg = prepare(
                &common,
                "compose",
                |b: &mut config::ComposeConfig| {
                    if let Some(c) = chart {
                        b.chart = c;
                    }
                    if let Some(n) = seeds {
                        b.seeds = n;
                    }
                },
                config::ComposeConfig::validate,
            )?;
            Ok((
                run::compose(&cfg, log(&common)).map_err(run_err)?,
                out(&common),
            ))
        }
        Command::Umbrella { common } => {
            let cfg = prepare(
                &common,
                "umbrella",
                |_| {},
                config::UmbrellaConfig::validate,
            )?;
            Ok((
                run::umbrella(&cfg, log(&common)).map_err(run_err)?,
                out(&common),
            ))
        }
        Command::Symbol { common } => {
            let cfg = prepare(&common, "symbol", |_| {}, config::SymbolConfig::validate)?;
            Ok((
                run::symbol(&cfg, log(&common)).map_err(run_err)?,
                out(&common),
            ))
        }
        Command::Radon { common } => {
            let cfg = prepare(&common, "radon", |_| {}, config::RadonConfig::validate)?;
            Ok((
                run::radon(&cfg, log(&common)).map_err(run_err)?,
                out(&common),
            ))
        }
        Command::Caustics { common } => {
            let cfg = prepare(
                &common,
                "caustics",
                |_| {},
                config::CausticsConfig::validate,
            )?;
            Ok((
                run::caustics(&cfg, log(&common)).map_err(run_err)?,
                out(&common),
            ))
        }
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let cli = Cli::parse();
    let (outcome, dir) = match execute(cli, start) {
        Ok(v) => v,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Resolved) => return ExitCode::SUCCESS,
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let summary = outcome.summary.clone();
    if let Err(e) = outcome.write(&dir) {
        eprintln!("error writing {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    for c in &summary.checks {
        println!(
            "{} {:<36} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!(
        "{}: {} ({})",
        summary.subcommand,
        if summary.passed { "passed" } else { "FAILED" },
        dir.join("summary.json").display()
    );
    if summary.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
