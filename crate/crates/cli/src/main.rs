//! `claimscore`: simulate portfolios, fit claim-count models, search
//! bonus-malus structures and score models out of sample.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use manifest::Manifest;

/// Invalid configuration or input selection (exit code 1).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A replay whose outputs differ from the manifest (exit code 3).
#[derive(Debug)]
struct ReplayMismatch(String);

impl std::fmt::Display for ReplayMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ReplayMismatch {}

#[derive(Parser)]
#[command(name = "claimscore", version, about = "Claim-count models for panel insurance data")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding contracts.csv (and optionally history.csv, experience.csv).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic portfolio and its ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policyholders: Option<usize>,
    },
    /// Fit one or more model families.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Comma-separated families, e.g. poisson,nb1,hf-nbbeta*,bms-nb1.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        /// BMS structure for bms-* families, e.g. s=11,psi=6,entry=1.
        #[arg(long)]
        structure: Option<String>,
    },
    /// Rank BMS structures over a lattice.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        /// Lattice, e.g. s=2..11,psi=1..s,entry=1..s.
        #[arg(long)]
        grid: Option<String>,
        /// Reuse lattice points cached by an earlier run.
        #[arg(long)]
        resume: bool,
    },
    /// Score fitted models on validation data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated fit result files.
        #[arg(long, value_delimiter = ',')]
        fits: Option<Vec<PathBuf>>,
        #[arg(long)]
        max_lag: Option<u32>,
    },
    /// Re-run a command from its manifest and check the outputs match.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write to this directory instead of the original one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use claimscore::Error as E;
    for cause in e.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() {
            return 1;
        }
        if cause.is::<ReplayMismatch>() {
            return 3;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Io(_) => 2,
                E::Csv(c) if c.is_io_error() => 2,
                E::Numeric(_) | E::Truncation { .. } => 3,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn execute(command: &str, cfg: &RunConfig) -> anyhow::Result<(Manifest, usize)> {
    let outcome = commands::run(command, cfg)?;
    let manifest = Manifest::new(command, cfg, &outcome.inputs, &outcome.outputs)?;
    manifest.write()?;
    Ok((manifest, outcome.warnings))
}

fn replay(path: &std::path::Path, out: Option<PathBuf>) -> anyhow::Result<usize> {
    let original = Manifest::read(path)?;
    for input in &original.inputs {
        let now = manifest::sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(ConfigError(format!("input {} changed since the recorded run", input.path.display())).into());
        }
    }
    let mut cfg = original.config.clone();
    if let Some(o) = out {
        cfg.out = config::RunConfig { out: o, ..Default::default() }.resolve(&Overrides::default())?.out;
    }
    let (fresh, warnings) = execute(&original.command, &cfg)?;
    let mut diffs = Vec::new();
    for old in &original.outputs {
        match fresh.outputs.iter().find(|f| f.path == old.path) {
            Some(new) if new.sha256 == old.sha256 => {}
            Some(_) => diffs.push(format!("{} differs", old.path.display())),
            None => diffs.push(format!("{} missing", old.path.display())),
        }
    }
    for new in &fresh.outputs {
        if !original.outputs.iter().any(|o| o.path == new.path) {
            diffs.push(format!("{} is new", new.path.display()));
        }
    }
    if !diffs.is_empty() {
        return Err(ReplayMismatch(format!("replay differs from the manifest: {}", diffs.join(", "))).into());
    }
    println!("replay: {} outputs byte-identical", fresh.outputs.len());
    Ok(warnings)
}

fn real_main(cli: Cli) -> anyhow::Result<usize> {
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(ConfigError("--workers must be ≥ 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().ok();

    let (name, common, overrides) = match cli.command {
        Command::Replay { manifest, out } => return replay(&manifest, out),
        Command::Simulate { common, policyholders } => {
            ("simulate", common, Overrides { policyholders, ..Default::default() })
        }
        Command::Fit { common, families, structure } => {
            ("fit", common, Overrides { families, structure, ..Default::default() })
        }
        Command::Grid { common, families, grid, resume } => {
            ("grid", common, Overrides { families, grid, resume, ..Default::default() })
        }
        Command::Evaluate { common, fits, max_lag } => {
            ("evaluate", common, Overrides { fits, max_lag, ..Default::default() })
        }
    };
    let overrides = Overrides { seed: common.seed, out: common.out, data: common.data, ..overrides };
    let cfg = RunConfig::load(common.config.as_deref())?.resolve(&overrides)?;
    let (_, warnings) = execute(name, &cfg)?;
    Ok(warnings)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match real_main(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("finished with {n} warning(s)");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
