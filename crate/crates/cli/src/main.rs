use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;

use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "qlink", version, about = "Quantum frequency conversion link simulator")]
struct Cli {
    /// TOML file overriding the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides QLINK_OUT and `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::PaperDefaults)]
    preset: Preset,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    PaperDefaults,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Pump wavelengths and noise regime for a memory/target pair.
    Plan,
    /// Efficiency and noise versus pump power, and the phase-matching curve.
    Ppln,
    /// Split-detector g²(0) of the configured photon stream.
    Hbt,
    /// Two-photon interference visibility.
    Hom,
    /// Gated signal-to-noise ratio.
    Snr,
    /// Single-shot spin readout statistics.
    Readout,
    /// Time-bin to spin state transfer fidelity.
    Transfer,
    /// End-to-end deployed-link run with protocol trace.
    Linkrun,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Plan => "plan",
            Command::Ppln => "ppln",
            Command::Hbt => "hbt",
            Command::Hom => "hom",
            Command::Snr => "snr",
            Command::Readout => "readout",
            Command::Transfer => "transfer",
            Command::Linkrun => "linkrun",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] qlink::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
}

impl CliError {
    fn to_json(&self) -> serde_json::Value {
        let mut err = serde_json::json!({
            "kind": match self {
                CliError::Config(c) => c.kind(),
                CliError::Model(_) => "model",
                CliError::Write { .. } => "io",
            },
            "message": self.to_string(),
        });
        if let CliError::Config(c) = self {
            if let Some(s) = c.section() {
                err["section"] = s.into();
            }
            if let Some(l) = c.line() {
                err["line"] = l.into();
            }
        }
        serde_json::json!({ "error": err })
    }
}

fn output_dir(cli: &Cli, config: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("QLINK_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.output_dir))
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let Preset::PaperDefaults = cli.preset;
    let mut config = match &cli.config {
        Some(path) => config::load(&path.to_string_lossy())?,
        None => ExperimentConfig::paper_defaults(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let artifacts = commands::run(cli.command, &config)?;
    let dir = output_dir(cli, &config);
    let provenance = output::Provenance::new(cli.command.name(), &config);
    output::write_all(&dir, &provenance, &artifacts).map_err(|(path, source)| CliError::Write { path, source })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
