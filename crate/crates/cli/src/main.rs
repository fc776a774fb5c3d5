mod commands;
mod images;
mod output;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "df2", version, about = "Map, quantize and simulate spiking CNNs on multi-SLR FPGAs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a network config.
    Check(Common),
    /// Assign weight units and SLRs; emits the mapping plan.
    Map(Common),
    /// Fold float weights and batch norm into an int8 parameter file.
    Quantize(QuantizeArgs),
    /// Run images through the pipeline simulator.
    Sim(SimArgs),
    /// Throughput, utilization and bottleneck summary.
    Report(SimArgs),
    /// Dense reference inference, for debugging.
    #[command(hide = true)]
    Oracle(SimArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

/// `LAYER=N`
#[derive(Clone, Copy, Debug)]
pub struct OmegaOverride {
    pub layer: usize,
    pub omega: usize,
}

fn parse_override(s: &str) -> Result<OmegaOverride, String> {
    let (l, n) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LAYER=N, got `{s}`"))?;
    let layer = l.trim().parse().map_err(|_| format!("bad layer index `{l}`"))?;
    let omega = n.trim().parse().map_err(|_| format!("bad weight-unit count `{n}`"))?;
    Ok(OmegaOverride { layer, omega })
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Network config (JSON).
    pub config: PathBuf,
    /// Device profile name or path; overrides the config.
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long = "clock-mhz")]
    pub clock_mhz: Option<f64>,
    /// Fix a layer's weight-unit count, e.g. `--omega 3=16`. Repeatable.
    #[arg(long, value_parser = parse_override)]
    pub omega: Vec<OmegaOverride>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep every layer on one SLR.
    #[arg(long)]
    pub no_split: bool,
    /// Directories searched for `<device>.json` profiles.
    #[arg(long, env = "DF2_PROFILE_DIR", value_delimiter = ':', hide = true)]
    pub profile_dir: Vec<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Float weights and batch-norm statistics (JSON).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Generate random float parameters from this seed instead.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug)]
pub struct SimArgs {
    #[command(flatten)]
    pub common: Common,
    /// Quantized parameter file; random parameters from `--seed` otherwise.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Raw u8 or .npy image set; random images from `--seed` otherwise.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write per-cycle layer states (CSV) here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, format, result) = match cli.command {
        Command::Check(a) => ("check", a.format, commands::check(&a)),
        Command::Map(a) => ("map", a.format, commands::map(&a)),
        Command::Quantize(a) => ("quantize", a.common.format, commands::quantize(&a)),
        Command::Sim(a) => ("sim", a.common.format, commands::sim(&a)),
        Command::Report(a) => ("report", a.common.format, commands::report(&a)),
        Command::Oracle(a) => ("oracle", a.common.format, commands::oracle(&a)),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let stage = f.stage.unwrap_or(stage);
            if format == Some(Format::Json) {
                let err = serde_json::json!({
                    "error": { "stage": stage, "message": f.message, "details": f.details }
                });
                eprintln!("{err:#}");
            } else {
                eprintln!("error[{stage}]: {}", f.message);
                for d in &f.details {
                    eprintln!("  {d}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
