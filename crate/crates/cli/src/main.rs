mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coda_downscale::downscale::{MethodTag, UpscaleGeometry};
use coda_downscale::variogram::Family;
use coda_downscale::Error;

#[derive(Parser, Debug)]
#[command(name = "coda-downscale", version, about = "Compositional downscaling of coarse rasters by regression cokriging in ILR coordinates")]
pub struct Cli {
    /// TOML configuration with optional [downscale], [bsgs] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory for every output.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replace zero parts of the input by this detection limit, then re-close.
    #[arg(long, global = true)]
    pub zero_replacement: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Composition sidecar (.toml) naming one grid per part, or a CSV with
    /// x, y and one column per part.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TargetArgs {
    /// Linear upscaling factor between coarse and fine cells.
    #[arg(long, required_unless_present = "covariate")]
    pub factor: Option<usize>,
    /// Fine covariate grid as NAME=PATH; its grid defines the fine support.
    #[arg(long, value_name = "NAME=PATH")]
    pub covariate: Vec<String>,
    /// Point-support models, one per ILR coordinate (or per part for raw
    /// methods); deconvolved from the data when absent.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Nearest blocks per fine pixel.
    #[arg(long, conflicts_with = "global")]
    pub neighbours: Option<usize>,
    /// Use every coarse block for every pixel.
    #[arg(long)]
    pub global: bool,
    /// Fit the trend without an intercept.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Transform a composition raster to ILR coordinate grids.
    Ilr {
        #[command(flatten)]
        input: InputArgs,
        /// Sign code of a sequential binary partition, e.g. "+-0;++-".
        #[arg(long)]
        partition: Option<String>,
    },
    /// Aggregate a fine composition raster to coarse blocks.
    Upscale {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        factor: usize,
        #[arg(long, value_parser = parse_geometry, default_value = "aitchison")]
        geometry: UpscaleGeometry,
    },
    /// Downscale a coarse composition raster.
    Downscale {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        target: TargetArgs,
        /// EA/AA downscale in ILR coordinates; EE/AE krige raw parts.
        #[arg(long, value_parser = parse_method, default_value = "AA")]
        method: MethodTag,
    },
    /// Draw conditional fine realizations by block sequential simulation.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, default_value_t = 10)]
        realizations: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Fit and deconvolve the residual variogram of each ILR coordinate.
    Deconvolve {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        factor: usize,
        #[arg(long, value_parser = parse_family, default_value = "spherical")]
        family: Family,
    },
    /// USDA texture classes of a clay/silt/sand raster.
    Classify {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Synthetic validation suite over random fields and factors.
    BenchSynthetic {
        #[arg(long)]
        seed: u64,
        /// Paper-scale grid (500 x 458), 100 realizations, factors up to 30.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        realizations: Option<usize>,
        /// Candidate linear factors, e.g. 2,3,5.
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<MethodTag>>,
    },
    /// Downscaling error under noisy coarse data.
    BenchSensitivity {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        full: bool,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long, default_value_t = 15)]
        factor: usize,
        /// Noise variances as fractions of the sill.
        #[arg(long, value_delimiter = ',')]
        s2_fractions: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<MethodTag>>,
    },
    /// Upscale-downscale round trip on a fine composition raster.
    BenchUpdown {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<MethodTag>>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ilr { .. } => "ilr",
            Command::Upscale { .. } => "upscale",
            Command::Downscale { .. } => "downscale",
            Command::Simulate { .. } => "simulate",
            Command::Deconvolve { .. } => "deconvolve",
            Command::Classify { .. } => "classify",
            Command::BenchSynthetic { .. } => "bench-synthetic",
            Command::BenchSensitivity { .. } => "bench-sensitivity",
            Command::BenchUpdown { .. } => "bench-updown",
        }
    }
}

fn parse_method(s: &str) -> Result<MethodTag, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_geometry(s: &str) -> Result<UpscaleGeometry, String> {
    match s.to_ascii_lowercase().as_str() {
        "aitchison" | "a" => Ok(UpscaleGeometry::Aitchison),
        "euclidean" | "e" => Ok(UpscaleGeometry::Euclidean),
        _ => Err(format!("unknown geometry `{s}` (expected aitchison or euclidean)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": { "command": name, "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{record}");
            if matches!(e, Error::Config(_)) {
                eprintln!("run `coda-downscale {name} --help` for usage");
            }
            ExitCode::FAILURE
        }
    }
}
