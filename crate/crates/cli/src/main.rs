//! `polaffini`: estimate, apply and evaluate polyaffine transformations
//! between segmentation volumes.
//!
//! Exit codes: 0 success, 2 invalid arguments, 3 data errors, 4 numerical
//! errors. Diagnostics go to standard error; a machine-readable summary goes
//! to standard output.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polaffini::polyaffine::{
    Model, Sigma, DEFAULT_BACKGROUND_WEIGHT, DEFAULT_STEPS, DEFAULT_SVF_DOWNSAMPLE,
};
use polaffini::Error;

#[derive(Debug, Parser)]
#[command(name = "polaffini", version, about = "Estimate smooth polyaffine transformations from segmentation centroids")]
struct Cli {
    /// Worker threads (falls back to POLAFFINI_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a transformation from two segmentation volumes.
    Estimate(EstimateArgs),
    /// Resample a volume through a transformation onto a reference grid.
    Apply(ApplyArgs),
    /// Dice overlap between two label volumes.
    Dice(DiceArgs),
    /// Jacobian determinant statistics of a transformation.
    Jacobian(JacobianArgs),
    /// Generate a synthetic segmentation pair with a known transformation.
    Synth(SynthArgs),
    /// Invert an estimated transformation.
    Invert(InvertArgs),
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Reference segmentation (.nii or .nii.gz).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Moving segmentation.
    #[arg(long = "mov")]
    moving: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "polyaffine", value_parser = parse_model)]
    model: Model,
    /// Kernel width in mm, or `auto`.
    #[arg(long, default_value = "20", value_parser = parse_sigma)]
    sigma: Sigma,
    #[arg(long, default_value_t = DEFAULT_BACKGROUND_WEIGHT)]
    background_weight: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: u32,
    #[arg(long, default_value_t = DEFAULT_SVF_DOWNSAMPLE)]
    svf_downsample: usize,
    /// Label exclusion/merge configuration.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Reuse a neighborhood graph instead of triangulating.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Also write the neighborhood graph used to the output directory.
    #[arg(long)]
    save_graph: bool,
    /// Record the estimation wall time in timing.json.
    #[arg(long)]
    record_timing: bool,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    /// Volume to resample.
    #[arg(long)]
    moving: PathBuf,
    /// Estimate directory or affine text file.
    #[arg(long)]
    transform: PathBuf,
    /// Volume defining the output grid.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "nearest")]
    interp: Interp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Interp {
    Nearest,
    Trilinear,
}

#[derive(Debug, Args)]
struct DiceArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    warped: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Also report the volume-weighted mean.
    #[arg(long)]
    weighted: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct JacobianArgs {
    /// Estimate directory or affine text file.
    #[arg(long)]
    transform: PathBuf,
    /// Grid for an affine text file.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    regions: usize,
    /// Grid size as NX,NY,NZ.
    #[arg(long, default_value = "64,64,64", value_parser = parse_dims)]
    dims: [usize; 3],
    /// Voxel size in mm.
    #[arg(long, default_value_t = 2.0)]
    spacing: f64,
    #[arg(long, value_enum, default_value = "polyaffine")]
    warp: WarpKind,
    /// Translation in mm as X,Y,Z (translation warp).
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    translate: [f64; 3],
    /// Affine text file (affine warp).
    #[arg(long)]
    affine: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    anchors: usize,
    #[arg(long, default_value_t = 0.2)]
    magnitude: f64,
    #[arg(long, default_value_t = 8.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 16.0)]
    period: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WarpKind {
    Identity,
    Translation,
    Affine,
    Polyaffine,
    Fold,
}

#[derive(Debug, Args)]
struct InvertArgs {
    /// Estimate directory.
    #[arg(long)]
    transform: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Grid of the inverse's displacement fields (default: the estimate's grid).
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sigma(s: &str) -> Result<Sigma, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let values: Vec<T> = parts
        .iter()
        .map(|p| p.parse().map_err(|_| format!("'{p}' is not a valid number")))
        .collect::<Result<_, _>>()?;
    values
        .try_into()
        .map_err(|_| format!("expected three comma-separated values, got '{s}'"))
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    parse_list(s)
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    parse_list(s)
}

/// Failure of a subcommand, mapped onto the exit-code contract.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Library(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Library(e) if matches!(e.root(), Error::InvalidConfig(_)) => 2,
            Failure::Library(e) if e.is_numerical() => 4,
            Failure::Library(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Library(e) => match e.stage() {
                Some(stage) => format!("stage '{stage}': {}", e.root()),
                None => e.to_string(),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => match polaffini::parallel::threads_from_env() {
            Ok(n) => n,
            Err(e) => return report(Failure::Library(e)),
        },
    };
    if threads == Some(0) {
        return report(Failure::Usage("--threads must be at least 1".into()));
    }
    let run = || match cli.command {
        Command::Estimate(args) => commands::estimate(args, threads),
        Command::Apply(args) => commands::apply(args),
        Command::Dice(args) => commands::dice(args),
        Command::Jacobian(args) => commands::jacobian(args),
        Command::Synth(args) => commands::synth(args),
        Command::Invert(args) => commands::invert(args),
    };
    match polaffini::parallel::with_threads(threads, run) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => report(f),
        Err(e) => report(Failure::Library(e)),
    }
}

fn report(f: Failure) -> ExitCode {
    eprintln!("polaffini: error: {}", f.message());
    ExitCode::from(f.exit_code())
}
