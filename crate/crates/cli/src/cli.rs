use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Recover causal-effect signals from linear mixtures.
#[derive(Parser, Debug)]
#[command(name = "merlin", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic benchmark with known ground truth
    Synth(SynthArgs),
    /// Recover a filter w ⟂ v from stimulus, mixture and v
    Run(RunArgs),
    /// Score a report against a benchmark manifest
    Eval(EvalArgs),
    /// Activation pattern a ∝ Σw of a filter
    Topo(TopoArgs),
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Static mixture, linear mechanisms
    Fig1,
    /// Static mixture, C2 = C1² + noise
    Fig1Square,
    /// Trial time series, linear log-power mechanisms
    Oscillatory,
    /// Trial time series, squared log-power mechanism
    OscillatorySquare,
    /// Trial time series, C2 amplitude independent of C1
    OscillatoryNull,
}

impl Preset {
    pub fn is_timeseries(self) -> bool {
        !matches!(self, Preset::Fig1 | Preset::Fig1Square)
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MixingArg {
    Orthogonal,
    Gaussian,
    Identity,
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Linear,
    Nonlinear,
    NonlinearBp,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "fig1")]
    pub preset: Preset,
    /// Number of sources/channels [default: 10, or 4 for time series]
    #[arg(long)]
    pub d: Option<usize>,
    /// Number of samples or trials [default: 300, or 200 for time series]
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "orthogonal")]
    pub mixing: MixingArg,
    /// Time samples per trial
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    /// Sampling rate in Hz
    #[arg(long, default_value_t = 256.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 40.0)]
    pub band_lo: f64,
    #[arg(long, default_value_t = 65.0)]
    pub band_hi: f64,
    /// White-noise standard deviation added to every oscillatory source
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "linear")]
    pub mode: RunMode,
    /// Benchmark directory supplying defaults for every input path
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub stimulus: Option<PathBuf>,
    /// Static mixture CSV (linear and nonlinear modes)
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    /// Trial tensor file (nonlinear-bp mode)
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    #[arg(long)]
    pub v: Option<PathBuf>,
    /// Sampling rate in Hz (nonlinear-bp mode)
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub band_lo: Option<f64>,
    #[arg(long)]
    pub band_hi: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub gradient_tolerance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub initial_step: f64,
    #[arg(long, default_value_t = 0.5)]
    pub backtrack_factor: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub armijo: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub min_step: f64,
    /// Run restarts one after another
    #[arg(long)]
    pub sequential: bool,
    /// Report path [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TopoArgs {
    /// Filter: a run report (.json) or a single-column CSV named "w"
    #[arg(long)]
    pub w: PathBuf,
    /// Benchmark directory supplying defaults for the data and band
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub band_lo: Option<f64>,
    #[arg(long)]
    pub band_hi: Option<f64>,
    /// Pattern CSV path [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}
