use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "fsgl", version, about = "Fused sparse group lasso regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at one tuning point.
    Fit(FitArgs),
    /// Cross-validate over (alpha, gamma, lambda).
    Cv(CvArgs),
    /// Run the simulation experiment.
    Simulate(SimulateArgs),
    /// Render coefficients on the grid as an image.
    Heatmap(HeatmapArgs),
    /// Write a simulated dataset to CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimalScaleArg {
    Coefficients,
    Theta,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    pub rho0: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps_abs: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_rel: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1)]
    pub rho_update_period: usize,
    /// Dimension used in the absolute primal tolerance.
    #[arg(long, value_enum, default_value_t = PrimalScaleArg::Coefficients)]
    pub primal_scale: PrimalScaleArg,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DataArgs {
    /// Headerless CSV, one row per subject.
    #[arg(long)]
    pub design: PathBuf,
    /// Response, one value per line.
    #[arg(long)]
    pub response: PathBuf,
    /// Grid dimensions such as 20x20 or 10x10x5.
    #[arg(long)]
    pub grid: String,
    /// 0/1 mask over grid cells in cell order.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// `index,group` CSV or one group id per line; one group if omitted.
    #[arg(long)]
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LambdaGridArgs {
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 50)]
    pub lambda_count: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FoldArgs {
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Stratify folds on the sorted response.
    #[arg(long)]
    pub stratified: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AdaptiveArgs {
    /// Reweight the penalty from a cross-validated ridge fit.
    #[arg(long)]
    pub adaptive: bool,
    /// Ceiling for adaptive weights.
    #[arg(long, default_value_t = 1e8)]
    pub weight_cap: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Explicit lasso level (with --lambda2 and --lambda3 instead of
    /// --lambda/--alpha/--gamma).
    #[arg(long, conflicts_with_all = ["lambda", "alpha", "gamma"])]
    pub lambda1: Option<f64>,
    #[arg(long, conflicts_with_all = ["lambda", "alpha", "gamma"])]
    pub lambda2: Option<f64>,
    #[arg(long, conflicts_with_all = ["lambda", "alpha", "gamma"])]
    pub lambda3: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub adaptive: AdaptiveArgs,
    /// Grid for the ridge step of --adaptive.
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: LambdaGridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub folds: FoldArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "fsgl_fit")]
    pub out: PathBuf,
    /// File of `key = value` lines supplying any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CvArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,0.8,1")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,0.8,1")]
    pub gammas: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: LambdaGridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub folds: FoldArgs,
    /// Standardize all rows once before splitting into folds.
    #[arg(long)]
    pub global_standardize: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub adaptive: AdaptiveArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "fsgl_cv")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Scenario id (1A, 2B, 3C, 4A, 5B, 6C, 7B, 8B, 9B) or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub scenario: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,0.8,1")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,0.8,1")]
    pub gammas: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: LambdaGridArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "fsgl_sim")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefColumn {
    BetaStd,
    BetaOrig,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct HeatmapArgs {
    /// Coefficient CSV (`index,beta_std,beta_orig` or one value per line).
    #[arg(long)]
    pub coefficients: PathBuf,
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Plane along the last axis of a 3-D grid.
    #[arg(long)]
    pub slice: Option<usize>,
    #[arg(long, value_enum, default_value_t = CoefColumn::BetaOrig)]
    pub column: CoefColumn,
    /// Output PGM path; the scale goes next to it as `<stem>.scale.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a PNG here.
    #[arg(long)]
    pub png: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[arg(long, default_value = "fsgl_data")]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
