use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "smalldomain", version, about = "Small-domain estimation on age x calendar-year panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel and its truth tables from a named preset.
    Simulate(SimulateArgs),
    /// Read a panel CSV, derive HAS where needed and report what was kept.
    Ingest(IngestArgs),
    /// Fit transition-probability estimators and draw heatmaps.
    Fit(FitArgs),
    /// Compare estimators by cross-validated elpd.
    Cv(CvArgs),
    /// Effect surfaces of HAS on MH change by g-computation.
    Gcomp(GcompArgs),
    /// Extrapolate the tensor surface beyond the last observed year.
    Forecast(ForecastArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Ingest(_) => "ingest",
            Command::Fit(_) => "fit",
            Command::Cv(_) => "cv",
            Command::Gcomp(_) => "gcomp",
            Command::Forecast(_) => "forecast",
        }
    }
}

/// Where the panel comes from: a CSV file or a freshly simulated preset.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Panel CSV (`person_id,year,age,income,housing_cost,has,mh`).
    #[arg(long, conflicts_with = "preset")]
    pub input: Option<PathBuf>,
    /// Income thresholds CSV (`year,income_p40`) for deriving HAS.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Simulate this preset instead of reading a panel.
    #[arg(long)]
    pub preset: Option<String>,
    /// Seed for simulation, posterior draws and fold allocation.
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub preset: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated list of direct, complete, weighted, kernel, partial, tensor.
    #[arg(long, default_value = "direct,complete,partial,tensor")]
    pub estimators: String,
    /// Interior knots per margin of the tensor smooth.
    #[arg(long, default_value_t = 8)]
    pub knots: usize,
    /// Posterior draws behind every interval.
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    /// Transition to model: exit from or entry into HAS.
    #[arg(long, default_value = "exit")]
    pub direction: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "direct,complete,partial,tensor")]
    pub estimators: String,
    #[arg(long, default_value_t = 8)]
    pub knots: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// stratified, leave_year_out, leave_age_out or leave_cohort_out.
    #[arg(long, default_value = "stratified")]
    pub fold_design: String,
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    #[arg(long, default_value = "exit")]
    pub direction: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GcompArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Pooling of the age x year terms: complete, partial or tensor.
    #[arg(long, default_value = "tensor")]
    pub estimators: String,
    /// Mean structure: baseline, has_main or has_modified.
    #[arg(long, default_value = "has_modified")]
    pub form: String,
    #[arg(long, default_value_t = 8)]
    pub knots: usize,
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    /// Previous MH score plugged into every prediction.
    #[arg(long, default_value_t = 75.0)]
    pub y_prev: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Only `tensor` can be extrapolated.
    #[arg(long, default_value = "tensor")]
    pub estimators: String,
    #[arg(long, default_value_t = 8)]
    pub knots: usize,
    /// Years beyond the last observed year.
    #[arg(long, allow_negative_numbers = true)]
    pub horizon: i32,
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    #[arg(long, default_value = "exit")]
    pub direction: String,
}
