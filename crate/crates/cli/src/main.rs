mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Shock propagation and systemic risk on firm-level production networks.
#[derive(Debug, Parser)]
#[command(name = "prodnet", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Production function scenario: lin, leo, mix, gl, or all (esri only).
    #[arg(long, global = true, default_value = "gl")]
    pub scenario: String,
    /// Convergence threshold on the largest per-iteration drop.
    #[arg(long, global = true, default_value_t = prodnet::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, global = true, default_value_t = prodnet::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Treat cascades that hit --max-iter as an error (exit code 3).
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic network as firms.csv and edges.csv.
    Generate(GenerateArgs),
    /// Reduce transactions.csv to long-term links in edges.csv.
    Filter {
        #[arg(long)]
        transactions: PathBuf,
    },
    /// ESRI of every firm, or a single cascade for a custom shock.
    Esri {
        #[command(flatten)]
        network: NetworkArgs,
        /// CSV `firm_id,psi`; unlisted firms keep psi = 1.
        #[arg(long)]
        psi_file: Option<PathBuf>,
    },
    /// Rank profile, plateau, power-law fit and threshold counts of an esri.csv.
    Analyze(AnalyzeArgs),
    /// Compare a homogeneous sector shock with firm-level shocks of equal size.
    SectorExperiment(SectorArgs),
    /// Correlate two esri.csv files over their common firms.
    CompareYears {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    #[arg(long)]
    pub firms: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long = "n", default_value_t = 1000)]
    pub n_firms: usize,
    #[arg(long, default_value_t = 50)]
    pub sectors: usize,
    #[arg(long, default_value_t = 5.0)]
    pub mean_out_degree: f64,
    #[arg(long, default_value_t = 2.5)]
    pub degree_exponent: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_mu: f64,
    #[arg(long, default_value_t = 1.5)]
    pub weight_sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub physical_share: f64,
    #[arg(long, default_value_t = 0.02)]
    pub unclassified_share: f64,
    #[arg(long, default_value_t = 1.0)]
    pub coverage: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub esri: PathBuf,
    /// Relative tolerance defining the plateau.
    #[arg(long, default_value_t = prodnet::analysis::DEFAULT_PLATEAU_TOLERANCE)]
    pub plateau_tol: f64,
    /// Lower end of the power-law window; defaults to the smallest positive value.
    #[arg(long)]
    pub x_min: Option<f64>,
    /// Upper end of the power-law window; defaults to the largest value.
    #[arg(long)]
    pub x_max: Option<f64>,
    /// Comma-separated thresholds, descending.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// With --edges, also fit ESRI against total strength.
    #[arg(long, requires = "edges")]
    pub firms: Option<PathBuf>,
    #[arg(long, requires = "firms")]
    pub edges: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SectorArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Four-digit code of the shocked sector.
    #[arg(long)]
    pub sector: String,
    /// Share of the sector's strength removed by every scenario.
    #[arg(long)]
    pub magnitude: f64,
    /// One firm-level scenario, `ID=FRACTION[,ID=FRACTION...]`; repeatable.
    #[arg(long = "firm-shock")]
    pub firm_shocks: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
