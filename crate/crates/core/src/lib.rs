//! Firm-level production networks, shock propagation under generalized
//! Leontief production functions, and the economic systemic risk index.

pub mod analysis;
pub mod cascade;
pub mod error;
pub mod esri;
pub mod filter;
pub mod io;
pub mod nace;
pub mod network;
pub mod prodfun;
pub mod synth;

pub use analysis::{
    count_above_thresholds, detect_plateau, fit_powerlaw_mle, jaccard_overlap, rank_esri, rank_profile,
    sector_overlap_stats, sector_shock_experiment, strength_esri_fit, year_over_year, Direction, FirmShock,
    Plateau, PowerLawFit, RankProfile, SectorShockReport, YearComparison,
};
pub use cascade::{
    run_cascade, Cascade, CascadeResult, CascadeState, Engine, ExogenousShock, ImpactMatrices, LinkKind, Workspace, DEFAULT_EPSILON,
    DEFAULT_MAX_ITER,
};
pub use error::{Error, Result};
pub use esri::{esri_all, esri_single, scenario_matrices, scenario_suite, EsriVector, RunControls};
pub use filter::{filter_long_term_links, FilterOutcome, TransactionEvent};
pub use nace::Nace;
pub use network::{FirmRecord, ProductionNetwork, RawEdge, Strength};
pub use prodfun::{assign_scenario, calibrate, DivisionSet, ProductionParams, Scenario, ScenarioSpec};
pub use synth::{generate_synthetic, SyntheticConfig};
