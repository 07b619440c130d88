//! Region-based mobility simulation on a hexagonal MEC grid.

mod experiment;
mod grid;
mod world;

pub use experiment::{
    migration_ratio, replication_rng, run_experiment, run_replication, run_single, summarize, write_csv, write_metadata, ExperimentConfig,
    ExperimentError, ExperimentResult, GridShape, Metadata, RateRatio, Row, SummaryRow, CSV_HEADER, DEFAULT_RATES,
};
pub use grid::{neighbors, Axial, HexGrid, Mec, NEIGHBORS};
pub use world::{build_world, hashed_mec, ConfigError, Move, Policy, SimConfig, SimWorld, StepMetrics, User};
