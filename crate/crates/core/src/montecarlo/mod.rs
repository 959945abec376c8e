//! Simulation designs, the replication engine and aggregation.

mod aggregate;
mod dgp;
mod experiment;
mod report;

pub use aggregate::{
    aggregate, log_log_slope, rate_slope, read_aggregate_csv, read_results_csv, write_aggregate_csv,
    write_results_csv, AggregateRow, SlopeFit, RESULTS_COLUMNS,
};
pub use dgp::{
    default_g0, default_m0, dgp_by_name, nuisance_truth, sample_observations, Dgp, PlrDgp, EPS_BOUND, EPS_SD,
    NU_BOUND, NU_SD,
};
pub use experiment::{
    population_j_inverse, run_cells, run_experiment, run_replication, CellRef, ExperimentConfig, ExperimentContext,
    NamedLearner, ReplicationRow,
};
pub use report::{render_report, verdicts, Verdict};
