//! Monte Carlo comparison of estimators on a heteroskedastic linear design
//! with log-normal regressors.

mod dgp;
mod experiment;
mod tables;

pub use dgp::{
    calibrate_z, calibrate_z_with, exact_z, gen_sample, index_moment, z_for, DgpConfig, ZCalibration,
    CALIBRATION_SEED, DEFAULT_CALIBRATION_DRAWS, DEFAULT_REGRESSORS,
};
pub use experiment::{
    run_experiment, run_grid, CriticalKind, EstimatorKind, EstimatorMetrics, ExperimentConfig, ExperimentResult,
};
pub use tables::{ratio_table, rejection_curve, Metric, RatioTable, RejectionCurve};
