//! Masked datasets, CSV I/O, synthetic data and missingness, and evaluation
//! metrics.

mod csv_io;
mod masked;
mod metrics;
mod missingness;
mod synthetic;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv, DEFAULT_MISSING_TOKEN};
pub use masked::MaskedMatrix;
pub use metrics::{accuracy, nrmse, pattern_groups};
pub use missingness::{
    apply_mcar, apply_mnar, apply_mnar_column, MissingnessKind, MissingnessSpec,
};
pub use synthetic::{two_gaussians, with_target, LinearModelSpec};
