//! Run records, exponent fits and run configuration.

pub mod config;
pub mod fit;
pub mod record;

pub use config::RunConfig;
pub use fit::{collapse_cost, collapse_fit, fit_power_law, grid, Curve, FitResult};
pub use record::{merge_by_time, RunRecord, Source};
