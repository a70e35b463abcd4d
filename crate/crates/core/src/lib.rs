//! Fitting and using data-constrained scaling laws.
//!
//! The base law is `L(N, D) = E + A / N^alpha + B / D^beta`. Repetition laws
//! extend it for runs that see the same unique tokens more than once, either
//! by shrinking the effective data (and parameters) or by adding an explicit
//! overfitting penalty. Fits run in two phases: the base is fit to
//! single-epoch runs and then frozen while the repetition parameters are fit
//! to the rest.
//!
//! ```
//! use scalefit::{eval_law, published, RunPoint};
//!
//! let spec = published::std_add4();
//! let once = eval_law(&spec, &RunPoint::new(7e8, 2.5e8, 1.0).unwrap()).unwrap();
//! let five = eval_law(&spec, &RunPoint::new(7e8, 2.5e8, 5.0).unwrap()).unwrap();
//! assert!(five < once);
//! ```

pub mod allocate;
pub mod analysis;
pub mod data;
pub mod error;
pub mod fit;
pub mod laws;
pub mod optim;
pub mod published;
pub mod report;

pub use allocate::{find_crossover, solve_allocation, trace_frontier, AllocationPoint, AllocationQuery, EpochMode};
pub use analysis::{
    bootstrap_fit, compare_bases, compute_residuals, fit_shared_power, penalty_reduction, BootstrapReport,
    ComparisonTable, ResidualCell, SharedPowerFit,
};
pub use data::{generate_synthetic, load_muennighoff_csv, load_native_csv, Dataset, GridPreset, SyntheticSpec};
pub use error::{Error, Result};
pub use fit::{
    compute_metrics, fit_phase1, fit_phase2, fit_two_phase, huber_log_objective, FitConfig, FitMetrics, FitReport,
    Phase, RunRecord,
};
pub use laws::{
    chinchilla_n_opt, effective_data, effective_params, eval_chinchilla, eval_law, train_flops, ChinchillaParams,
    LawKind, LawSpec, RepetitionLaw, RunPoint,
};
pub use report::{read_report, write_report, Format, Report, ReportKind};
