//! Finite-state hidden Markov models whose state-dependent densities are
//! finite mixtures of Gaussians: exact simulation, likelihood machinery,
//! EM and adaptive nonparametric maximum likelihood fitting, identification
//! auditing via Kruskal-rank tensor factorizations, and parametric-bootstrap
//! goodness-of-fit tests.
//!
//! The `examples/` directory contains one runnable example per major
//! capability; the `mixhmm` binary exposes the same functionality as
//! subcommands (`simulate`, `fit`, `identify`, `gof`, `reproduce`).

pub mod cli;
pub mod estimation;
pub mod gof;
pub mod identification;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod persist;
pub mod rng;
pub mod scenario;

pub use estimation::{canonical_relabel, em_fit, em_step, initialize, npmle_fit, FitConfig, FitResult};
pub use gof::{bootstrap_critical_values, lrt_statistic, power_simulation, Alternative, GofReport};
pub use likelihood::{
    brute_force_log_density, forward_backward, kl_divergence_estimate, log_likelihood, Posteriors,
};
pub use identification::{
    build_threeway, conditional_block_cdf, default_candidate_pool, find_full_rank_grid, joint_cdf,
    kruskal_rank, lumpability_check, primitivity_exponent_check, rank_deficient_counterexample,
    recover_transition_matrix, recovery_error, required_window, spectral_recover, time_reversal,
    verify_kruskal_condition, Direction, EvaluationGrid, Factors, KruskalReport, SpectralRecovery,
    ThreeWayArray,
};
pub use model::{
    density_eval, simulate, stationary_distribution, truth_density_eval, validate_model,
    ContinuousMixtureTruth, Emission, FiniteMixtureDensity, GaussianComponent, HmmModel,
    ObservationSeries, ProbabilityVector, ThetaBox, TransitionMatrix, ValidationReport,
};
pub use scenario::{
    reproduce, Estimator, RelativeErrorTable, ScenarioSpec, TransitionErrorTable,
};

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model or parameter: {0}")]
    Invalid(String),
    #[error("transition matrix is not ergodic: no unique stationary distribution")]
    NonErgodic,
    #[error("size guard exceeded: {0}")]
    Guard(String),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("eigenvalue gap too small ({gap:.3e}); try different slice weights")]
    EigenGap { gap: f64 },
    #[error("grid search failed: best singular values {0:?}")]
    GridSearch(Vec<f64>),
    #[error("optimization failure: likelihood-ratio statistic {0} below -1e-6")]
    NegativeLrt(f64),
    #[error("series mismatch: fits were produced on different data")]
    SeriesMismatch,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
