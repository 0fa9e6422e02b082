//! Bayesian double machine learning for the partially linear regression
//! model: generalized-empirical-likelihood profile posteriors for a scalar
//! treatment effect with cross-fitted machine-learned nuisance functions,
//! a posterior-validity harness, simulation benchmarks, and a CLI driving
//! the borough-level disproportionality analysis.

pub mod cli;
pub mod crossfit;
pub mod dml;
pub mod error;
pub mod gel;
pub mod io;
pub mod learn;
pub mod mcmc;
pub mod score;
pub mod seeding;
pub mod simbench;
pub mod validity;

pub use crossfit::{crossfit_nuisance, crossfit_predictions, make_folds, FoldAssignment};
pub use dml::{dml_estimate, dml_point, dml_variance, DmlEstimate};
pub use error::{Error, Result};
pub use learn::{Family, FittedLearner, LearnerSpec, Task};
pub use mcmc::{
    effective_sample_size, log_posterior, run_chain, summarize, ChainSummary, McmcConfig,
    PosteriorDraws, PriorSpec,
};
pub use gel::{
    check_feasibility, cr_divergence, log_profile_likelihood, solve_weights, DivergenceSpec,
    FeasibilityReport, GelSolution,
};
pub use score::{
    build_score_components, disproportionality_index, evaluate_score, NuisanceKind,
    NuisancePredictions, ObservationSet, ScoreComponents,
};
pub use simbench::{
    run_benchmark, simulate, BenchMethod, BenchmarkSettings, MetricsRow, ScenarioKind,
    ScenarioSpec,
};
pub use validity::{
    h_statistic, ks_uniform_test, run_sbc, run_split_demo, DemoEstimator, Miscalibration,
    SbcDesign, SbcSettings, SplitDemoConfig, SplitDemoReport, ValidityReport,
};
