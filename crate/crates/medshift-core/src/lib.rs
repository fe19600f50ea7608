//! Estimation engine for interventional indirect effects mapped to target
//! trials.
//!
//! Three estimands are supported, each contrasting the outcome expectation
//! under exposure against the expectation under exposure plus a hypothetical
//! mediator intervention:
//!
//! * `ThetaKPrime` — shift the distribution of a single binary mediator of
//!   interest, accounting for flow-on effects on its causal descendants;
//! * `ThetaK` — the same shift without flow-on effects (no causal ordering
//!   assumed among the remaining mediators);
//! * `ThetaAll` — shift the joint distribution of all mediators.
//!
//! Estimation is by cross-fitted one-step and targeted minimum-loss
//! estimators built on the efficient influence function of each estimand,
//! with nuisance functions fitted by a cross-validated convex-weight super
//! learner. An exact enumeration oracle over small discrete laws provides
//! ground truth for every identification formula, nuisance function, and
//! influence-function expectation, and a Monte Carlo harness certifies
//! consistency, efficiency, confidence-interval coverage, and multiple
//! robustness.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats, and the
//! command-line surface live in the companion `medshift` crate.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

/// Crate version, recorded in run manifests by downstream tooling.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod data;
pub mod eif;
pub mod error;
pub mod estimators;
pub mod learners;
pub mod math;
pub mod nuisance;
pub mod oracle;
pub mod simharness;




pub use data::{
    ArmSpec, CrossFitPlan, EstimandKind, EstimandSpec, MediatorPartition, ObservationTable,
    PositivityReport,
};

pub use eif::{EifTable, StabilizationFactors};
pub use error::Error;
pub use estimators::{
    assemble_iie, estimate, one_step, one_step_from_set, replicate, tml, total_effect, wald_ci,
    EstimateResult, EstimatorKind, PipelineConfig, ReplicateReport, TmlFluctuation, TotalEffect,
};

pub use nuisance::NuisanceSet;
pub use oracle::DiscreteLaw;
pub use simharness::{
    run_consistency_sweep, run_coverage_study, run_robustness_matrix, RobustnessCondition,
    RobustnessScenario, SimCell, SimReport,
};
pub use learners::{EnsembleWeights, Family, FittedModel, LearnerKind, LearnerSpec, StackConfig};



