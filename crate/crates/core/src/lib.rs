//! Byzantine-resilient stochastic gradient descent.
//!
//! * [`aggregation`]: averaging, linear rules, the squared-distance medoid,
//!   Krum and m-Krum, and the resilience constant `eta(n, f)`.
//! * [`adversary`]: omniscient Byzantine strategies.
//! * [`problems`]: synthetic costs, gradient estimators and step sizes.
//! * [`simulator`]: the synchronous parameter-server round loop.
//! * [`resilience`]: Monte Carlo checks of the resilience conditions.
//! * [`cli`]: config parsing and output formats used by the `byzsgd` binary.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! simulator and Monte Carlo harness run in `f64`. The aliases below fix the
//! scalar for common use.

// `!(x > 0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod aggregation;
pub mod cli;
pub mod error;
pub mod problems;
pub mod resilience;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod vector;

pub use adversary::{AdversaryView, AttackSpec, Proposal};
pub use aggregation::{
    average, eta, krum_scores, krum_select, linear_combination, multi_krum_select, pairwise_sq_distances,
    resilience_angle, sq_dist_medoid_select, AggregationInput, DistanceMatrix, KrumScore, ResilienceAngle, Rule,
    SelectionResult,
};
pub use error::{Error, Result};
pub use problems::{lr_schedule, CostFunction, Estimator, Schedule};
pub use resilience::{check_safety_radius, estimate_resilience, ResilienceReport, ResilienceSetup};
pub use scalar::Scalar;
pub use simulator::{run_experiment, run_round, CostSpec, ExperimentConfig, ExperimentTrace, RoundRecord};
pub use vector::GradientVector;

/// Double-precision vector.
pub type Vector = GradientVector<f64>;
/// Single-precision vector.
pub type Vector32 = GradientVector<f32>;
pub type Input = AggregationInput<f64>;
pub type Input32 = AggregationInput<f32>;
pub type Selection = SelectionResult<f64>;
pub type Score = KrumScore<f64>;
pub type Cost = CostFunction<f64>;
pub type View = AdversaryView<f64>;
