//! PAC tests of finite consumer-choice data against preference classes.
//!
//! The crate provides a closed-form demand family with seeded class-
//! constrained sampling ([`aids`]), simulated and ingested datasets
//! ([`dataset`]), demand calculus ([`calculus`]), restriction functionals
//! measuring distance from a preference class ([`restrictions`]), a
//! betweenness restriction for choice under risk ([`betweenness`]),
//! fat-shattering sample-size and gamma calibration machinery ([`learn`]),
//! a rationalizing-demand fit for observed datasets ([`rationalize`]), the
//! iterative test engine ([`engine`]), and the simulation harness behind the
//! `pactest` binary ([`harness`]).

pub mod aids;
pub mod betweenness;
pub mod calculus;
pub mod dataset;
pub mod engine;
pub mod harness;
pub mod learn;
pub mod prng;
pub mod rationalize;
pub mod report;
pub mod restrictions;
pub mod tol;

pub use aids::{AidsParams, BudgetPoint, ClassTag, EvalError, Groups, ParamError, SamplerConfig};
pub use calculus::{DemandOracle, FnOracle, Method};
pub use dataset::{Dataset, IncomeLaw, NoiseSpec, Observation, PointLaw};
pub use engine::{
    empirical_power, empirical_size, run_test, run_test_with_table, TestReport, TestSchedule,
    TestSubject, Verdict,
};
pub use learn::{
    estimate_gamma, fat_shattering, sample_size, GammaSettings, GammaTable, GammaVariant,
};
pub use restrictions::{restriction_norm, NormOptions, NormReport, RestrictionKind};
