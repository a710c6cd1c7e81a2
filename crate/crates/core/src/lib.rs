//! Data-driven distributionally robust multistage stochastic linear
//! programming.
//!
//! The library builds L∞-ball ambiguity sets around empirical scenario
//! distributions, evaluates worst-case expectations through their
//! expectation-plus-CVaR closed form, and solves the resulting nested
//! linear programs with a stochastic dual dynamic programming engine.
//! A hydrothermal scheduling model and an experiment driver reproduce the
//! consistency behaviour of the robust policies as sample sizes grow.

pub mod ambiguity;
pub mod cuts;
pub mod experiment;
pub mod hydro;
pub mod lp;
pub mod par;
pub mod scenario;
pub mod sddp;

pub use ambiguity::AmbiguitySet;
pub use cuts::{Cut, CutPool, StageTemplate};
pub use hydro::HydroConfig;
pub use lp::{LinearProgram, LpSolution, LpStatus};
pub use scenario::{Lattice, StageSupport, TrueDistribution};
pub use sddp::{Policy, RunRecord, SddpConfig};
