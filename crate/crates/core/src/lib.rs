//! Reactive power planning for sub-transmission grids with high PV penetration.
//!
//! The numerical modules are generic over the scalar type ([`Real`], f32 or
//! f64). The crate-root aliases fix the scalar to `f64`, which is what the
//! command-line pipeline uses.

pub mod decision;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod nlp;
pub mod opf;
pub mod pipeline;
pub mod planner;
pub mod power_flow;
pub mod scalar;
pub mod timeseries;
pub mod verifier;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Network = grid::Network<f64>;
pub type CaseFile = grid::CaseFile<f64>;
pub type ProfileSet = timeseries::ProfileSet<f64>;
pub type ScenarioSnapshot = timeseries::ScenarioSnapshot<f64>;
pub type VoltageState = power_flow::VoltageState<f64>;
pub type ControlSet = power_flow::ControlSet<f64>;
pub type PowerFlowSolution = power_flow::PowerFlowSolution<f64>;
pub type ProblemSpec = nlp::ProblemSpec<f64>;
pub type NlpSolution = nlp::NlpSolution<f64>;
