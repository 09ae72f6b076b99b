//! Distributed optimization of agents coupled through shared equality and inequality
//! constraints, with only multipliers exchanged over a time-varying network.

pub mod agent;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod problem;
pub mod reference;
pub mod scalar;
pub mod simulator;
pub mod subsolver;

pub use error::{Error, Result};
pub use scalar::Real;

pub type AgentProblemF64 = problem::AgentProblem<f64>;
pub type ProblemInstanceF64 = problem::ProblemInstance<f64>;
pub type ReferenceSolutionF64 = reference::ReferenceSolution<f64>;
pub type AgentStateF64 = agent::AgentState<f64>;
pub type RunParamsF64 = agent::RunParams<f64>;
pub type InnerSolveParamsF64 = subsolver::InnerSolveParams<f64>;
pub type RunTraceF64 = simulator::RunTrace<f64>;
pub type RunOptionsF64 = simulator::RunOptions<f64>;
pub type RoundMetricsF64 = metrics::RoundMetrics<f64>;
pub type WeightMatrixF64 = graph::WeightMatrix<f64>;
