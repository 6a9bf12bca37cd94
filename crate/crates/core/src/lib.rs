//! Compressed diffusion learning over networks.
//!
//! Agents cooperatively estimate a linear model from streaming data with the
//! adapt-compress-then-combine (ACTC) recursion, exchanging randomly
//! quantized or sparsified differences instead of full vectors. The crate
//! also provides the uncompressed ATC baseline, closed-form steady-state
//! bounds and a KKT solver that splits a communication budget across agents.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

pub mod allocation;
pub mod compression;
pub mod diffusion;
mod linalg;
pub mod model;
pub mod scalar;
pub mod theory;
pub mod topology;

use thiserror::Error;

pub use scalar::Real;

/// Any error raised by the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Topology(#[from] topology::TopologyError),
    #[error(transparent)]
    Compression(#[from] compression::CompressionError),
    #[error(transparent)]
    Diffusion(#[from] diffusion::DiffusionError),
    #[error(transparent)]
    Theory(#[from] theory::TheoryError),
    #[error(transparent)]
    Allocation(#[from] allocation::AllocationError),
}

pub type AgentModel = model::AgentModel<f64>;
pub type RegressionProblem = model::RegressionProblem<f64>;
pub type CombinationMatrix = topology::CombinationMatrix<f64>;
pub type AllocationProblem = allocation::AllocationProblem<f64>;
pub type AllocationSolution = allocation::AllocationSolution<f64>;
pub type TheoryBounds = theory::TheoryBounds<f64>;
pub type Trajectory = diffusion::Trajectory<f64>;

pub type AgentModelF32 = model::AgentModel<f32>;
pub type RegressionProblemF32 = model::RegressionProblem<f32>;
pub type CombinationMatrixF32 = topology::CombinationMatrix<f32>;
