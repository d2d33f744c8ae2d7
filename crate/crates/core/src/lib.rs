//! Long-run behaviour of constant step-size SGD on non-convex objectives.
//!
//! The crate locates the critical components of an objective, measures the
//! cost of moving between them with a discretized large-deviation action,
//! turns the resulting cost matrix into energy levels through minimum-weight
//! in-trees and checks the predicted Gibbs weights against simulated chains.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod error;
pub mod action;
pub mod config;
pub mod landscape;
pub mod linalg;
pub mod noise;
pub mod objective;
pub mod path;
pub mod records;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations of the generic types.
pub type ObjectiveSpecF64 = objective::ObjectiveSpec<f64>;
pub type CriticalComponentF64 = objective::CriticalComponent<f64>;
pub type NoiseModelF64 = noise::NoiseModel<f64>;
pub type DiscretePathF64 = path::DiscretePath<f64>;
pub type LagrangianCtxF64 = action::LagrangianCtx<f64>;
pub type QpOptionsF64 = action::QpOptions<f64>;
pub type CostMatrixF64 = landscape::CostMatrix<f64>;
pub type EnergyLevelsF64 = landscape::EnergyLevels<f64>;
pub type SimulationResultF64 = simulate::SimulationResult<f64>;
