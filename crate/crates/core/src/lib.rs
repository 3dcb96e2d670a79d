//! Federated multi-task learning simulator.
//!
//! Per-task linear models `W` and a task-relationship matrix `Ω` are fit by
//! alternating a communication-efficient primal-dual W-update, in which
//! every node approximately solves a local dual subproblem, with a central
//! Ω step. Around the solver sit baselines, a systems-cost simulator for
//! stragglers and dropped nodes, and convergence-bound calculators.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64` for everyday use.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod regularizers;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod systems;
pub mod theory;
pub mod trace;

pub use error::{Error, Result};
pub use losses::LossKind;
pub use regularizers::OmegaModel;
pub use scalar::Scalar;

pub type Matrix = linalg::Mat<f64>;
pub type Dataset = data::FederatedDataset<f64>;
pub type Task = data::TaskDataset<f64>;
pub type Weights = solver::PrimalState<f64>;
pub type Dual = solver::DualState<f64>;
pub type Relationship = regularizers::RelationshipState<f64>;
