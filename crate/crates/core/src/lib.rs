//! Branching random walks in a random time environment: exact simulation,
//! closed-form analytics, size-biased spine sampling and seeded experiments.

pub mod analytics;
pub mod env_model;
pub mod exact;
pub mod experiments;
pub mod numerics;
pub mod parallel;
pub mod rng;
pub mod simulator;
pub mod spine;
pub mod stats;

pub use env_model::{EnvironmentModel, EnvironmentPath, ModelError, OffspringLaw, Process, TableAtom};
pub use simulator::{GenerationSnapshot, MartingalePath, Particle, SimError};
