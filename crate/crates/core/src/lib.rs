//! Modular insect-inspired navigation controller and centralized baselines,
//! trained with PPO on a 2D predator-navigation task.

pub mod diffcore;
pub mod env;
pub mod error;
pub mod harness;
pub mod policies;
pub mod trainer;

pub use error::{Error, Result};
