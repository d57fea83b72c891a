//! Quadrotor and aerial-manipulator control benchmark: simulation, reference
//! trajectories, a geometric controller, a neural policy trained with PPO and
//! an evaluation harness that scores both on the same objective.

pub mod catch;
pub mod config;
pub mod env;
pub mod error;
pub mod gc;
pub mod harness;
pub mod io;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod sim;
pub mod so3;
pub mod sweep;
pub mod trajectory;
pub mod tuner;

pub use error::{Error, Result};
