//! Distributed model predictive control for multi-agent trajectory
//! generation with ellipsoidal collision avoidance.

pub mod bench;
pub mod bezier;
pub mod collision;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod planner;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
