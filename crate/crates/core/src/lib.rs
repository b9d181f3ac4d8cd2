//! Scenario model, interaction geometry, anchor banks, the planner network,
//! training and closed-loop evaluation.

pub mod ablation;
pub mod anchors;
pub mod error;
pub mod interaction;
pub mod planner;
pub mod scenario;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
