//! Scenario-routed mixture-of-experts planner.

pub mod config;
pub mod features;
pub mod net;

pub use config::{Ablation, NetConfig};
pub use features::{extract_features, local_future, AgentFeatures, SceneFeatures};
pub use net::{
    argmax, mode_trajectory, nearest_anchor, AgentPrediction, ForwardVars, PlannerNet, PlannerOutput, Routing,
    SceneEncoding,
};
