//! Scene and trajectory types, ego-frame normalization, the rule-based
//! scenario labeler, JSON-lines I/O and the synthetic generator.

pub mod frame;
pub mod generator;
pub mod io;
pub mod label;
pub mod types;

pub use frame::{from_ego_frame, to_ego_frame};
pub use generator::{generate_scene, generate_synthetic, EGO_EXTENT, KAPPA_MAX, REPLAY_STEPS};
pub use io::{read_scenes, scene_from_line, scene_to_line, scenes_to_jsonl, write_scenes};
pub use label::{label_scenario, net_heading_change};
pub use types::*;
