//! Conflict geometry, interaction intervals and temporal loss weights.

pub mod geometry;
pub mod intervals;
pub mod weights;

pub use geometry::{box_contains, box_corners, footprint_circles, obb_overlap};
pub use intervals::{
    extract_intervals, extract_intervals_bruteforce, merge_spans, AgentInterval, InteractionIntervals,
    InteractionLabel, IntervalRecord, DEFAULT_CONFLICT_MARGIN,
};
pub use weights::{temporal_weights, weighted_l1, State4, WeightVector, DEFAULT_K_R};
