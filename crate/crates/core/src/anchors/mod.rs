//! Endpoint anchors per scenario type and the mode queries built from them.

pub mod bank;
pub mod kmeans;
pub mod queries;

pub use bank::{collect_endpoints, type_seed, AnchorBank, BANK_FORMAT_VERSION};
pub use kmeans::{kmeans, KMeansResult, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub use queries::{anchor_tensor, make_queries, ModeQuerySet};
