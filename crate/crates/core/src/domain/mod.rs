//! Value types shared by every stage of the pipeline.

mod cloud;
mod embedding;
mod seed;
mod view;

pub use cloud::{normalize_cloud, PointCloud, MIN_POINTS};
pub use embedding::{l2_normalize_rows, EmbeddingBatch, SpaceTag, UNIT_NORM_TOL};
pub use seed::{streams, SeedTree, StreamRng};
pub use view::{ViewImage, ViewSet, MIN_VIEW_SIDE, NUM_RIG_VIEWS};
