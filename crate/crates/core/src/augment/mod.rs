//! 3D variants for the intra-modal pair and nested 2D augmentation pipelines for the views.

mod image;
mod pipeline;
mod points;

pub use image::{crop_size, resized_crop, sample_crop, CropQuaternion};
pub use pipeline::{
    apply_level, build_pipelines, catalog, distortion_profile, pipelines_for, probe_set, AugStrategy,
    AugmentationPipeline, Transform2D, TransformKind, MAX_CATALOG_LEVELS, STANDARD_LEVELS,
};
pub use points::{augment_once, augment_point_cloud, AugConfig3D, MIN_POINTS_AFTER_DROPOUT};
