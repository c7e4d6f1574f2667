//! Multi-view 2D/3D contrastive pretraining for point-cloud encoders.
//!
//! A dynamic-graph point encoder and a small convolutional image encoder are
//! trained jointly: two augmented variants of each cloud contrast with each
//! other (intra-modal) and with `m` rendered views of the same object
//! (cross-modal). Every view level has its own projection head pair and its
//! own augmentation pipeline, with pipelines nested so that level `i + 1`
//! applies everything level `i` does plus one more transform.
//!
//! The numerical core is generic over [`Real`] (`f32` for training, `f64` for
//! gradient checks); aliases for both precisions are re-exported here.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod encoders;
pub mod error;
pub mod evalsuite;
pub mod heads;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod shapegen;
pub mod trainer;

pub use config::RunConfig;
pub use domain::{normalize_cloud, EmbeddingBatch, PointCloud, SeedTree, SpaceTag, ViewImage, ViewSet};
pub use error::{Error, Result};
pub use losses::LossReport;
pub use model::Model;
pub use nn::Params;
pub use scalar::Real;
pub use trainer::TrainState;

pub type PointCloud32 = domain::PointCloud<f32>;
pub type PointCloud64 = domain::PointCloud<f64>;
pub type ViewImage32 = domain::ViewImage<f32>;
pub type ViewImage64 = domain::ViewImage<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type TrainState32 = trainer::TrainState<f32>;
pub type TrainState64 = trainer::TrainState<f64>;
pub type Dataset32 = shapegen::Dataset<f32>;
pub type Dataset64 = shapegen::Dataset<f64>;
