//! Frozen-feature evaluation: linear probe, few-shot episodes, ablation
//! drivers and embedding export.

mod ablate;
mod fewshot;
mod probe;

pub use ablate::{ablate, ablation_configs, AblationAxis, AblationRow, AblationTable};
pub use fewshot::{few_shot_eval, sample_episode, Episode, EpisodeSpec};
pub use probe::{accuracy, linear_probe, EvalReport, LinearSvm};

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::domain::{PointCloud, SeedTree};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Params;
use crate::scalar::Real;
use crate::shapegen::Dataset;
use crate::trainer::subsample;

/// Default SVM regularization weight.
pub const DEFAULT_C_REG: f64 = 1.0;

/// Global point features of `clouds`, one row each, in `f64`.
///
/// With `points_per_cloud`, every cloud is first reduced to a subset fixed
/// by its object id, so repeated extraction is identical across models.
pub fn extract_features<T: Real>(
    model: &Model<T>,
    clouds: &[PointCloud<T>],
    points_per_cloud: Option<usize>,
) -> Result<Array2<f64>> {
    let before = model.param_hash();
    let eval = SeedTree::new(0).child("eval");
    let dim = model.point.global_dim();
    let mut out = Array2::<f64>::zeros((clouds.len(), dim));
    for (i, c) in clouds.iter().enumerate() {
        let mut rng = eval.child_idx("object", c.object_id).stream("subsample");
        let c = subsample(c, points_per_cloud, &mut rng);
        let g = model.encode_points(&c)?;
        if g.len() != dim {
            return Err(Error::DimMismatch(format!("feature has {} dims, expected {dim}", g.len())));
        }
        out.row_mut(i).assign(&g.mapv(|v| v.as_f64()));
    }
    if model.param_hash() != before {
        return Err(Error::Degenerate("parameters changed during feature extraction".into()));
    }
    Ok(out)
}

/// Frozen features and labels of both splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFeatures {
    pub train_x: Array2<f64>,
    pub train_y: Vec<u32>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<u32>,
}

impl SplitFeatures {
    pub fn extract<T: Real>(model: &Model<T>, dataset: &Dataset<T>, points_per_cloud: Option<usize>) -> Result<Self> {
        Ok(Self {
            train_x: extract_features(model, &dataset.train.clouds, points_per_cloud)?,
            train_y: dataset.train.labels(),
            test_x: extract_features(model, &dataset.test.clouds, points_per_cloud)?,
            test_y: dataset.test.labels(),
        })
    }

    pub fn probe(&self, c_reg: f64) -> Result<EvalReport> {
        linear_probe(self.train_x.view(), &self.train_y, self.test_x.view(), &self.test_y, c_reg)
    }

    /// Both splits stacked, train first.
    pub fn pooled(&self) -> (Array2<f64>, Vec<u32>) {
        let x = ndarray::concatenate(ndarray::Axis(0), &[self.train_x.view(), self.test_x.view()])
            .expect("equal widths");
        let mut y = self.train_y.clone();
        y.extend_from_slice(&self.test_y);
        (x, y)
    }
}

/// CSV with the integer label in column 0 followed by the feature columns.
pub fn embeddings_csv(x: &Array2<f64>, y: &[u32]) -> String {
    let mut out = String::from("label");
    for j in 0..x.ncols() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (row, label) in x.rows().into_iter().zip(y) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes train and test embeddings (train first) to `path`; returns the row count.
pub fn export_embeddings<T: Real>(
    model: &Model<T>,
    dataset: &Dataset<T>,
    points_per_cloud: Option<usize>,
    path: &Path,
) -> Result<usize> {
    let (x, y) = SplitFeatures::extract(model, dataset, points_per_cloud)?.pooled();
    std::fs::write(path, embeddings_csv(&x, &y))?;
    Ok(y.len())
}
