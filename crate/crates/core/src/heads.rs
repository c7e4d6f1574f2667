//! Projection heads: one intra-modal head per modality and one cross-modal
//! head per view level on each encoder, each mapping into its own space.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{l2_normalize_rows, EmbeddingBatch, SpaceTag};
use crate::error::{Error, Result};
use crate::nn::{join, relu, relu_grad, Linear, Params};
use crate::scalar::Real;

/// Output dimensions of the projection spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub d_intra: usize,
    /// One entry per view level, level 1 first.
    pub d_cross: Vec<usize>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self::for_levels(4)
    }
}

impl ProjectionConfig {
    /// `d_intra = 256`, `d_cross = 384, 448, ...` stepping by 64 per level.
    pub fn for_levels(m: usize) -> Self {
        Self {
            d_intra: 256,
            d_cross: (0..m).map(|j| 384 + 64 * j).collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.d_cross.len()
    }
}

/// Accepts a config iff every cross dim exceeds the intra dim and the cross
/// dims are non-decreasing in level.
pub fn validate_config(cfg: &ProjectionConfig) -> Result<()> {
    if cfg.d_intra == 0 {
        return Err(Error::Config("proj.d_intra must be positive".into()));
    }
    if cfg.d_cross.is_empty() {
        return Err(Error::Config("proj.d_cross needs at least one level".into()));
    }
    if let Some((j, d)) = cfg
        .d_cross
        .iter()
        .enumerate()
        .find(|(_, &d)| d <= cfg.d_intra)
    {
        return Err(Error::Config(format!(
            "cross <= intra: d_cross[{}] = {d} does not exceed d_intra = {}",
            j + 1,
            cfg.d_intra
        )));
    }
    if let Some(j) = cfg.d_cross.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Config(format!(
            "non-monotone: d_cross[{}] = {} < d_cross[{}] = {}",
            j + 2,
            cfg.d_cross[j + 1],
            j + 1,
            cfg.d_cross[j]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Point,
    Image,
}

/// Two-layer MLP (hidden width = input width) followed by L2 normalization.
/// The hidden layer is standardized with batch statistics before the rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<T: Real> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T: Real> {
    input: Array2<T>,
    inv_std: Array1<T>,
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
    z: Array2<T>,
    norms: Vec<T>,
}

impl<T: Real> HeadCache<T> {
    /// The normalized embeddings.
    pub fn output(&self) -> ArrayView2<'_, T> {
        self.z.view()
    }
}

impl<T: Real> ProjectionHead<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(inputs, inputs, rng),
            out: Linear::new(inputs, outputs, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.out.outputs()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<HeadCache<T>> {
        if x.ncols() != self.inputs() {
            return Err(Error::DimMismatch(format!(
                "head expects {}-d features, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        let (hidden_pre, inv_std) = batch_standardize(self.hidden.forward(x));
        let hidden = hidden_pre.mapv(relu);
        let raw = self.out.forward(hidden.view());
        let (z, norms) = l2_normalize_rows(raw.view());
        Ok(HeadCache {
            input: x.to_owned(),
            inv_std,
            hidden_pre,
            hidden,
            z,
            norms,
        })
    }

    /// Backpropagates `dL/dz` (w.r.t. the normalized output); returns `dL/dx`.
    pub fn backward(&self, cache: &HeadCache<T>, dz: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        // d(u/|u|) = (I - z z^T) du / |u|
        let mut draw = dz.to_owned();
        for ((mut g, z), &n) in draw
            .rows_mut()
            .into_iter()
            .zip(cache.z.rows())
            .zip(&cache.norms)
        {
            let proj = g.dot(&z);
            g.zip_mut_with(&z, |gv, &zv| *gv = (*gv - proj * zv) / n);
        }
        let mut dh = self.out.backward(cache.hidden.view(), draw.view(), &mut grad.out);
        ndarray::Zip::from(&mut dh)
            .and(&cache.hidden_pre)
            .for_each(|g, &p| *g = relu_grad(p, *g));
        let dh = batch_standardize_backward(&cache.hidden_pre, &cache.inv_std, dh);
        self.hidden.backward(cache.input.view(), dh.view(), &mut grad.hidden)
    }
}

const BN_EPS: f64 = 1e-5;

/// Per-column `(x - mean) / sqrt(var + eps)` with population variance.
fn batch_standardize<T: Real>(mut x: Array2<T>) -> (Array2<T>, Array1<T>) {
    let n = T::lit(x.nrows() as f64);
    let eps = T::lit(BN_EPS);
    let mut inv_std = Array1::<T>::zeros(x.ncols());
    for (mut col, is) in x.columns_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|&v| v * v).sum::<T>() / n;
        *is = T::one() / (var + eps).sqrt();
        let s = *is;
        col.mapv_inplace(|v| v * s);
    }
    (x, inv_std)
}

/// Gradient through [`batch_standardize`] given its output `xhat`.
fn batch_standardize_backward<T: Real>(xhat: &Array2<T>, inv_std: &Array1<T>, mut d: Array2<T>) -> Array2<T> {
    let n = T::lit(xhat.nrows() as f64);
    for ((mut g, xh), &is) in d.columns_mut().into_iter().zip(xhat.columns()).zip(inv_std) {
        let mean_g = g.sum() / n;
        let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        g.zip_mut_with(&xh, |gv, &x| *gv = is * (*gv - mean_g - x * mean_gx));
    }
    d
}

impl<T: Real> Params<T> for ProjectionHead<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.hidden.collect(&join(prefix, "hidden"), out);
        self.out.collect(&join(prefix, "out"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.hidden.collect_mut(&join(prefix, "hidden"), out);
        self.out.collect_mut(&join(prefix, "out"), out);
    }
}

/// Which heads exist and how levels are routed onto them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadRouting {
    /// One cross head per level; otherwise every level shares a single cross head.
    pub multi_mlp: bool,
    /// Separate intra-modal heads; otherwise the intra objective uses the level-1 cross head.
    pub split_intra: bool,
}

impl Default for HeadRouting {
    fn default() -> Self {
        Self {
            multi_mlp: true,
            split_intra: true,
        }
    }
}

/// Identifies one head inside a [`HeadBank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadSlot {
    Intra(Modality),
    /// Cross head by storage index (0-based).
    Cross(Modality, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadBank<T: Real> {
    pub intra_p: Option<ProjectionHead<T>>,
    pub intra_i: Option<ProjectionHead<T>>,
    pub cross_p: Vec<ProjectionHead<T>>,
    pub cross_i: Vec<ProjectionHead<T>>,
    pub config: ProjectionConfig,
    pub routing: HeadRouting,
}

impl<T: Real> HeadBank<T> {
    pub fn new<R: Rng + ?Sized>(
        point_dim: usize,
        image_dim: usize,
        config: &ProjectionConfig,
        routing: HeadRouting,
        rng: &mut R,
    ) -> Result<Self> {
        validate_config(config)?;
        let (intra_p, intra_i) = if routing.split_intra {
            (
                Some(ProjectionHead::new(point_dim, config.d_intra, rng)),
                Some(ProjectionHead::new(image_dim, config.d_intra, rng)),
            )
        } else {
            (None, None)
        };
        let dims: Vec<usize> = if routing.multi_mlp {
            config.d_cross.clone()
        } else {
            vec![config.d_cross[0]]
        };
        let cross_p = dims
            .iter()
            .map(|&d| ProjectionHead::new(point_dim, d, rng))
            .collect();
        let cross_i = dims
            .iter()
            .map(|&d| ProjectionHead::new(image_dim, d, rng))
            .collect();
        Ok(Self {
            intra_p,
            intra_i,
            cross_p,
            cross_i,
            config: config.clone(),
            routing,
        })
    }

    pub fn levels(&self) -> usize {
        self.config.levels()
    }

    /// Storage slot of the cross head serving 1-based `level`.
    pub fn cross_slot(&self, modality: Modality, level: usize) -> Result<HeadSlot> {
        if level == 0 || level > self.levels() {
            return Err(Error::InvalidInput(format!(
                "level {level} outside [1, {}]",
                self.levels()
            )));
        }
        let idx = if self.routing.multi_mlp { level - 1 } else { 0 };
        Ok(HeadSlot::Cross(modality, idx))
    }

    pub fn intra_slot(&self, modality: Modality) -> HeadSlot {
        if self.routing.split_intra {
            HeadSlot::Intra(modality)
        } else {
            HeadSlot::Cross(modality, 0)
        }
    }

    /// Space tag of embeddings produced by `slot`.
    pub fn space_of(&self, slot: HeadSlot) -> SpaceTag {
        match slot {
            HeadSlot::Intra(_) => SpaceTag::Intra,
            HeadSlot::Cross(_, idx) => SpaceTag::Cross(idx + 1),
        }
    }

    pub fn head(&self, slot: HeadSlot) -> &ProjectionHead<T> {
        match slot {
            HeadSlot::Intra(Modality::Point) => self.intra_p.as_ref().expect("intra head present"),
            HeadSlot::Intra(Modality::Image) => self.intra_i.as_ref().expect("intra head present"),
            HeadSlot::Cross(Modality::Point, i) => &self.cross_p[i],
            HeadSlot::Cross(Modality::Image, i) => &self.cross_i[i],
        }
    }

    pub fn head_mut(&mut self, slot: HeadSlot) -> &mut ProjectionHead<T> {
        match slot {
            HeadSlot::Intra(Modality::Point) => self.intra_p.as_mut().expect("intra head present"),
            HeadSlot::Intra(Modality::Image) => self.intra_i.as_mut().expect("intra head present"),
            HeadSlot::Cross(Modality::Point, i) => &mut self.cross_p[i],
            HeadSlot::Cross(Modality::Image, i) => &mut self.cross_i[i],
        }
    }

    fn embed(&self, slot: HeadSlot, features: ArrayView2<T>) -> Result<EmbeddingBatch<T>> {
        let cache = self.head(slot).forward(features)?;
        EmbeddingBatch::new(cache.z, self.space_of(slot))
    }

    /// Intra-modal embedding of a batch of encoder features.
    pub fn project_intra(&self, features: ArrayView2<T>, modality: Modality) -> Result<EmbeddingBatch<T>> {
        self.embed(self.intra_slot(modality), features)
    }

    /// Point features projected into every level's cross-modal space.
    pub fn project_cross_point(&self, features: ArrayView2<T>) -> Result<Vec<EmbeddingBatch<T>>> {
        (1..=self.levels())
            .map(|j| self.embed(self.cross_slot(Modality::Point, j)?, features))
            .collect()
    }

    /// Image features of level-`level` views projected into that level's space.
    pub fn project_cross_view(&self, features: ArrayView2<T>, level: usize) -> Result<EmbeddingBatch<T>> {
        self.embed(self.cross_slot(Modality::Image, level)?, features)
    }
}

impl<T: Real> Params<T> for HeadBank<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        if let Some(h) = &self.intra_p {
            h.collect(&join(prefix, "intra_p"), out);
        }
        if let Some(h) = &self.intra_i {
            h.collect(&join(prefix, "intra_i"), out);
        }
        for (j, h) in self.cross_p.iter().enumerate() {
            h.collect(&join(prefix, &format!("cross_p{}", j + 1)), out);
        }
        for (j, h) in self.cross_i.iter().enumerate() {
            h.collect(&join(prefix, &format!("cross_i{}", j + 1)), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        if let Some(h) = &mut self.intra_p {
            h.collect_mut(&join(prefix, "intra_p"), out);
        }
        if let Some(h) = &mut self.intra_i {
            h.collect_mut(&join(prefix, "intra_i"), out);
        }
        for (j, h) in self.cross_p.iter_mut().enumerate() {
            h.collect_mut(&join(prefix, &format!("cross_p{}", j + 1)), out);
        }
        for (j, h) in self.cross_i.iter_mut().enumerate() {
            h.collect_mut(&join(prefix, &format!("cross_i{}", j + 1)), out);
        }
    }
}
