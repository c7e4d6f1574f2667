//! Point-cloud and image backbones producing pre-projection features.

use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{PointCloud, ViewImage};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_grad, Conv2d, EdgeConv, EdgeConvCache, Params};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Neighbors per point in every edge-convolution graph.
    pub k_nn: usize,
    pub edge_widths: Vec<usize>,
    pub image_widths: Vec<usize>,
    pub resolution: usize,
    /// Channels the image backbone expects; single-channel renders are broadcast.
    pub image_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            k_nn: 16,
            edge_widths: vec![64, 64, 128],
            image_widths: vec![32, 64, 128, 256],
            resolution: 64,
            image_channels: 1,
        }
    }
}

impl EncoderConfig {
    pub fn point_dim(&self) -> usize {
        2 * self.edge_widths.last().copied().unwrap_or(0)
    }

    pub fn image_dim(&self) -> usize {
        self.image_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_nn == 0 {
            return Err(Error::Config("encoder.k_nn must be positive".into()));
        }
        if self.edge_widths.is_empty() || self.edge_widths.contains(&0) {
            return Err(Error::Config("encoder.edge_widths must be non-empty and positive".into()));
        }
        if self.image_widths.is_empty() || self.image_widths.contains(&0) {
            return Err(Error::Config("encoder.image_widths must be non-empty and positive".into()));
        }
        if self.resolution >> self.image_widths.len() == 0 {
            return Err(Error::Config(format!(
                "resolution {} too small for {} stride-2 stages",
                self.resolution,
                self.image_widths.len()
            )));
        }
        if self.image_channels == 0 {
            return Err(Error::Config("encoder.image_channels must be positive".into()));
        }
        Ok(())
    }
}

/// Per-point features of the last layer plus their max/mean pooled summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeature<T: Real> {
    pub per_point: Array2<T>,
    pub global: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeature<T: Real> {
    pub vector: Array1<T>,
}

/// Dynamic-graph point encoder: stacked edge convolutions, each on a k-NN
/// graph recomputed in its own input feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder<T: Real> {
    pub layers: Vec<EdgeConv<T>>,
    pub k_nn: usize,
}

#[derive(Debug, Clone)]
pub struct PointCache<T: Real> {
    layers: Vec<EdgeConvCache<T>>,
    last: Array2<T>,
}

impl<T: Real> PointEncoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let mut inputs = 3;
        let layers = cfg
            .edge_widths
            .iter()
            .map(|&w| {
                let l = EdgeConv::new(inputs, w, rng);
                inputs = w;
                l
            })
            .collect();
        Self {
            layers,
            k_nn: cfg.k_nn,
        }
    }

    pub fn global_dim(&self) -> usize {
        2 * self.layers.last().map_or(0, |l| l.outputs())
    }

    pub fn encode(&self, cloud: &PointCloud<T>) -> Result<PointFeature<T>> {
        self.forward(cloud.points.view()).map(|(f, _)| f)
    }

    pub fn forward(&self, points: ArrayView2<T>) -> Result<(PointFeature<T>, PointCache<T>)> {
        let n = points.nrows();
        if n < self.k_nn {
            return Err(Error::InvalidInput(format!(
                "cloud has {n} points, fewer than k_nn = {}",
                self.k_nn
            )));
        }
        if points.ncols() != 3 {
            return Err(Error::DimMismatch(format!("expected n x 3 points, got n x {}", points.ncols())));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = points.to_owned();
        for layer in &self.layers {
            let (y, cache) = layer.forward(x.view(), self.k_nn);
            caches.push(cache);
            x = y;
        }
        let global = pool(x.view());
        Ok((
            PointFeature {
                per_point: x.clone(),
                global,
            },
            PointCache {
                layers: caches,
                last: x,
            },
        ))
    }

    /// Backpropagates `dL/dglobal` into the layer parameters.
    pub fn backward(&self, cache: &PointCache<T>, d_global: ArrayView1<T>, grad: &mut Self) {
        let x = cache.last.view();
        let (n, c) = x.dim();
        let mut dy = Array2::<T>::zeros((n, c));
        let inv_n = T::one() / T::lit(n as f64);
        for ch in 0..c {
            let col = x.column(ch);
            let mut arg = 0;
            for i in 1..n {
                if col[i] > col[arg] {
                    arg = i;
                }
            }
            dy[[arg, ch]] = dy[[arg, ch]] + d_global[ch];
            let dm = d_global[c + ch] * inv_n;
            dy.column_mut(ch).mapv_inplace(|v| v + dm);
        }
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            dy = layer.backward(&cache.layers[idx], dy.view(), &mut grad.layers[idx]);
        }
    }
}

/// Concatenated per-channel max and mean over points.
fn pool<T: Real>(x: ArrayView2<T>) -> Array1<T> {
    let (n, c) = x.dim();
    let mut g = Array1::<T>::zeros(2 * c);
    for ch in 0..c {
        let col = x.column(ch);
        g[ch] = col.iter().copied().fold(T::neg_infinity(), T::max);
        g[c + ch] = col.sum() / T::lit(n as f64);
    }
    g
}

impl<T: Real> Params<T> for PointEncoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&crate::nn::join(prefix, &format!("edge{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_mut(&crate::nn::join(prefix, &format!("edge{i}")), out);
        }
    }
}

/// Small convolutional image encoder: stride-2 3x3 stages with rectifiers,
/// then global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder<T: Real> {
    pub convs: Vec<Conv2d<T>>,
    pub resolution: usize,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct ImageCache<T: Real> {
    stages: Vec<(usize, usize, usize, usize)>,
    cols: Vec<Array2<T>>,
    pre: Vec<Array4<T>>,
}

impl<T: Real> ImageEncoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let mut inputs = cfg.image_channels;
        let convs = cfg
            .image_widths
            .iter()
            .map(|&w| {
                let c = Conv2d::new(inputs, w, 3, 2, 1, rng);
                inputs = w;
                c
            })
            .collect();
        Self {
            convs,
            resolution: cfg.resolution,
            channels: cfg.image_channels,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.convs.last().map_or(0, |c| c.out_channels())
    }

    pub fn encode(&self, image: &ViewImage<T>) -> Result<ImageFeature<T>> {
        let (f, _) = self.forward(&[image])?;
        Ok(ImageFeature {
            vector: f.row(0).to_owned(),
        })
    }

    /// Encodes a batch of images into a `B x C` feature matrix.
    pub fn forward(&self, images: &[&ViewImage<T>]) -> Result<(Array2<T>, ImageCache<T>)> {
        let b = images.len();
        let r = self.resolution;
        let mut x = Array4::<T>::zeros((self.channels, b, r, r));
        for (bi, img) in images.iter().enumerate() {
            if img.height() != r || img.width() != r {
                return Err(Error::DimMismatch(format!(
                    "image is {}x{}, encoder expects {r}x{r}",
                    img.height(),
                    img.width()
                )));
            }
            for c in 0..self.channels {
                let src = c.min(img.channels() - 1);
                x.slice_mut(s![c, bi, .., ..])
                    .assign(&img.pixels.slice(s![src, .., ..]));
            }
        }
        let mut cache = ImageCache {
            stages: Vec::with_capacity(self.convs.len()),
            cols: Vec::with_capacity(self.convs.len()),
            pre: Vec::with_capacity(self.convs.len()),
        };
        for conv in &self.convs {
            let dim = x.dim();
            let (pre, cols) = conv.forward(x.view());
            x = pre.mapv(relu);
            cache.stages.push(dim);
            cache.cols.push(cols);
            cache.pre.push(pre);
        }
        let (c, _, h, w) = x.dim();
        let hw = T::lit((h * w) as f64);
        let mut feats = Array2::<T>::zeros((b, c));
        for ch in 0..c {
            for bi in 0..b {
                feats[[bi, ch]] = x.slice(s![ch, bi, .., ..]).sum() / hw;
            }
        }
        Ok((feats, cache))
    }

    pub fn backward(&self, cache: &ImageCache<T>, d_feat: ArrayView2<T>, grad: &mut Self) {
        let last = cache.pre.last().expect("at least one stage");
        let (c, b, h, w) = last.dim();
        let inv = T::one() / T::lit((h * w) as f64);
        let mut d = Array4::<T>::from_shape_fn((c, b, h, w), |(ch, bi, _, _)| d_feat[[bi, ch]] * inv);
        for idx in (0..self.convs.len()).rev() {
            let pre = &cache.pre[idx];
            ndarray::Zip::from(&mut d)
                .and(pre)
                .for_each(|g, &p| *g = relu_grad(p, *g));
            let dx = self.convs[idx].backward(
                cache.stages[idx],
                cache.cols[idx].view(),
                d.view(),
                &mut grad.convs[idx],
            );
            if idx == 0 {
                break;
            }
            d = dx;
        }
    }
}

impl<T: Real> Params<T> for ImageEncoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        for (i, l) in self.convs.iter().enumerate() {
            l.collect(&crate::nn::join(prefix, &format!("conv{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        for (i, l) in self.convs.iter_mut().enumerate() {
            l.collect_mut(&crate::nn::join(prefix, &format!("conv{i}")), out);
        }
    }
}

/// Stacks `B` global point features into a `B x D` matrix.
pub fn stack_rows<T: Real>(rows: &[Array1<T>]) -> Array2<T> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::<T>::zeros((rows.len(), d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(src);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn cloud(n: usize, seed: u64) -> Array2<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, 3), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn shape_contract_for_default_config() {
        let cfg = EncoderConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let enc = PointEncoder::<f32>::new(&cfg, &mut rng);
        let (f, _) = enc.forward(cloud(1024, 2).view()).unwrap();
        assert_eq!(f.per_point.dim(), (1024, 128));
        assert_eq!(f.global.len(), 256);

        let img_enc = ImageEncoder::<f32>::new(&cfg, &mut rng);
        let img = ViewImage::from_plane(Array2::zeros((64, 64)), 0, 0).unwrap();
        assert_eq!(img_enc.encode(&img).unwrap().vector.len(), 256);
    }

    #[test]
    fn permutation_leaves_global_feature_unchanged() {
        let cfg = EncoderConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let enc = PointEncoder::<f32>::new(&cfg, &mut rng);
        let x = cloud(256, 5);
        let g = enc.forward(x.view()).unwrap().0.global;
        let mut perm: Vec<usize> = (0..256).collect();
        perm.shuffle(&mut rng);
        let xp = x.select(Axis(0), &perm);
        let gp = enc.forward(xp.view()).unwrap().0.global;
        let diff = (&g - &gp).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn far_outlier_changes_global_feature() {
        let cfg = EncoderConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let enc = PointEncoder::<f64>::new(&cfg, &mut rng);
        let x = cloud(128, 7).mapv(f64::from);
        let mut y = x.clone();
        y.row_mut(17).assign(&ndarray::array![25.0, -30.0, 40.0]);
        let a = enc.forward(x.view()).unwrap().0.global;
        let b = enc.forward(y.view()).unwrap().0.global;
        let diff = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff > 1e-3);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let cfg = EncoderConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let enc = PointEncoder::<f32>::new(&cfg, &mut rng);
        assert!(enc.forward(cloud(10, 1).view()).is_err());
    }

    #[test]
    fn constant_images_give_identical_features_and_wrong_size_fails() {
        let cfg = EncoderConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let enc = ImageEncoder::<f32>::new(&cfg, &mut rng);
        let a = ViewImage::from_plane(Array2::zeros((64, 64)), 0, 1).unwrap();
        let b = ViewImage::from_plane(Array2::zeros((64, 64)), 5, 2).unwrap();
        assert_eq!(enc.encode(&a).unwrap(), enc.encode(&b).unwrap());
        let small = ViewImage::from_plane(Array2::zeros((32, 32)), 0, 1).unwrap();
        assert!(matches!(enc.encode(&small), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn mirrored_disk_gives_the_same_feature() {
        let cfg = EncoderConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let enc = ImageEncoder::<f32>::new(&cfg, &mut rng);
        // disk centered between the two middle columns is mirror-symmetric
        let plane = Array2::from_shape_fn((64, 64), |(y, x)| {
            let dy = y as f32 + 0.5 - 32.0;
            let dx = x as f32 + 0.5 - 32.0;
            if dx * dx + dy * dy < 20.0 * 20.0 { 1.0 } else { 0.0 }
        });
        let flipped = plane.slice(s![.., ..;-1]).to_owned();
        let a = enc.encode(&ViewImage::from_plane(plane, 0, 0).unwrap()).unwrap();
        let b = enc.encode(&ViewImage::from_plane(flipped, 0, 0).unwrap()).unwrap();
        let diff = (&a.vector - &b.vector).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(diff < 1e-4);
    }
}
