//! The trainable model: point encoder, image encoder and projection heads.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};

use crate::domain::{streams, PointCloud, SeedTree};
use crate::encoders::{stack_rows, EncoderConfig, ImageEncoder, PointEncoder};
use crate::error::Result;
use crate::heads::{HeadBank, HeadRouting, ProjectionConfig};
use crate::nn::{join, Params};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    pub point: PointEncoder<T>,
    pub image: ImageEncoder<T>,
    pub heads: HeadBank<T>,
}

impl<T: Real> Model<T> {
    /// Initializes all parameters from the `init` stream of `seeds`.
    pub fn new(encoder: &EncoderConfig, proj: &ProjectionConfig, routing: HeadRouting, seeds: &SeedTree) -> Result<Self> {
        encoder.validate()?;
        let init = seeds.child(streams::INIT);
        let point = PointEncoder::new(encoder, &mut init.stream("point"));
        let image = ImageEncoder::new(encoder, &mut init.stream("image"));
        let heads = HeadBank::new(
            point.global_dim(),
            image.feature_dim(),
            proj,
            routing,
            &mut init.stream("heads"),
        )?;
        Ok(Self { point, image, heads })
    }

    pub fn from_config(cfg: &crate::RunConfig) -> Result<Self> {
        Self::new(&cfg.encoder, &cfg.proj, cfg.toggles.routing(), &SeedTree::new(cfg.seed))
    }

    /// Global (pre-projection) feature of one cloud.
    pub fn encode_points(&self, cloud: &PointCloud<T>) -> Result<Array1<T>> {
        Ok(self.point.encode(cloud)?.global)
    }

    /// Stacked global features of many clouds.
    pub fn encode_clouds(&self, clouds: &[PointCloud<T>]) -> Result<Array2<T>> {
        let rows = clouds
            .iter()
            .map(|c| self.encode_points(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(stack_rows(&rows))
    }
}

impl<T: Real> Params<T> for Model<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.point.collect(&join(prefix, "point"), out);
        self.image.collect(&join(prefix, "image"), out);
        self.heads.collect(&join(prefix, "heads"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        self.point.collect_mut(&join(prefix, "point"), out);
        self.image.collect_mut(&join(prefix, "image"), out);
        self.heads.collect_mut(&join(prefix, "heads"), out);
    }
}
