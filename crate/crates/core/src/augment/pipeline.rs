use std::fmt;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::image::{self, uniform};
use crate::domain::{SeedTree, StreamRng, ViewImage};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Longest catalog available: `t0` plus one transform per rig view.
pub const MAX_CATALOG_LEVELS: usize = 24;
/// Number of escalating transforms in the standard catalog.
pub const STANDARD_LEVELS: usize = 4;

const CROP_FLOOR_START: f64 = 0.8;
const CROP_FLOOR_END: f64 = 0.2;
const ERASE_ASPECT: (f64, f64) = (0.3, 3.3);

/// One elementary image operation and its strength parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransformKind {
    /// Crop area ratio is drawn from `[crop_floor, 1]` of the owning pipeline.
    ResizedCrop { ratio: (f64, f64) },
    HorizontalFlip { p: f64 },
    /// Factors drawn from `[1 - brightness, 1 + brightness]` and likewise for contrast.
    ColorJitter { brightness: f64, contrast: f64 },
    GaussianBlur { p: f64, sigma_max: f64 },
    RandomErase { p: f64, area: (f64, f64) },
    GrayscaleMix { alpha_max: f64 },
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ResizedCrop { ratio } => write!(f, "resized-crop(ratio={:.4}..{:.4})", ratio.0, ratio.1),
            Self::HorizontalFlip { p } => write!(f, "horizontal-flip(p={p:.4})"),
            Self::ColorJitter { brightness, contrast } => {
                write!(f, "color-jitter(brightness={brightness:.4},contrast={contrast:.4})")
            }
            Self::GaussianBlur { p, sigma_max } => write!(f, "gaussian-blur(p={p:.4},sigma_max={sigma_max:.4})"),
            Self::RandomErase { p, area } => {
                write!(f, "random-erase(p={p:.4},area={:.4}..{:.4})", area.0, area.1)
            }
            Self::GrayscaleMix { alpha_max } => write!(f, "grayscale-mix(alpha_max={alpha_max:.4})"),
        }
    }
}

impl TransformKind {
    fn zeroed(&self) -> Self {
        match self {
            Self::ResizedCrop { .. } => Self::ResizedCrop { ratio: (1.0, 1.0) },
            Self::HorizontalFlip { .. } => Self::HorizontalFlip { p: 0.0 },
            Self::ColorJitter { .. } => Self::ColorJitter {
                brightness: 0.0,
                contrast: 0.0,
            },
            Self::GaussianBlur { sigma_max, .. } => Self::GaussianBlur {
                p: 0.0,
                sigma_max: *sigma_max,
            },
            Self::RandomErase { area, .. } => Self::RandomErase { p: 0.0, area: *area },
            Self::GrayscaleMix { .. } => Self::GrayscaleMix { alpha_max: 0.0 },
        }
    }

    fn in_range(&self) -> bool {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        match *self {
            Self::ResizedCrop { ratio } => ratio.0 >= 0.5 && ratio.0 <= ratio.1 && ratio.1 <= 2.0,
            Self::HorizontalFlip { p } => unit(p),
            Self::ColorJitter { brightness, contrast } => unit(brightness) && unit(contrast),
            Self::GaussianBlur { p, sigma_max } => unit(p) && (0.1..=4.0).contains(&sigma_max),
            Self::RandomErase { p, area } => unit(p) && area.0 > 0.0 && area.0 <= area.1 && area.1 <= 0.5,
            Self::GrayscaleMix { alpha_max } => unit(alpha_max),
        }
    }

    fn apply<R: Rng + ?Sized>(&self, img: &mut Array3<f64>, crop_floor: f64, rng: &mut R) {
        let (_, h, w) = img.dim();
        match *self {
            Self::ResizedCrop { ratio } => {
                let q = image::sample_crop((crop_floor, 1.0), ratio, h, w, rng);
                if q != image::CropQuaternion::full(h, w) {
                    *img = image::resized_crop(img, &q);
                }
            }
            Self::HorizontalFlip { p } => {
                if rng.random_bool(p) {
                    image::flip_horizontal(img);
                }
            }
            Self::ColorJitter { brightness, contrast } => {
                let b = uniform(rng, (1.0 - brightness, 1.0 + brightness));
                let c = uniform(rng, (1.0 - contrast, 1.0 + contrast));
                if b != 1.0 || c != 1.0 {
                    image::brightness_contrast(img, b, c);
                }
            }
            Self::GaussianBlur { p, sigma_max } => {
                if rng.random_bool(p) {
                    let sigma = uniform(rng, (0.1, sigma_max));
                    image::gaussian_blur(img, sigma);
                }
            }
            Self::RandomErase { p, area } => {
                if rng.random_bool(p) {
                    let a = uniform(rng, area);
                    let r = uniform(rng, (ERASE_ASPECT.0.ln(), ERASE_ASPECT.1.ln())).exp();
                    let (eh, ew) = image::crop_size(a, r, h, w);
                    if eh > 0 && ew > 0 && eh < h && ew < w {
                        let top = rng.random_range(0..=h - eh);
                        let left = rng.random_range(0..=w - ew);
                        let value = rng.random::<f64>();
                        image::erase(img, top, left, eh, ew, value);
                    }
                }
            }
            Self::GrayscaleMix { alpha_max } => {
                let alpha = uniform(rng, (0.0, alpha_max));
                let gray = rng.random::<f64>();
                if alpha > 0.0 {
                    image::mix_gray(img, alpha, gray);
                }
            }
        }
    }
}

/// A catalog entry `t_i`: the operations it adds and the crop-area floor it
/// imposes on any pipeline containing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    pub level_introduced: usize,
    pub crop_floor: f64,
    pub ops: Vec<TransformKind>,
}

impl Transform2D {
    /// Same operations with every strength set to its no-op value.
    pub fn zeroed(&self) -> Self {
        Self {
            level_introduced: self.level_introduced,
            crop_floor: 1.0,
            ops: self.ops.iter().map(TransformKind::zeroed).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 < self.crop_floor && self.crop_floor <= 1.0) || !self.ops.iter().all(TransformKind::in_range) {
            return Err(Error::Config(format!("transform t{} has parameters out of range", self.level_introduced)));
        }
        Ok(())
    }
}

impl fmt::Display for Transform2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{} crop_floor={:.4}", self.level_introduced, self.crop_floor)?;
        for op in &self.ops {
            write!(f, " {op}")?;
        }
        Ok(())
    }
}

/// The catalog `[t0, t1, ..., t_levels]`.
///
/// `t0` is a weak resized crop plus flip; the standard four escalations are
/// color jitter, blur, erase and gray mixing. The crop floor falls from 0.8
/// at `t0` to 0.2 at `t4`. Longer catalogs cycle the four kinds with growing
/// strength and keep the standard catalog as their prefix.
pub fn catalog(levels: usize) -> Result<Vec<Transform2D>> {
    if levels == 0 || levels > MAX_CATALOG_LEVELS {
        return Err(Error::Config(format!(
            "catalog levels must be in [1, {MAX_CATALOG_LEVELS}], got {levels}"
        )));
    }
    let mut out = Vec::with_capacity(levels + 1);
    for i in 0..=levels {
        let step = i.min(STANDARD_LEVELS) as f64 / STANDARD_LEVELS as f64;
        let crop_floor = CROP_FLOOR_START - (CROP_FLOOR_START - CROP_FLOOR_END) * step;
        let ops = if i == 0 {
            vec![
                TransformKind::ResizedCrop { ratio: (0.75, 4.0 / 3.0) },
                TransformKind::HorizontalFlip { p: 0.5 },
            ]
        } else {
            let g = 1.0 + 0.5 * ((i - 1) / STANDARD_LEVELS) as f64;
            vec![match (i - 1) % STANDARD_LEVELS {
                0 => TransformKind::ColorJitter {
                    brightness: (0.4 * g).min(0.9),
                    contrast: (0.4 * g).min(0.9),
                },
                1 => TransformKind::GaussianBlur {
                    p: (0.5 * g).min(1.0),
                    sigma_max: (1.5 * g).min(4.0),
                },
                2 => TransformKind::RandomErase {
                    p: (0.5 * g).min(1.0),
                    area: (0.02, (0.2 * g).min(0.5)),
                },
                _ => TransformKind::GrayscaleMix {
                    alpha_max: (0.5 * g).min(0.9),
                },
            }]
        };
        out.push(Transform2D {
            level_introduced: i,
            crop_floor,
            ops,
        });
    }
    Ok(out)
}

/// An ordered chain of catalog entries applied as one augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPipeline {
    pub level: usize,
    pub transforms: Vec<Transform2D>,
}

impl AugmentationPipeline {
    /// The crop floor in force: the smallest one among the chained entries.
    pub fn crop_floor(&self) -> f64 {
        self.transforms.iter().map(|t| t.crop_floor).fold(1.0, f64::min)
    }

    /// One line per transform, so a shorter chain serializes to a prefix of a longer one.
    pub fn serialize(&self) -> String {
        self.transforms.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn zeroed(&self) -> Self {
        Self {
            level: self.level,
            transforms: self.transforms.iter().map(Transform2D::zeroed).collect(),
        }
    }

    /// Applies the chain in order. Each transform draws from its own
    /// sub-stream, seeded in order from `rng`, so chains sharing a prefix
    /// share its randomness.
    pub fn apply_array<R: Rng + ?Sized>(&self, img: &mut Array3<f64>, rng: &mut R) {
        let floor = self.crop_floor();
        for t in &self.transforms {
            let mut sub = StreamRng::seed_from_u64(rng.next_u64());
            for op in &t.ops {
                op.apply(img, floor, &mut sub);
            }
        }
    }
}

/// Nested pipelines: `T_i = [t0, ..., t_i]` for `i = 1..=m`.
pub fn build_pipelines(m: usize, catalog: &[Transform2D]) -> Result<Vec<AugmentationPipeline>> {
    if m == 0 {
        return Err(Error::Config("need at least one augmentation level".into()));
    }
    if catalog.len() < m + 1 {
        return Err(Error::Config(format!(
            "{m} levels need a catalog of {} transforms, catalog has {}",
            m + 1,
            catalog.len()
        )));
    }
    for t in catalog {
        t.validate()?;
    }
    Ok((1..=m)
        .map(|i| AugmentationPipeline {
            level: i,
            transforms: catalog[..=i].to_vec(),
        })
        .collect())
}

/// How sampled views are assigned augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugStrategy {
    /// Every view goes through `T_1`.
    Unified,
    /// View `j` gets `[t0, t_j]` at the level-1 crop floor: different kinds, no escalation.
    Multi,
    /// View `j` gets the nested pipeline `T_j`.
    MultiLevel,
}

impl AugStrategy {
    pub const ALL: [AugStrategy; 3] = [AugStrategy::Unified, AugStrategy::Multi, AugStrategy::MultiLevel];

    pub fn name(self) -> &'static str {
        match self {
            Self::Unified => "unified",
            Self::Multi => "multi",
            Self::MultiLevel => "multi-level",
        }
    }
}

/// One pipeline per view slot `j = 1..=m` under `strategy`.
pub fn pipelines_for(strategy: AugStrategy, m: usize, catalog: &[Transform2D]) -> Result<Vec<AugmentationPipeline>> {
    let nested = build_pipelines(m, catalog)?;
    Ok(match strategy {
        AugStrategy::MultiLevel => nested,
        AugStrategy::Unified => vec![nested[0].clone(); m],
        AugStrategy::Multi => {
            let floor = nested[0].crop_floor();
            (1..=m)
                .map(|j| {
                    let mut tj = catalog[j].clone();
                    tj.crop_floor = floor;
                    AugmentationPipeline {
                        level: j,
                        transforms: vec![catalog[0].clone(), tj],
                    }
                })
                .collect()
        }
    })
}

/// Applies `pipeline` to `view`; output stays in `[0, 1]`.
pub fn apply_level<T: Real, R: Rng + ?Sized>(
    view: &ViewImage<T>,
    pipeline: &AugmentationPipeline,
    rng: &mut R,
) -> ViewImage<T> {
    let mut img = view.pixels.mapv(|v| v.as_f64());
    pipeline.apply_array(&mut img, rng);
    ViewImage {
        pixels: img.mapv(|v| T::lit(v.clamp(0.0, 1.0))),
        view_index: view.view_index,
        object_id: view.object_id,
    }
}

/// Mean L2 distance between each probe image and its augmented version,
/// averaged over `draws` samples, for every pipeline. Draw `d` of image `j`
/// uses the same stream for every pipeline.
pub fn distortion_profile(
    pipelines: &[AugmentationPipeline],
    probe: &[ViewImage<f64>],
    seeds: &SeedTree,
    draws: usize,
) -> Vec<f64> {
    let denom = (probe.len() * draws).max(1) as f64;
    pipelines
        .iter()
        .map(|p| {
            let mut total = 0.0;
            for (j, img) in probe.iter().enumerate() {
                for d in 0..draws {
                    let mut rng = seeds.child_idx("probe", (j * draws + d) as u64).stream("augment");
                    let out = apply_level(img, p, &mut rng);
                    total += (&out.pixels - &img.pixels).mapv(|v| v * v).sum().sqrt();
                }
            }
            total / denom
        })
        .collect()
}

/// Fixed 32-image probe set: four views of each of the eight canonical shapes.
pub fn probe_set(resolution: usize) -> Result<Vec<ViewImage<f64>>> {
    use crate::shapegen::{generate_object, render_views, CameraRig, ShapeKind, ShapeSpec};
    let seeds = SeedTree::new(0x5eed_0001);
    let mut out = Vec::with_capacity(32);
    for (c, kind) in ShapeKind::ALL.iter().enumerate() {
        let spec = ShapeSpec::canonical(c as u32, *kind);
        let mut rng = seeds.child_idx("probe-object", c as u64).stream("shape");
        let cloud = generate_object::<f64, _>(&spec, 512, c as u64, &mut rng)?;
        let views = render_views(&cloud, &CameraRig::default(), resolution)?;
        for k in [1, 7, 13, 19] {
            out.push(views.by_index(k).expect("rig view").clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_level_is_base_case() {
        let cat = catalog(1).unwrap();
        let p = build_pipelines(1, &cat).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].transforms.len(), 2);
        assert_eq!(p[0].transforms[1].level_introduced, 1);
    }

    #[test]
    fn nested_pipelines_are_prefixes() {
        let cat = catalog(STANDARD_LEVELS).unwrap();
        let p = build_pipelines(4, &cat).unwrap();
        assert_eq!(p[3].transforms, cat);
        for i in 0..3 {
            let (a, b) = (p[i].serialize(), p[i + 1].serialize());
            assert!(b.starts_with(&a) && b.len() > a.len());
            assert_eq!(p[i].transforms[..], p[i + 1].transforms[..i + 2]);
        }
    }

    #[test]
    fn extended_catalog_extends_standard() {
        let std = catalog(4).unwrap();
        let ext = catalog(MAX_CATALOG_LEVELS).unwrap();
        assert_eq!(ext[..5], std[..]);
        assert!(build_pipelines(24, &ext).is_ok());
        assert!(build_pipelines(24, &std).is_err());
        assert!(catalog(25).is_err());
    }

    #[test]
    fn crop_floor_escalates() {
        let p = build_pipelines(4, &catalog(4).unwrap()).unwrap();
        let floors: Vec<f64> = p.iter().map(AugmentationPipeline::crop_floor).collect();
        assert!((floors[0] - 0.65).abs() < 1e-12 && (floors[3] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zeroed_pipeline_is_identity_and_runs_are_reproducible() {
        let probe = probe_set(32).unwrap();
        let p = build_pipelines(4, &catalog(4).unwrap()).unwrap();
        let z = p[3].zeroed();
        let mut rng = SeedTree::new(3).stream("x");
        for img in &probe[..4] {
            assert_eq!(apply_level(img, &z, &mut rng), *img);
        }
        let a = apply_level(&probe[0], &p[3], &mut SeedTree::new(4).stream("x"));
        let b = apply_level(&probe[0], &p[3], &mut SeedTree::new(4).stream("x"));
        assert_eq!(a, b);
        assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn strategies_assign_expected_pipelines() {
        let cat = catalog(4).unwrap();
        let u = pipelines_for(AugStrategy::Unified, 4, &cat).unwrap();
        assert!(u.iter().all(|p| p.serialize() == u[0].serialize() && p.transforms.len() == 2));
        let m = pipelines_for(AugStrategy::Multi, 4, &cat).unwrap();
        for (j, p) in m.iter().enumerate() {
            assert_eq!(p.transforms[1].level_introduced, j + 1);
            assert!((p.crop_floor() - 0.65).abs() < 1e-12);
        }
    }

    #[test]
    fn probe_distortion_grows_with_level() {
        let probe = probe_set(64).unwrap();
        let p = build_pipelines(4, &catalog(4).unwrap()).unwrap();
        let d = distortion_profile(&p, &probe, &SeedTree::new(11), 4);
        assert!(d.windows(2).all(|w| w[0] <= w[1]), "{d:?}");
        assert!(d[3] > d[0]);
    }
}
