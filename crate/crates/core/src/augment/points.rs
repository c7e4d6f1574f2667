use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::PointCloud;
use crate::scalar::Real;

/// Dropout never leaves fewer points than this (or the whole cloud, if smaller).
pub const MIN_POINTS_AFTER_DROPOUT: usize = 64;
const DROPOUT_REDRAWS: usize = 10;

/// Strengths of the 3D augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig3D {
    /// Rotation about `z` is uniform in `[-rotate_deg, rotate_deg]`.
    pub rotate_deg: f64,
    /// Per-axis scale range.
    pub scale: (f64, f64),
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    /// Fraction of points removed is uniform in `[0, max_dropout]`.
    pub max_dropout: f64,
}

impl Default for AugConfig3D {
    fn default() -> Self {
        Self {
            rotate_deg: 180.0,
            scale: (0.8, 1.25),
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            max_dropout: 0.1,
        }
    }
}

impl AugConfig3D {
    pub fn identity() -> Self {
        Self {
            rotate_deg: 0.0,
            scale: (1.0, 1.0),
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            max_dropout: 0.0,
        }
    }

    pub fn rotation_only() -> Self {
        Self {
            rotate_deg: 180.0,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.rotate_deg >= 0.0
            && self.scale.0 > 0.0
            && self.scale.0 <= self.scale.1
            && self.jitter_sigma >= 0.0
            && self.jitter_clip >= 0.0
            && (0.0..1.0).contains(&self.max_dropout);
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid 3D augmentation strengths: {self:?}")))
        }
    }
}

/// Draws two independent augmented variants of `cloud`.
pub fn augment_point_cloud<T: Real, R: Rng + ?Sized>(
    cloud: &PointCloud<T>,
    cfg: &AugConfig3D,
    rng: &mut R,
) -> (PointCloud<T>, PointCloud<T>) {
    let a = augment_once(cloud, cfg, rng);
    let b = augment_once(cloud, cfg, rng);
    (a, b)
}

/// One variant: dropout, rotation about `z`, anisotropic scale, clipped jitter.
pub fn augment_once<T: Real, R: Rng + ?Sized>(cloud: &PointCloud<T>, cfg: &AugConfig3D, rng: &mut R) -> PointCloud<T> {
    let n = cloud.len();
    let keep = dropout_keep(n, cfg.max_dropout, rng);
    let theta = if cfg.rotate_deg > 0.0 {
        rng.random_range(-cfg.rotate_deg..=cfg.rotate_deg).to_radians()
    } else {
        0.0
    };
    let (s, c) = theta.sin_cos();
    let scale = [0; 3].map(|_| {
        if cfg.scale.0 < cfg.scale.1 {
            rng.random_range(cfg.scale.0..=cfg.scale.1)
        } else {
            cfg.scale.0
        }
    });
    let mut out = Array2::<T>::zeros((keep.len(), 3));
    for (r, &i) in keep.iter().enumerate() {
        let p = cloud.points.row(i);
        let (x, y, z) = (p[0].as_f64(), p[1].as_f64(), p[2].as_f64());
        let q = [c * x - s * y, s * x + c * y, z];
        for d in 0..3 {
            let mut v = q[d] * scale[d];
            if cfg.jitter_sigma > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                v += (cfg.jitter_sigma * e).clamp(-cfg.jitter_clip, cfg.jitter_clip);
            }
            out[[r, d]] = T::lit(v);
        }
    }
    PointCloud {
        points: out,
        object_id: cloud.object_id,
        label: cloud.label,
    }
}

fn dropout_keep<R: Rng + ?Sized>(n: usize, max_dropout: f64, rng: &mut R) -> Vec<usize> {
    if max_dropout <= 0.0 {
        return (0..n).collect();
    }
    let floor = MIN_POINTS_AFTER_DROPOUT.min(n);
    for _ in 0..DROPOUT_REDRAWS {
        let frac = rng.random_range(0.0..=max_dropout);
        let drop = (frac * n as f64).floor() as usize;
        if n - drop < floor {
            continue;
        }
        let mut dropped = vec![false; n];
        for i in index::sample(rng, n, drop) {
            dropped[i] = true;
        }
        return (0..n).filter(|&i| !dropped[i]).collect();
    }
    (0..n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::normalize_cloud;
    use rand::SeedableRng;

    fn cloud(n: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        normalize_cloud(raw.view()).unwrap().with_identity(7, Some(3))
    }

    fn dists(p: &Array2<f64>) -> Array2<f64> {
        let n = p.nrows();
        Array2::from_shape_fn((n, n), |(i, j)| {
            let d = &p.row(i) - &p.row(j);
            d.dot(&d).sqrt()
        })
    }

    #[test]
    fn identity_config_returns_input() {
        let p = cloud(128, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (a, b) = augment_point_cloud(&p, &AugConfig3D::identity(), &mut rng);
        assert_eq!(a, p);
        assert_eq!(b, p);
    }

    #[test]
    fn rotation_only_is_an_isometry() {
        let p = cloud(100, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (a, b) = augment_point_cloud(&p, &AugConfig3D::rotation_only(), &mut rng);
        let d0 = dists(&p.points);
        for v in [a, b] {
            let diff = (&dists(&v.points) - &d0).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
            assert!(diff < 1e-5, "{diff}");
        }
    }

    #[test]
    fn default_variants_keep_identity_and_enough_points() {
        let p = cloud(1024, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let (a, b) = augment_point_cloud(&p, &AugConfig3D::default(), &mut rng);
        for v in [&a, &b] {
            assert_eq!(v.object_id, 7);
            assert_eq!(v.label, Some(3));
            assert!(v.len() >= 1024 - 103 && v.len() <= 1024);
        }
        assert_ne!(a.points, b.points);
    }

    #[test]
    fn small_clouds_are_never_dropped_below_their_size() {
        let p = cloud(16, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cfg = AugConfig3D {
            max_dropout: 0.5,
            ..AugConfig3D::identity()
        };
        assert_eq!(augment_once(&p, &cfg, &mut rng).len(), 16);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let p = cloud(256, 10);
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            let (a, b) = augment_point_cloud(&p, &AugConfig3D::default(), &mut rng);
            (a.content_hash(), b.content_hash())
        };
        assert_eq!(run(), run());
    }
}
