use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smallest point count accepted for a cloud.
pub const MIN_POINTS: usize = 8;

/// An `n x 3` point set, centered at the origin and scaled into the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud<T: Real> {
    pub points: Array2<T>,
    pub object_id: u64,
    pub label: Option<u32>,
}

impl<T: Real> PointCloud<T> {
    /// Wraps already-normalized coordinates without re-normalizing.
    pub fn from_normalized(points: Array2<T>, object_id: u64, label: Option<u32>) -> Result<Self> {
        check_shape(points.view())?;
        Ok(Self {
            points,
            object_id,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn with_identity(mut self, object_id: u64, label: Option<u32>) -> Self {
        self.object_id = object_id;
        self.label = label;
        self
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid(self.points.view())
    }

    pub fn max_norm(&self) -> f64 {
        let c = [0.0; 3];
        max_norm(self.points.view(), c)
    }

    /// Returns a new cloud keeping only the rows in `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: self.points.select(Axis(0), indices),
            object_id: self.object_id,
            label: self.label,
        }
    }

    /// SHA-256 over the little-endian `f64` coordinates.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.points.iter() {
            h.update(v.as_f64().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Centers `raw` at its centroid and scales it so the farthest point has norm 1.
///
/// Point order is preserved. Arithmetic runs in `f64` regardless of `T`.
pub fn normalize_cloud<T: Real>(raw: ArrayView2<T>) -> Result<PointCloud<T>> {
    check_shape(raw)?;
    let c = centroid(raw);
    let scale = max_norm(raw, c);
    if !(scale > 1e-12) {
        return Err(Error::Degenerate(
            "all points coincide; cloud has zero extent".into(),
        ));
    }
    let mut out = Array2::<T>::zeros(raw.raw_dim());
    for (mut dst, src) in out.rows_mut().into_iter().zip(raw.rows()) {
        for d in 0..3 {
            dst[d] = T::lit((src[d].as_f64() - c[d]) / scale);
        }
    }
    Ok(PointCloud {
        points: out,
        object_id: 0,
        label: None,
    })
}

fn check_shape<T: Real>(raw: ArrayView2<T>) -> Result<()> {
    if raw.ncols() != 3 {
        return Err(Error::DimMismatch(format!(
            "point cloud must be n x 3, got n x {}",
            raw.ncols()
        )));
    }
    if raw.nrows() < MIN_POINTS {
        return Err(Error::InvalidInput(format!(
            "point cloud needs at least {MIN_POINTS} points, got {}",
            raw.nrows()
        )));
    }
    if let Some((i, _)) = raw.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "coordinate at row {}, column {} is not finite",
            i / 3,
            i % 3
        )));
    }
    Ok(())
}

fn centroid<T: Real>(p: ArrayView2<T>) -> [f64; 3] {
    let mut c = [0.0f64; 3];
    for row in p.rows() {
        for d in 0..3 {
            c[d] += row[d].as_f64();
        }
    }
    let n = p.nrows().max(1) as f64;
    c.map(|v| v / n)
}

fn max_norm<T: Real>(p: ArrayView2<T>, c: [f64; 3]) -> f64 {
    p.rows()
        .into_iter()
        .map(|r| {
            (0..3)
                .map(|d| (r[d].as_f64() - c[d]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn centered_unit_sphere_is_a_fixed_point() {
        let raw = array![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
            [0.6, 0.8, 0.0],
            [-0.6, -0.8, 0.0]
        ];
        let out = normalize_cloud::<f64>(raw.view()).unwrap();
        assert_eq!(out.points, raw);
    }

    #[test]
    fn coincident_points_are_rejected() {
        let raw = Array2::<f32>::from_elem((16, 3), 0.5);
        assert!(matches!(
            normalize_cloud(raw.view()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn non_finite_and_short_inputs_are_rejected() {
        let mut raw = Array2::<f64>::ones((10, 3));
        raw[[0, 0]] = 0.0;
        raw[[4, 1]] = f64::NAN;
        assert!(matches!(
            normalize_cloud(raw.view()),
            Err(Error::NonFinite(_))
        ));
        let short = Array2::<f64>::ones((7, 3));
        assert!(matches!(
            normalize_cloud(short.view()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn gaussian_cloud_normalizes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let raw = Array2::<f64>::from_shape_fn((1024, 3), |(_, d)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * (d as f64 + 1.0) + 4.0
        });
        let out = normalize_cloud(raw.view()).unwrap();
        // recompute directly
        let mut c = [0.0; 3];
        let mut mx = 0.0f64;
        for r in out.points.rows() {
            for d in 0..3 {
                c[d] += r[d] / 1024.0;
            }
            mx = mx.max(r.dot(&r).sqrt());
        }
        assert!(c.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
        assert!((mx - 1.0).abs() < 1e-6);
        // order preserved: first row is shifted+scaled first raw row
        let scale = (raw[[0, 0]] - raw.column(0).mean().unwrap()) / out.points[[0, 0]];
        let scale1 = (raw[[7, 1]] - raw.column(1).mean().unwrap()) / out.points[[7, 1]];
        assert!((scale - scale1).abs() < 1e-9);
    }
}
