//! Procedural shape classes, the multi-view renderer, and dataset storage.

mod dataset;
mod ingest;
mod render;

pub use dataset::{build_dataset, BuildSpec, Dataset, DatasetManifest, Split, SplitData, SplitInfo, DATASET_VERSION};
pub use ingest::{ingest_arrays, ingest_external};
pub use render::{render_views, CameraRig, SPLAT_SIGMA_PX};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::domain::{normalize_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-axis scale range applied to every instance.
pub const SCALE_RANGE: (f64, f64) = (0.6, 1.4);
/// Upper bound of the per-instance surface noise standard deviation.
pub const MAX_NOISE_SIGMA: f64 = 0.02;
/// Smallest point count `generate_object` accepts.
pub const MIN_GENERATED_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
    Capsule,
    Pyramid,
    Ellipsoid,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Capsule,
        ShapeKind::Pyramid,
        ShapeKind::Ellipsoid,
    ];

    /// Generator kind of a class; classes beyond 8 wrap around.
    pub fn for_class(class_id: u32) -> Self {
        Self::ALL[class_id as usize % Self::ALL.len()]
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Capsule => "capsule",
            ShapeKind::Pyramid => "pyramid",
            ShapeKind::Ellipsoid => "ellipsoid",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown generator kind '{s}'")))
    }
}

/// One object instance: class, generator and deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class_id: u32,
    pub kind: ShapeKind,
    pub scale: [f64; 3],
    pub noise_sigma: f64,
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
}

impl ShapeSpec {
    /// Undeformed instance of `kind`.
    pub fn canonical(class_id: u32, kind: ShapeKind) -> Self {
        Self {
            class_id,
            kind,
            scale: [1.0; 3],
            noise_sigma: 0.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Random instance of class `class_id` with deformation drawn from the declared ranges.
    pub fn sample<R: Rng + ?Sized>(class_id: u32, rng: &mut R) -> Self {
        let scale_dist = Uniform::new_inclusive(SCALE_RANGE.0, SCALE_RANGE.1).expect("valid range");
        let scale = [0; 3].map(|_| scale_dist.sample(rng));
        let noise_sigma = rng.random_range(0.0..=MAX_NOISE_SIGMA);
        Self {
            class_id,
            kind: ShapeKind::for_class(class_id),
            scale,
            noise_sigma,
            rotation: random_rotation(rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .scale
            .iter()
            .any(|s| !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(s))
        {
            return Err(Error::InvalidInput(format!(
                "scale {:?} outside [{}, {}]",
                self.scale, SCALE_RANGE.0, SCALE_RANGE.1
            )));
        }
        if !(0.0..=MAX_NOISE_SIGMA).contains(&self.noise_sigma) {
            return Err(Error::InvalidInput(format!(
                "noise sigma {} outside [0, {MAX_NOISE_SIGMA}]",
                self.noise_sigma
            )));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::InvalidInput("rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }
}

/// Uniform random rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let mut q = [0.0f64; 4];
    loop {
        for v in q.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Samples `n` points on the undeformed surface of `kind`.
///
/// Surfaces are area-weighted across faces. The sphere uses antithetic
/// pairs so its sample centroid is exactly the origin.
pub fn sample_surface<R: Rng + ?Sized>(kind: ShapeKind, n: usize, rng: &mut R) -> Array2<f64> {
    let mut pts = Array2::<f64>::zeros((n, 3));
    let mut u = || rng.random::<f64>();
    match kind {
        ShapeKind::Sphere | ShapeKind::Ellipsoid => {
            let axes = if kind == ShapeKind::Sphere {
                [1.0, 1.0, 1.0]
            } else {
                [1.0, 0.6, 0.35]
            };
            let mut i = 0;
            while i < n {
                let p = unit_vector(&mut u);
                for d in 0..3 {
                    pts[[i, d]] = p[d] * axes[d];
                }
                if i + 1 < n {
                    for d in 0..3 {
                        pts[[i + 1, d]] = -p[d] * axes[d];
                    }
                }
                i += 2;
            }
        }
        ShapeKind::Box => {
            for i in 0..n {
                let face = ((u() * 6.0) as usize).min(5);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let a = 2.0 * u() - 1.0;
                let b = 2.0 * u() - 1.0;
                let (o1, o2) = ((axis + 1) % 3, (axis + 2) % 3);
                pts[[i, axis]] = sign;
                pts[[i, o1]] = a;
                pts[[i, o2]] = b;
            }
        }
        ShapeKind::Cylinder => {
            // radius 1, z in [-1, 1]; lateral area 4pi, caps pi each
            let lateral = 4.0 * PI / (6.0 * PI);
            for i in 0..n {
                let t = 2.0 * PI * u();
                if u() < lateral {
                    pts.row_mut(i).assign(&ndarray::arr1(&[t.cos(), t.sin(), 2.0 * u() - 1.0]));
                } else {
                    let r = u().sqrt();
                    let z = if u() < 0.5 { 1.0 } else { -1.0 };
                    pts.row_mut(i).assign(&ndarray::arr1(&[r * t.cos(), r * t.sin(), z]));
                }
            }
        }
        ShapeKind::Cone => {
            // base radius 1 at z = -1, apex at z = 1
            let lateral_area = PI * 5f64.sqrt();
            let p_lateral = lateral_area / (lateral_area + PI);
            for i in 0..n {
                let t = 2.0 * PI * u();
                if u() < p_lateral {
                    let s = u().sqrt();
                    pts.row_mut(i).assign(&ndarray::arr1(&[s * t.cos(), s * t.sin(), 1.0 - 2.0 * s]));
                } else {
                    let r = u().sqrt();
                    pts.row_mut(i).assign(&ndarray::arr1(&[r * t.cos(), r * t.sin(), -1.0]));
                }
            }
        }
        ShapeKind::Torus => {
            let (big, small) = (0.7, 0.3);
            let mut i = 0;
            while i < n {
                let theta = 2.0 * PI * u();
                let phi = 2.0 * PI * u();
                if u() * (big + small) > big + small * phi.cos() {
                    continue;
                }
                let ring = big + small * phi.cos();
                pts.row_mut(i).assign(&ndarray::arr1(&[
                    ring * theta.cos(),
                    ring * theta.sin(),
                    small * phi.sin(),
                ]));
                i += 1;
            }
        }
        ShapeKind::Capsule => {
            // radius 0.5, straight section z in [-0.5, 0.5]; both parts have area pi
            for i in 0..n {
                if u() < 0.5 {
                    let t = 2.0 * PI * u();
                    pts.row_mut(i).assign(&ndarray::arr1(&[0.5 * t.cos(), 0.5 * t.sin(), u() - 0.5]));
                } else {
                    let p = unit_vector(&mut u);
                    let shift = if p[2] >= 0.0 { 0.5 } else { -0.5 };
                    pts.row_mut(i)
                        .assign(&ndarray::arr1(&[0.5 * p[0], 0.5 * p[1], 0.5 * p[2] + shift]));
                }
            }
        }
        ShapeKind::Pyramid => {
            let apex = [0.0, 0.0, 1.0];
            let corners = [[1.0, 1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, -1.0], [1.0, -1.0, -1.0]];
            let side = 5f64.sqrt();
            let total = 4.0 + 4.0 * side;
            for i in 0..n {
                let pick = u() * total;
                if pick < 4.0 {
                    pts.row_mut(i)
                        .assign(&ndarray::arr1(&[2.0 * u() - 1.0, 2.0 * u() - 1.0, -1.0]));
                } else {
                    let f = (((pick - 4.0) / side) as usize).min(3);
                    let (a, b) = (corners[f], corners[(f + 1) % 4]);
                    let (mut r1, mut r2) = (u(), u());
                    if r1 + r2 > 1.0 {
                        r1 = 1.0 - r1;
                        r2 = 1.0 - r2;
                    }
                    for d in 0..3 {
                        pts[[i, d]] = apex[d] + r1 * (a[d] - apex[d]) + r2 * (b[d] - apex[d]);
                    }
                }
            }
        }
    }
    pts
}

fn unit_vector(u: &mut impl FnMut() -> f64) -> [f64; 3] {
    let z = 2.0 * u() - 1.0;
    let t = 2.0 * PI * u();
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * t.cos(), r * t.sin(), z]
}

/// Generates and normalizes one object. Deterministic in the state of `rng`.
pub fn generate_object<T: Real, R: Rng + ?Sized>(
    spec: &ShapeSpec,
    n_points: usize,
    object_id: u64,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    if n_points < MIN_GENERATED_POINTS {
        return Err(Error::InvalidInput(format!(
            "n_points must be at least {MIN_GENERATED_POINTS}, got {n_points}"
        )));
    }
    spec.validate()?;
    let surface = sample_surface(spec.kind, n_points, rng);
    let r = &spec.rotation;
    let mut out = Array2::<T>::zeros((n_points, 3));
    for (i, p) in surface.rows().into_iter().enumerate() {
        let s = [p[0] * spec.scale[0], p[1] * spec.scale[1], p[2] * spec.scale[2]];
        for d in 0..3 {
            let mut v = r[d][0] * s[0] + r[d][1] * s[1] + r[d][2] * s[2];
            if spec.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                v += spec.noise_sigma * z;
            }
            out[[i, d]] = T::lit(v);
        }
    }
    Ok(normalize_cloud(out.view())?.with_identity(object_id, Some(spec.class_id)))
}
