use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::domain::{PointCloud, ViewImage, ViewSet, NUM_RIG_VIEWS};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Standard deviation of the Gaussian splat kernel, in pixels.
pub const SPLAT_SIGMA_PX: f64 = 1.5;

/// Orthographic cameras on a ring around the vertical (`z`) axis.
///
/// View `k` looks from azimuth `-k * step` at a fixed elevation, so rotating
/// an object by `+step` about `z` shifts its views by one index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub views: usize,
    pub azimuth_step_deg: f64,
    pub elevation_deg: f64,
    /// Image half-width covered by one unit of object space, as a fraction of the side.
    pub extent: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            views: NUM_RIG_VIEWS,
            azimuth_step_deg: 15.0,
            elevation_deg: 20.0,
            extent: 0.45,
        }
    }
}

impl CameraRig {
    /// Image-plane `(right, up)` axes of view `k`; depends only on `k`.
    pub fn basis(&self, k: usize) -> ([f64; 3], [f64; 3]) {
        let az = -(k as f64) * self.azimuth_step_deg * PI / 180.0;
        let el = self.elevation_deg * PI / 180.0;
        let right = [-az.sin(), az.cos(), 0.0];
        let up = [-el.sin() * az.cos(), -el.sin() * az.sin(), el.cos()];
        (right, up)
    }
}

/// Renders all rig views of `cloud` as soft point-splat silhouettes.
///
/// Each pixel holds `1 - exp(-rho / kappa)` where `rho` is the normalized
/// Gaussian splat density and `kappa` is half the mean density of a
/// unit-disk silhouette at this point count and resolution.
pub fn render_views<T: Real>(cloud: &PointCloud<T>, rig: &CameraRig, resolution: usize) -> Result<ViewSet<T>> {
    if ![32, 64, 128].contains(&resolution) {
        return Err(Error::InvalidInput(format!(
            "resolution must be 32, 64 or 128, got {resolution}"
        )));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot render an empty cloud".into()));
    }
    let n = cloud.len();
    let res = resolution as f64;
    let px_per_unit = rig.extent * res;
    let kappa = 0.5 * n as f64 / (PI * px_per_unit * px_per_unit);
    let sigma = SPLAT_SIGMA_PX;
    let reach = (3.0 * sigma).ceil() as isize;
    let norm = 1.0 / (2.0 * PI * sigma * sigma);
    let pts: Vec<[f64; 3]> = cloud
        .points
        .rows()
        .into_iter()
        .map(|r| [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()])
        .collect();

    let mut views = Vec::with_capacity(rig.views);
    let taps = (2 * reach + 1) as usize;
    let mut gx = vec![0.0f64; taps];
    let mut gy = vec![0.0f64; taps];
    for k in 0..rig.views {
        let (right, up) = rig.basis(k);
        let mut density = Array2::<f64>::zeros((resolution, resolution));
        for p in &pts {
            let u = p[0] * right[0] + p[1] * right[1] + p[2] * right[2];
            let v = p[0] * up[0] + p[1] * up[1] + p[2] * up[2];
            // continuous pixel coordinates; pixel (r, c) has its center at (r + 0.5, c + 0.5)
            let cx = 0.5 * res + u * px_per_unit;
            let cy = 0.5 * res - v * px_per_unit;
            let col0 = cx.floor() as isize;
            let row0 = cy.floor() as isize;
            for t in 0..taps {
                let off = t as isize - reach;
                let dx = (col0 + off) as f64 + 0.5 - cx;
                let dy = (row0 + off) as f64 + 0.5 - cy;
                gx[t] = (-dx * dx / (2.0 * sigma * sigma)).exp();
                gy[t] = (-dy * dy / (2.0 * sigma * sigma)).exp();
            }
            for (ty, wy) in gy.iter().enumerate() {
                let row = row0 + ty as isize - reach;
                if row < 0 || row >= resolution as isize {
                    continue;
                }
                let mut line = density.row_mut(row as usize);
                for (tx, wx) in gx.iter().enumerate() {
                    let col = col0 + tx as isize - reach;
                    if col >= 0 && col < resolution as isize {
                        line[col as usize] += norm * wy * wx;
                    }
                }
            }
        }
        let plane = density.mapv(|rho| T::lit(1.0 - (-rho / kappa).exp()));
        views.push(ViewImage::from_plane(plane, k, cloud.object_id)?);
    }
    ViewSet::new(cloud.object_id, views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::normalize_cloud;

    /// Latitude/longitude sphere whose longitudes are multiples of 15 degrees.
    fn lattice_sphere() -> PointCloud<f64> {
        let mut rows = Vec::new();
        for lat in 1..12 {
            let theta = PI * lat as f64 / 12.0;
            for lon in 0..24 {
                let phi = 2.0 * PI * lon as f64 / 24.0;
                rows.extend([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
            }
        }
        rows.extend([0.0, 0.0, 1.0, 0.0, 0.0, -1.0]);
        let a = Array2::from_shape_vec((rows.len() / 3, 3), rows).unwrap();
        normalize_cloud(a.view()).unwrap()
    }

    #[test]
    fn sphere_views_are_identical_centered_disks() {
        let set = render_views(&lattice_sphere(), &CameraRig::default(), 64).unwrap();
        assert_eq!(set.len(), 24);
        let idx: Vec<usize> = set.views.iter().map(|v| v.view_index).collect();
        assert_eq!(idx, (0..24).collect::<Vec<_>>());
        let first = &set.views[0].pixels;
        for v in &set.views {
            let d = (&v.pixels - first).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            // the splat window is truncated at 3 sigma, so not exact
            assert!(d < 2e-3, "{d}");
        }
        // centered: corners empty, center covered
        assert!(first[[0, 0, 0]] < 1e-6);
        assert!(first[[0, 32, 32]] > 0.3);
    }

    #[test]
    fn rejects_unsupported_resolution() {
        assert!(render_views(&lattice_sphere(), &CameraRig::default(), 48).is_err());
    }
}
