//! Pixel operations on `C x H x W` planes in `[0, 1]`.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

const CROP_REDRAWS: usize = 10;

/// A crop rectangle: center `(x, y)` as (row, column) and size `h x w`, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropQuaternion {
    pub x: f64,
    pub y: f64,
    pub h: usize,
    pub w: usize,
}

impl CropQuaternion {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            x: height as f64 / 2.0,
            y: width as f64 / 2.0,
            h: height,
            w: width,
        }
    }

    pub fn top(&self) -> f64 {
        self.x - self.h as f64 / 2.0
    }

    pub fn left(&self) -> f64 {
        self.y - self.w as f64 / 2.0
    }
}

/// Crop size for area ratio `s` and aspect `r` (width over height).
pub fn crop_size(s: f64, r: f64, height: usize, width: usize) -> (usize, usize) {
    let area = s * (height * width) as f64;
    let h = (area / r).sqrt().round() as usize;
    let w = (area * r).sqrt().round() as usize;
    (h, w)
}

/// Samples a crop with area ratio `s` uniform in `s_range` and aspect `r`
/// log-uniform in `r_range`; the center is uniform over positions keeping the
/// rectangle inside the image. Falls back to the full image after 10
/// rectangles that do not fit.
pub fn sample_crop<R: Rng + ?Sized>(
    s_range: (f64, f64),
    r_range: (f64, f64),
    height: usize,
    width: usize,
    rng: &mut R,
) -> CropQuaternion {
    for _ in 0..CROP_REDRAWS {
        let s = uniform(rng, s_range);
        let r = uniform(rng, (r_range.0.ln(), r_range.1.ln())).exp();
        let (h, w) = crop_size(s, r, height, width);
        if h == 0 || w == 0 || h > height || w > width {
            continue;
        }
        let x = uniform(rng, (h as f64 / 2.0, height as f64 - h as f64 / 2.0));
        let y = uniform(rng, (w as f64 / 2.0, width as f64 - w as f64 / 2.0));
        return CropQuaternion { x, y, h, w };
    }
    CropQuaternion::full(height, width)
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Bilinear resample of the crop back to the full image size.
pub fn resized_crop(img: &Array3<f64>, crop: &CropQuaternion) -> Array3<f64> {
    let (c, hh, ww) = img.dim();
    let (top, left) = (crop.top(), crop.left());
    let sy = crop.h as f64 / hh as f64;
    let sx = crop.w as f64 / ww as f64;
    let mut out = Array3::zeros((c, hh, ww));
    for i in 0..hh {
        let fy = top + (i as f64 + 0.5) * sy - 0.5;
        let (y0, y1, ty) = lerp_index(fy, hh);
        for j in 0..ww {
            let fx = left + (j as f64 + 0.5) * sx - 0.5;
            let (x0, x1, tx) = lerp_index(fx, ww);
            for ch in 0..c {
                let a = img[[ch, y0, x0]] * (1.0 - tx) + img[[ch, y0, x1]] * tx;
                let b = img[[ch, y1, x0]] * (1.0 - tx) + img[[ch, y1, x1]] * tx;
                out[[ch, i, j]] = a * (1.0 - ty) + b * ty;
            }
        }
    }
    out
}

fn lerp_index(f: f64, n: usize) -> (usize, usize, f64) {
    let f = f.clamp(0.0, (n - 1) as f64);
    let i0 = f.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, f - i0 as f64)
}

pub fn flip_horizontal(img: &mut Array3<f64>) {
    let w = img.dim().2;
    for mut row in img.rows_mut() {
        for j in 0..w / 2 {
            row.swap(j, w - 1 - j);
        }
    }
}

/// Scales intensities by `brightness`, then stretches around the mean by `contrast`.
pub fn brightness_contrast(img: &mut Array3<f64>, brightness: f64, contrast: f64) {
    img.mapv_inplace(|v| (v * brightness).clamp(0.0, 1.0));
    let mean = img.mean().unwrap_or(0.0);
    img.mapv_inplace(|v| ((v - mean) * contrast + mean).clamp(0.0, 1.0));
}

/// Separable Gaussian blur with reflected borders; `sigma <= 0` is a no-op.
pub fn gaussian_blur(img: &mut Array3<f64>, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    let (c, h, w) = img.dim();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * img[[ch, y, reflect(x as isize + k as isize - radius, w)]];
                }
                tmp[[ch, y, x]] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[[ch, reflect(y as isize + k as isize - radius, h), x]];
                }
                img[[ch, y, x]] = acc.clamp(0.0, 1.0);
            }
        }
    }
}

/// Fills rows `top..top+h`, columns `left..left+w` with `value`.
pub fn erase(img: &mut Array3<f64>, top: usize, left: usize, h: usize, w: usize, value: f64) {
    let (c, hh, ww) = img.dim();
    for ch in 0..c {
        for y in top..(top + h).min(hh) {
            for x in left..(left + w).min(ww) {
                img[[ch, y, x]] = value;
            }
        }
    }
}

/// Blends toward a flat gray field: `(1 - alpha) x + alpha * gray`.
pub fn mix_gray(img: &mut Array3<f64>, alpha: f64, gray: f64) {
    img.mapv_inplace(|v| ((1.0 - alpha) * v + alpha * gray).clamp(0.0, 1.0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn maximal_crop_is_full_image() {
        let q = sample_crop((1.0, 1.0), (1.0, 1.0), 64, 64, &mut rng(1));
        assert_eq!(q, CropQuaternion::full(64, 64));
        assert_eq!((q.x, q.y, q.h, q.w), (32.0, 32.0, 64, 64));
    }

    #[test]
    fn quarter_area_crop_centers_stay_inside() {
        let mut r = rng(2);
        for _ in 0..200 {
            let q = sample_crop((0.25, 0.25), (1.0, 1.0), 64, 64, &mut r);
            assert_eq!((q.h, q.w), (32, 32));
            assert!((16.0..=48.0).contains(&q.x) && (16.0..=48.0).contains(&q.y));
        }
    }

    #[test]
    fn wide_half_area_crop_fits_exactly() {
        assert_eq!(crop_size(0.5, 2.0, 64, 64), (32, 64));
        let q = sample_crop((0.5, 0.5), (2.0, 2.0), 64, 64, &mut rng(3));
        assert_eq!((q.h, q.w, q.y), (32, 64, 32.0));
    }

    #[test]
    fn impossible_ranges_fall_back_to_full_image() {
        let q = sample_crop((1.0, 1.0), (2.0, 2.0), 64, 64, &mut rng(4));
        assert_eq!(q, CropQuaternion::full(64, 64));
    }

    #[test]
    fn area_ratio_matches_within_rounding() {
        let mut r = rng(5);
        for _ in 0..100 {
            let q = sample_crop((0.3, 0.3), (0.75, 1.333), 64, 64, &mut r);
            if q.h == 64 && q.w == 64 {
                continue;
            }
            let ratio = (q.h * q.w) as f64 / 4096.0;
            assert!((ratio - 0.3).abs() < (q.h + q.w + 1) as f64 / 4096.0, "{ratio}");
        }
    }

    #[test]
    fn full_crop_resample_is_identity() {
        let mut r = rng(6);
        let img = Array3::from_shape_fn((1, 32, 32), |_| r.random::<f64>());
        let out = resized_crop(&img, &CropQuaternion::full(32, 32));
        assert!((&out - &img).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn blur_preserves_constant_images() {
        let mut img = Array3::from_elem((1, 20, 20), 0.3);
        gaussian_blur(&mut img, 1.2);
        assert!(img.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn flip_twice_is_identity() {
        let mut r = rng(7);
        let img = Array3::from_shape_fn((2, 16, 17), |_| r.random::<f64>());
        let mut f = img.clone();
        flip_horizontal(&mut f);
        assert_ne!(f, img);
        flip_horizontal(&mut f);
        assert_eq!(f, img);
    }
}
