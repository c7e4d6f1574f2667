use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, ArrayViewD, ArrayViewMutD, Axis, Ix1, Ix2};
use rand::Rng;

use super::{fan_in_uniform, push, push_mut, Params};
use crate::scalar::Real;

/// Square-kernel 2-D convolution over a batch laid out as `C x B x H x W`.
///
/// Implemented as im2col followed by one GEMM over the whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Real> {
    /// `out x (in * k * k)`, input-channel-major then kernel row then column.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = fan_in_uniform::<T, R>(&[out_ch, fan_in], fan_in, rng)
            .into_dimensionality::<Ix2>()
            .expect("2-d");
        let bias = fan_in_uniform::<T, R>(&[out_ch], fan_in, rng)
            .into_dimensionality::<Ix1>()
            .expect("1-d");
        Self {
            weight,
            bias,
            kernel,
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / (self.kernel * self.kernel)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_side(&self, side: usize) -> usize {
        (side + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Returns the pre-activation output and the im2col buffer needed by `backward`.
    pub fn forward(&self, x: ArrayView4<T>) -> (Array4<T>, Array2<T>) {
        let (c, b, h, w) = x.dim();
        debug_assert_eq!(c, self.in_channels());
        let (ho, wo) = (self.output_side(h), self.output_side(w));
        let cols = self.im2col(x);
        let mut y = self.weight.dot(&cols);
        for (mut row, &bias) in y.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + bias);
        }
        let y = y
            .into_shape_with_order((self.out_channels(), b, ho, wo))
            .expect("contiguous conv output");
        (y, cols)
    }

    /// Accumulates into `grad` and returns `dL/dx` with shape `input_dim`.
    pub fn backward(
        &self,
        input_dim: (usize, usize, usize, usize),
        cols: ArrayView2<T>,
        dy: ArrayView4<T>,
        grad: &mut Self,
    ) -> Array4<T> {
        let o = self.out_channels();
        let n = dy.len() / o;
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((o, n))
            .expect("contiguous gradient");
        ndarray::linalg::general_mat_mul(T::one(), &dy2, &cols.t(), T::one(), &mut grad.weight);
        grad.bias += &dy2.sum_axis(Axis(1));
        let dcols = self.weight.t().dot(&dy2);
        self.col2im(dcols.view(), input_dim)
    }

    fn im2col(&self, x: ArrayView4<T>) -> Array2<T> {
        let (c, b, h, w) = x.dim();
        let k = self.kernel;
        let (ho, wo) = (self.output_side(h), self.output_side(w));
        let mut cols = Array2::<T>::zeros((c * k * k, b * ho * wo));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let mut row = cols.row_mut((ci * k + ky) * k + kx);
                    let row = row.as_slice_mut().expect("row-major cols");
                    for bi in 0..b {
                        let plane = x.slice(ndarray::s![ci, bi, .., ..]);
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (bi * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    row[base + ox] = plane[[iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: ArrayView2<T>, dim: (usize, usize, usize, usize)) -> Array4<T> {
        let (c, b, h, w) = dim;
        let k = self.kernel;
        let (ho, wo) = (self.output_side(h), self.output_side(w));
        let mut dx = Array4::<T>::zeros(dim);
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = cols.row((ci * k + ky) * k + kx);
                    for bi in 0..b {
                        let mut plane = dx.slice_mut(ndarray::s![ci, bi, .., ..]);
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (bi * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    plane[[iy as usize, ix as usize]] =
                                        plane[[iy as usize, ix as usize]] + row[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        push(out, prefix, "weight", self.weight.view());
        push(out, prefix, "bias", self.bias.view());
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        push_mut(out, prefix, "weight", self.weight.view_mut());
        push_mut(out, prefix, "bias", self.bias.view_mut());
    }
}
