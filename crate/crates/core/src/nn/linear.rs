use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Ix1, Ix2};
use rand::Rng;

use super::{fan_in_uniform, push, push_mut, Params};
use crate::scalar::Real;

/// Affine map `y = x W^T + b` over a batch of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    /// `out x in`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = fan_in_uniform::<T, R>(&[outputs, inputs], inputs, rng)
            .into_dimensionality::<Ix2>()
            .expect("2-d");
        let bias = fan_in_uniform::<T, R>(&[outputs], inputs, rng)
            .into_dimensionality::<Ix1>()
            .expect("1-d");
        Self { weight, bias }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        ndarray::linalg::general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        push(out, prefix, "weight", self.weight.view());
        push(out, prefix, "bias", self.bias.view());
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>) {
        push_mut(out, prefix, "weight", self.weight.view_mut());
        push_mut(out, prefix, "bias", self.bias.view_mut());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_and_backward_match_hand_computation() {
        let lin = Linear {
            weight: array![[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]],
            bias: array![0.5, 0.0, -1.0],
        };
        let x = array![[1.0, 1.0], [2.0, 0.0]];
        let y = lin.forward(x.view());
        assert_eq!(y, array![[3.5, -1.0, 3.0], [2.5, 0.0, 5.0]]);
        let mut g = lin.zeros_like();
        let dy = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let dx = lin.backward(x.view(), dy.view(), &mut g);
        assert_eq!(dx, array![[1.0, 2.0], [3.0, 1.0]]);
        assert_eq!(g.weight, array![[1.0, 1.0], [0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(g.bias, array![1.0, 0.0, 1.0]);
    }
}
