use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Ix1, Ix2};
use rand::Rng;

use super::{fan_in_uniform, knn_indices, push, push_mut, Params};
use crate::scalar::Real;

/// Negative slope of the leaky rectifier used after every edge convolution.
pub const EDGE_SLOPE: f64 = 0.2;

/// Edge convolution on a k-NN graph built in the current feature space.
///
/// For point `i` with neighbors `N(i)` the output is
/// `max_{j in N(i)} act(W [x_i, x_j - x_i] + b)`. Splitting `W = [W1 | W2]`
/// gives `W [x_i, x_j - x_i] = (W1 - W2) x_i + W2 x_j`, and because the
/// activation is monotone the max can be taken on `W2 x_j` before activating.
/// That keeps the cost linear in `k` rather than in `k * in * out`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConv<T: Real> {
    /// `out x 2in`: columns `[0, in)` act on `x_i`, `[in, 2in)` on `x_j - x_i`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Activations saved by [`EdgeConv::forward`].
#[derive(Debug, Clone)]
pub struct EdgeConvCache<T: Real> {
    pub input: Array2<T>,
    pub pre: Array2<T>,
    /// Winning neighbor per (point, channel).
    pub argmax: Array2<u32>,
}

impl<T: Real> EdgeConv<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = fan_in_uniform::<T, R>(&[outputs, 2 * inputs], 2 * inputs, rng)
            .into_dimensionality::<Ix2>()
            .expect("2-d");
        let bias = fan_in_uniform::<T, R>(&[outputs], 2 * inputs, rng)
            .into_dimensionality::<Ix1>()
            .expect("1-d");
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols() / 2
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn split(&self) -> (Array2<T>, ArrayView2<'_, T>) {
        let d = self.inputs();
        let w1 = self.weight.slice(s![.., ..d]);
        let w2 = self.weight.slice(s![.., d..]);
        (&w1 - &w2, w2)
    }

    pub fn forward(&self, x: ArrayView2<T>, k: usize) -> (Array2<T>, EdgeConvCache<T>) {
        let n = x.nrows();
        let out = self.outputs();
        let nbrs = knn_indices(x, k);
        let (w_center, w_nbr) = self.split();
        let mut pre = x.dot(&w_center.t());
        pre += &self.bias;
        let msg = x.dot(&w_nbr.t());
        let mut argmax = Array2::<u32>::zeros((n, out));
        for i in 0..n {
            let row = nbrs.row(i);
            let mut best = msg.row(row[0] as usize).to_owned();
            let mut arg = argmax.row_mut(i);
            arg.fill(row[0]);
            for &j in row.iter().skip(1) {
                let m = msg.row(j as usize);
                for c in 0..out {
                    if m[c] > best[c] {
                        best[c] = m[c];
                        arg[c] = j;
                    }
                }
            }
            let mut p = pre.row_mut(i);
            p += &best;
        }
        let slope = T::lit(EDGE_SLOPE);
        let y = pre.mapv(|v| if v > T::zero() { v } else { v * slope });
        (
            y,
            EdgeConvCache {
                input: x.to_owned(),
                pre,
                argmax,
            },
        )
    }

    /// Neighbor selection is treated as constant; gradients flow through the
    /// winning edge of every (point, channel) pair.
    pub fn backward(&self, cache: &EdgeConvCache<T>, dy: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        let slope = T::lit(EDGE_SLOPE);
        let (n, out) = cache.pre.dim();
        let mut d_center = Array2::<T>::zeros((n, out));
        let mut d_msg = Array2::<T>::zeros((n, out));
        for i in 0..n {
            for c in 0..out {
                let g = if cache.pre[[i, c]] > T::zero() {
                    dy[[i, c]]
                } else {
                    dy[[i, c]] * slope
                };
                d_center[[i, c]] = g;
                let j = cache.argmax[[i, c]] as usize;
                d_msg[[j, c]] = d_msg[[j, c]] + g;
            }
        }
        let d = self.inputs();
        let x = cache.input.view();
        let gw_center = d_center.t().dot(&x);
        let gw_nbr = d_msg.t().dot(&x);
        {
            let mut g1 = grad.weight.slice_mut(s![.., ..d]);
            g1 += &gw_center;
        }
        {
            let mut g2 = grad.weight.slice_mut(s![.., d..]);
            g2 += &gw_nbr;
            g2 -= &gw_center;
        }
        grad.bias += &d_center.sum_axis(ndarray::Axis(0));
        let (w_center, w_nbr) = self.split();
        let mut dx = d_center.dot(&w_center);
        dx += &d_msg.dot(&w_nbr);
        dx
    }
}

impl<T: Real> Params<T> for EdgeConv<T> {
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
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    /// Literal edge-feature formulation: build concat(x_i, x_j - x_i) per edge.
    fn reference(conv: &EdgeConv<f64>, x: &Array2<f64>, k: usize) -> Array2<f64> {
        let nb = knn_indices(x.view(), k);
        let d = conv.inputs();
        let mut y = Array2::from_elem((x.nrows(), conv.outputs()), f64::NEG_INFINITY);
        for i in 0..x.nrows() {
            for &j in nb.row(i) {
                let mut e = Array1::zeros(2 * d);
                for t in 0..d {
                    e[t] = x[[i, t]];
                    e[d + t] = x[[j as usize, t]] - x[[i, t]];
                }
                let h = conv.weight.dot(&e) + &conv.bias;
                for c in 0..conv.outputs() {
                    let a = if h[c] > 0.0 { h[c] } else { EDGE_SLOPE * h[c] };
                    y[[i, c]] = y[[i, c]].max(a);
                }
            }
        }
        y
    }

    #[test]
    fn factored_forward_matches_literal_edge_features() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let conv = EdgeConv::<f64>::new(3, 5, &mut rng);
        let x = Array2::from_shape_simple_fn((12, 3), || StandardNormal.sample(&mut rng));
        let (y, _) = conv.forward(x.view(), 4);
        let want = reference(&conv, &x, 4);
        assert!((&y - &want).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let conv = EdgeConv::<f64>::new(3, 4, &mut rng);
        let x = Array2::from_shape_simple_fn((10, 3), || StandardNormal.sample(&mut rng));
        let r = Array2::from_shape_simple_fn((10, 4), || StandardNormal.sample(&mut rng));
        let (_, cache) = conv.forward(x.view(), 3);
        let mut g = conv.zeros_like();
        conv.backward(&cache, r.view(), &mut g);
        let loss = |c: &EdgeConv<f64>| (reference(c, &x, 3) * &r).sum();
        let h = 1e-6;
        for idx in [[0, 0], [1, 4], [3, 5], [2, 2]] {
            let mut p = conv.clone();
            p.weight[idx] += h;
            let mut m = conv.clone();
            m.weight[idx] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g.weight[idx]).abs() < 1e-6, "{idx:?}: {fd} vs {}", g.weight[idx]);
        }
    }
}
