//! Layers with hand-written backward passes.
//!
//! Every layer keeps its parameters as plain `ndarray` buffers. Gradients are
//! accumulated into a second instance of the same layer type, which keeps the
//! optimizer and the checkpoint code agnostic of the architecture: both walk
//! the flat list returned by [`Params::named`].

mod conv;
mod edgeconv;
mod knn;
mod linear;

pub use conv::Conv2d;
pub use edgeconv::{EdgeConv, EdgeConvCache, EDGE_SLOPE};
pub use knn::knn_indices;
pub use linear::Linear;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Dimension, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::scalar::Real;

/// Anything holding named trainable tensors.
pub trait Params<T: Real> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, T>)>);

    fn named(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn named_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.named().iter().map(|(_, a)| a.len()).sum()
    }

    fn fill_zero(&mut self) {
        for (_, mut a) in self.named_mut() {
            a.fill(T::zero());
        }
    }

    /// A copy with every tensor zeroed: the gradient / moment buffer shape.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    /// SHA-256 over names, shapes and values (as `f64` little-endian).
    fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, a) in self.named() {
            h.update(name.as_bytes());
            for d in a.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in a.iter() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Owned copies of every tensor, in traversal order.
    fn snapshot(&self) -> Vec<(String, ArrayD<T>)> {
        self.named()
            .into_iter()
            .map(|(n, a)| (n, a.to_owned()))
            .collect()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push<'a, T, D: Dimension>(
    out: &mut Vec<(String, ArrayViewD<'a, T>)>,
    prefix: &str,
    name: &str,
    a: ndarray::ArrayView<'a, T, D>,
) {
    out.push((join(prefix, name), a.into_dyn()));
}

pub(crate) fn push_mut<'a, T, D: Dimension>(
    out: &mut Vec<(String, ArrayViewMutD<'a, T>)>,
    prefix: &str,
    name: &str,
    a: ndarray::ArrayViewMut<'a, T, D>,
) {
    out.push((join(prefix, name), a.into_dyn()));
}

/// Fan-in uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn fan_in_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> ArrayD<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(dist.sample(rng)))
}

#[inline]
pub(crate) fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub(crate) fn relu_grad<T: Real>(pre: T, dy: T) -> T {
    if pre > T::zero() {
        dy
    } else {
        T::zero()
    }
}
