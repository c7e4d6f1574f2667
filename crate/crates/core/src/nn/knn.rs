use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, Axis};

use crate::scalar::Real;

/// Indices of the `k` nearest rows of `x` for every row (self included).
///
/// Returns an `n x k` array. Neighbors are ordered by `(distance, index)` so
/// ties break deterministically.
pub fn knn_indices<T: Real>(x: ArrayView2<T>, k: usize) -> Array2<u32> {
    let n = x.nrows();
    assert!(k >= 1 && k <= n, "k = {k} must lie in [1, {n}]");
    let gram = x.dot(&x.t());
    let sq: Vec<T> = x.map_axis(Axis(1), |r| r.dot(&r)).to_vec();
    let mut out = Array2::<u32>::zeros((n, k));
    let mut buf: Vec<(T, u32)> = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        let g = gram.row(i);
        for j in 0..n {
            buf.push((sq[i] + sq[j] - g[j] - g[j], j as u32));
        }
        let cmp = |a: &(T, u32), b: &(T, u32)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if k < n {
            buf.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut buf[..k];
        head.sort_unstable_by(cmp);
        for (slot, (_, j)) in out.row_mut(i).iter_mut().zip(head.iter()) {
            *slot = *j;
        }
    }
    out
}
