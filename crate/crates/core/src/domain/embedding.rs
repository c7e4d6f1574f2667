use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance on row norms for a batch to count as unit-normalized.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// Which projection space a batch of embeddings lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpaceTag {
    Intra,
    /// Cross-modal space of the given 1-based level.
    Cross(usize),
}

/// `B x d` embeddings with unit-norm rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T: Real> {
    rows: Array2<T>,
    space: SpaceTag,
}

impl<T: Real> EmbeddingBatch<T> {
    /// Validates that every row already has unit norm.
    pub fn new(rows: Array2<T>, space: SpaceTag) -> Result<Self> {
        for (i, r) in rows.rows().into_iter().enumerate() {
            let n = r.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidInput(format!(
                    "embedding row {i} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self { rows, space })
    }

    /// L2-normalizes each row, then wraps it.
    pub fn normalized(rows: ArrayView2<T>, space: SpaceTag) -> Result<Self> {
        let (out, _) = l2_normalize_rows(rows);
        Self::new(out, space)
    }

    pub fn rows(&self) -> ArrayView2<'_, T> {
        self.rows.view()
    }

    pub fn into_rows(self) -> Array2<T> {
        self.rows
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn batch_size(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Row-wise L2 normalization. Returns the normalized rows and the original norms.
///
/// Norms are floored at a tiny epsilon so an all-zero row maps to zero instead of NaN.
pub fn l2_normalize_rows<T: Real>(x: ArrayView2<T>) -> (Array2<T>, Vec<T>) {
    let eps = T::lit(1e-12);
    let mut out = x.to_owned();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut r in out.rows_mut() {
        let n = r.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
        r.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    (out, norms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_unit_rows() {
        let r = array![[1.0f64, 0.0], [0.5, 0.5]];
        assert!(EmbeddingBatch::new(r.clone(), SpaceTag::Intra).is_err());
        let b = EmbeddingBatch::normalized(r.view(), SpaceTag::Cross(2)).unwrap();
        assert_eq!(b.space(), SpaceTag::Cross(2));
        assert!((b.rows()[[1, 0]] - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
