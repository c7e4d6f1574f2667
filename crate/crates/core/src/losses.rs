//! Contrastive objectives and the mutual-information lower bound.
//!
//! All losses share one primitive, [`pairwise_contrast`]: a symmetric
//! in-batch contrast where an anchor's denominator holds every other
//! embedding of its own batch plus every embedding of the partner batch.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::domain::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Loss value with gradients w.r.t. both inputs.
#[derive(Debug, Clone)]
pub struct ContrastGrad<T: Real> {
    pub loss: T,
    pub d_a: Array2<T>,
    pub d_b: Array2<T>,
}

/// Unchecked contrast on raw rows using dot-product similarity.
///
/// With unit-norm rows the dot product is the cosine similarity. Callers
/// that go through [`EmbeddingBatch`] get the checks; the trainer calls this
/// directly on head outputs it has just normalized.
pub fn contrast_with_grad<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>, tau: T) -> ContrastGrad<T> {
    let n = a.nrows();
    let inv_tau = T::one() / tau;
    let s_aa = a.dot(&a.t()) * inv_tau;
    let s_ab = a.dot(&b.t()) * inv_tau;
    let s_bb = b.dot(&b.t()) * inv_tau;
    let s_ba = s_ab.t().to_owned();

    let (loss_a, p_aa, g_ab) = anchor_side(&s_aa, &s_ab);
    let (loss_b, p_bb, g_ba) = anchor_side(&s_bb, &s_ba);

    let two_n = T::lit(2.0 * n as f64);
    let loss = (loss_a + loss_b) / two_n;
    let c = inv_tau / two_n;

    let sym_aa = &p_aa + &p_aa.t();
    let sym_bb = &p_bb + &p_bb.t();
    let mut d_a = sym_aa.dot(&a);
    d_a += &g_ab.dot(&b);
    d_a += &g_ba.t().dot(&b);
    d_a *= c;
    let mut d_b = sym_bb.dot(&b);
    d_b += &g_ba.dot(&a);
    d_b += &g_ab.t().dot(&a);
    d_b *= c;
    ContrastGrad { loss, d_a, d_b }
}

/// For anchors drawn from one side: summed loss, softmax mass on own-side
/// negatives (zero diagonal), and softmax mass on the partner side minus the
/// positive indicator.
fn anchor_side<T: Real>(own: &Array2<T>, partner: &Array2<T>) -> (T, Array2<T>, Array2<T>) {
    let n = own.nrows();
    let mut p_own = Array2::<T>::zeros((n, n));
    let mut g_partner = Array2::<T>::zeros((n, n));
    let mut total = T::zero();
    for i in 0..n {
        let mut mx = T::neg_infinity();
        for k in 0..n {
            if k != i {
                mx = mx.max(own[[i, k]]);
            }
            mx = mx.max(partner[[i, k]]);
        }
        let mut sum = T::zero();
        for k in 0..n {
            if k != i {
                sum = sum + (own[[i, k]] - mx).exp();
            }
            sum = sum + (partner[[i, k]] - mx).exp();
        }
        let lse = mx + sum.ln();
        total = total + lse - partner[[i, i]];
        for k in 0..n {
            if k != i {
                p_own[[i, k]] = (own[[i, k]] - lse).exp();
            }
            g_partner[[i, k]] = (partner[[i, k]] - lse).exp();
        }
        g_partner[[i, i]] = g_partner[[i, i]] - T::one();
    }
    (total, p_own, g_partner)
}

fn check_pair<T: Real>(a: &EmbeddingBatch<T>, b: &EmbeddingBatch<T>, tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
    }
    if a.batch_size() != b.batch_size() {
        return Err(Error::DimMismatch(format!(
            "batch sizes differ: {} vs {}",
            a.batch_size(),
            b.batch_size()
        )));
    }
    if a.batch_size() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(format!(
            "embedding dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Symmetric in-batch contrast between two aligned batches.
pub fn pairwise_contrast<T: Real>(a: &EmbeddingBatch<T>, b: &EmbeddingBatch<T>, tau: T) -> Result<T> {
    check_pair(a, b, tau)?;
    Ok(contrast_with_grad(a.rows(), b.rows(), tau).loss)
}

/// Contrast between the two augmented point-cloud variants.
pub fn loss_intra<T: Real>(z1: &EmbeddingBatch<T>, z2: &EmbeddingBatch<T>, tau: T) -> Result<T> {
    if z1.space() != z2.space() {
        return Err(Error::DimMismatch(format!(
            "intra variants live in different spaces: {:?} vs {:?}",
            z1.space(),
            z2.space()
        )));
    }
    pairwise_contrast(z1, z2, tau)
}

/// Cross-modal contrast between point and view embeddings of one level space.
pub fn loss_inter<T: Real>(points: &EmbeddingBatch<T>, views: &EmbeddingBatch<T>, tau: T) -> Result<T> {
    if points.space() != views.space() {
        return Err(Error::DimMismatch(format!(
            "point space {:?} does not match view space {:?}",
            points.space(),
            views.space()
        )));
    }
    pairwise_contrast(points, views, tau)
}

/// Cumulative multi-view loss: for each level `j`, both point variants are
/// contrasted against the level-`j` views in level `j`'s space.
///
/// Returns the total and the per-level terms.
pub fn loss_inter_plus<T: Real>(
    points_1: &[EmbeddingBatch<T>],
    points_2: &[EmbeddingBatch<T>],
    views: &[EmbeddingBatch<T>],
    tau: T,
) -> Result<(T, Vec<T>)> {
    if points_1.len() != views.len() || points_2.len() != views.len() {
        return Err(Error::DimMismatch(format!(
            "level count mismatch: {} / {} point levels vs {} view levels",
            points_1.len(),
            points_2.len(),
            views.len()
        )));
    }
    let mut per_level = Vec::with_capacity(views.len());
    for ((p1, p2), v) in points_1.iter().zip(points_2).zip(views) {
        per_level.push(loss_inter(p1, v, tau)? + loss_inter(p2, v, tau)?);
    }
    let total = per_level.iter().fold(T::zero(), |acc, &l| acc + l);
    Ok((total, per_level))
}

/// Gradients of the cumulative loss w.r.t. every input batch.
#[derive(Debug, Clone)]
pub struct InterPlusGrad<T: Real> {
    pub total: T,
    pub per_level: Vec<T>,
    pub d_points_1: Vec<Array2<T>>,
    pub d_points_2: Vec<Array2<T>>,
    pub d_views: Vec<Array2<T>>,
}

/// Unchecked cumulative loss with gradients (raw rows, dot-product similarity).
pub fn inter_plus_with_grad<T: Real>(
    points_1: &[ArrayView2<T>],
    points_2: &[ArrayView2<T>],
    views: &[ArrayView2<T>],
    tau: T,
) -> InterPlusGrad<T> {
    let mut out = InterPlusGrad {
        total: T::zero(),
        per_level: Vec::with_capacity(views.len()),
        d_points_1: Vec::with_capacity(views.len()),
        d_points_2: Vec::with_capacity(views.len()),
        d_views: Vec::with_capacity(views.len()),
    };
    for ((p1, p2), v) in points_1.iter().zip(points_2).zip(views) {
        let g1 = contrast_with_grad(p1.view(), v.view(), tau);
        let g2 = contrast_with_grad(p2.view(), v.view(), tau);
        let level = g1.loss + g2.loss;
        out.total = out.total + level;
        out.per_level.push(level);
        out.d_points_1.push(g1.d_a);
        out.d_points_2.push(g2.d_a);
        out.d_views.push(g1.d_b + g2.d_b);
    }
    out
}

/// InfoNCE bound `I(z_i; z_j) >= log(k) - loss` for `k` negative pairs.
pub fn mi_lower_bound(loss: f64, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidInput("negative count k must be at least 1".into()));
    }
    Ok((k as f64).ln() - loss)
}

/// Negative pairs in one anchor's denominator for an in-batch contrast of size `batch`.
pub fn negatives_for_batch(batch: usize) -> usize {
    (2 * batch).saturating_sub(2).max(1)
}

/// Per-component loss values of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub intra: f64,
    pub inter_per_level: Vec<f64>,
    pub overall: f64,
    pub mi_bound: f64,
    pub tau: f64,
    pub negatives: usize,
    pub lambda_intra: f64,
    pub lambda_inter: f64,
}

impl LossReport {
    /// Assembles a report; `overall` and the bound are derived from the components.
    ///
    /// The bound uses the mean single-direction-pair contrast: each level term
    /// sums two point-variant/view contrasts.
    pub fn assemble(
        intra: f64,
        inter_per_level: Vec<f64>,
        tau: f64,
        negatives: usize,
        lambda_intra: f64,
        lambda_inter: f64,
    ) -> Self {
        let inter: f64 = inter_per_level.iter().sum();
        let overall = lambda_intra * intra + lambda_inter * inter;
        let pairs = (2 * inter_per_level.len()).max(1) as f64;
        let mi_bound = (negatives.max(1) as f64).ln() - inter / pairs;
        Self {
            intra,
            inter_per_level,
            overall,
            mi_bound,
            tau,
            negatives,
            lambda_intra,
            lambda_inter,
        }
    }

    pub fn inter_total(&self) -> f64 {
        self.inter_per_level.iter().sum()
    }

    pub fn recomputed_overall(&self) -> f64 {
        self.lambda_intra * self.intra + self.lambda_inter * self.inter_total()
    }

    pub fn is_finite(&self) -> bool {
        self.overall.is_finite()
            && self.intra.is_finite()
            && self.inter_per_level.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpaceTag;
    use ndarray::array;

    fn eb(rows: Array2<f64>, tag: SpaceTag) -> EmbeddingBatch<f64> {
        EmbeddingBatch::normalized(rows.view(), tag).unwrap()
    }

    #[test]
    fn single_pair_is_zero() {
        let a = eb(array![[0.6, 0.8]], SpaceTag::Intra);
        let b = eb(array![[1.0, 0.0]], SpaceTag::Intra);
        assert_eq!(pairwise_contrast(&a, &b, 0.1).unwrap(), 0.0);
        assert_eq!(loss_intra(&a, &b, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_pair_closed_form() {
        let a = eb(array![[1.0, 0.0], [0.0, 1.0]], SpaceTag::Cross(1));
        let l = pairwise_contrast(&a, &a, 0.5).unwrap();
        let want = (1.0 + 2.0 * (-2.0f64).exp()).ln();
        assert!((l - want).abs() < 1e-12);
        assert!((l - 0.2395).abs() < 1e-4);
        assert_eq!(loss_inter(&a, &a, 0.5).unwrap(), l);
    }

    #[test]
    fn rejects_bad_temperature_and_mismatches() {
        let a = eb(array![[1.0, 0.0], [0.0, 1.0]], SpaceTag::Intra);
        assert!(pairwise_contrast(&a, &a, 0.0).is_err());
        assert!(pairwise_contrast(&a, &a, -1.0).is_err());
        let b = eb(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], SpaceTag::Cross(1));
        assert!(pairwise_contrast(&a, &b, 0.1).is_err());
        let c = eb(array![[1.0, 0.0], [0.0, 1.0]], SpaceTag::Cross(2));
        assert!(loss_inter(&a, &c, 0.1).is_err());
    }

    #[test]
    fn inter_plus_single_level_is_twice_inter() {
        let p = eb(array![[1.0, 0.2], [0.1, 1.0], [0.5, -0.5]], SpaceTag::Cross(1));
        let v = eb(array![[0.9, 0.3], [0.0, 1.0], [0.4, -0.7]], SpaceTag::Cross(1));
        let (total, per) = loss_inter_plus(&[p.clone()], &[p.clone()], &[v.clone()], 0.2).unwrap();
        let single = loss_inter(&p, &v, 0.2).unwrap();
        assert!((total - 2.0 * single).abs() < 1e-12);
        assert_eq!(per.len(), 1);
        assert!(loss_inter_plus(&[p.clone()], &[], &[v], 0.2).is_err());
    }

    #[test]
    fn mi_bound_arithmetic() {
        assert_eq!(mi_lower_bound(0.0, 1).unwrap(), 0.0);
        assert!((mi_lower_bound(2.0, 1024).unwrap() - 4.9315).abs() < 1e-4);
        assert!(mi_lower_bound(1.0, 0).is_err());
        assert!(mi_lower_bound(1.0, 10).unwrap() > mi_lower_bound(1.5, 10).unwrap());
        assert_eq!(negatives_for_batch(32), 62);
    }

    #[test]
    fn report_composition() {
        let r = LossReport::assemble(1.5, vec![2.0, 3.0], 0.1, 62, 1.0, 0.5);
        assert!((r.overall - 4.0).abs() < 1e-12);
        assert!((r.recomputed_overall() - r.overall).abs() < 1e-12);
    }
}
