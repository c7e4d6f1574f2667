use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::domain::StreamRng;
use crate::error::{Error, Result};

const MAX_EPOCHS: usize = 2000;
const TOLERANCE: f64 = 1e-4;

/// Accuracy summary; percentages throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub runs: Vec<f64>,
    pub per_class: BTreeMap<u32, f64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn from_runs(runs: Vec<f64>, per_class: BTreeMap<u32, f64>, config: serde_json::Value) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let var = runs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            accuracy_mean: mean,
            accuracy_std: var.sqrt(),
            runs,
            per_class,
            config,
        }
    }
}

/// One-vs-rest linear SVM (hinge loss, `0.5 |w|^2 + C sum hinge`), solved in
/// the dual by coordinate descent with a fixed visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub classes: Vec<u32>,
    /// `classes x (d + 1)`; the last column multiplies the constant feature.
    pub weights: Array2<f64>,
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl LinearSvm {
    pub fn fit(x: ArrayView2<f64>, y: &[u32], c_reg: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimMismatch(format!("{} feature rows for {} labels", x.nrows(), y.len())));
        }
        if !(c_reg > 0.0) {
            return Err(Error::InvalidInput(format!("C_reg must be positive, got {c_reg}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probe features contain non-finite values".into()));
        }
        let mut classes: Vec<u32> = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::Degenerate(format!(
                "linear probe needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 });
        let xs = standardize(x, &mean, &scale);
        let d = xs.ncols();
        let sq: Vec<f64> = xs.rows().into_iter().map(|r| r.dot(&r) + 1.0).collect();
        let mut weights = Array2::zeros((classes.len(), d + 1));
        for (ci, &class) in classes.iter().enumerate() {
            let yy: Vec<f64> = y.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let w = dual_cd(&xs, &yy, &sq, c_reg);
            weights.row_mut(ci).assign(&w);
        }
        Ok(Self {
            classes,
            weights,
            mean,
            scale,
        })
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<u32> {
        let xs = standardize(x, &self.mean, &self.scale);
        let d = xs.ncols();
        xs.rows()
            .into_iter()
            .map(|r| {
                let mut best = (f64::NEG_INFINITY, 0);
                for (ci, w) in self.weights.rows().into_iter().enumerate() {
                    let s = r.dot(&w.slice(ndarray::s![..d])) + w[d];
                    if s > best.0 {
                        best = (s, ci);
                    }
                }
                self.classes[best.1]
            })
            .collect()
    }
}

fn standardize(x: ArrayView2<f64>, mean: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let mut xs = &x - mean;
    xs *= scale;
    xs
}

fn dual_cd(x: &Array2<f64>, y: &[f64], sq: &[f64], c: f64) -> Array1<f64> {
    let (n, d) = x.dim();
    let mut w = Array1::<f64>::zeros(d + 1);
    let mut alpha = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StreamRng::seed_from_u64(0);
    for _ in 0..MAX_EPOCHS {
        order.shuffle(&mut rng);
        let mut max_pg: f64 = 0.0;
        for &i in &order {
            let xi = x.row(i);
            let g = y[i] * (xi.dot(&w.slice(ndarray::s![..d])) + w[d]) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg.abs());
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / sq[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                if delta != 0.0 {
                    w.slice_mut(ndarray::s![..d]).scaled_add(delta, &xi);
                    w[d] += delta;
                }
            }
        }
        if max_pg < TOLERANCE {
            break;
        }
    }
    w
}

/// Percentage of matching entries, plus per-class accuracy keyed by true label.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> (f64, BTreeMap<u32, f64>) {
    let mut per: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut hit = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        let e = per.entry(t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
            hit += 1;
        }
    }
    let total = truth.len().max(1) as f64;
    let per_class = per
        .into_iter()
        .map(|(k, (h, n))| (k, 100.0 * h as f64 / n as f64))
        .collect();
    (100.0 * hit as f64 / total, per_class)
}

/// Fits the SVM on the train features and scores the test features.
pub fn linear_probe(
    train_x: ArrayView2<f64>,
    train_y: &[u32],
    test_x: ArrayView2<f64>,
    test_y: &[u32],
    c_reg: f64,
) -> Result<EvalReport> {
    if test_x.nrows() != test_y.len() || test_x.ncols() != train_x.ncols() {
        return Err(Error::DimMismatch("test features do not match train features or labels".into()));
    }
    let svm = LinearSvm::fit(train_x, train_y, c_reg)?;
    let (acc, per_class) = accuracy(&svm.predict(test_x), test_y);
    Ok(EvalReport::from_runs(
        vec![acc],
        per_class,
        serde_json::json!({ "protocol": "linear-probe", "c_reg": c_reg, "train": train_y.len(), "test": test_y.len() }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_one_hot_is_perfect() {
        let y: Vec<u32> = (0..40).map(|i| i % 4).collect();
        let x = Array2::from_shape_fn((40, 4), |(i, j)| if y[i] as usize == j { 1.0 } else { 0.0 });
        let r = linear_probe(x.view(), &y, x.view(), &y, 1.0).unwrap();
        assert_eq!(r.accuracy_mean, 100.0);
        assert_eq!(r.accuracy_std, 0.0);
    }

    #[test]
    fn hinge_solution_satisfies_margin_on_separable_data() {
        let mut rng = StreamRng::seed_from_u64(3);
        let n = 60;
        let y: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let s = if y[i] == 1 { 2.0 } else { -2.0 };
            if j == 0 { s + rng.random_range(-0.5..0.5) } else { rng.random_range(-1.0..1.0) }
        });
        let svm = LinearSvm::fit(x.view(), &y, 10.0).unwrap();
        assert_eq!(svm.predict(x.view()), y);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Array2::<f64>::zeros((5, 3));
        assert!(LinearSvm::fit(x.view(), &[1; 5], 1.0).is_err());
    }
}
