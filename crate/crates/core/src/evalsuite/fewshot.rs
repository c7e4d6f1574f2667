use std::collections::{BTreeMap, BTreeSet};

use ndarray::{ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::probe::{accuracy, EvalReport, LinearSvm};
use crate::domain::SeedTree;
use crate::error::{Error, Result};

/// `n_way`-way `k_shot`-shot episodes with `queries` query samples per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries: usize,
    pub runs: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 10,
            queries: 20,
            runs: 10,
        }
    }
}

/// Row indices of one episode; labels are the original class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<u32>,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

impl Episode {
    pub fn is_disjoint(&self) -> bool {
        let s: BTreeSet<usize> = self.support.iter().copied().collect();
        s.len() == self.support.len() && self.query.iter().all(|q| !s.contains(q))
    }
}

fn members(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut by: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by.entry(l).or_default().push(i);
    }
    by
}

/// Draws episode `run` from the stream `episode#run` of `seeds`.
pub fn sample_episode(labels: &[u32], spec: &EpisodeSpec, seeds: &SeedTree, run: usize) -> Result<Episode> {
    if spec.n_way < 2 || spec.k_shot == 0 || spec.queries == 0 {
        return Err(Error::InvalidInput(format!("invalid episode spec {spec:?}")));
    }
    let need = spec.k_shot + spec.queries;
    let by = members(labels);
    let eligible: Vec<u32> = by.iter().filter(|(_, v)| v.len() >= need).map(|(&k, _)| k).collect();
    if eligible.len() < spec.n_way {
        return Err(Error::InvalidInput(format!(
            "{}-way episodes need {} classes with at least {need} examples, found {}",
            spec.n_way,
            spec.n_way,
            eligible.len()
        )));
    }
    let mut rng = seeds.child_idx("episode", run as u64).stream("sample");
    let mut picked: Vec<u32> = index::sample(&mut rng, eligible.len(), spec.n_way)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    let mut ep = Episode {
        classes: picked.clone(),
        support: Vec::with_capacity(spec.n_way * spec.k_shot),
        query: Vec::with_capacity(spec.n_way * spec.queries),
    };
    for c in picked {
        let mut pool = by[&c].clone();
        pool.shuffle(&mut rng);
        ep.support.extend_from_slice(&pool[..spec.k_shot]);
        ep.query.extend_from_slice(&pool[spec.k_shot..need]);
    }
    Ok(ep)
}

/// Mean and population std of query accuracy over `spec.runs` episodes, each
/// scored by a linear probe fit on the support set.
pub fn few_shot_eval(
    features: ArrayView2<f64>,
    labels: &[u32],
    spec: &EpisodeSpec,
    seeds: &SeedTree,
    c_reg: f64,
) -> Result<EvalReport> {
    if features.nrows() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    let mut runs = Vec::with_capacity(spec.runs);
    let mut per_class: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for r in 0..spec.runs {
        let ep = sample_episode(labels, spec, seeds, r)?;
        if !ep.is_disjoint() {
            return Err(Error::Degenerate(format!("episode {r} support and query overlap")));
        }
        let sx = features.select(Axis(0), &ep.support);
        let sy: Vec<u32> = ep.support.iter().map(|&i| labels[i]).collect();
        let qx = features.select(Axis(0), &ep.query);
        let qy: Vec<u32> = ep.query.iter().map(|&i| labels[i]).collect();
        let svm = LinearSvm::fit(sx.view(), &sy, c_reg)?;
        let (acc, pc) = accuracy(&svm.predict(qx.view()), &qy);
        runs.push(acc);
        for (k, v) in pc {
            let e = per_class.entry(k).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    let per_class = per_class.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    Ok(EvalReport::from_runs(
        runs,
        per_class,
        serde_json::json!({
            "protocol": "few-shot",
            "n_way": spec.n_way,
            "k_shot": spec.k_shot,
            "queries": spec.queries,
            "runs": spec.runs,
            "c_reg": c_reg,
            "seed": seeds.root_seed(),
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn labels(classes: u32, per: usize) -> Vec<u32> {
        (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
    }

    #[test]
    fn episodes_have_exact_sizes_and_are_disjoint() {
        let y = labels(8, 40);
        let spec = EpisodeSpec::default();
        for r in 0..50 {
            let ep = sample_episode(&y, &spec, &SeedTree::new(1), r).unwrap();
            assert_eq!(ep.support.len(), 50);
            assert_eq!(ep.query.len(), 100);
            assert!(ep.is_disjoint());
        }
    }

    #[test]
    fn one_hot_features_are_perfect() {
        let y = labels(8, 40);
        let x = Array2::from_shape_fn((y.len(), 8), |(i, j)| if y[i] as usize == j { 1.0 } else { 0.0 });
        let r = few_shot_eval(x.view(), &y, &EpisodeSpec::default(), &SeedTree::new(2), 1.0).unwrap();
        assert_eq!(r.runs.len(), 10);
        assert_eq!(r.accuracy_mean, 100.0);
        assert_eq!(r.accuracy_std, 0.0);
    }

    #[test]
    fn too_few_examples_is_an_error() {
        let y = labels(8, 20);
        assert!(sample_episode(&y, &EpisodeSpec::default(), &SeedTree::new(1), 0).is_err());
    }
}
