use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{SplitFeatures, DEFAULT_C_REG};
use crate::augment::AugStrategy;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::shapegen::Dataset;
use crate::trainer::pretrain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Number of views `m`.
    Views,
    /// 2x2 grid: separate intra head on/off by per-level cross heads on/off.
    MultiMlp,
    /// Unified, multi, and multi-level augmentation.
    MultiLevelAug,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Views => "views",
            Self::MultiMlp => "multi_mlp",
            Self::MultiLevelAug => "multi_level_aug",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "views" => Ok(Self::Views),
            "multi_mlp" => Ok(Self::MultiMlp),
            "multi_level_aug" => Ok(Self::MultiLevelAug),
            _ => Err(Error::InvalidInput(format!(
                "unknown ablation axis '{s}' (views, multi_mlp, multi_level_aug)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub seeds: Vec<u64>,
    /// Probe accuracy (%) per seed.
    pub accuracies: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,seed,accuracy\n");
        for r in &self.rows {
            for (s, a) in r.seeds.iter().zip(&r.accuracies) {
                let _ = writeln!(out, "{},{},{s},{a:.4}", self.axis, r.label);
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>8}  per-seed\n", self.axis.to_string(), "acc (%)");
        for r in &self.rows {
            let per: Vec<String> = r
                .seeds
                .iter()
                .zip(&r.accuracies)
                .map(|(s, a)| format!("{s}:{a:.2}"))
                .collect();
            let _ = writeln!(out, "{:<width$}  {:>8.2}  {}", r.label, r.mean, per.join(" "));
        }
        out
    }
}

/// The labelled configs of each table row.
pub fn ablation_configs(axis: AblationAxis, values: &[usize], base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let rows = match axis {
        AblationAxis::Views => {
            if values.is_empty() {
                return Err(Error::InvalidInput("views axis needs at least one value".into()));
            }
            let levels = values.iter().copied().max().unwrap_or(1).max(base.augment.catalog_levels);
            values
                .iter()
                .map(|&v| {
                    let mut cfg = base.clone().with_views(v);
                    cfg.augment.catalog_levels = levels;
                    (v.to_string(), cfg)
                })
                .collect()
        }
        AblationAxis::MultiMlp => {
            let mut rows = Vec::new();
            for intra in [false, true] {
                for inter in [false, true] {
                    let mut cfg = base.clone();
                    cfg.toggles.split_intra = intra;
                    cfg.toggles.multi_mlp = inter;
                    let on = |b: bool| if b { "on" } else { "off" };
                    rows.push((format!("intra={},inter={}", on(intra), on(inter)), cfg));
                }
            }
            rows
        }
        AblationAxis::MultiLevelAug => AugStrategy::ALL
            .iter()
            .map(|&s| {
                let mut cfg = base.clone();
                cfg.toggles.aug_strategy = Some(s);
                (s.name().to_string(), cfg)
            })
            .collect(),
    };
    for (_, cfg) in &rows {
        cfg.validate()?;
    }
    Ok(rows)
}

/// Pretrains and probes every row of the axis once per seed, all on `dataset`.
///
/// `on_cell(label, seed, accuracy)` is called as each cell finishes.
pub fn ablate<T: Real>(
    axis: AblationAxis,
    values: &[usize],
    base: &RunConfig,
    dataset: &Dataset<T>,
    seeds: &[u64],
    on_cell: &mut dyn FnMut(&str, u64, f64),
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for (label, cfg) in ablation_configs(axis, values, base)? {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = RunConfig { seed, ..cfg.clone() };
            let state = pretrain(&cfg, dataset, None, None)?;
            let feats = SplitFeatures::extract(&state.model, dataset, cfg.points_per_cloud)?;
            let acc = feats.probe(DEFAULT_C_REG)?.accuracy_mean;
            on_cell(&label, seed, acc);
            accuracies.push(acc);
        }
        let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        rows.push(AblationRow {
            label,
            seeds: seeds.to_vec(),
            accuracies,
            mean,
        });
    }
    Ok(AblationTable { axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_layouts() {
        let base = RunConfig::default();
        let v = ablation_configs(AblationAxis::Views, &[1, 3, 4, 5, 6], &base).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.iter().all(|(_, c)| c.augment.catalog_levels == 6));
        assert_eq!(v[4].1.m, 6);
        assert_eq!(ablation_configs(AblationAxis::MultiMlp, &[], &base).unwrap().len(), 4);
        let a = ablation_configs(AblationAxis::MultiLevelAug, &[], &base).unwrap();
        let labels: Vec<&str> = a.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["unified", "multi", "multi-level"]);
        assert_eq!("multi-mlp".parse::<AblationAxis>().unwrap(), AblationAxis::MultiMlp);
    }
}
