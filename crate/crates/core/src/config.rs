//! Run configuration (`run-config.json`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugConfig3D, AugStrategy, MAX_CATALOG_LEVELS, STANDARD_LEVELS};
use crate::domain::NUM_RIG_VIEWS;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{validate_config, HeadRouting, ProjectionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_intra: f64,
    pub lambda_inter: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda_intra: 1.0,
            lambda_inter: 1.0,
        }
    }
}

/// Ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    /// One cross head per level; off routes every level through one shared head.
    pub multi_mlp: bool,
    /// Dedicated intra-modal head; off reuses the level-1 cross head.
    pub split_intra: bool,
    /// Off sends every view through `T_1`.
    pub multi_level_aug: bool,
    /// Overrides `multi_level_aug` when set.
    pub aug_strategy: Option<AugStrategy>,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            multi_mlp: true,
            split_intra: true,
            multi_level_aug: true,
            aug_strategy: None,
        }
    }
}

impl Toggles {
    pub fn strategy(&self) -> AugStrategy {
        self.aug_strategy.unwrap_or(if self.multi_level_aug {
            AugStrategy::MultiLevel
        } else {
            AugStrategy::Unified
        })
    }

    pub fn routing(&self) -> HeadRouting {
        HeadRouting {
            multi_mlp: self.multi_mlp,
            split_intra: self.split_intra,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    /// Escalating transforms in the 2D catalog; must be at least `m`.
    pub catalog_levels: usize,
    pub points: AugConfig3D,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            catalog_levels: STANDARD_LEVELS,
            points: AugConfig3D::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Views per object, one augmentation level each.
    pub m: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub cosine_decay: bool,
    pub seed: u64,
    /// Random subset of each cloud used in training batches.
    pub points_per_cloud: Option<usize>,
    pub loss: LossConfig,
    pub proj: ProjectionConfig,
    pub encoder: EncoderConfig,
    pub toggles: Toggles,
    pub augment: AugmentSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            m: 4,
            batch_size: 32,
            epochs: 30,
            lr: 1e-3,
            weight_decay: 1e-4,
            cosine_decay: false,
            seed: 0,
            points_per_cloud: None,
            loss: LossConfig::default(),
            proj: ProjectionConfig::default(),
            encoder: EncoderConfig::default(),
            toggles: Toggles::default(),
            augment: AugmentSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Sets `m`, resizing `proj.d_cross` to the default ladder above `d_intra`
    /// and widening the catalog if needed.
    pub fn with_views(mut self, m: usize) -> Self {
        self.m = m;
        let base = self.proj.d_cross.first().copied().unwrap_or(384).max(self.proj.d_intra + 1);
        self.proj.d_cross = (0..m).map(|j| base + 64 * j).collect();
        self.augment.catalog_levels = self.augment.catalog_levels.max(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.m > NUM_RIG_VIEWS {
            return fail(format!("m must be in [1, {NUM_RIG_VIEWS}], got {}", self.m));
        }
        if self.proj.levels() != self.m {
            return fail(format!("proj.d_cross has {} levels but m = {}", self.proj.levels(), self.m));
        }
        validate_config(&self.proj)?;
        self.encoder.validate()?;
        self.augment.points.validate()?;
        if self.augment.catalog_levels < self.m || self.augment.catalog_levels > MAX_CATALOG_LEVELS {
            return fail(format!(
                "augment.catalog_levels = {} must be in [m = {}, {MAX_CATALOG_LEVELS}]",
                self.augment.catalog_levels, self.m
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return fail("lr must be positive and weight_decay non-negative".into());
        }
        if !(self.loss.tau > 0.0 && self.loss.tau.is_finite()) {
            return fail(format!("loss.tau must be positive, got {}", self.loss.tau));
        }
        if !(self.loss.lambda_intra >= 0.0 && self.loss.lambda_inter >= 0.0) {
            return fail("loss weights must be non-negative".into());
        }
        if let Some(n) = self.points_per_cloud {
            if n < self.encoder.k_nn {
                return fail(format!("points_per_cloud = {n} is below encoder.k_nn = {}", self.encoder.k_nn));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn nested_keys_parse() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"m": 2, "loss": {"tau": 0.5}, "proj": {"d_intra": 64, "d_cross": [128, 128]},
                "toggles": {"multi_level_aug": false}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.loss.tau, 0.5);
        assert_eq!(cfg.loss.lambda_intra, 1.0);
        assert_eq!(cfg.toggles.strategy(), AugStrategy::Unified);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_levels() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"epochz": 3}"#).is_err());
        let cfg = RunConfig {
            m: 3,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let wide = RunConfig::default().with_views(6);
        wide.validate().unwrap();
        assert_eq!(wide.proj.d_cross.len(), 6);
        let mut all = RunConfig::default().with_views(24);
        all.validate().unwrap();
        all.augment.catalog_levels = 4;
        assert!(all.validate().is_err());
    }
}
