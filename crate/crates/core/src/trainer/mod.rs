//! The pretraining loop: batches, the joint forward/backward pass, AdamW
//! updates, per-epoch checkpoints and the loss history.

mod batch;

pub use batch::{batch_indices, make_batch, steps_per_epoch, subsample, Batch};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{catalog, pipelines_for, AugmentationPipeline};
use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::domain::{SeedTree, ViewImage};
use crate::encoders::stack_rows;
use crate::error::{Error, Result};
use crate::heads::{HeadCache, Modality};
use crate::losses::{contrast_with_grad, inter_plus_with_grad, negatives_for_batch, LossReport};
use crate::model::Model;
use crate::nn::Params;
use crate::optim::{scheduled_lr, AdamW, AdamWConfig};
use crate::scalar::Real;
use crate::shapegen::{Dataset, SplitData};

/// Parameters, optimizer moments, progress and provenance of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Real> {
    pub config: RunConfig,
    pub model: Model<T>,
    pub opt: AdamW<Model<T>>,
    pub step: u64,
    pub history: Vec<LossReport>,
    pub seeds: SeedTree,
    pub dataset_hash: Option<String>,
}

impl<T: Real> TrainState<T> {
    pub fn new(cfg: &RunConfig, dataset_hash: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedTree::new(cfg.seed);
        let model = Model::new(&cfg.encoder, &cfg.proj, cfg.toggles.routing(), &seeds)?;
        let opt = AdamW::new(
            AdamWConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            },
            &model,
        );
        Ok(Self {
            config: cfg.clone(),
            model,
            opt,
            step: 0,
            history: Vec::new(),
            seeds,
            dataset_hash,
        })
    }

    /// One optimizer step on `batch` at learning rate `lr`.
    pub fn train_step(&mut self, batch: &Batch<T>, lr: f64) -> Result<LossReport> {
        let cfg = &self.config;
        let weights = LossWeights::from_config(cfg);
        let out = forward_backward(&self.model, batch, cfg.loss.tau, &weights)?;
        let report = LossReport::assemble(
            out.intra,
            out.inter_per_level.clone(),
            cfg.loss.tau,
            negatives_for_batch(batch.size()),
            cfg.loss.lambda_intra,
            cfg.loss.lambda_inter,
        );
        let grads_finite = out.grads.named().iter().all(|(_, a)| a.iter().all(|v| v.is_finite()));
        if !report.is_finite() || !grads_finite {
            return Err(Error::Diverged {
                step: self.step,
                batch_hash: batch.hash(),
                detail: format!(
                    "intra {} inter {:?} gradients finite: {grads_finite}",
                    report.intra, report.inter_per_level
                ),
            });
        }
        self.opt.step(&mut self.model, &out.grads, lr)?;
        self.step += 1;
        self.history.push(report.clone());
        Ok(report)
    }
}

/// Objective weights: `intra` on the intra term and `inter[j]` on level `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub intra: f64,
    pub inter: Vec<f64>,
}

impl LossWeights {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            intra: cfg.loss.lambda_intra,
            inter: vec![cfg.loss.lambda_inter; cfg.m],
        }
    }

    /// Only the level-`level` cross term (1-based).
    pub fn level_only(m: usize, level: usize) -> Self {
        Self {
            intra: 0.0,
            inter: (1..=m).map(|j| if j == level { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Unweighted loss terms and the gradient of the weighted objective.
#[derive(Debug, Clone)]
pub struct ForwardBackward<T: Real> {
    pub intra: f64,
    pub inter_per_level: Vec<f64>,
    pub objective: f64,
    pub grads: Model<T>,
}

/// Runs both encoders and all heads on `batch`, evaluates the losses and
/// backpropagates `w.intra * intra + sum_j w.inter[j] * inter_j`.
///
/// Terms with weight zero are not backpropagated, so their heads receive
/// exactly zero gradient.
pub fn forward_backward<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    tau: f64,
    w: &LossWeights,
) -> Result<ForwardBackward<T>> {
    let b = batch.size();
    let m = batch.levels();
    if w.inter.len() != m || model.heads.levels() != m {
        return Err(Error::DimMismatch(format!(
            "batch has {m} levels, model {} and weights {}",
            model.heads.levels(),
            w.inter.len()
        )));
    }
    let tau_t = T::lit(tau);

    let mut p_caches = Vec::with_capacity(2 * b);
    let mut rows = Vec::with_capacity(2 * b);
    for c in batch.clouds_1.iter().chain(&batch.clouds_2) {
        let (f, cache) = model.point.forward(c.points.view())?;
        rows.push(f.global);
        p_caches.push(cache);
    }
    let g1 = stack_rows(&rows[..b]);
    let g2 = stack_rows(&rows[b..]);

    let view_refs: Vec<&ViewImage<T>> = batch.views.iter().flatten().collect();
    let (h, i_cache) = model.image.forward(&view_refs)?;

    let heads = &model.heads;
    let intra_slot = heads.intra_slot(Modality::Point);
    let z1 = heads.head(intra_slot).forward(g1.view())?;
    let z2 = heads.head(intra_slot).forward(g2.view())?;
    let intra = contrast_with_grad(z1.output(), z2.output(), tau_t);

    let mut cp1: Vec<HeadCache<T>> = Vec::with_capacity(m);
    let mut cp2 = Vec::with_capacity(m);
    let mut cv = Vec::with_capacity(m);
    for j in 0..m {
        let hp = heads.head(heads.cross_slot(Modality::Point, j + 1)?);
        let hi = heads.head(heads.cross_slot(Modality::Image, j + 1)?);
        cp1.push(hp.forward(g1.view())?);
        cp2.push(hp.forward(g2.view())?);
        cv.push(hi.forward(h.slice(s![j * b..(j + 1) * b, ..]))?);
    }
    let inter = inter_plus_with_grad(
        &cp1.iter().map(|c| c.output()).collect::<Vec<_>>(),
        &cp2.iter().map(|c| c.output()).collect::<Vec<_>>(),
        &cv.iter().map(|c| c.output()).collect::<Vec<_>>(),
        tau_t,
    );

    let mut grads = model.zeros_like();
    let mut dg1 = Array2::<T>::zeros(g1.dim());
    let mut dg2 = Array2::<T>::zeros(g2.dim());
    let mut dh = Array2::<T>::zeros(h.dim());
    if w.intra != 0.0 {
        let wi = T::lit(w.intra);
        let head = heads.head(intra_slot);
        let gh = grads.heads.head_mut(intra_slot);
        dg1 += &head.backward(&z1, (&intra.d_a * wi).view(), gh);
        dg2 += &head.backward(&z2, (&intra.d_b * wi).view(), gh);
    }
    for j in 0..m {
        if w.inter[j] == 0.0 {
            continue;
        }
        let wj = T::lit(w.inter[j]);
        let sp = heads.cross_slot(Modality::Point, j + 1)?;
        let si = heads.cross_slot(Modality::Image, j + 1)?;
        let gp = grads.heads.head_mut(sp);
        dg1 += &heads.head(sp).backward(&cp1[j], (&inter.d_points_1[j] * wj).view(), gp);
        dg2 += &heads.head(sp).backward(&cp2[j], (&inter.d_points_2[j] * wj).view(), gp);
        let dv = heads
            .head(si)
            .backward(&cv[j], (&inter.d_views[j] * wj).view(), grads.heads.head_mut(si));
        dh.slice_mut(s![j * b..(j + 1) * b, ..]).assign(&dv);
    }
    for (i, cache) in p_caches.iter().enumerate() {
        let d = if i < b { dg1.row(i) } else { dg2.row(i - b) };
        if d.iter().any(|v| *v != T::zero()) {
            model.point.backward(cache, d, &mut grads.point);
        }
    }
    if w.inter.iter().any(|&x| x != 0.0) {
        model.image.backward(&i_cache, dh.view(), &mut grads.image);
    }

    let intra_v = intra.loss.as_f64();
    let per_level: Vec<f64> = inter.per_level.iter().map(|v| v.as_f64()).collect();
    let objective = w.intra * intra_v + per_level.iter().zip(&w.inter).map(|(l, wj)| l * wj).sum::<f64>();
    Ok(ForwardBackward {
        intra: intra_v,
        inter_per_level: per_level,
        objective,
        grads,
    })
}

/// Batch source bound to one split and one set of pipelines.
pub struct Trainer<'a, T: Real> {
    pub data: &'a SplitData<T>,
    pub pipelines: Vec<AugmentationPipeline>,
    pub steps_per_epoch: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(cfg: &RunConfig, data: &'a SplitData<T>) -> Result<Self> {
        cfg.validate()?;
        let cat = catalog(cfg.augment.catalog_levels)?;
        let pipelines = pipelines_for(cfg.toggles.strategy(), cfg.m, &cat)?;
        let steps_per_epoch = steps_per_epoch(data.len(), cfg.batch_size)?;
        Ok(Self {
            data,
            pipelines,
            steps_per_epoch,
        })
    }

    pub fn total_steps(&self, cfg: &RunConfig) -> u64 {
        (cfg.epochs * self.steps_per_epoch) as u64
    }

    pub fn batch(&self, state: &TrainState<T>, step: u64) -> Result<Batch<T>> {
        let idx = batch_indices(self.data.len(), state.config.batch_size, &state.seeds, step)?;
        make_batch(self.data, &idx, &state.config, &self.pipelines, &state.seeds, step)
    }

    /// Advances `state` by `steps` optimizer steps.
    pub fn run(&self, state: &mut TrainState<T>, steps: u64) -> Result<()> {
        let total = self.total_steps(&state.config);
        for _ in 0..steps {
            let batch = self.batch(state, state.step)?;
            let lr = scheduled_lr(state.config.lr, state.step, total, state.config.cosine_decay);
            state.train_step(&batch, lr)?;
        }
        Ok(())
    }
}

/// Audit record of a run: config, dataset, and the exact pipeline per view slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub dataset_hash: Option<String>,
    pub steps_per_epoch: usize,
    pub num_params: usize,
    pub pipelines: Vec<String>,
}

impl RunManifest {
    pub fn new<T: Real>(state: &TrainState<T>, trainer: &Trainer<'_, T>) -> Self {
        Self {
            config: state.config.clone(),
            dataset_hash: state.dataset_hash.clone(),
            steps_per_epoch: trainer.steps_per_epoch,
            num_params: state.model.num_params(),
            pipelines: trainer.pipelines.iter().map(AugmentationPipeline::serialize).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

/// Loss history as CSV: `step, intra, inter_level_1..m, overall, mi_bound`.
pub fn history_csv(history: &[LossReport]) -> String {
    let m = history.first().map_or(0, |r| r.inter_per_level.len());
    let mut out = String::from("step,intra");
    for j in 1..=m {
        let _ = write!(out, ",inter_level_{j}");
    }
    out.push_str(",overall,mi_bound\n");
    for (i, r) in history.iter().enumerate() {
        let _ = write!(out, "{},{}", i + 1, r.intra);
        for v in &r.inter_per_level {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", r.overall, r.mi_bound);
    }
    out
}

/// Paths written next to a checkpoint `out`.
pub fn sidecar_paths(out: &Path) -> (PathBuf, PathBuf) {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (
        out.with_file_name(format!("{name}.history.csv")),
        out.with_file_name(format!("{name}.run.json")),
    )
}

/// True if `a` and `b` differ at most in `epochs`.
pub fn same_run(a: &RunConfig, b: &RunConfig) -> bool {
    a == &RunConfig { epochs: a.epochs, ..b.clone() }
}

/// Trains on the train split for `cfg.epochs` epochs, continuing from
/// `resume` if given (whose config may differ from `cfg` only in `epochs`). With `out`, checkpoints after every epoch and writes
/// the loss history and run manifest beside the final checkpoint.
pub fn pretrain<T: Real>(
    cfg: &RunConfig,
    dataset: &Dataset<T>,
    out: Option<&Path>,
    resume: Option<TrainState<T>>,
) -> Result<TrainState<T>> {
    let hash = dataset.manifest_hash()?;
    let mut state = match resume {
        Some(mut s) => {
            if s.dataset_hash.as_deref().is_some_and(|h| h != hash) {
                return Err(Error::Checkpoint("checkpoint was trained on a different dataset".into()));
            }
            if !same_run(&s.config, cfg) {
                return Err(Error::Config("resumed checkpoint was written with a different config".into()));
            }
            s.config.epochs = cfg.epochs;
            s
        }
        None => TrainState::new(cfg, Some(hash))?,
    };
    if cfg.encoder.resolution != dataset.resolution() {
        return Err(Error::Config(format!(
            "encoder.resolution = {} but dataset renders at {}",
            cfg.encoder.resolution,
            dataset.resolution()
        )));
    }
    let trainer = Trainer::new(&state.config, &dataset.train)?;
    let spe = trainer.steps_per_epoch as u64;
    let total = trainer.total_steps(&state.config);
    let manifest = RunManifest::new(&state, &trainer);
    if let Some(out) = out {
        let (_, run_path) = sidecar_paths(out);
        if let Some(dir) = run_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(run_path, manifest.to_json()?)?;
    }
    while state.step < total {
        let until = ((state.step / spe) + 1) * spe;
        let steps = until.min(total) - state.step;
        trainer.run(&mut state, steps)?;
        if let Some(out) = out {
            save_checkpoint(&state, out)?;
            std::fs::write(sidecar_paths(out).0, history_csv(&state.history))?;
        }
    }
    if let Some(out) = out {
        save_checkpoint(&state, out)?;
        std::fs::write(sidecar_paths(out).0, history_csv(&state.history))?;
    }
    Ok(state)
}
