use rand::seq::{index, SliceRandom};
use sha2::{Digest, Sha256};

use crate::augment::{apply_level, augment_point_cloud, AugmentationPipeline};
use crate::config::RunConfig;
use crate::domain::{streams, PointCloud, SeedTree, ViewImage, NUM_RIG_VIEWS};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::shapegen::SplitData;

/// Everything one optimizer step consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Real> {
    pub step: u64,
    pub object_ids: Vec<u64>,
    pub clouds_1: Vec<PointCloud<T>>,
    pub clouds_2: Vec<PointCloud<T>>,
    /// `views[j][b]`: the level-`j + 1` view of object `b`.
    pub views: Vec<Vec<ViewImage<T>>>,
    /// Rig index of every view, same layout as `views`.
    pub view_indices: Vec<Vec<usize>>,
    /// Level of the pipeline applied to each view slot.
    pub levels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn size(&self) -> usize {
        self.object_ids.len()
    }

    pub fn levels(&self) -> usize {
        self.views.len()
    }

    /// SHA-256 over object ids, view indices and every coordinate and pixel.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.step.to_le_bytes());
        for id in &self.object_ids {
            h.update(id.to_le_bytes());
        }
        for c in self.clouds_1.iter().chain(&self.clouds_2) {
            h.update((c.len() as u64).to_le_bytes());
            for v in c.points.iter() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        for (row, idx) in self.views.iter().zip(&self.view_indices) {
            for (v, i) in row.iter().zip(idx) {
                h.update((*i as u64).to_le_bytes());
                for p in v.pixels.iter() {
                    h.update(p.as_f64().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// Optimizer steps per epoch; the incomplete tail batch is dropped.
pub fn steps_per_epoch(objects: usize, batch_size: usize) -> Result<usize> {
    if batch_size == 0 || objects < batch_size {
        return Err(Error::InvalidInput(format!(
            "dataset has {objects} objects, fewer than batch_size = {batch_size}"
        )));
    }
    Ok(objects / batch_size)
}

/// Object indices of global step `step`: epoch `e = step / steps_per_epoch`
/// shuffles all objects with its own stream, and the step takes its slice.
pub fn batch_indices(objects: usize, batch_size: usize, seeds: &SeedTree, step: u64) -> Result<Vec<usize>> {
    let spe = steps_per_epoch(objects, batch_size)? as u64;
    let epoch = step / spe;
    let pos = (step % spe) as usize;
    let mut order: Vec<usize> = (0..objects).collect();
    order.shuffle(&mut seeds.child(streams::BATCH_ORDER).stream(&format!("epoch-{epoch}")));
    Ok(order[pos * batch_size..(pos + 1) * batch_size].to_vec())
}

/// Random subset of `n` points, or the whole cloud if it is not larger.
pub fn subsample<T: Real, R: rand::Rng + ?Sized>(cloud: &PointCloud<T>, n: Option<usize>, rng: &mut R) -> PointCloud<T> {
    match n {
        Some(n) if cloud.len() > n => {
            let mut pick = index::sample(rng, cloud.len(), n).into_vec();
            pick.sort_unstable();
            cloud.select(&pick)
        }
        _ => cloud.clone(),
    }
}

/// Builds the batch for `step`: two 3D variants per object and `m` distinct
/// rig views, the `j`-th sampled view passed through `pipelines[j]`.
///
/// Randomness for object `o` at step `s` comes from the node
/// `batch/step#s/object#o`, so a batch depends only on `(seeds, step)`.
pub fn make_batch<T: Real>(
    data: &SplitData<T>,
    indices: &[usize],
    cfg: &RunConfig,
    pipelines: &[AugmentationPipeline],
    seeds: &SeedTree,
    step: u64,
) -> Result<Batch<T>> {
    let m = pipelines.len();
    if m == 0 || m > NUM_RIG_VIEWS {
        return Err(Error::InvalidInput(format!("cannot sample {m} of {NUM_RIG_VIEWS} views")));
    }
    let node = seeds.child("batch").child_idx("step", step);
    let b = indices.len();
    let mut batch = Batch {
        step,
        object_ids: Vec::with_capacity(b),
        clouds_1: Vec::with_capacity(b),
        clouds_2: Vec::with_capacity(b),
        views: vec![Vec::with_capacity(b); m],
        view_indices: vec![Vec::with_capacity(b); m],
        levels: pipelines.iter().map(|p| p.level).collect(),
    };
    for &i in indices {
        let cloud = data
            .clouds
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("object index {i} out of range")))?;
        let set = &data.views[i];
        if set.len() < m {
            return Err(Error::InvalidInput(format!(
                "object {} has {} views, batch needs {m}",
                cloud.object_id,
                set.len()
            )));
        }
        let obj = node.child_idx("object", cloud.object_id);
        let mut rng3 = obj.stream(streams::AUGMENT_3D);
        let base = subsample(cloud, cfg.points_per_cloud, &mut rng3);
        let (p1, p2) = augment_point_cloud(&base, &cfg.augment.points, &mut rng3);
        let picks = index::sample(&mut obj.stream("view-sample"), set.len(), m).into_vec();
        for (j, (&k, pipeline)) in picks.iter().zip(pipelines).enumerate() {
            let view = &set.views[k];
            let mut rng = obj.stream(&streams::augment_2d_level(j + 1));
            batch.views[j].push(apply_level(view, pipeline, &mut rng));
            batch.view_indices[j].push(view.view_index);
        }
        batch.object_ids.push(cloud.object_id);
        batch.clouds_1.push(p1);
        batch.clouds_2.push(p2);
    }
    Ok(batch)
}
