use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_object, render_views, CameraRig, ShapeSpec};
use crate::domain::{PointCloud, SeedTree, ViewImage, ViewSet, NUM_RIG_VIEWS};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DATASET_VERSION: u32 = 1;
const FORMAT: &str = "mmpoint-dataset";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSpec {
    pub classes: usize,
    pub per_class: usize,
    pub n_points: usize,
    pub resolution: usize,
    pub rig: CameraRig,
}

impl Default for BuildSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 100,
            n_points: 1024,
            resolution: 64,
            rig: CameraRig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub count: usize,
    pub labels: Vec<u32>,
    pub object_ids: Vec<u64>,
    pub points: BlobInfo,
    /// Absent when views are rendered at load time.
    pub views: Option<BlobInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub source: String,
    pub seed: u64,
    pub classes: usize,
    pub per_class: Option<usize>,
    pub n_points: usize,
    pub resolution: usize,
    pub views: usize,
    pub rig: CameraRig,
    pub test_fraction: f64,
    pub train: SplitInfo,
    pub test: SplitInfo,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// SHA-256 of the serialized manifest; covers every blob through its checksum.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn split(&self, split: Split) -> &SplitInfo {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData<T: Real> {
    pub clouds: Vec<PointCloud<T>>,
    pub views: Vec<ViewSet<T>>,
}

impl<T: Real> SplitData<T> {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.clouds.iter().map(|c| c.label.unwrap_or(0)).collect()
    }
}

/// A loaded dataset: clouds, their rendered views, and the manifest describing them.
#[derive(Debug, Clone)]
pub struct Dataset<T: Real> {
    pub manifest: DatasetManifest,
    pub dir: Option<PathBuf>,
    pub train: SplitData<T>,
    pub test: SplitData<T>,
}

impl<T: Real> Dataset<T> {
    pub fn split(&self, split: Split) -> &SplitData<T> {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.classes
    }

    pub fn resolution(&self) -> usize {
        self.manifest.resolution
    }

    pub fn manifest_hash(&self) -> Result<String> {
        self.manifest.hash()
    }

    /// Assembles a dataset from per-split clouds, computing blob checksums and
    /// rendering views if none are given.
    pub(crate) fn assemble(
        base: ManifestBase,
        train: (Vec<PointCloud<T>>, Option<Vec<ViewSet<T>>>),
        test: (Vec<PointCloud<T>>, Option<Vec<ViewSet<T>>>),
    ) -> Result<Self> {
        let store_views = train.1.is_some();
        let make = |split: Split, clouds: Vec<PointCloud<T>>, views: Option<Vec<ViewSet<T>>>| -> Result<(SplitInfo, SplitData<T>)> {
            let views = match views {
                Some(v) => v,
                None => clouds
                    .iter()
                    .map(|c| render_views(c, &base.rig, base.resolution))
                    .collect::<Result<Vec<_>>>()?,
            };
            let points_bytes = points_blob(&clouds, base.n_points)?;
            let points = BlobInfo {
                file: format!("{}_points.f32", split.name()),
                shape: vec![clouds.len(), base.n_points, 3],
                sha256: hex::encode(Sha256::digest(&points_bytes)),
            };
            let views_info = if store_views {
                let bytes = views_blob(&views, base.resolution)?;
                Some(BlobInfo {
                    file: format!("{}_views.f32", split.name()),
                    shape: vec![clouds.len(), NUM_RIG_VIEWS, base.resolution, base.resolution],
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            } else {
                None
            };
            let info = SplitInfo {
                count: clouds.len(),
                labels: clouds.iter().map(|c| c.label.unwrap_or(0)).collect(),
                object_ids: clouds.iter().map(|c| c.object_id).collect(),
                points,
                views: views_info,
            };
            Ok((info, SplitData { clouds, views }))
        };
        let (train_info, train_data) = make(Split::Train, train.0, train.1)?;
        let (test_info, test_data) = make(Split::Test, test.0, test.1)?;
        let manifest = DatasetManifest {
            format: FORMAT.into(),
            version: DATASET_VERSION,
            source: base.source,
            seed: base.seed,
            classes: base.classes,
            per_class: base.per_class,
            n_points: base.n_points,
            resolution: base.resolution,
            views: NUM_RIG_VIEWS,
            rig: base.rig,
            test_fraction: 0.2,
            train: train_info,
            test: test_info,
        };
        Ok(Self {
            manifest,
            dir: None,
            train: train_data,
            test: test_data,
        })
    }

    /// Writes `manifest.json` and the split blobs into `dir`.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for split in [Split::Train, Split::Test] {
            let info = self.manifest.split(split).clone();
            let data = self.split(split);
            write_file(&dir.join(&info.points.file), &points_blob(&data.clouds, self.manifest.n_points)?)?;
            if let Some(v) = &info.views {
                write_file(&dir.join(&v.file), &views_blob(&data.views, self.manifest.resolution)?)?;
            }
        }
        write_file(&dir.join(MANIFEST), self.manifest.to_json()?.as_bytes())?;
        self.dir = Some(dir.to_path_buf());
        Ok(())
    }

    /// Loads a dataset directory, verifying blob sizes and checksums.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT {
            return Err(Error::Dataset(format!("not a dataset manifest: format '{}'", manifest.format)));
        }
        if manifest.version != DATASET_VERSION {
            return Err(Error::Dataset(format!(
                "dataset version {} unsupported (expected {DATASET_VERSION})",
                manifest.version
            )));
        }
        let load_split = |split: Split| -> Result<SplitData<T>> {
            let info = manifest.split(split);
            let pts = read_blob(dir, &info.points)?;
            let [count, n, three] = info.points.shape[..] else {
                return Err(Error::Dataset("points blob must be 3-d".into()));
            };
            if count != info.count || three != 3 || info.labels.len() != count || info.object_ids.len() != count {
                return Err(Error::Dataset(format!("{} split shape/label table mismatch", split.name())));
            }
            let mut clouds = Vec::with_capacity(count);
            for i in 0..count {
                let slice = &pts[i * n * 3..(i + 1) * n * 3];
                let a = Array2::from_shape_fn((n, 3), |(r, d)| T::lit(slice[r * 3 + d] as f64));
                clouds.push(PointCloud::from_normalized(a, info.object_ids[i], Some(info.labels[i]))?);
            }
            let views = match &info.views {
                Some(blob) => {
                    let px = read_blob(dir, blob)?;
                    let [c2, v, h, w] = blob.shape[..] else {
                        return Err(Error::Dataset("views blob must be 4-d".into()));
                    };
                    if c2 != count || v != NUM_RIG_VIEWS {
                        return Err(Error::Dataset("views blob shape mismatch".into()));
                    }
                    let mut sets = Vec::with_capacity(count);
                    for (i, cloud) in clouds.iter().enumerate() {
                        let mut views = Vec::with_capacity(v);
                        for k in 0..v {
                            let off = (i * v + k) * h * w;
                            let plane = Array3::from_shape_fn((1, h, w), |(_, y, x)| T::lit(px[off + y * w + x] as f64));
                            views.push(ViewImage::new(plane, k, cloud.object_id)?);
                        }
                        sets.push(ViewSet::new(cloud.object_id, views)?);
                    }
                    sets
                }
                None => clouds
                    .iter()
                    .map(|c| render_views(c, &manifest.rig, manifest.resolution))
                    .collect::<Result<Vec<_>>>()?,
            };
            Ok(SplitData { clouds, views })
        };
        let train = load_split(Split::Train)?;
        let test = load_split(Split::Test)?;
        Ok(Self {
            manifest,
            dir: Some(dir.to_path_buf()),
            train,
            test,
        })
    }
}

pub(crate) struct ManifestBase {
    pub source: String,
    pub seed: u64,
    pub classes: usize,
    pub per_class: Option<usize>,
    pub n_points: usize,
    pub resolution: usize,
    pub rig: CameraRig,
}

/// Test share of a class with `count` members: `ceil(count / 5)`.
pub(crate) fn test_count(count: usize) -> usize {
    count.div_ceil(5)
}

/// Generates the synthetic dataset in memory and, if `dir` is given, persists it.
///
/// Each class contributes `per_class` objects; `ceil(per_class / 5)` of them,
/// picked by a seeded shuffle, form the test split.
pub fn build_dataset<T: Real>(spec: &BuildSpec, seeds: &SeedTree, dir: Option<&Path>) -> Result<Dataset<T>> {
    if spec.per_class < 2 {
        return Err(Error::InvalidInput("per_class must be at least 2 so both splits are non-empty".into()));
    }
    if spec.classes < 1 {
        return Err(Error::InvalidInput("need at least one class".into()));
    }
    let data = seeds.child(crate::domain::streams::DATA);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..spec.classes {
        let mut order: Vec<usize> = (0..spec.per_class).collect();
        order.shuffle(&mut data.stream(&format!("split-class-{class}")));
        let held_out: std::collections::BTreeSet<usize> =
            order[..test_count(spec.per_class)].iter().copied().collect();
        for inst in 0..spec.per_class {
            let object_id = (class * spec.per_class + inst) as u64;
            let mut rng = data.child_idx("object", object_id).stream("shape");
            let shape = ShapeSpec::sample(class as u32, &mut rng);
            let cloud = generate_object::<T, _>(&shape, spec.n_points, object_id, &mut rng)?;
            if held_out.contains(&inst) {
                test.push(cloud);
            } else {
                train.push(cloud);
            }
        }
    }
    let base = ManifestBase {
        source: "synthetic".into(),
        seed: seeds.root_seed(),
        classes: spec.classes,
        per_class: Some(spec.per_class),
        n_points: spec.n_points,
        resolution: spec.resolution,
        rig: spec.rig,
    };
    let train_views = render_all(&train, spec)?;
    let test_views = render_all(&test, spec)?;
    let mut ds = Dataset::assemble(base, (train, Some(train_views)), (test, Some(test_views)))?;
    if let Some(dir) = dir {
        ds.save(dir)?;
    }
    Ok(ds)
}

fn render_all<T: Real>(clouds: &[PointCloud<T>], spec: &BuildSpec) -> Result<Vec<ViewSet<T>>> {
    clouds
        .iter()
        .map(|c| render_views(c, &spec.rig, spec.resolution))
        .collect()
}

fn points_blob<T: Real>(clouds: &[PointCloud<T>], n_points: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(clouds.len() * n_points * 12);
    for c in clouds {
        if c.len() != n_points {
            return Err(Error::Dataset(format!(
                "object {} has {} points, dataset declares {n_points}",
                c.object_id,
                c.len()
            )));
        }
        for v in c.points.iter() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn views_blob<T: Real>(sets: &[ViewSet<T>], resolution: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(sets.len() * NUM_RIG_VIEWS * resolution * resolution * 4);
    for set in sets {
        if set.len() != NUM_RIG_VIEWS {
            return Err(Error::Dataset("every stored view set must hold all rig views".into()));
        }
        for k in 0..NUM_RIG_VIEWS {
            let v = set.by_index(k).ok_or_else(|| Error::Dataset(format!("missing view {k}")))?;
            for p in v.pixels.iter() {
                out.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)
        .map_err(|e| Error::Dataset(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::Dataset(format!("write to {} failed: {e}", path.display())))
}

fn read_blob(dir: &Path, blob: &BlobInfo) -> Result<Vec<f32>> {
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let expected = blob.shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "{} holds {} bytes, manifest shape {:?} needs {expected}",
            blob.file,
            bytes.len(),
            blob.shape
        )));
    }
    let digest = hex::encode(Sha256::digest(&bytes));
    if digest != blob.sha256 {
        return Err(Error::Dataset(format!("{} checksum mismatch", blob.file)));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BuildSpec {
        BuildSpec {
            classes: 8,
            per_class: 2,
            n_points: 64,
            resolution: 32,
            rig: CameraRig::default(),
        }
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(test_count(100), 20);
        assert_eq!(test_count(2), 1);
        let ds = build_dataset::<f32>(&small(), &SeedTree::new(1), None).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.test.len(), 8);
        let mut train_labels = ds.train.labels();
        train_labels.sort();
        train_labels.dedup();
        assert_eq!(train_labels.len(), 8);
    }

    #[test]
    fn save_load_roundtrip_and_hash_stability() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = build_dataset::<f32>(&small(), &SeedTree::new(4), None).unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test, ds.test);
        let again = build_dataset::<f32>(&small(), &SeedTree::new(4), None).unwrap();
        assert_eq!(again.manifest_hash().unwrap(), ds.manifest_hash().unwrap());
        let other = build_dataset::<f32>(&small(), &SeedTree::new(5), None).unwrap();
        assert_ne!(other.manifest_hash().unwrap(), ds.manifest_hash().unwrap());
    }

    #[test]
    fn truncated_blob_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        build_dataset::<f32>(&small(), &SeedTree::new(4), Some(dir.path())).unwrap();
        let path = dir.path().join("test_points.f32");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = Dataset::<f32>::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("needs"), "{err}");
    }

    #[test]
    fn rejects_single_instance_classes() {
        let mut s = small();
        s.per_class = 1;
        assert!(build_dataset::<f32>(&s, &SeedTree::new(1), None).is_err());
    }
}
