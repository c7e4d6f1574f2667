use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView3};
use rand::seq::{index, SliceRandom};

use super::dataset::{test_count, Dataset, ManifestBase};
use super::CameraRig;
use crate::domain::{normalize_cloud, SeedTree, MIN_POINTS};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Builds a dataset from raw `(N, P, 3)` arrays with one label per cloud.
///
/// Every cloud is subsampled without replacement to `n_points` and
/// normalized; views are rendered from the normalized cloud. Classes with at
/// least two members are split with the same `ceil(count / 5)` rule as the
/// synthetic data.
pub fn ingest_arrays<T: Real>(
    data: ArrayView3<f32>,
    labels: &[i64],
    n_points: usize,
    resolution: usize,
    seeds: &SeedTree,
) -> Result<Dataset<T>> {
    let (n, p, c) = data.dim();
    if c != 3 {
        return Err(Error::DimMismatch(format!("point arrays must be (N, P, 3), got ({n}, {p}, {c})")));
    }
    if labels.len() != n {
        return Err(Error::Dataset(format!("label table has {} entries for {n} clouds", labels.len())));
    }
    if n == 0 {
        return Err(Error::Dataset("archive holds no clouds".into()));
    }
    if n_points < MIN_POINTS || n_points > p {
        return Err(Error::InvalidInput(format!(
            "cannot sample {n_points} points from clouds of {p} (minimum {MIN_POINTS})"
        )));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let l = u32::try_from(l).map_err(|_| Error::Dataset(format!("label {l} of cloud {i} is not a class index")))?;
        by_class.entry(l).or_default().push(i);
    }
    let streams = seeds.child(crate::domain::streams::DATA);
    let mut is_test = vec![false; n];
    for (class, members) in &by_class {
        if members.len() < 2 {
            continue;
        }
        let mut order = members.clone();
        order.shuffle(&mut streams.stream(&format!("split-class-{class}")));
        for &i in &order[..test_count(members.len())] {
            is_test[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..n {
        let mut rng = streams.child_idx("object", i as u64).stream("subsample");
        let mut pick = index::sample(&mut rng, p, n_points).into_vec();
        pick.sort_unstable();
        let raw = Array2::from_shape_fn((n_points, 3), |(r, d)| T::lit(data[[i, pick[r], d]] as f64));
        let cloud = normalize_cloud(raw.view())
            .map_err(|e| Error::Dataset(format!("cloud {i}: {e}")))?
            .with_identity(i as u64, Some(labels[i] as u32));
        if is_test[i] {
            test.push(cloud);
        } else {
            train.push(cloud);
        }
    }
    let classes = by_class.keys().next_back().map_or(0, |&k| k as usize + 1);
    let base = ManifestBase {
        source: "external".into(),
        seed: seeds.root_seed(),
        classes,
        per_class: None,
        n_points,
        resolution,
        rig: CameraRig::default(),
    };
    Dataset::assemble(base, (train, None::<Vec<_>>), (test, None))
}

/// Reads an HDF5 archive with a `data` array `(N, P, 3)` and a `label` array
/// `(N,)` or `(N, 1)`, then ingests it.
#[cfg(feature = "hdf5")]
pub fn ingest_external<T: Real>(
    archive: &Path,
    n_points: usize,
    resolution: usize,
    seeds: &SeedTree,
) -> Result<Dataset<T>> {
    let file = hdf5_metno::File::open(archive)?;
    let data_ds = file
        .dataset("data")
        .map_err(|_| Error::Dataset(format!("{}: no 'data' array", archive.display())))?;
    let shape = data_ds.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::DimMismatch(format!(
            "{}: 'data' must be shaped (N, P, 3), found {shape:?}",
            archive.display()
        )));
    }
    let data = data_ds.read::<f32, ndarray::Ix3>()?;
    let label_ds = file
        .dataset("label")
        .map_err(|_| Error::Dataset(format!("{}: no 'label' table", archive.display())))?;
    let labels: Vec<i64> = label_ds.read_raw::<i64>()?;
    ingest_arrays(data.view(), &labels, n_points, resolution, seeds)
}

#[cfg(not(feature = "hdf5"))]
pub fn ingest_external<T: Real>(
    archive: &Path,
    _n_points: usize,
    _resolution: usize,
    _seeds: &SeedTree,
) -> Result<Dataset<T>> {
    Err(Error::Dataset(format!(
        "{}: built without HDF5 support",
        archive.display()
    )))
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    fn archive(n: usize, p: usize) -> (Array3<f32>, Vec<i64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data = Array3::from_shape_fn((n, p, 3), |_| rng.random_range(-1.0f32..1.0));
        let labels = (0..n as i64).map(|i| i % 2).collect();
        (data, labels)
    }

    #[test]
    fn subsamples_deterministically() {
        let (data, labels) = archive(10, 2048);
        let a = ingest_arrays::<f32>(data.view(), &labels, 1024, 32, &SeedTree::new(9)).unwrap();
        let b = ingest_arrays::<f32>(data.view(), &labels, 1024, 32, &SeedTree::new(9)).unwrap();
        assert_eq!(a.train.len() + a.test.len(), 10);
        assert_eq!(a.train.clouds[0].len(), 1024);
        assert_eq!(a.train.clouds[0].content_hash(), b.train.clouds[0].content_hash());
        let c = ingest_arrays::<f32>(data.view(), &labels, 1024, 32, &SeedTree::new(10)).unwrap();
        assert_ne!(a.train.clouds[0].content_hash(), c.train.clouds[0].content_hash());
        assert_eq!(a.manifest.test.views, None);
    }

    #[test]
    fn rejects_four_column_arrays() {
        let data = Array3::<f32>::zeros((2, 64, 4));
        let err = ingest_arrays::<f32>(data.view(), &[0, 1], 32, 32, &SeedTree::new(1)).unwrap_err();
        assert!(err.to_string().contains("(N, P, 3)"), "{err}");
    }

    #[test]
    fn rejects_missing_labels() {
        let (data, _) = archive(4, 64);
        assert!(ingest_arrays::<f32>(data.view(), &[0, 1], 32, 32, &SeedTree::new(1)).is_err());
    }

    #[test]
    fn ingested_directory_roundtrips() {
        let (data, labels) = archive(6, 128);
        let mut ds = ingest_arrays::<f32>(data.view(), &labels, 64, 32, &SeedTree::new(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test, ds.test);
    }
}
