#![cfg(feature = "hdf5")]

use mmpoint::shapegen::ingest_external;
use mmpoint::{Dataset32, SeedTree};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};

fn write_archive(path: &std::path::Path, n: usize, p: usize) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let data = Array3::from_shape_fn((n, p, 3), |_| rng.random_range(-2.0f32..2.0));
    // labels stored the common way: (N, 1) unsigned bytes
    let labels = Array2::from_shape_fn((n, 1), |(i, _)| (i % 3) as u8);
    let file = hdf5_metno::File::create(path).unwrap();
    file.new_dataset_builder().with_data(&data).create("data").unwrap();
    file.new_dataset_builder().with_data(&labels).create("label").unwrap();
}

#[test]
fn archive_round_trips_through_a_dataset_directory() {
    let dir = tempfile::tempdir().unwrap();
    let h5 = dir.path().join("shapes.h5");
    write_archive(&h5, 15, 300);
    let mut ds = ingest_external::<f32>(&h5, 128, 32, &SeedTree::new(2)).unwrap();
    assert_eq!(ds.train.len() + ds.test.len(), 15);
    assert_eq!(ds.num_classes(), 3);
    for c in ds.train.clouds.iter().chain(&ds.test.clouds) {
        assert_eq!(c.len(), 128);
        assert!(c.max_norm() <= 1.0 + 1e-5);
    }
    assert!(ds.train.views.iter().all(|v| v.len() == 24));

    let out = dir.path().join("ingested");
    ds.save(&out).unwrap();
    let back = Dataset32::load(&out).unwrap();
    assert_eq!(back.manifest_hash().unwrap(), ds.manifest_hash().unwrap());
    assert_eq!(back.train.clouds, ds.train.clouds);

    let again = ingest_external::<f32>(&h5, 128, 32, &SeedTree::new(2)).unwrap();
    assert_eq!(again.manifest_hash().unwrap(), ds.manifest_hash().unwrap());
}

#[test]
fn rejects_malformed_archives() {
    let dir = tempfile::tempdir().unwrap();
    let h5 = dir.path().join("bad.h5");
    let file = hdf5_metno::File::create(&h5).unwrap();
    file.new_dataset_builder()
        .with_data(&Array2::<f32>::zeros((4, 3)))
        .create("data")
        .unwrap();
    drop(file);
    let err = ingest_external::<f32>(&h5, 64, 32, &SeedTree::new(0)).unwrap_err();
    assert!(err.to_string().contains("(N, P, 3)"), "{err}");

    let h5 = dir.path().join("short.h5");
    write_archive(&h5, 6, 100);
    assert!(ingest_external::<f32>(&h5, 128, 32, &SeedTree::new(0)).is_err());
}
