use mmpoint::augment::{augment_once, build_pipelines, catalog, sample_crop, AugConfig3D};
use mmpoint::config::RunConfig;
use mmpoint::losses::pairwise_contrast;
use mmpoint::{normalize_cloud, EmbeddingBatch, SpaceTag};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;

fn unit_rows(values: &[f64], n: usize, d: usize) -> Array2<f64> {
    let mut a = Array2::from_shape_vec((n, d), values[..n * d].to_vec()).unwrap();
    for mut r in a.rows_mut() {
        let norm = r.dot(&r).sqrt().max(1e-9);
        r.mapv_inplace(|v| v / norm);
        if norm == 1e-9 {
            r.fill(0.0);
            r[0] = 1.0;
        }
    }
    a
}

fn batch(a: Array2<f64>) -> EmbeddingBatch<f64> {
    EmbeddingBatch::new(a, SpaceTag::Intra).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contrast_is_symmetric_nonnegative_and_row_permutation_invariant(
        n in 1usize..6,
        d in 1usize..7,
        tau in prop::sample::select(vec![0.05, 0.1, 0.5, 1.0, 4.0]),
        values in prop::collection::vec(0.1f64..1.0, 72),
        signs in prop::collection::vec(any::<bool>(), 72),
        shift in 0usize..6,
    ) {
        let v: Vec<f64> = values.iter().zip(&signs).map(|(x, s)| if *s { *x } else { -*x }).collect();
        let a = unit_rows(&v, n, d);
        let b = unit_rows(&v[36..], n, d);
        let l = pairwise_contrast(&batch(a.clone()), &batch(b.clone()), tau).unwrap();
        let swapped = pairwise_contrast(&batch(b.clone()), &batch(a.clone()), tau).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - swapped).abs() < 1e-12);
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let lp = pairwise_contrast(&batch(a.select(Axis(0), &perm)), &batch(b.select(Axis(0), &perm)), tau).unwrap();
        prop_assert!((l - lp).abs() < 1e-12);
    }

    #[test]
    fn sampled_crops_fit_inside_the_image(seed in any::<u64>(), lo in 0.05f64..0.9, res in prop::sample::select(vec![16usize, 32, 64])) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = sample_crop((lo, 1.0), (0.75, 4.0 / 3.0), res, res, &mut rng);
        prop_assert!(c.h >= 1 && c.w >= 1 && c.h <= res && c.w <= res);
        prop_assert!(c.top() >= -1e-9 && c.left() >= -1e-9);
        prop_assert!(c.top() + c.h as f64 <= res as f64 + 1e-9);
        prop_assert!(c.left() + c.w as f64 <= res as f64 + 1e-9);
    }

    #[test]
    fn rotation_only_augmentation_is_an_isometry(seed in any::<u64>(), n in 64usize..120) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((n, 3), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let cloud = normalize_cloud::<f64>(raw.view()).unwrap();
        let out = augment_once(&cloud, &AugConfig3D::rotation_only(), &mut rng);
        prop_assert_eq!(out.len(), n);
        for i in (0..n).step_by(7) {
            for j in (0..n).step_by(5) {
                let d0 = (&cloud.points.row(i) - &cloud.points.row(j)).mapv(|v| v * v).sum().sqrt();
                let d1 = (&out.points.row(i) - &out.points.row(j)).mapv(|v| v * v).sum().sqrt();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn run_config_round_trips_through_json(m in 1usize..7, seed in any::<u64>(), tau in 0.01f64..2.0) {
        let mut cfg = RunConfig::default().with_views(m);
        cfg.seed = seed;
        cfg.loss.tau = tau;
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn every_level_extends_the_previous_one(levels in 1usize..25) {
        let p = build_pipelines(levels, &catalog(levels).unwrap()).unwrap();
        prop_assert_eq!(p.len(), levels);
        for (i, w) in p.windows(2).enumerate() {
            prop_assert_eq!(w[1].transforms.len(), w[0].transforms.len() + 1);
            prop_assert_eq!(&w[1].transforms[..=i + 1], &w[0].transforms[..]);
            prop_assert!(w[1].crop_floor() <= w[0].crop_floor());
        }
    }
}
