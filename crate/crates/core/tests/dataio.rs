mod common;

use std::collections::BTreeMap;

use adgcd::clustering::gcd_accuracy;
use adgcd::dataio::{
    from_gcde_bytes, generate_synthetic, generate_synthetic_detailed, load_dataset, save_dataset,
    split_subsets, to_gcde_bytes, Dataset, Domain, DomainShift, Format, Sample, SyntheticConfig,
    UNLABELED,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.gen_range(0..12);
    let n_patches = rng.gen_range(1..5);
    let patch_dim = rng.gen_range(1..6);
    let known: Vec<i32> = (0..rng.gen_range(0..4)).collect();
    // source samples must carry a known label
    let domain = if !known.is_empty() && rng.gen_bool(0.5) {
        Domain::Source
    } else {
        Domain::Target
    };
    let labeled = domain == Domain::Source || rng.gen_bool(0.7);
    let samples = (0..n)
        .map(|_| {
            let patches = (0..n_patches * patch_dim)
                .map(|_| rng.gen_range(-1e3f32..1e3))
                .collect();
            let label = match (labeled, domain) {
                (false, _) => UNLABELED,
                (true, Domain::Source) => known[rng.gen_range(0..known.len())],
                (true, Domain::Target) => rng.gen_range(-1..9),
            };
            Sample::new(patches, label, domain)
        })
        .collect();
    let mut metadata = BTreeMap::new();
    for i in 0..rng.gen_range(0..3) {
        metadata.insert(format!("key{i}"), format!("value {}", rng.gen::<u16>()));
    }
    Dataset::new(samples, n_patches, patch_dim, known, metadata).expect("valid random dataset")
}

#[test]
fn gcde_round_trip_is_byte_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..150 {
        let ds = random_dataset(&mut rng);
        let path = dir.path().join(format!("d{i}.gcde"));
        save_dataset(&ds, &path, Format::Gcde).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = load_dataset(&path, Format::Gcde).unwrap();
        assert_eq!(back, ds, "dataset {i}");
        assert_eq!(to_gcde_bytes(&back).unwrap(), bytes, "dataset {i}");
        assert_eq!(from_gcde_bytes(&bytes).unwrap(), ds);
    }
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let samples = vec![
        Sample::new(vec![0.5, -1.25, 3.0], 0, Domain::Target),
        Sample::new(vec![1e-3, 2.0, -0.0], 4, Domain::Target),
        Sample::new(vec![7.0, 8.0, 9.0], UNLABELED, Domain::Target),
    ];
    let ds = Dataset::new(samples, 1, 3, Vec::<i32>::new(), BTreeMap::new()).unwrap();
    let path = dir.path().join("t.csv");
    save_dataset(&ds, &path, Format::from_path(&path)).unwrap();
    let back = load_dataset(&path, Format::Csv).unwrap();
    assert_eq!(back.samples, ds.samples);
}

#[test]
fn separated_classes_are_recovered_by_kmeans() {
    let cfg = SyntheticConfig {
        shift: DomainShift::identity(),
        class_sep: 8.0,
        ..SyntheticConfig::default()
    };
    let (_, target) = generate_synthetic(&cfg).unwrap();
    let points: Vec<Vec<f64>> = (0..target.len()).map(|i| target.features_f64(i)).collect();
    // farthest-point seeding, then textbook Lloyd
    let mut centers = vec![points[0].clone()];
    while centers.len() < 7 {
        let far = points
            .iter()
            .max_by(|a, b| {
                let d = |p: &Vec<f64>| {
                    centers
                        .iter()
                        .map(|c| p.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                        .fold(f64::INFINITY, f64::min)
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        centers.push(far.clone());
    }
    let (_, assignment, _) = common::reference_lloyd(&points, centers, 100);
    let m = gcd_accuracy(&assignment, &target.labels(), &target.known_classes).unwrap();
    assert!(m.all >= 0.95, "all = {}", m.all);
}

#[test]
fn domain_means_follow_the_affine_map() {
    let cfg = SyntheticConfig {
        shift: DomainShift {
            rotation_deg: 30.0,
            scale: 1.2,
            translation: 0.3,
        },
        samples_per_class: 200,
        seed: 5,
        ..SyntheticConfig::default()
    };
    let out = generate_synthetic_detailed(&cfg).unwrap();
    let d = cfg.patch_dim;
    let sigma = cfg.noise_std;
    let mut within3 = 0usize;
    let mut total = 0usize;
    for (class, mean) in out.truth.source_means.iter().enumerate() {
        let mut expected_target = mean.clone();
        for patch in expected_target.chunks_exact_mut(d) {
            cfg.shift.apply(patch, &out.truth.translation_direction);
        }
        for (ds, expected, s) in [
            (&out.source, mean, sigma),
            (&out.target, &expected_target, sigma * cfg.shift.scale),
        ] {
            let members: Vec<usize> = (0..ds.len())
                .filter(|&i| ds.samples[i].label == class as i32)
                .collect();
            if members.is_empty() {
                continue;
            }
            let n = members.len() as f64;
            for (f, e) in expected.iter().enumerate() {
                let m = members
                    .iter()
                    .map(|&i| f64::from(ds.samples[i].patches[f]))
                    .sum::<f64>()
                    / n;
                let z = (m - e).abs() / (s / n.sqrt());
                assert!(z < 5.0, "class {class} feature {f}: z = {z}");
                within3 += usize::from(z < 3.0);
                total += 1;
            }
        }
    }
    assert!(within3 as f64 >= 0.99 * total as f64, "{within3}/{total}");
}

proptest! {
    #[test]
    fn split_is_a_partition(labels in proptest::collection::vec(0i32..10, 0..60), known in proptest::collection::btree_set(0i32..10, 0..5)) {
        let samples = labels.iter().map(|&l| Sample::new(vec![0.0], l, Domain::Target)).collect();
        let ds = Dataset::new(samples, 1, 1, known.iter().copied(), BTreeMap::new()).unwrap();
        let known: Vec<i32> = known.into_iter().collect();
        let (old, new) = split_subsets(&ds, &known).unwrap();
        let mut all: Vec<usize> = old.iter().chain(&new).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for &i in &old { prop_assert!(known.contains(&labels[i])); }
        for &i in &new { prop_assert!(!known.contains(&labels[i])); }
    }
}
