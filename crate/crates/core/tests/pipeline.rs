use std::collections::BTreeMap;

use adgcd::dataio::{generate_synthetic, split_subsets, Dataset};
use adgcd::geometry::compute_prototypes;
use adgcd::nnkit::AdamState;
use adgcd::pipeline::objectives::align_objective;
use adgcd::pipeline::{
    benchmark_config, disc_target_entropies, run, run_epoch, run_inference, run_warmup, train,
    Model, RunReport, TrainConfig, TrainState,
};
use adgcd::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn benchmark(seed: u64) -> (Dataset, Dataset) {
    generate_synthetic(&benchmark_config(seed)).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        main_iters: 2,
        k_override: 7,
        ..TrainConfig::default()
    }
}

fn mean_of(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

#[test]
fn warmup_fits_the_source() {
    let (source, target) = benchmark(0);
    let cfg = TrainConfig::default();
    let mut state = TrainState::new(&source, &target, &cfg).unwrap();
    let rec = run_warmup(&mut state, &cfg).unwrap();
    assert_eq!(rec.losses.len(), cfg.warmup_iters);
    assert!(
        rec.source_accuracy >= 0.95,
        "accuracy {}",
        rec.source_accuracy
    );
}

#[test]
fn zero_warmup_leaves_projector_untouched() {
    let (source, target) = benchmark(1);
    let cfg = TrainConfig {
        warmup_iters: 0,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&source, &target, &cfg).unwrap();
    let before = state.model.projector.params();
    let rec = run_warmup(&mut state, &cfg).unwrap();
    assert!(rec.losses.is_empty());
    assert_eq!(state.model.projector.params(), before);
}

#[test]
fn warmup_is_deterministic() {
    let (source, target) = benchmark(2);
    let cfg = TrainConfig::default();
    let params = || {
        let mut state = TrainState::new(&source, &target, &cfg).unwrap();
        run_warmup(&mut state, &cfg).unwrap();
        state.model.projector.params()
    };
    assert_eq!(params(), params());
}

#[test]
fn one_epoch_entropy_audit() {
    let (source, target) = benchmark(0);
    let cfg = TrainConfig::default();
    let mut state = TrainState::new(&source, &target, &cfg).unwrap();
    run_warmup(&mut state, &cfg).unwrap();
    let (old, new) = split_subsets(&target, &source.known_classes).unwrap();
    // profiles in the discriminator space, where the alignment loss acts
    let entropies = |state: &mut TrainState| {
        state.refresh_banks().unwrap();
        let z = state.model.embed_dataset(&target).unwrap();
        disc_target_entropies(&state.model, &z, &cfg).unwrap()
    };
    let start = entropies(&mut state);
    run_epoch(&mut state, &cfg).unwrap();
    let end = entropies(&mut state);
    assert!(mean_of(&end, &old) < mean_of(&start, &old));
    assert!(mean_of(&end, &new) >= mean_of(&end, &old));
}

#[test]
fn discriminator_ascends_alignment_without_reversal() {
    let (source, target) = benchmark(3);
    let cfg = TrainConfig::default();
    let mut state = TrainState::new(&source, &target, &cfg).unwrap();
    run_warmup(&mut state, &cfg).unwrap();
    let model = &mut state.model;
    let source_z = model.embed_dataset(&source).unwrap();
    let target_z = model.embed_dataset(&target).unwrap();
    let labels = source.labels();
    let mut opt = AdamState::new(model.discriminator.n_params(), 1e-3);
    let mut trace = Vec::new();
    for _ in 0..30 {
        let h: Vec<Vec<f64>> = source_z
            .iter()
            .map(|z| model.disc_features(z).unwrap())
            .collect();
        let bank = compute_prototypes(&h, &labels, &model.known_classes).unwrap();
        let out = align_objective(
            &model.discriminator,
            &target_z,
            &bank,
            cfg.profile_norm,
            0.0,
        )
        .unwrap();
        assert!(out.embeddings.iter().flatten().all(|&g| g == 0.0));
        // the discriminator minimises the negated loss
        trace.push(-out.loss);
        let mut p = model.discriminator.params();
        opt.update(&mut p, &out.discriminator.0).unwrap();
        model.discriminator.set_params(&p).unwrap();
    }
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{trace:?}");
    }
}

#[test]
fn empty_target_is_rejected() {
    let (source, target) = benchmark(0);
    let empty = Dataset::new(
        Vec::new(),
        target.n_patches,
        target.patch_dim,
        target.known_classes.clone(),
        BTreeMap::new(),
    )
    .unwrap();
    assert!(matches!(
        train(&source, &empty, &TrainConfig::default()),
        Err(Error::EmptyBatch)
    ));
}

#[test]
fn forced_k_report_is_well_formed() {
    let (source, target) = benchmark(4);
    let out = run(&source, &target, &quick_config()).unwrap();
    let r = &out.report;
    assert_eq!(r.k, 7);
    assert_eq!(r.k_source, "override");
    assert_eq!(r.epochs.len(), 2);
    assert_eq!(r.n_source_pins, source.len());
    let m = r.metrics.as_ref().unwrap();
    let weighted = (m.old * m.n_old as f64 + m.new * m.n_new as f64) / (m.n_old + m.n_new) as f64;
    assert!((weighted - m.all).abs() < 1e-12);
    for e in &r.epochs {
        for v in [e.align, e.con_l, e.con_u, e.stage_b]
            .into_iter()
            .chain(e.inp)
        {
            assert!(v.is_finite());
        }
    }
    assert!(r.entropy.auroc.is_some() && r.disc_entropy.auroc.is_some());
    let back = RunReport::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), r.to_json().unwrap());
    let mut csv = Vec::new();
    r.write_summary_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("metric,value\n"));
}

#[test]
fn untrained_projector_beats_chance() {
    let (source, target) = benchmark(5);
    let cfg = quick_config();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = Model::new(
        source.n_patches,
        source.patch_dim,
        &source.known_classes,
        &cfg,
        &mut rng,
    )
    .unwrap();
    let z = model.embed_dataset(&source).unwrap();
    model.refresh_banks(&z, &source.labels()).unwrap();
    let inf = run_inference(&model, Some(&source), &target, &cfg, &mut rng).unwrap();
    let all = inf.metrics.unwrap().all;
    assert!(all > 1.0 / 7.0, "all = {all}");
}

#[test]
fn checkpoint_reproduces_inference() {
    let (source, target) = benchmark(6);
    let cfg = quick_config();
    let out = run(&source, &target, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.gcdk");
    out.model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    let infer = |m: &Model| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        run_inference(m, Some(&source), &target, &cfg, &mut rng).unwrap()
    };
    let (a, b) = (infer(&out.model), infer(&loaded));
    assert_eq!(a.target_assignment, b.target_assignment);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn interleaved_schedule_trains() {
    let (source, target) = benchmark(7);
    let cfg = TrainConfig {
        interleave: true,
        ..quick_config()
    };
    let out = run(&source, &target, &cfg).unwrap();
    assert_eq!(out.report.epochs.len(), 2);
    assert!(out.report.metrics.unwrap().all > 1.0 / 7.0);
}
