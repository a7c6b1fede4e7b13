use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    auroc, confident_pseudo_pins, estimate_k, gcd_accuracy, kmeans, known_centers, ss_kmeans,
    ClusteringResult, GcdMetrics, PinOrigin, PinSet,
};
use crate::dataio::{split_subsets, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{distance_profile_with, entropy};

use super::{Model, TrainConfig};

/// Profile entropy of target samples over the known-class prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyStats {
    pub mean: f64,
    pub known_mean: Option<f64>,
    pub novel_mean: Option<f64>,
    /// Entropy as a novel-vs-known score; needs both subsets.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub clustering: ClusteringResult,
    pub target_assignment: Vec<usize>,
    pub k: usize,
    /// `"override"`, `"brent"` or `"elbow"`.
    pub k_source: String,
    pub k_probes: BTreeMap<usize, f64>,
    pub n_source_pins: usize,
    pub n_pseudo_pins: usize,
    pub metrics: Option<GcdMetrics>,
    /// Entropy of embedding-space profiles against the prototype bank.
    pub entropy: EntropyStats,
    /// The same statistics for profiles read through the discriminator.
    pub disc_entropy: EntropyStats,
    pub target_entropy: Vec<f64>,
    pub target_embeddings: Vec<Vec<f64>>,
}

/// Target profile entropies against the embedding-space prototype bank.
pub fn target_entropies(
    model: &Model,
    target_embeddings: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    target_embeddings
        .par_iter()
        .map(|z| {
            Ok(entropy(&distance_profile_with(
                z,
                &model.bank,
                cfg.profile_norm,
            )?))
        })
        .collect()
}

/// Target profile entropies against the discriminator-space bank.
pub fn disc_target_entropies(
    model: &Model,
    target_embeddings: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    target_embeddings
        .par_iter()
        .map(|z| {
            let h = model.disc_features(z)?;
            Ok(entropy(&distance_profile_with(
                &h,
                &model.disc_bank,
                cfg.profile_norm,
            )?))
        })
        .collect()
}

fn entropy_stats(values: &[f64], target: &Dataset, known: &[i32]) -> Result<EntropyStats> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if !target.has_labels() || target.samples.iter().any(|s| !s.is_labeled()) {
        return Ok(EntropyStats {
            mean,
            known_mean: None,
            novel_mean: None,
            auroc: None,
        });
    }
    let (old, new) = split_subsets(target, known)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| values[i]).collect::<Vec<f64>>();
    let (ko, kn) = (pick(&old), pick(&new));
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let score = if ko.is_empty() || kn.is_empty() {
        None
    } else {
        Some(auroc(&kn, &ko)?)
    };
    Ok(EntropyStats {
        mean,
        known_mean: avg(&ko),
        novel_mean: avg(&kn),
        auroc: score,
    })
}

/// Clusters `F_e(source) ∪ F_e(target)` and scores the target.
///
/// Source samples are pinned to their classes and targets whose cosine to a
/// known center reaches the threshold are pinned too. Without a source the
/// prototype bank provides the known centers and K must be given.
pub fn run_inference(
    model: &Model,
    source: Option<&Dataset>,
    target: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Inference> {
    if target.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let target_z = model.embed_dataset(target)?;
    let source_z = match source {
        Some(s) => model.embed_dataset(s)?,
        None => Vec::new(),
    };
    let ns = source_z.len();
    let mut points = source_z;
    points.extend(target_z.iter().cloned());

    let mut pins = PinSet::new();
    if let Some(s) = source {
        for (i, sample) in s.samples.iter().enumerate() {
            let c = model
                .known_classes
                .binary_search(&sample.label)
                .map_err(|_| {
                    Error::MissingLabels(format!("source sample {i} has no known label"))
                })?;
            pins.insert(i, c, PinOrigin::SourceLabel)?;
        }
    }
    let centers = if source.is_some() {
        known_centers(&points, &pins)?
    } else {
        model.bank.prototypes.clone()
    };
    for (i, c) in confident_pseudo_pins(&target_z, &centers, cfg.pin_threshold)? {
        pins.insert(ns + i, c, PinOrigin::ConfidentPseudo)?;
    }

    let n_known = model.known_classes.len();
    let estimate_seed = rng.gen::<u64>();
    let (k, k_source, k_probes) = if cfg.k_override > 0 {
        (cfg.k_override, "override".to_string(), BTreeMap::new())
    } else {
        if source.is_none() {
            return Err(Error::InvalidConfig(
                "estimating K needs the labeled source; set k_override".into(),
            ));
        }
        let lo = cfg.k_min.max(n_known);
        let hi = cfg.k_max.min(points.len());
        let est = estimate_k(&points, &pins, (lo, hi), cfg.k_method, estimate_seed)?;
        (est.k, cfg.k_method.to_string(), est.probes)
    };

    let clustering = ss_kmeans(&points, k, &centers, &pins, rng)?;
    let target_assignment = clustering.assignment[ns..].to_vec();
    let labeled = target.has_labels() && target.samples.iter().all(|s| s.is_labeled());
    let metrics = if labeled {
        Some(gcd_accuracy(
            &target_assignment,
            &target.labels(),
            &model.known_classes,
        )?)
    } else {
        None
    };
    let target_entropy = target_entropies(model, &target_z, cfg)?;
    let entropy = entropy_stats(&target_entropy, target, &model.known_classes)?;
    let disc_entropy = entropy_stats(
        &disc_target_entropies(model, &target_z, cfg)?,
        target,
        &model.known_classes,
    )?;
    Ok(Inference {
        target_assignment,
        k,
        k_source,
        k_probes,
        n_source_pins: pins.count(PinOrigin::SourceLabel),
        n_pseudo_pins: pins.count(PinOrigin::ConfidentPseudo),
        metrics,
        entropy,
        disc_entropy,
        target_entropy,
        target_embeddings: target_z,
        clustering,
    })
}

/// Plain k-means on the raw flattened inputs of source and target, scored
/// on the target.
pub fn raw_kmeans_baseline(
    source: &Dataset,
    target: &Dataset,
    k: usize,
    seed: u64,
) -> Result<GcdMetrics> {
    let mut points: Vec<Vec<f64>> = (0..source.len()).map(|i| source.features_f64(i)).collect();
    points.extend((0..target.len()).map(|i| target.features_f64(i)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = kmeans(&points, k, &mut rng)?;
    gcd_accuracy(
        &r.assignment[source.len()..],
        &target.labels(),
        &source.known_classes,
    )
}
