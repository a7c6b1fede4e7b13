//! Synthetic cross-domain benchmark.
//!
//! Every class owns a base mean in the signal subspace and one fixed offset
//! per patch, so patch identity carries class information. A sample's patch
//! `p` is `mean_c + offset_{c,p} + nuisance + noise_p`, where the nuisance
//! vector is drawn once per sample, lives in the first `nuisance_dims`
//! coordinates and is shared by all patches. Target samples come from the same
//! class-conditional distribution pushed through the affine domain map
//! `x -> scale * R x + t`, with `R` rotating every coordinate plane
//! `(0,1), (2,3), ...` by the same angle.
//!
//! RNG draw order: class means, patch offsets, translation direction, source
//! samples (class by class), target samples (class by class), source shuffle,
//! target shuffle.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Domain, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub rotation_deg: f64,
    pub scale: f64,
    /// Length of the translation vector; its direction is drawn from the seed.
    pub translation: f64,
}

impl DomainShift {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            translation: 0.0,
        }
    }

    /// Applies `scale * R x + translation * direction` in place.
    pub fn apply(&self, x: &mut [f64], direction: &[f64]) {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        for pair in x.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = cos * a - sin * b;
            pair[1] = sin * a + cos * b;
        }
        for (v, d) in x.iter_mut().zip(direction) {
            *v = self.scale * *v + self.translation * d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_known: usize,
    pub n_novel: usize,
    pub patch_dim: usize,
    pub n_patches: usize,
    pub samples_per_class: usize,
    /// Pairwise distance between class base means, in units of `noise_std`.
    pub class_sep: f64,
    /// Std of the per-class patch offsets, in units of `noise_std`.
    pub patch_offset_std: f64,
    pub noise_std: f64,
    /// Leading coordinates carrying class-independent per-sample nuisance.
    /// Must be even so the nuisance subspace is a union of rotation planes.
    pub nuisance_dims: usize,
    pub nuisance_std: f64,
    pub shift: DomainShift,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_known: 4,
            n_novel: 3,
            patch_dim: 16,
            n_patches: 16,
            samples_per_class: 100,
            class_sep: 8.0,
            patch_offset_std: 1.0,
            noise_std: 1.0,
            nuisance_dims: 0,
            nuisance_std: 0.0,
            shift: DomainShift::identity(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_known == 0 {
            return bad("n_known must be at least 1");
        }
        if self.patch_dim == 0 || self.n_patches == 0 || self.samples_per_class == 0 {
            return bad("patch_dim, n_patches and samples_per_class must be positive");
        }
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            return bad("class_sep must be positive");
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("patch_offset_std", self.patch_offset_std),
            ("nuisance_std", self.nuisance_std),
            ("translation", self.shift.translation),
            ("rotation_deg", self.shift.rotation_deg),
        ] {
            if !v.is_finite() || (name != "rotation_deg" && v < 0.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is not allowed")));
            }
        }
        if !(self.shift.scale > 0.0 && self.shift.scale.is_finite()) {
            return bad("shift scale must be positive");
        }
        if self.nuisance_dims % 2 != 0 || self.nuisance_dims >= self.patch_dim {
            return bad("nuisance_dims must be even and leave at least one signal coordinate");
        }
        Ok(())
    }

    fn n_classes(&self) -> usize {
        self.n_known + self.n_novel
    }
}

/// Ground truth behind a generated pair of datasets.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    /// Per class, the source-domain expected value of every feature
    /// (`n_patches * patch_dim`, patch-major).
    pub source_means: Vec<Vec<f64>>,
    pub translation_direction: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub source: Dataset,
    pub target: Dataset,
    pub truth: SyntheticTruth,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn class_means(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let signal = cfg.nuisance_dims..cfg.patch_dim;
    let signal_dims = signal.len();
    let radius = cfg.class_sep * cfg.noise_std / std::f64::consts::SQRT_2;
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes());
    for _ in 0..cfg.n_classes() {
        let mut v: Vec<f64> = (0..signal_dims).map(|_| gaussian(rng)).collect();
        // Orthonormal directions keep every pair exactly class_sep apart.
        if dirs.len() < signal_dims {
            for d in &dirs {
                let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(d).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|a| *a /= norm);
        dirs.push(v);
    }
    dirs.into_iter()
        .map(|d| {
            let mut mean = vec![0.0; cfg.patch_dim];
            for (m, v) in mean[signal.clone()].iter_mut().zip(d) {
                *m = radius * v;
            }
            mean
        })
        .collect()
}

fn draw_sample(cfg: &SyntheticConfig, patch_means: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let nuisance: Vec<f64> = (0..cfg.nuisance_dims)
        .map(|_| cfg.nuisance_std * gaussian(rng))
        .collect();
    let mut x = patch_means.to_vec();
    for patch in x.chunks_exact_mut(cfg.patch_dim) {
        for (v, n) in patch.iter_mut().zip(&nuisance) {
            *v += n;
        }
        for v in patch.iter_mut() {
            *v += cfg.noise_std * gaussian(rng);
        }
    }
    x
}

/// Generates a labeled source set (known classes only) and a target set
/// (known and novel classes, labels kept for evaluation).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Dataset, Dataset)> {
    let out = generate_synthetic_detailed(cfg)?;
    Ok((out.source, out.target))
}

pub fn generate_synthetic_detailed(cfg: &SyntheticConfig) -> Result<SyntheticOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = class_means(cfg, &mut rng);
    let offset_scale = cfg.patch_offset_std * cfg.noise_std;
    let source_means: Vec<Vec<f64>> = means
        .iter()
        .map(|m| {
            let mut full = Vec::with_capacity(cfg.n_patches * cfg.patch_dim);
            for _ in 0..cfg.n_patches {
                for (j, &mj) in m.iter().enumerate() {
                    let offset = if j < cfg.nuisance_dims {
                        0.0
                    } else {
                        offset_scale * gaussian(&mut rng)
                    };
                    full.push(mj + offset);
                }
            }
            full
        })
        .collect();
    let mut direction: Vec<f64> = (0..cfg.patch_dim).map(|_| gaussian(&mut rng)).collect();
    let norm = direction
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(1e-12);
    direction.iter_mut().for_each(|a| *a /= norm);

    let to_f32 = |x: Vec<f64>| x.into_iter().map(|v| v as f32).collect::<Vec<f32>>();
    let mut source = Vec::with_capacity(cfg.n_known * cfg.samples_per_class);
    for (c, pm) in source_means.iter().enumerate().take(cfg.n_known) {
        for _ in 0..cfg.samples_per_class {
            let x = draw_sample(cfg, pm, &mut rng);
            source.push(Sample::new(to_f32(x), c as i32, Domain::Source));
        }
    }
    let mut target = Vec::with_capacity(cfg.n_classes() * cfg.samples_per_class);
    for (c, pm) in source_means.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            let mut x = draw_sample(cfg, pm, &mut rng);
            for patch in x.chunks_exact_mut(cfg.patch_dim) {
                cfg.shift.apply(patch, &direction);
            }
            target.push(Sample::new(to_f32(x), c as i32, Domain::Target));
        }
    }
    source.shuffle(&mut rng);
    target.shuffle(&mut rng);

    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), "synthetic".to_string());
    meta.insert("seed".to_string(), cfg.seed.to_string());
    meta.insert("n_novel".to_string(), cfg.n_novel.to_string());
    let known = 0..cfg.n_known as i32;
    let source = Dataset::new(
        source,
        cfg.n_patches,
        cfg.patch_dim,
        known.clone(),
        meta.clone(),
    )?;
    let target = Dataset::new(target, cfg.n_patches, cfg.patch_dim, known, meta)?;
    Ok(SyntheticOutput {
        source,
        target,
        truth: SyntheticTruth {
            source_means,
            translation_direction: direction,
        },
    })
}
