//! Class prototypes, cosine similarity and distance profiles.
//!
//! A distance profile turns the cosine similarities between an embedding and
//! the known-class prototypes into a probability vector. Known-class samples
//! give peaked profiles (low entropy); samples far from every prototype give
//! flat ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One unit-norm prototype per known class, ordered by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub class_ids: Vec<i32>,
    pub prototypes: Vec<Vec<f64>>,
}

impl PrototypeBank {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    /// Position of `class_id` in the bank.
    pub fn index_of(&self, class_id: i32) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class_id)
    }
}

/// How raw similarities become a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileNorm {
    /// Softmax over cosine similarities (temperature 1).
    #[default]
    Softmax,
    /// `(δ_k + 1) / Σ_j (δ_j + 1)`, uniform when every δ is −1.
    ShiftedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub probs: Vec<f64>,
}

impl DistanceProfile {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty()
            || probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(Error::ShapeMismatch(format!(
                "not a probability vector (sum {sum})"
            )));
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Builds the bank from labeled embeddings; each prototype is the normalised
/// mean of its class.
pub fn compute_prototypes(
    embeddings: &[Vec<f64>],
    labels: &[i32],
    classes: &[i32],
) -> Result<PrototypeBank> {
    if embeddings.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut prototypes = Vec::with_capacity(classes.len());
    for &class in classes {
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for (e, _) in embeddings.iter().zip(labels).filter(|(_, &l)| l == class) {
            for (s, v) in sum.iter_mut().zip(e) {
                *s += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyClass(class));
        }
        let n = norm(&sum);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        prototypes.push(sum.into_iter().map(|s| s / n).collect());
    }
    Ok(PrototypeBank {
        class_ids: classes.to_vec(),
        prototypes,
    })
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity and its gradient with respect to `u`.
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let c = dot(u, v) / (nu * nv);
    let grad = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - c * a / (nu * nu))
        .collect();
    Ok((c, grad))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn normalize_similarities(sims: &[f64], mode: ProfileNorm) -> Vec<f64> {
    match mode {
        ProfileNorm::Softmax => softmax(sims),
        ProfileNorm::ShiftedSum => {
            let shifted: Vec<f64> = sims.iter().map(|s| (s + 1.0).max(0.0)).collect();
            let total: f64 = shifted.iter().sum();
            if total == 0.0 {
                vec![1.0 / sims.len() as f64; sims.len()]
            } else {
                shifted.into_iter().map(|s| s / total).collect()
            }
        }
    }
}

pub fn distance_profile(z: &[f64], bank: &PrototypeBank) -> Result<DistanceProfile> {
    distance_profile_with(z, bank, ProfileNorm::Softmax)
}

pub fn distance_profile_with(
    z: &[f64],
    bank: &PrototypeBank,
    mode: ProfileNorm,
) -> Result<DistanceProfile> {
    if bank.is_empty() {
        return Err(Error::ShapeMismatch("empty prototype bank".into()));
    }
    let sims = bank
        .prototypes
        .iter()
        .map(|q| cosine(z, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceProfile {
        probs: normalize_similarities(&sims, mode),
    })
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &DistanceProfile) -> f64 {
    -p.probs
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

pub fn manhattan(p: &DistanceProfile, q: &DistanceProfile) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "profiles of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a - b).abs())
        .sum())
}
