//! Training objectives with exact gradients with respect to their inputs.
//!
//! * [`loss_warmup`]: softmax cross-entropy of the warm-up head.
//! * [`loss_align`]: cross-entropy between the uniform pseudo target and the
//!   distance profile, played as a min–max between projector and
//!   discriminator.
//! * [`loss_con_source`]: embedding vs. every known-class prototype.
//! * [`loss_con_target`]: InfoNCE over a mined positive and `M` negatives.
//! * [`loss_recon`] / [`loss_inpaint`]: masked-patch reconstruction and the
//!   hinge that asks a same-cluster conditioning sample to help at least as
//!   much as a different-cluster one.
//!
//! Network back-propagation is left to the caller.

use crate::error::{Error, Result};
use crate::geometry::{cosine_with_grad, softmax, ProfileNorm, PrototypeBank};
use crate::nnkit::grad_reverse;

/// Lower clamp applied to probabilities inside logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Default InfoNCE temperature for target contrast.
pub const DEFAULT_TARGET_TEMPERATURE: f64 = 0.1;

/// Softmax cross-entropy; `label` indexes `logits`.
pub fn loss_warmup(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label: label as i64,
            classes: logits.len(),
        });
    }
    let p = softmax(logits);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    let mut grad = p;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// `CE(y^g, d) = −(1/K) Σ_k ln max(d_k, 1e−7)` for the uniform pseudo target.
pub fn align_ce(profile: &[f64]) -> f64 {
    let k = profile.len() as f64;
    -profile.iter().map(|&d| d.max(PROB_CLAMP).ln()).sum::<f64>() / k
}

/// Target-domain features entering the alignment game, with the reversal
/// strength applied on the way back into the projector.
#[derive(Debug, Clone)]
pub struct AlignBatch {
    pub features: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl AlignBatch {
    pub fn new(features: Vec<Vec<f64>>, lambda: f64) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("reversal strength {lambda}")));
        }
        Ok(Self { features, lambda })
    }

    /// The pseudo ground truth: uniform over the known classes.
    pub fn pseudo_target(k: usize) -> Vec<f64> {
        vec![1.0 / k as f64; k]
    }
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    /// Batch mean of the cross-entropy.
    pub loss: f64,
    /// `∂loss/∂feature` per sample (un-reversed).
    pub feature_grads: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl AlignOutput {
    /// Upstream gradient for the discriminator, which ascends the loss.
    pub fn discriminator_upstream(&self, i: usize) -> Vec<f64> {
        self.feature_grads[i].iter().map(|g| -g).collect()
    }

    /// Passes the discriminator's input gradient through the reversal
    /// connection, so the projector descends the loss scaled by λ.
    pub fn projector_upstream(&self, discriminator_input_grad: &[f64]) -> Vec<f64> {
        grad_reverse(discriminator_input_grad, self.lambda)
    }
}

/// Profile of `z` against the bank together with `∂profile/∂z` as a
/// `K × dim` Jacobian.
fn profile_jacobian(
    z: &[f64],
    bank: &PrototypeBank,
    mode: ProfileNorm,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut sims = Vec::with_capacity(bank.len());
    let mut sim_grads = Vec::with_capacity(bank.len());
    for q in &bank.prototypes {
        let (s, g) = cosine_with_grad(z, q)?;
        sims.push(s);
        sim_grads.push(g);
    }
    let k = sims.len();
    // ∂d_k/∂s_j
    let (probs, ds): (Vec<f64>, Vec<Vec<f64>>) = match mode {
        ProfileNorm::Softmax => {
            let p = softmax(&sims);
            let ds = (0..k)
                .map(|a| {
                    (0..k)
                        .map(|b| p[a] * (f64::from(u8::from(a == b)) - p[b]))
                        .collect()
                })
                .collect();
            (p, ds)
        }
        ProfileNorm::ShiftedSum => {
            let shifted: Vec<f64> = sims.iter().map(|s| (s + 1.0).max(0.0)).collect();
            let total: f64 = shifted.iter().sum();
            if total == 0.0 {
                (vec![1.0 / k as f64; k], vec![vec![0.0; k]; k])
            } else {
                let p: Vec<f64> = shifted.iter().map(|a| a / total).collect();
                let ds = (0..k)
                    .map(|a| {
                        (0..k)
                            .map(|b| {
                                if shifted[b] > 0.0 {
                                    (f64::from(u8::from(a == b)) - p[a]) / total
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                (p, ds)
            }
        }
    };
    let dim = z.len();
    let jac = (0..k)
        .map(|a| {
            let mut row = vec![0.0; dim];
            for (b, g) in sim_grads.iter().enumerate() {
                let w = ds[a][b];
                if w != 0.0 {
                    row.iter_mut().zip(g).for_each(|(r, gv)| *r += w * gv);
                }
            }
            row
        })
        .collect();
    Ok((probs, jac))
}

/// Mean alignment cross-entropy over the batch and its per-feature
/// gradients. `bank` lives in the same space as the features.
pub fn loss_align(
    batch: &AlignBatch,
    bank: &PrototypeBank,
    mode: ProfileNorm,
) -> Result<AlignOutput> {
    if batch.features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.features.len() as f64;
    let k = bank.len() as f64;
    let mut total = 0.0;
    let mut feature_grads = Vec::with_capacity(batch.features.len());
    for h in &batch.features {
        let (probs, jac) = profile_jacobian(h, bank, mode)?;
        total += align_ce(&probs);
        let mut g = vec![0.0; h.len()];
        for (p, row) in probs.iter().zip(&jac) {
            if *p > PROB_CLAMP {
                let w = -1.0 / (k * p * n);
                g.iter_mut().zip(row).for_each(|(gv, r)| *gv += w * r);
            }
        }
        feature_grads.push(g);
    }
    Ok(AlignOutput {
        loss: total / n,
        feature_grads,
        lambda: batch.lambda,
    })
}

/// `−ln softmax_k(δ(z, Q)/T)` for a source embedding of class index `k`.
pub fn loss_con_source(
    z: &[f64],
    class_index: usize,
    bank: &PrototypeBank,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if class_index >= bank.len() {
        return Err(Error::LabelOutOfRange {
            label: class_index as i64,
            classes: bank.len(),
        });
    }
    let mut logits = Vec::with_capacity(bank.len());
    let mut grads = Vec::with_capacity(bank.len());
    for q in &bank.prototypes {
        let (s, g) = cosine_with_grad(z, q)?;
        logits.push(s / temperature);
        grads.push(g);
    }
    let p = softmax(&logits);
    let loss = -p[class_index].max(f64::MIN_POSITIVE).ln();
    let mut dz = vec![0.0; z.len()];
    for (j, g) in grads.iter().enumerate() {
        let w = (p[j] - f64::from(u8::from(j == class_index))) / temperature;
        dz.iter_mut().zip(g).for_each(|(d, gv)| *d += w * gv);
    }
    Ok((loss, dz))
}

/// Anchor, mined positive and `M ≥ 1` negatives.
#[derive(Debug, Clone)]
pub struct ContrastSet<'a> {
    pub anchor: &'a [f64],
    pub positive: &'a [f64],
    pub negatives: Vec<&'a [f64]>,
    pub temperature: f64,
}

impl<'a> ContrastSet<'a> {
    pub fn new(
        anchor: &'a [f64],
        positive: &'a [f64],
        negatives: Vec<&'a [f64]>,
        temperature: f64,
    ) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::InvalidConfig("contrast set needs a negative".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidConfig(format!("temperature {temperature}")));
        }
        Ok(Self {
            anchor,
            positive,
            negatives,
            temperature,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ContrastGrads {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn loss_con_target(set: &ContrastSet<'_>) -> Result<ContrastGrads> {
    let tau = set.temperature;
    let others: Vec<&[f64]> = std::iter::once(set.positive)
        .chain(set.negatives.iter().copied())
        .collect();
    let mut logits = Vec::with_capacity(others.len());
    let mut d_anchor_parts = Vec::with_capacity(others.len());
    let mut d_other_parts = Vec::with_capacity(others.len());
    for o in &others {
        let (s, ga) = cosine_with_grad(set.anchor, o)?;
        let (_, go) = cosine_with_grad(o, set.anchor)?;
        logits.push(s / tau);
        d_anchor_parts.push(ga);
        d_other_parts.push(go);
    }
    let p = softmax(&logits);
    let loss = -p[0].max(f64::MIN_POSITIVE).ln();
    let mut anchor = vec![0.0; set.anchor.len()];
    let mut other_grads = Vec::with_capacity(others.len());
    for (j, (ga, go)) in d_anchor_parts.iter().zip(&d_other_parts).enumerate() {
        let w = (p[j] - f64::from(u8::from(j == 0))) / tau;
        anchor.iter_mut().zip(ga).for_each(|(a, g)| *a += w * g);
        other_grads.push(go.iter().map(|g| w * g).collect::<Vec<f64>>());
    }
    let positive = other_grads.remove(0);
    Ok(ContrastGrads {
        loss,
        anchor,
        positive,
        negatives: other_grads,
    })
}

/// Mean squared error and `∂/∂prediction`.
pub fn loss_recon(prediction: &[f64], truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    if prediction.len() != truth.len() || prediction.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} values, truth {}",
            prediction.len(),
            truth.len()
        )));
    }
    let n = prediction.len() as f64;
    let diff: Vec<f64> = prediction.iter().zip(truth).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.into_iter().map(|d| 2.0 * d / n).collect()))
}

/// Value of the inpainting hinge and its partial derivatives with respect to
/// the three reconstruction losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InpaintOutput {
    pub loss: f64,
    pub d_self: f64,
    pub d_sim: f64,
    pub d_diff: f64,
}

/// `max(0, r_sim − r_diff) + r_self`, subgradient 0 at the kink.
pub fn loss_inpaint(r_self: f64, r_sim: f64, r_diff: f64) -> Result<InpaintOutput> {
    for r in [r_self, r_sim, r_diff] {
        if r < 0.0 || r.is_nan() {
            return Err(Error::NegativeLoss(r));
        }
    }
    let active = r_sim > r_diff;
    Ok(InpaintOutput {
        loss: (r_sim - r_diff).max(0.0) + r_self,
        d_self: 1.0,
        d_sim: if active { 1.0 } else { 0.0 },
        d_diff: if active { -1.0 } else { 0.0 },
    })
}
