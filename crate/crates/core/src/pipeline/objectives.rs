//! Network-level objectives: losses composed with the networks they train,
//! returning parameter gradients and the gradients owed to the projector.

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{ProfileNorm, PrototypeBank};
use crate::losses::{loss_align, loss_inpaint, loss_recon, AlignBatch};
use crate::nnkit::{Mlp, MlpGrads};

#[derive(Debug, Clone)]
pub struct AlignGrads {
    pub loss: f64,
    /// Gradient of `−loss` for the discriminator parameters.
    pub discriminator: MlpGrads,
    /// What each projector embedding receives: `λ ∂loss/∂z`.
    pub embeddings: Vec<Vec<f64>>,
}

/// Alignment cross-entropy of embeddings read through the discriminator.
pub fn align_objective(
    discriminator: &Mlp,
    embeddings: &[Vec<f64>],
    bank: &PrototypeBank,
    mode: ProfileNorm,
    lambda: f64,
) -> Result<AlignGrads> {
    let fwd = embeddings
        .par_iter()
        .map(|z| discriminator.forward(z))
        .collect::<Result<Vec<_>>>()?;
    let (features, tapes): (Vec<_>, Vec<_>) = fwd.into_iter().unzip();
    let out = loss_align(&AlignBatch::new(features, lambda)?, bank, mode)?;
    let back = tapes
        .into_par_iter()
        .enumerate()
        .map(|(i, t)| discriminator.backward(t, &out.discriminator_upstream(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = MlpGrads::zeros_like(discriminator);
    let mut dz = Vec::with_capacity(back.len());
    for (g, dx) in back {
        grads.add_assign(&g);
        dz.push(out.projector_upstream(&dx));
    }
    Ok(AlignGrads {
        loss: out.loss,
        discriminator: grads,
        embeddings: dz,
    })
}

/// `[masked embedding, conditioning embedding, one-hot masked patch]`.
pub fn decoder_input(
    z_masked: &[f64],
    z_cond: &[f64],
    masked_patch: usize,
    n_patches: usize,
) -> Vec<f64> {
    let mut input = Vec::with_capacity(z_masked.len() + z_cond.len() + n_patches);
    input.extend_from_slice(z_masked);
    input.extend_from_slice(z_cond);
    input.extend((0..n_patches).map(|p| if p == masked_patch { 1.0 } else { 0.0 }));
    input
}

#[derive(Debug, Clone)]
pub struct InpaintGrads {
    pub loss: f64,
    pub decoder: MlpGrads,
    pub masked: Vec<f64>,
    /// Conditioning embeddings in the order self, similar, different.
    pub conditions: [Vec<f64>; 3],
}

/// Hinge inpainting loss of one quadruplet: the decoder restores the masked
/// patch conditioned on the sample itself, a same-cluster and a
/// different-cluster sample.
pub fn inpaint_objective(
    decoder: &Mlp,
    z_masked: &[f64],
    conditions: [&[f64]; 3],
    masked_patch: usize,
    n_patches: usize,
    truth: &[f64],
) -> Result<InpaintGrads> {
    let mut recon = Vec::with_capacity(3);
    for z_c in conditions {
        let (pred, tape) =
            decoder.forward(&decoder_input(z_masked, z_c, masked_patch, n_patches))?;
        let (r, dpred) = loss_recon(&pred, truth)?;
        recon.push((r, dpred, tape));
    }
    let out = loss_inpaint(recon[0].0, recon[1].0, recon[2].0)?;
    let e = z_masked.len();
    let mut grads = MlpGrads::zeros_like(decoder);
    let mut masked = vec![0.0; e];
    let mut conds: [Vec<f64>; 3] = Default::default();
    for (c, ((_, dpred, tape), w)) in recon
        .into_iter()
        .zip([out.d_self, out.d_sim, out.d_diff])
        .enumerate()
    {
        let up: Vec<f64> = dpred.iter().map(|v| v * w).collect();
        let (g, dx) = decoder.backward(tape, &up)?;
        grads.add_assign(&g);
        masked.iter_mut().zip(&dx[..e]).for_each(|(a, v)| *a += v);
        conds[c] = dx[e..e + conditions[c].len()].to_vec();
    }
    Ok(InpaintGrads {
        loss: out.loss,
        decoder: grads,
        masked,
        conditions: conds,
    })
}
