use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{compute_prototypes, distance_profile_with};
use crate::losses::{loss_con_source, loss_con_target, loss_warmup, ContrastSet};
use crate::mining::{dbscan, mine_neighbors, sample_quadruplets, Quadruplet};
use crate::nnkit::{
    l2_normalize, l2_normalize_backward, Activation, AdamState, GradTape, Mlp, MlpGrads,
};

use super::objectives::{align_objective, inpaint_objective};
use super::{Model, TrainConfig};

/// Everything that evolves during training. All randomness comes from `rng`,
/// seeded once from the configuration.
#[derive(Debug)]
pub struct TrainState {
    pub model: Model,
    pub rng: ChaCha8Rng,
    opt_projector: AdamState,
    opt_disc: AdamState,
    opt_decoder: AdamState,
    source_x: Vec<Vec<f64>>,
    /// Index into the known classes.
    source_y: Vec<usize>,
    source_labels: Vec<i32>,
    target_x: Vec<Vec<f64>>,
    /// Pooled standard deviation of the target inputs.
    feature_std: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupRecord {
    pub losses: Vec<f64>,
    /// Head accuracy on the whole source after the last step.
    pub source_accuracy: f64,
}

/// Mean losses of one epoch. `inp` is `None` when the over-clustering gave
/// too few clusters for quadruplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub align: f64,
    pub con_l: f64,
    pub con_u: f64,
    pub inp: Option<f64>,
    pub n_clusters: usize,
    pub n_noise: usize,
    /// Composite objective of stage B; drives early stopping.
    pub stage_b: f64,
}

impl TrainState {
    /// Draws the initial network weights from the seeded generator.
    pub fn new(source: &Dataset, target: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if source.is_empty() || target.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if source.n_patches != target.n_patches || source.patch_dim != target.patch_dim {
            return Err(Error::ShapeMismatch(format!(
                "source has {}x{} patches, target {}x{}",
                source.n_patches, source.patch_dim, target.n_patches, target.patch_dim
            )));
        }
        if source.known_classes.is_empty() {
            return Err(Error::MissingLabels("source has no known classes".into()));
        }
        let known = source.known_classes.clone();
        let mut source_y = Vec::with_capacity(source.len());
        for (i, s) in source.samples.iter().enumerate() {
            let idx = known.binary_search(&s.label).map_err(|_| {
                Error::MissingLabels(format!("source sample {i} has no known label"))
            })?;
            source_y.push(idx);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::new(source.n_patches, source.patch_dim, &known, cfg, &mut rng)?;
        let source_x: Vec<Vec<f64>> = (0..source.len()).map(|i| source.features_f64(i)).collect();
        let target_x: Vec<Vec<f64>> = (0..target.len()).map(|i| target.features_f64(i)).collect();
        let feature_std = pooled_std(&target_x);
        Ok(Self {
            opt_projector: AdamState::new(model.projector.n_params(), cfg.lr),
            opt_disc: AdamState::new(model.discriminator.n_params(), cfg.lr),
            opt_decoder: AdamState::new(model.decoder.n_params(), cfg.lr),
            model,
            rng,
            source_x,
            source_y,
            source_labels: source.labels(),
            target_x,
            feature_std,
            epochs_run: 0,
        })
    }

    pub fn source_inputs(&self) -> &[Vec<f64>] {
        &self.source_x
    }

    /// Recomputes both prototype banks with the current networks.
    pub fn refresh_banks(&mut self) -> Result<()> {
        let z = self.embed_all(&self.source_x)?;
        self.model.refresh_banks(&z, &self.source_labels)
    }

    fn embed_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.par_iter().map(|x| self.model.embed(x)).collect()
    }

    fn joint_input(&self, i: usize) -> &[f64] {
        let ns = self.source_x.len();
        if i < ns {
            &self.source_x[i]
        } else {
            &self.target_x[i - ns]
        }
    }
}

fn pooled_std(xs: &[Vec<f64>]) -> f64 {
    let n = xs.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = xs.iter().flatten().sum::<f64>() / n;
    let var = xs.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Projector pass kept for one backward call.
struct Embedded {
    z: Vec<f64>,
    norm: f64,
    tape: GradTape,
}

fn embed_forward(net: &Mlp, x: &[f64]) -> Result<Embedded> {
    let (raw, tape) = net.forward(x)?;
    let (z, norm) = l2_normalize(&raw)?;
    Ok(Embedded { z, norm, tape })
}

/// Backpropagates `dz` of every pass and sums the parameter gradients in
/// input order.
fn backprop_projector(net: &Mlp, passes: Vec<Embedded>, dz: &[Vec<f64>]) -> Result<MlpGrads> {
    let parts = passes
        .into_par_iter()
        .zip(dz.par_iter())
        .map(|(e, g)| {
            let up = l2_normalize_backward(&e.z, e.norm, g);
            net.backward(e.tape, &up).map(|(grads, _)| grads)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = MlpGrads::zeros_like(net);
    for p in &parts {
        total.add_assign(p);
    }
    Ok(total)
}

/// `len` indices taken cyclically from `order`, starting at `start`.
fn window(order: &[usize], start: usize, len: usize) -> Vec<usize> {
    (0..len.min(order.len()))
        .map(|i| order[(start + i) % order.len()])
        .collect()
}

/// Supervised warm-up of the projector through a linear head over the
/// unit-norm embedding. The head is dropped afterwards.
pub fn run_warmup(state: &mut TrainState, cfg: &TrainConfig) -> Result<WarmupRecord> {
    let n_known = state.model.known_classes.len();
    let mut head = Mlp::new(
        &[state.model.embed_dim(), n_known],
        &[Activation::Identity],
        &mut state.rng,
    )?;
    let mut opt_head = AdamState::new(head.n_params(), cfg.lr);
    let mut order: Vec<usize> = (0..state.source_x.len()).collect();
    let mut losses = Vec::with_capacity(cfg.warmup_iters);
    let mut cursor = order.len();
    for _ in 0..cfg.warmup_iters {
        if cursor >= order.len() {
            order.shuffle(&mut state.rng);
            cursor = 0;
        }
        let batch = window(&order, cursor, cfg.batch_size);
        cursor += cfg.batch_size;
        let net = &state.model.projector;
        let head_ref = &head;
        let results = batch
            .par_iter()
            .map(|&i| -> Result<_> {
                let e = embed_forward(net, &state.source_x[i])?;
                let (logits, head_tape) = head_ref.forward(&e.z)?;
                let (loss, dlogits) = loss_warmup(&logits, state.source_y[i])?;
                let (hg, dz) = head_ref.backward(head_tape, &dlogits)?;
                Ok((loss, hg, dz, e))
            })
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut head_grads = MlpGrads::zeros_like(&head);
        let mut loss = 0.0;
        let mut passes = Vec::with_capacity(results.len());
        let mut dz = Vec::with_capacity(results.len());
        for (l, hg, g, e) in results {
            loss += l * scale;
            head_grads.add_assign(&hg);
            dz.push(g.into_iter().map(|v| v * scale).collect());
            passes.push(e);
        }
        head_grads.scale(scale);
        let pg = backprop_projector(net, passes, &dz)?;
        let mut params = state.model.projector.params();
        state.opt_projector.update(&mut params, &pg.0)?;
        state.model.projector.set_params(&params)?;
        let mut hp = head.params();
        opt_head.update(&mut hp, &head_grads.0)?;
        head.set_params(&hp)?;
        losses.push(loss);
    }
    let correct = state
        .source_x
        .par_iter()
        .zip(&state.source_y)
        .map(|(x, &y)| -> Result<bool> {
            let logits = head.predict(&state.model.embed(x)?)?;
            let best = logits
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (k, &v)| if v > b.1 { (k, v) } else { b },
                )
                .0;
            Ok(best == y)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|&c| c)
        .count();
    state.refresh_banks()?;
    Ok(WarmupRecord {
        losses,
        source_accuracy: correct as f64 / state.source_x.len() as f64,
    })
}

/// One alignment minibatch: the discriminator ascends the loss, the
/// projector descends it through the reversal connection.
fn align_step(state: &mut TrainState, batch: &[usize], cfg: &TrainConfig) -> Result<f64> {
    // the discriminator-space bank must follow the discriminator it is read through
    let h_source = state
        .source_x
        .par_iter()
        .map(|x| state.model.disc_features(&state.model.embed(x)?))
        .collect::<Result<Vec<_>>>()?;
    state.model.disc_bank =
        compute_prototypes(&h_source, &state.source_labels, &state.model.known_classes)?;
    let proj = &state.model.projector;
    let passes = batch
        .par_iter()
        .map(|&i| embed_forward(proj, &state.target_x[i]))
        .collect::<Result<Vec<_>>>()?;
    let z: Vec<Vec<f64>> = passes.iter().map(|e| e.z.clone()).collect();
    let out = align_objective(
        &state.model.discriminator,
        &z,
        &state.model.disc_bank,
        cfg.profile_norm,
        cfg.lambda,
    )?;
    let disc_grads = out.discriminator;
    let proj_grads = backprop_projector(proj, passes, &out.embeddings)?;

    let mut p = state.model.discriminator.params();
    state.opt_disc.update(&mut p, &disc_grads.0)?;
    state.model.discriminator.set_params(&p)?;
    let mut p = state.model.projector.params();
    state.opt_projector.update(&mut p, &proj_grads.0)?;
    state.model.projector.set_params(&p)?;
    Ok(out.loss)
}

/// Losses of one composite step.
struct StageBLosses {
    con_l: f64,
    con_u: f64,
    inp: Option<f64>,
}

fn composite_step(
    state: &mut TrainState,
    source_batch: &[usize],
    target_batch: &[usize],
    quads: &[Quadruplet],
    cfg: &TrainConfig,
) -> Result<StageBLosses> {
    let sigma = cfg.jitter_sigma * state.feature_std;
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    for &i in target_batch {
        inputs.push(state.target_x[i].clone());
    }
    for &i in target_batch {
        let x = state.target_x[i]
            .iter()
            .map(|v| {
                let n: f64 = state.rng.sample(StandardNormal);
                v + sigma * n
            })
            .collect();
        inputs.push(x);
    }
    let n_pool = inputs.len();
    let n_src = source_batch.len();
    for &i in source_batch {
        inputs.push(state.source_x[i].clone());
    }
    // per quadruplet: masked anchor, anchor, similar, different
    let quad_base = inputs.len();
    for q in quads {
        let mut masked = state.joint_input(q.anchor).to_vec();
        let d = state.model.patch_dim;
        masked[q.masked_patch * d..(q.masked_patch + 1) * d].fill(0.0);
        inputs.push(masked);
        inputs.push(state.joint_input(q.anchor).to_vec());
        inputs.push(state.joint_input(q.similar).to_vec());
        inputs.push(state.joint_input(q.different).to_vec());
    }

    let proj = &state.model.projector;
    let passes = inputs
        .par_iter()
        .map(|x| embed_forward(proj, x))
        .collect::<Result<Vec<_>>>()?;
    let mut dz = vec![vec![0.0; state.model.embed_dim()]; passes.len()];
    let add = |dz: &mut Vec<Vec<f64>>, i: usize, g: &[f64], w: f64| {
        dz[i].iter_mut().zip(g).for_each(|(a, v)| *a += w * v);
    };

    // source contrast against the prototypes
    let bank = &state.model.bank;
    let src = (0..n_src)
        .into_par_iter()
        .map(|j| {
            let y = state.source_y[source_batch[j]];
            loss_con_source(&passes[n_pool + j].z, y, bank, cfg.source_temperature)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut con_l = 0.0;
    for (j, (l, g)) in src.iter().enumerate() {
        con_l += l / n_src as f64;
        add(&mut dz, n_pool + j, g, 1.0 / n_src as f64);
    }

    // target contrast over the mined pool; originals are the anchors
    let n_anchor = target_batch.len();
    let mut con_u = 0.0;
    if n_pool >= 3 {
        let profiles = passes[..n_pool]
            .par_iter()
            .map(|e| distance_profile_with(&e.z, bank, cfg.profile_norm))
            .collect::<Result<Vec<_>>>()?;
        let m = cfg.negatives.min(n_pool - 2);
        let mined = mine_neighbors(&profiles, m)?;
        let tgt = (0..n_anchor)
            .into_par_iter()
            .map(|a| {
                let nb = &mined.per_anchor[a];
                let negs = nb
                    .negatives
                    .iter()
                    .map(|&j| passes[j].z.as_slice())
                    .collect();
                let set = ContrastSet::new(
                    &passes[a].z,
                    &passes[nb.positive].z,
                    negs,
                    cfg.target_temperature,
                )?;
                loss_con_target(&set)
            })
            .collect::<Result<Vec<_>>>()?;
        let w = 1.0 / n_anchor as f64;
        for (a, g) in tgt.iter().enumerate() {
            con_u += g.loss * w;
            let nb = &mined.per_anchor[a];
            add(&mut dz, a, &g.anchor, w);
            add(&mut dz, nb.positive, &g.positive, w);
            for (&j, gn) in nb.negatives.iter().zip(&g.negatives) {
                add(&mut dz, j, gn, w);
            }
        }
    }

    // conditional inpainting
    let mut inp = None;
    let mut dec_grads = MlpGrads::zeros_like(&state.model.decoder);
    if !quads.is_empty() {
        let dec = &state.model.decoder;
        let n_patches = state.model.n_patches;
        let d = state.model.patch_dim;
        let per_quad = quads
            .par_iter()
            .enumerate()
            .map(|(qi, q)| {
                let base = quad_base + 4 * qi;
                let lo = q.masked_patch * d;
                inpaint_objective(
                    dec,
                    &passes[base].z,
                    [
                        &passes[base + 1].z,
                        &passes[base + 2].z,
                        &passes[base + 3].z,
                    ],
                    q.masked_patch,
                    n_patches,
                    &state.joint_input(q.anchor)[lo..lo + d],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let w = 1.0 / quads.len() as f64;
        let mut total = 0.0;
        for (qi, q) in per_quad.iter().enumerate() {
            total += q.loss * w;
            dec_grads.add_assign(&q.decoder);
            let base = quad_base + 4 * qi;
            add(&mut dz, base, &q.masked, w);
            for (c, g) in q.conditions.iter().enumerate() {
                add(&mut dz, base + 1 + c, g, w);
            }
        }
        dec_grads.scale(w);
        inp = Some(total);
    }

    let proj_grads = backprop_projector(proj, passes, &dz)?;
    let mut p = state.model.projector.params();
    state.opt_projector.update(&mut p, &proj_grads.0)?;
    state.model.projector.set_params(&p)?;
    if inp.is_some() {
        let mut p = state.model.decoder.params();
        state.opt_decoder.update(&mut p, &dec_grads.0)?;
        state.model.decoder.set_params(&p)?;
    }
    for v in [con_l, con_u].into_iter().chain(inp) {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue("stage-B loss".into()));
        }
    }
    Ok(StageBLosses { con_l, con_u, inp })
}

/// One epoch: prototypes are refreshed, then the alignment stage and the
/// composite stage run over the target in minibatches (one after the other,
/// or alternating per minibatch with `interleave`).
///
/// Random draws, in order: alignment permutation of the target, quadruplets,
/// composite permutations of target and source, then the jitter of each
/// composite step.
pub fn run_epoch(state: &mut TrainState, cfg: &TrainConfig) -> Result<EpochRecord> {
    state.refresh_banks()?;
    let nt = state.target_x.len();
    let ns = state.source_x.len();
    let bs = cfg.batch_size;
    let steps = nt.div_ceil(bs);

    let mut align_order: Vec<usize> = (0..nt).collect();
    align_order.shuffle(&mut state.rng);

    // over-cluster the joint embeddings for quadruplets
    let joint: Vec<Vec<f64>> = state
        .source_x
        .par_iter()
        .chain(state.target_x.par_iter())
        .map(|x| state.model.embed(x))
        .collect::<Result<_>>()?;
    let clusters = dbscan(&joint, cfg.eps_dbscan, cfg.min_pts);
    let n_clusters = clusters
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    let n_noise = clusters.iter().filter(|&&c| c < 0).count();
    let quads = match sample_quadruplets(
        &clusters,
        state.model.n_patches,
        steps * cfg.quad_batch,
        &mut state.rng,
    ) {
        Ok(q) => q,
        Err(Error::InsufficientClusters(why)) => {
            log::warn!("epoch {}: skipping inpainting ({why})", state.epochs_run);
            Vec::new()
        }
        Err(e) => return Err(e),
    };

    let mut target_order: Vec<usize> = (0..nt).collect();
    target_order.shuffle(&mut state.rng);
    let mut source_order: Vec<usize> = (0..ns).collect();
    source_order.shuffle(&mut state.rng);

    let mut align = 0.0;
    let (mut con_l, mut con_u, mut inp) = (0.0, 0.0, 0.0);
    let quads_for = |s: usize| -> &[Quadruplet] {
        if quads.is_empty() {
            &[]
        } else {
            &quads[s * cfg.quad_batch..(s + 1) * cfg.quad_batch]
        }
    };
    let mut run_b = |state: &mut TrainState, s: usize| -> Result<()> {
        let l = composite_step(
            state,
            &window(&source_order, s * bs, bs),
            &window(&target_order, s * bs, bs),
            quads_for(s),
            cfg,
        )?;
        con_l += l.con_l / steps as f64;
        con_u += l.con_u / steps as f64;
        inp += l.inp.unwrap_or(0.0) / steps as f64;
        Ok(())
    };
    if cfg.interleave {
        for s in 0..steps {
            align += align_step(state, &window(&align_order, s * bs, bs), cfg)? / steps as f64;
            run_b(state, s)?;
        }
    } else {
        for s in 0..steps {
            align += align_step(state, &window(&align_order, s * bs, bs), cfg)? / steps as f64;
        }
        for s in 0..steps {
            run_b(state, s)?;
        }
    }
    if !align.is_finite() {
        return Err(Error::NonFiniteValue("alignment loss".into()));
    }
    let inp = (!quads.is_empty()).then_some(inp);
    let record = EpochRecord {
        epoch: state.epochs_run,
        align,
        con_l,
        con_u,
        inp,
        n_clusters,
        n_noise,
        stage_b: con_l + con_u + inp.unwrap_or(0.0),
    };
    state.epochs_run += 1;
    Ok(record)
}

/// Warm-up followed by up to `main_iters` epochs, stopping once the stage-B
/// loss has not improved for `patience` epochs. Banks are refreshed at the
/// end so they match the final networks.
pub fn train(
    source: &Dataset,
    target: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TrainState, WarmupRecord, Vec<EpochRecord>)> {
    let mut state = TrainState::new(source, target, cfg)?;
    let warmup = run_warmup(&mut state, cfg)?;
    let mut epochs = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.main_iters {
        let rec = run_epoch(&mut state, cfg)?;
        log::info!(
            "epoch {}: align {:.4} con_l {:.4} con_u {:.4} inp {:?}",
            rec.epoch,
            rec.align,
            rec.con_l,
            rec.con_u,
            rec.inp
        );
        if rec.stage_b < best {
            best = rec.stage_b;
            stale = 0;
        } else {
            stale += 1;
        }
        epochs.push(rec);
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }
    state.refresh_banks()?;
    Ok((state, warmup, epochs))
}
