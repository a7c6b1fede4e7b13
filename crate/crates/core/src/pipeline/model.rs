use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{compute_prototypes, PrototypeBank};
use crate::nnkit::{l2_normalize, Activation, Dense, Mlp};

use super::TrainConfig;

const CHECKPOINT_MAGIC: &[u8; 4] = b"GCDK";
const CHECKPOINT_VERSION: u32 = 1;

/// Projector, discriminator and decoder together with the prototype banks
/// of the known classes in projector and discriminator space.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub projector: Mlp,
    pub discriminator: Mlp,
    /// Input: masked-sample embedding, conditioning embedding, one-hot mask.
    pub decoder: Mlp,
    pub n_patches: usize,
    pub patch_dim: usize,
    pub known_classes: Vec<i32>,
    pub bank: PrototypeBank,
    pub disc_bank: PrototypeBank,
    /// Configuration text the model was trained with.
    pub metadata: String,
}

impl Model {
    pub fn new<R: Rng>(
        n_patches: usize,
        patch_dim: usize,
        known_classes: &[i32],
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        use Activation::{Identity, Relu};
        let input = n_patches * patch_dim;
        let projector = Mlp::new(
            &[input, cfg.hidden_dim, cfg.embed_dim],
            &[Relu, Identity],
            rng,
        )?;
        let discriminator = Mlp::new(
            &[cfg.embed_dim, cfg.disc_dim, cfg.disc_dim],
            &[Relu, Identity],
            rng,
        )?;
        let decoder = Mlp::new(
            &[2 * cfg.embed_dim + n_patches, cfg.decoder_hidden, patch_dim],
            &[Relu, Identity],
            rng,
        )?;
        let empty = |dim: usize| PrototypeBank {
            class_ids: known_classes.to_vec(),
            prototypes: vec![vec![0.0; dim]; known_classes.len()],
        };
        Ok(Self {
            projector,
            discriminator,
            decoder,
            n_patches,
            patch_dim,
            known_classes: known_classes.to_vec(),
            bank: empty(cfg.embed_dim),
            disc_bank: empty(cfg.disc_dim),
            metadata: cfg.to_text(),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.projector.output_dim()
    }

    /// Unit-norm projector embedding.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(l2_normalize(&self.projector.predict(x)?)?.0)
    }

    pub fn embed_dataset(&self, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.check_dataset(ds)?;
        (0..ds.len())
            .into_par_iter()
            .map(|i| self.embed(&ds.features_f64(i)))
            .collect()
    }

    pub fn disc_features(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.discriminator.predict(z)
    }

    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.n_patches != self.n_patches || ds.patch_dim != self.patch_dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects {}x{} patches, data has {}x{}",
                self.n_patches, self.patch_dim, ds.n_patches, ds.patch_dim
            )));
        }
        Ok(())
    }

    /// Recomputes both banks from labeled source embeddings.
    pub fn refresh_banks(&mut self, source_embeddings: &[Vec<f64>], labels: &[i32]) -> Result<()> {
        self.bank = compute_prototypes(source_embeddings, labels, &self.known_classes)?;
        let h = source_embeddings
            .par_iter()
            .map(|z| self.disc_features(z))
            .collect::<Result<Vec<_>>>()?;
        self.disc_bank = compute_prototypes(&h, labels, &self.known_classes)?;
        Ok(())
    }

    /// Binary layout, little endian: magic `GCDK`, u32 version, u32
    /// n_patches, u32 patch_dim, u32 network count, then per network a u32
    /// layer count and per layer u32 in, u32 out, u8 activation; u32 class
    /// count and the i32 class ids; u32 bank dims (projector, discriminator);
    /// u32 metadata length and UTF-8 metadata; then every f64: the networks'
    /// parameters in order (per layer weights then bias) and both banks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        u32le(&mut out, self.n_patches);
        u32le(&mut out, self.patch_dim);
        let nets = [&self.projector, &self.discriminator, &self.decoder];
        u32le(&mut out, nets.len());
        for net in nets {
            u32le(&mut out, net.layers.len());
            for l in &net.layers {
                u32le(&mut out, l.in_dim);
                u32le(&mut out, l.out_dim);
                out.push(l.activation.code());
            }
        }
        u32le(&mut out, self.known_classes.len());
        for c in &self.known_classes {
            out.extend_from_slice(&c.to_le_bytes());
        }
        u32le(&mut out, self.bank.dim());
        u32le(&mut out, self.disc_bank.dim());
        u32le(&mut out, self.metadata.len());
        out.extend_from_slice(self.metadata.as_bytes());
        let values = nets
            .iter()
            .flat_map(|n| n.params())
            .chain(self.bank.prototypes.iter().flatten().copied())
            .chain(self.disc_bank.prototypes.iter().flatten().copied());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::MalformedHeader("not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnknownVersion(version));
        }
        let n_patches = r.u32()? as usize;
        let patch_dim = r.u32()? as usize;
        let n_nets = r.u32()?;
        if n_nets != 3 {
            return Err(Error::MalformedHeader(format!(
                "{n_nets} networks, expected 3"
            )));
        }
        let mut shapes = Vec::new();
        for _ in 0..n_nets {
            let n_layers = r.u32()?;
            let mut layers = Vec::new();
            for _ in 0..n_layers {
                let in_dim = r.u32()? as usize;
                let out_dim = r.u32()? as usize;
                let code = r.take(1)?[0];
                let act = Activation::from_code(code)
                    .ok_or_else(|| Error::MalformedHeader(format!("activation code {code}")))?;
                layers.push((in_dim, out_dim, act));
            }
            shapes.push(layers);
        }
        let n_known = r.u32()? as usize;
        let known_classes = (0..n_known)
            .map(|_| {
                r.take(4)
                    .map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes")))
            })
            .collect::<Result<Vec<_>>>()?;
        let bank_dim = r.u32()? as usize;
        let disc_dim = r.u32()? as usize;
        let meta_len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::MalformedHeader("metadata is not UTF-8".into()))?;

        let mut nets = Vec::new();
        for layers in shapes {
            let mut dense = Vec::new();
            for (in_dim, out_dim, activation) in layers {
                dense.push(Dense {
                    in_dim,
                    out_dim,
                    weights: r.f64s(in_dim * out_dim)?,
                    bias: r.f64s(out_dim)?,
                    activation,
                });
            }
            nets.push(Mlp::from_layers(dense)?);
        }
        let mut bank_rows =
            |dim: usize| -> Result<Vec<Vec<f64>>> { (0..n_known).map(|_| r.f64s(dim)).collect() };
        let bank = PrototypeBank {
            class_ids: known_classes.clone(),
            prototypes: bank_rows(bank_dim)?,
        };
        let disc_bank = PrototypeBank {
            class_ids: known_classes.clone(),
            prototypes: bank_rows(disc_dim)?,
        };
        if r.pos != bytes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let decoder = nets.pop().expect("three networks");
        let discriminator = nets.pop().expect("three networks");
        let projector = nets.pop().expect("three networks");
        let embed = projector.output_dim();
        if projector.input_dim() != n_patches * patch_dim
            || discriminator.input_dim() != embed
            || decoder.input_dim() != 2 * embed + n_patches
            || decoder.output_dim() != patch_dim
            || bank_dim != embed
            || disc_dim != discriminator.output_dim()
        {
            return Err(Error::ShapeMismatch(
                "checkpoint networks do not fit together".into(),
            ));
        }
        Ok(Self {
            projector,
            discriminator,
            decoder,
            n_patches,
            patch_dim,
            known_classes,
            bank,
            disc_bank,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ShapeMismatch("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::ShapeMismatch("checkpoint sizes overflow".into()))?,
        )?;
        let v: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue("checkpoint parameter".into()));
        }
        Ok(v)
    }
}
