//! Datasets of patch-structured feature vectors, their on-disk formats and
//! a synthetic cross-domain benchmark generator.
//!
//! A [`Sample`] is an `n_patches × patch_dim` block of features (stored as
//! `f32`, sample-major / patch-major / feature-minor, exactly as on disk), an
//! optional class label and a domain tag. A [`Dataset`] groups samples of one
//! shape together with the known-class set and free-form metadata.

mod csv_format;
mod gcde;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gcde::{from_gcde_bytes, to_gcde_bytes};
pub use synthetic::{
    generate_synthetic, generate_synthetic_detailed, DomainShift, SyntheticConfig, SyntheticOutput,
    SyntheticTruth,
};

/// Label value for samples without a class label.
pub const UNLABELED: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major `n_patches × patch_dim` features.
    pub patches: Vec<f32>,
    pub label: i32,
    pub domain: Domain,
}

impl Sample {
    pub fn new(patches: Vec<f32>, label: i32, domain: Domain) -> Self {
        Self {
            patches,
            label,
            domain,
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.label != UNLABELED
    }

    pub fn patch(&self, index: usize, patch_dim: usize) -> &[f32] {
        &self.patches[index * patch_dim..(index + 1) * patch_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_patches: usize,
    pub patch_dim: usize,
    /// Sorted, de-duplicated known class ids.
    pub known_classes: Vec<i32>,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(
        samples: Vec<Sample>,
        n_patches: usize,
        patch_dim: usize,
        known_classes: impl IntoIterator<Item = i32>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let known_classes: Vec<i32> = known_classes
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let ds = Self {
            samples,
            n_patches,
            patch_dim,
            known_classes,
            metadata,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features_per_sample(&self) -> usize {
        self.n_patches * self.patch_dim
    }

    pub fn labels(&self) -> Vec<i32> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn has_labels(&self) -> bool {
        self.samples.iter().any(Sample::is_labeled)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patches == 0 || self.patch_dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "n_patches={} patch_dim={} must both be positive",
                self.n_patches, self.patch_dim
            )));
        }
        let width = self.features_per_sample();
        for (i, s) in self.samples.iter().enumerate() {
            if s.patches.len() != width {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} has {} features, expected {width}",
                    s.patches.len()
                )));
            }
            if let Some(j) = s.patches.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("sample {i}, feature {j}")));
            }
            if s.label < UNLABELED {
                return Err(Error::MalformedHeader(format!(
                    "sample {i} has invalid label {}",
                    s.label
                )));
            }
            if s.domain == Domain::Source && self.known_classes.binary_search(&s.label).is_err() {
                return Err(Error::MalformedHeader(format!(
                    "source sample {i} has label {} outside the known classes",
                    s.label
                )));
            }
        }
        for (k, v) in &self.metadata {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::MalformedHeader(format!(
                    "metadata entry {k:?} cannot be encoded"
                )));
            }
            if k.starts_with(gcde::RESERVED_PREFIX) {
                return Err(Error::MalformedHeader(format!(
                    "metadata key {k:?} uses the reserved prefix"
                )));
            }
        }
        Ok(())
    }

    /// Input-layer view of one sample, widened to `f64`.
    pub fn features_f64(&self, index: usize) -> Vec<f64> {
        self.samples[index]
            .patches
            .iter()
            .map(|&v| v as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Gcde,
    Csv,
}

impl Format {
    /// `.csv` files are CSV; everything else is treated as GCDE.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Gcde,
        }
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    match format {
        Format::Gcde => from_gcde_bytes(&std::fs::read(path)?),
        Format::Csv => csv_format::read_csv(std::fs::File::open(path)?),
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Gcde => {
            let bytes = to_gcde_bytes(ds)?;
            std::fs::write(path, bytes)?;
        }
        Format::Csv => {
            let file = std::fs::File::create(path)?;
            csv_format::write_csv(ds, file)?;
        }
    }
    Ok(())
}

/// Partitions target indices into known-class (`old`) and novel (`new`)
/// subsets. Requires every sample to carry a label.
pub fn split_subsets(target: &Dataset, known: &[i32]) -> Result<(Vec<usize>, Vec<usize>)> {
    split_labels(&target.labels(), known)
}

pub(crate) fn split_labels(labels: &[i32], known: &[i32]) -> Result<(Vec<usize>, Vec<usize>)> {
    let known: BTreeSet<i32> = known.iter().copied().collect();
    let mut old = Vec::new();
    let mut new = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        if label == UNLABELED {
            return Err(Error::MissingLabels(format!(
                "target sample {i} is unlabeled"
            )));
        }
        if known.contains(&label) {
            old.push(i);
        } else {
            new.push(i);
        }
    }
    Ok((old, new))
}
