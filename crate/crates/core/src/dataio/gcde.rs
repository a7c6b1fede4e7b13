//! GCDE binary layout (all integers little-endian):
//!
//! ```text
//! "GCDE" | u32 version=1 | u32 n_samples | u32 n_patches | u32 patch_dim
//! | u8 has_labels | u32 metadata_len | metadata (UTF-8)
//! | f32 features, sample-major / patch-major / feature-minor
//! | i32 labels (only when has_labels = 1)
//! ```
//!
//! Metadata is a sequence of `key=value\n` lines sorted by key. Besides the
//! user's entries it carries the reserved `gcde.*` keys for the domain tags
//! and the known-class set. Only this canonical form is accepted, which makes
//! `to_gcde_bytes(from_gcde_bytes(f)) == f` hold for every readable file.

use std::collections::BTreeMap;

use super::{Dataset, Domain, Sample, UNLABELED};
use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 4] = b"GCDE";
pub(crate) const VERSION: u32 = 1;
pub(crate) const RESERVED_PREFIX: &str = "gcde.";

const KEY_DOMAIN: &str = "gcde.domain";
const KEY_DOMAINS: &str = "gcde.domains";
const KEY_KNOWN: &str = "gcde.known_classes";

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::Source => "source",
        Domain::Target => "target",
    }
}

fn encode_metadata(ds: &Dataset) -> String {
    let mut entries: BTreeMap<&str, String> = ds
        .metadata
        .iter()
        .map(|(k, v)| (k.as_str(), v.clone()))
        .collect();
    let first = ds.samples.first().map_or(Domain::Target, |s| s.domain);
    if ds.samples.iter().all(|s| s.domain == first) {
        entries.insert(KEY_DOMAIN, domain_name(first).to_string());
    } else {
        entries.insert(KEY_DOMAIN, "mixed".to_string());
        let tags = ds
            .samples
            .iter()
            .map(|s| match s.domain {
                Domain::Source => 'S',
                Domain::Target => 'T',
            })
            .collect();
        entries.insert(KEY_DOMAINS, tags);
    }
    if !ds.known_classes.is_empty() {
        let known: Vec<String> = ds.known_classes.iter().map(i32::to_string).collect();
        entries.insert(KEY_KNOWN, known.join(","));
    }
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(k);
        text.push('=');
        text.push_str(&v);
        text.push('\n');
    }
    text
}

pub fn to_gcde_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let metadata = encode_metadata(ds);
    let has_labels = ds.has_labels();
    let width = ds.features_per_sample();
    let mut out = Vec::with_capacity(
        25 + metadata.len() + ds.len() * (4 * width + if has_labels { 4 } else { 0 }),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [ds.len(), ds.n_patches, ds.patch_dim] {
        let n = u32::try_from(n)
            .map_err(|_| Error::ShapeMismatch(format!("{n} does not fit in u32")))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    out.push(u8::from(has_labels));
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    for s in &ds.samples {
        for v in &s.patches {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if has_labels {
        for s in &ds.samples {
            out.extend_from_slice(&s.label.to_le_bytes());
        }
    }
    Ok(out)
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
            .ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "file truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode_metadata(
    text: &str,
    n_samples: usize,
) -> Result<(BTreeMap<String, String>, Vec<Domain>, Vec<i32>)> {
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::MalformedHeader(
            "metadata must end with a newline".into(),
        ));
    }
    let mut user = BTreeMap::new();
    let mut previous: Option<&str> = None;
    let mut domain = None;
    let mut domains = None;
    let mut known = Vec::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("metadata line {line:?} lacks '='")))?;
        if k.is_empty() || previous.is_some_and(|p| p >= k) {
            return Err(Error::MalformedHeader(
                "metadata keys must be non-empty and strictly sorted".into(),
            ));
        }
        previous = Some(k);
        match k {
            KEY_DOMAIN => domain = Some(v),
            KEY_DOMAINS => domains = Some(v),
            KEY_KNOWN => {
                known = v
                    .split(',')
                    .map(|t| t.parse::<i32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::MalformedHeader(format!("known classes: {e}")))?;
                if known.is_empty() || known.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::MalformedHeader(
                        "known classes must be sorted and unique".into(),
                    ));
                }
            }
            _ if k.starts_with(RESERVED_PREFIX) => {
                return Err(Error::MalformedHeader(format!(
                    "unknown reserved key {k:?}"
                )));
            }
            _ => {
                user.insert(k.to_string(), v.to_string());
            }
        }
    }
    let tags = match (domain, domains) {
        (Some("source"), None) => vec![Domain::Source; n_samples],
        (Some("target"), None) => vec![Domain::Target; n_samples],
        (Some("mixed"), Some(tags)) => {
            let tags: Vec<Domain> = tags
                .chars()
                .map(|c| match c {
                    'S' => Ok(Domain::Source),
                    'T' => Ok(Domain::Target),
                    other => Err(Error::MalformedHeader(format!("domain tag {other:?}"))),
                })
                .collect::<Result<_>>()?;
            let uniform = tags.windows(2).all(|w| w[0] == w[1]);
            if tags.len() != n_samples || uniform {
                return Err(Error::MalformedHeader(
                    "per-sample domain tags do not match the sample count".into(),
                ));
            }
            tags
        }
        _ => {
            return Err(Error::MalformedHeader(
                "missing or inconsistent domain metadata".into(),
            ))
        }
    };
    Ok((user, tags, known))
}

pub fn from_gcde_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r
        .take(4)
        .map_err(|_| Error::MalformedHeader("file shorter than the magic".into()))?;
    if magic != MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnknownVersion(version));
    }
    let n_samples = r.u32()? as usize;
    let n_patches = r.u32()? as usize;
    let patch_dim = r.u32()? as usize;
    if n_patches == 0 || patch_dim == 0 {
        return Err(Error::MalformedHeader(
            "n_patches and patch_dim must be positive".into(),
        ));
    }
    let has_labels = match r.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::MalformedHeader(format!("has_labels flag {other}"))),
    };
    let metadata_len = r.u32()? as usize;
    let metadata = std::str::from_utf8(r.take(metadata_len)?)
        .map_err(|e| Error::MalformedHeader(format!("metadata is not UTF-8: {e}")))?;
    let (user, domains, known) = decode_metadata(metadata, n_samples)?;

    let width = n_patches
        .checked_mul(patch_dim)
        .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
    let label_bytes = if has_labels { 4 * n_samples } else { 0 };
    let expected = n_samples
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(label_bytes))
        .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
    if bytes.len() - r.pos != expected {
        return Err(Error::ShapeMismatch(format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len() - r.pos
        )));
    }
    let data = r.take(4 * n_samples * width)?;
    let mut samples = Vec::with_capacity(n_samples);
    for (i, chunk) in data.chunks_exact(4 * width).enumerate() {
        let patches: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(Sample::new(patches, UNLABELED, domains[i]));
    }
    if has_labels {
        let labels = r.take(label_bytes)?;
        for (s, b) in samples.iter_mut().zip(labels.chunks_exact(4)) {
            s.label = i32::from_le_bytes(b.try_into().unwrap());
        }
        if samples.iter().all(|s| !s.is_labeled()) {
            return Err(Error::MalformedHeader(
                "has_labels is set but every label is -1".into(),
            ));
        }
    }
    Dataset::new(samples, n_patches, patch_dim, known, user)
}
