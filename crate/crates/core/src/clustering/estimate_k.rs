use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{ss_kmeans, ClusteringResult, PinOrigin, PinSet};
use super::metrics::gcd_accuracy;
use crate::error::{Error, Result};

/// Desk-scale upper bound for the K search.
pub const DEFAULT_K_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KMethod {
    Brent,
    Elbow,
}

impl std::str::FromStr for KMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brent" => Ok(Self::Brent),
            "elbow" => Ok(Self::Elbow),
            other => Err(Error::InvalidConfig(format!("unknown K method `{other}`"))),
        }
    }
}

impl std::fmt::Display for KMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Brent => "brent",
            Self::Elbow => "elbow",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub k: usize,
    pub method: KMethod,
    /// Every K evaluated with its score (Brent) or objective (Elbow).
    pub probes: BTreeMap<usize, f64>,
}

/// Per-class means of the source-label pins; classes must be `0..n`.
pub fn known_centers(points: &[Vec<f64>], pins: &PinSet) -> Result<Vec<Vec<f64>>> {
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (s, c, o) in pins.iter() {
        if o != PinOrigin::SourceLabel {
            continue;
        }
        let x = points.get(s).ok_or_else(|| {
            Error::InconsistentPins(format!("pin {s} outside {} samples", points.len()))
        })?;
        let e = sums.entry(c).or_insert_with(|| (vec![0.0; x.len()], 0));
        for (a, v) in e.0.iter_mut().zip(x) {
            *a += v;
        }
        e.1 += 1;
    }
    if sums.keys().enumerate().any(|(i, &c)| i != c) {
        return Err(Error::InconsistentPins(
            "source pins must cover clusters 0..n_known".into(),
        ));
    }
    Ok(sums
        .into_values()
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect())
}

/// k-means++ restarts per evaluated K; the lowest objective is kept.
pub const K_RESTARTS: usize = 5;

/// Best of [`K_RESTARTS`] clusterings, all drawn from one stream per K so a
/// probe's result does not depend on which other K were evaluated.
fn best_clustering(
    points: &[Vec<f64>],
    k: usize,
    centers: &[Vec<f64>],
    pins: &PinSet,
    seed: u64,
) -> Result<ClusteringResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let mut best: Option<ClusteringResult> = None;
    for _ in 0..K_RESTARTS {
        let r = ss_kmeans(points, k, centers, pins, &mut rng)?;
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Chooses the number of clusters in `range` (inclusive).
///
/// Brent maximises held-out accuracy on half of the source pins (every
/// other pinned sample of each class is released and scored). Elbow sweeps
/// the whole range and takes the K with the largest second difference of the
/// clustering objective.
pub fn estimate_k(
    points: &[Vec<f64>],
    pins: &PinSet,
    range: (usize, usize),
    method: KMethod,
    seed: u64,
) -> Result<KEstimate> {
    let (lo, hi) = range;
    if lo > hi || lo == 0 {
        return Err(Error::EmptyRange(lo, hi));
    }
    let centers = known_centers(points, pins)?;
    if lo < centers.len() || hi > points.len() {
        return Err(Error::BadK(format!(
            "range [{lo}, {hi}] outside [{}, {}]",
            centers.len(),
            points.len()
        )));
    }
    let (k, probes) = match method {
        KMethod::Brent => brent_search(points, pins, lo, hi, seed)?,
        KMethod::Elbow => elbow_search(points, pins, &centers, lo, hi, seed)?,
    };
    Ok(KEstimate { k, method, probes })
}

/// Releases every other source pin of each class, starting at `parity`.
/// A class with a single source pin always keeps it.
fn hold_out(pins: &PinSet, parity: usize) -> Result<(PinSet, Vec<(usize, usize)>)> {
    let mut total: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, c, o) in pins.iter() {
        if o == PinOrigin::SourceLabel {
            *total.entry(c).or_insert(0) += 1;
        }
    }
    let mut kept = PinSet::new();
    let mut held = Vec::new();
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    for (s, c, o) in pins.iter() {
        if o == PinOrigin::SourceLabel {
            let n = seen.entry(c).or_insert(0);
            *n += 1;
            if *n % 2 == parity && total[&c] > 1 {
                held.push((s, c));
                continue;
            }
        }
        kept.insert(s, c, o)?;
    }
    Ok((kept, held))
}

fn held_out_score(
    points: &[Vec<f64>],
    kept: &PinSet,
    centers: &[Vec<f64>],
    held: &[(usize, usize)],
    k: usize,
    seed: u64,
) -> Result<f64> {
    if held.is_empty() {
        return Err(Error::MissingLabels("no source pins to hold out".into()));
    }
    let r = best_clustering(points, k, centers, kept, seed)?;
    let assignment: Vec<usize> = held.iter().map(|&(s, _)| r.assignment[s]).collect();
    let labels: Vec<i32> = held.iter().map(|&(_, c)| c as i32).collect();
    Ok(gcd_accuracy(&assignment, &labels, &labels)?.all)
}

fn brent_search(
    points: &[Vec<f64>],
    pins: &PinSet,
    lo: usize,
    hi: usize,
    seed: u64,
) -> Result<(usize, BTreeMap<usize, f64>)> {
    let folds = [0, 1]
        .into_iter()
        .map(|parity| {
            let (kept, held) = hold_out(pins, parity)?;
            let centers = known_centers(points, &kept)?;
            Ok((kept, centers, held))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut probes: BTreeMap<usize, f64> = BTreeMap::new();
    let mut err = None;
    let mut score = |k: usize| -> f64 {
        if let Some(&s) = probes.get(&k) {
            return s;
        }
        let s = folds
            .iter()
            .map(|(kept, centers, held)| held_out_score(points, kept, centers, held, k, seed))
            .sum::<Result<f64>>()
            .map(|s| s / folds.len() as f64);
        match s {
            Ok(s) => {
                probes.insert(k, s);
                s
            }
            Err(e) => {
                err.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    };
    let mut f = |x: f64| -> f64 { -score((x.round() as usize).clamp(lo, hi)) };
    brent_minimize(&mut f, lo as f64, hi as f64, 0.5, 50);
    if let Some(e) = err {
        return Err(e);
    }
    // best score; ties go to the larger K since merging novel samples into
    // known clusters leaves the held-out score unchanged
    let best = probes
        .iter()
        .fold(
            (lo, f64::NEG_INFINITY),
            |b, (&k, &s)| if s >= b.1 { (k, s) } else { b },
        )
        .0;
    Ok((best, probes))
}

fn elbow_search(
    points: &[Vec<f64>],
    pins: &PinSet,
    centers: &[Vec<f64>],
    lo: usize,
    hi: usize,
    seed: u64,
) -> Result<(usize, BTreeMap<usize, f64>)> {
    let objectives = (lo..=hi)
        .into_par_iter()
        .map(|k| best_clustering(points, k, centers, pins, seed).map(|r| (k, r.objective)))
        .collect::<Result<Vec<_>>>()?;
    let best = if objectives.len() < 3 {
        lo
    } else {
        let mut best = (objectives[1].0, f64::NEG_INFINITY);
        for w in objectives.windows(3) {
            let curvature = w[0].1 - 2.0 * w[1].1 + w[2].1;
            if curvature > best.1 {
                best = (w[1].0, curvature);
            }
        }
        best.0
    };
    Ok((best, objectives.into_iter().collect()))
}

/// Brent's derivative-free minimiser on `[a, b]` (golden section steps with
/// parabolic interpolation). Returns the best abscissa seen.
pub fn brent_minimize<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    xtol: f64,
    max_iter: usize,
) -> (f64, f64) {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = xtol;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}
