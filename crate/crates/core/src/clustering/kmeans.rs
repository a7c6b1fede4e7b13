use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cosine, sq_dist};

pub const MAX_LLOYD_ITERS: usize = 100;
pub const DEFAULT_PIN_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PinOrigin {
    SourceLabel,
    ConfidentPseudo,
}

/// Samples whose cluster is fixed for the whole Lloyd run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PinSet {
    pins: BTreeMap<usize, (usize, PinOrigin)>,
}

impl PinSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Re-pinning a sample to the same cluster is a no-op; to another
    /// cluster it is an error.
    pub fn insert(&mut self, sample: usize, cluster: usize, origin: PinOrigin) -> Result<()> {
        match self.pins.get(&sample) {
            Some(&(c, _)) if c != cluster => Err(Error::InconsistentPins(format!(
                "sample {sample} pinned to both {c} and {cluster}"
            ))),
            Some(_) => Ok(()),
            None => {
                self.pins.insert(sample, (cluster, origin));
                Ok(())
            }
        }
    }

    pub fn get(&self, sample: usize) -> Option<usize> {
        self.pins.get(&sample).map(|&(c, _)| c)
    }

    pub fn origin(&self, sample: usize) -> Option<PinOrigin> {
        self.pins.get(&sample).map(|&(_, o)| o)
    }

    pub fn len(&self) -> usize {
        self.pins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pins.is_empty()
    }

    pub fn count(&self, origin: PinOrigin) -> usize {
        self.pins.values().filter(|&&(_, o)| o == origin).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, PinOrigin)> + '_ {
        self.pins.iter().map(|(&s, &(c, o))| (s, c, o))
    }
}

/// `(index, center)` for every embedding whose best cosine similarity to a
/// known center reaches `threshold`. Ties go to the lower center index.
pub fn confident_pseudo_pins(
    embeddings: &[Vec<f64>],
    centers: &[Vec<f64>],
    threshold: f64,
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    if centers.is_empty() {
        return Ok(out);
    }
    for (i, z) in embeddings.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, c) in centers.iter().enumerate() {
            let s = cosine(z, c)?;
            if s > best.0 {
                best = (s, k);
            }
        }
        if best.0 >= threshold {
            out.push((i, best.1));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub k: usize,
    /// Sum of squared distances to the assigned centers at exit.
    pub objective: f64,
    /// Objective after the initial assignment and after every Lloyd pass.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Seeds `k` centers: the given known centers first, the rest by k-means++
/// over unpinned samples (all samples when every one is pinned).
pub fn init_centers<R: Rng>(
    points: &[Vec<f64>],
    k: usize,
    known_centers: &[Vec<f64>],
    pins: &PinSet,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_k(points, k, known_centers)?;
    let mut centers: Vec<Vec<f64>> = known_centers.to_vec();
    let mut pool: Vec<usize> = (0..points.len())
        .filter(|&i| pins.get(i).is_none())
        .collect();
    if pool.is_empty() {
        pool = (0..points.len()).collect();
    }
    let mut d2: Vec<f64> = pool
        .iter()
        .map(|&i| nearest(&points[i], &centers).1)
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if centers.is_empty() || !(total > 0.0) {
            rng.gen_range(0..pool.len())
        } else {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = pool.len() - 1;
            for (j, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = j;
                    break;
                }
                r -= w;
            }
            chosen
        };
        let c = points[pool[pick]].clone();
        for (j, &i) in pool.iter().enumerate() {
            d2[j] = d2[j].min(sq_dist(&points[i], &c));
        }
        centers.push(c);
    }
    Ok(centers)
}

fn check_k(points: &[Vec<f64>], k: usize, known_centers: &[Vec<f64>]) -> Result<()> {
    if k == 0 || k < known_centers.len() || k > points.len() {
        return Err(Error::BadK(format!(
            "k = {k} with {} known centers and {} points",
            known_centers.len(),
            points.len()
        )));
    }
    Ok(())
}

/// Index of and squared distance to the closest center; lower index wins
/// ties. With no centers the distance is infinite.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd iterations with pinned samples, starting from `centers`.
pub fn ss_kmeans_from(
    points: &[Vec<f64>],
    pins: &PinSet,
    mut centers: Vec<Vec<f64>>,
) -> Result<ClusteringResult> {
    let k = centers.len();
    check_k(points, k, &[])?;
    for (s, c, _) in pins.iter() {
        if s >= points.len() || c >= k {
            return Err(Error::InconsistentPins(format!(
                "pin {s} -> {c} outside {} samples / {k} clusters",
                points.len()
            )));
        }
    }
    let dim = centers[0].len();
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        points
            .par_iter()
            .enumerate()
            .map(|(i, x)| pins.get(i).unwrap_or_else(|| nearest(x, centers).0))
            .collect()
    };
    let objective = |assignment: &[usize], centers: &[Vec<f64>]| -> f64 {
        points
            .iter()
            .zip(assignment)
            .map(|(x, &a)| sq_dist(x, &centers[a]))
            .sum()
    };

    let mut assignment = assign(&centers);
    let mut trace = vec![objective(&assignment, &centers)];
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                continue;
            }
            // reseed from the unpinned point farthest from its own center
            let far = (0..points.len())
                .filter(|&i| pins.get(i).is_none() && !taken[i])
                .map(|i| (i, sq_dist(&points[i], &centers[assignment[i]])))
                .fold(None, |best: Option<(usize, f64)>, cand| match best {
                    Some(b) if b.1 >= cand.1 => Some(b),
                    _ => Some(cand),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                centers[c] = points[i].clone();
            }
        }
        trace.push(objective(&assignment, &centers));
        let next = assign(&centers);
        for (s, c, _) in pins.iter() {
            assert_eq!(next[s], c, "pinned sample {s} left cluster {c}");
        }
        if next == assignment {
            break;
        }
        assignment = next;
        trace.push(objective(&assignment, &centers));
    }
    let objective = objective(&assignment, &centers);
    Ok(ClusteringResult {
        assignment,
        centers,
        k,
        objective,
        objective_trace: trace,
        iterations,
    })
}

/// Semi-supervised k-means: known centers first, k-means++ for the rest,
/// then Lloyd iterations that never move pinned samples.
pub fn ss_kmeans<R: Rng>(
    points: &[Vec<f64>],
    k: usize,
    known_centers: &[Vec<f64>],
    pins: &PinSet,
    rng: &mut R,
) -> Result<ClusteringResult> {
    let centers = init_centers(points, k, known_centers, pins, rng)?;
    ss_kmeans_from(points, pins, centers)
}

/// Unconstrained k-means with k-means++ seeding.
pub fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<ClusteringResult> {
    ss_kmeans(points, k, &[], &PinSet::new(), rng)
}
