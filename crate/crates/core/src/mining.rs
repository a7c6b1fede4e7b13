//! Target-side pair mining and over-clustering.
//!
//! Positives and negatives for target contrast are chosen by comparing
//! distance profiles under the Manhattan distance. A jittered copy of each
//! batch member is added to the pool so every anchor has at least one true
//! positive. DBSCAN over the pooled embeddings proposes same-cluster and
//! different-cluster partners for the inpainting quadruplets.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{manhattan, sq_dist, DistanceProfile};

/// Label given to DBSCAN noise points.
pub const NOISE: i32 = -1;

/// Default number of negatives per anchor.
pub const DEFAULT_NEGATIVES: usize = 20;
/// Default DBSCAN radius.
pub const DEFAULT_EPS: f64 = 1.0;
pub const DEFAULT_MIN_PTS: usize = 4;

/// Batch members followed by one jittered copy of each.
#[derive(Debug, Clone)]
pub struct AugmentedPool {
    pub items: Vec<Vec<f64>>,
    /// Index of the batch member each pool item derives from.
    pub origin: Vec<usize>,
}

/// Appends `x + σ·N(0, I)` for every batch member.
pub fn augment<R: Rng>(batch: &[Vec<f64>], sigma: f64, rng: &mut R) -> AugmentedPool {
    debug_assert!(sigma >= 0.0);
    let mut items = batch.to_vec();
    for x in batch {
        let jittered = x
            .iter()
            .map(|v| {
                let n: f64 = rng.sample(StandardNormal);
                v + sigma * n
            })
            .collect();
        items.push(jittered);
    }
    let origin = (0..batch.len()).chain(0..batch.len()).collect();
    AugmentedPool { items, origin }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighbors {
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Positive and negatives for every pool member, indexed by anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborAssignment {
    pub per_anchor: Vec<Neighbors>,
}

/// For every anchor: the positive is the closest other profile, the
/// negatives the `m` farthest, ties resolved towards the lower index.
pub fn mine_neighbors(profiles: &[DistanceProfile], m: usize) -> Result<NeighborAssignment> {
    let n = profiles.len();
    if n < m + 2 {
        return Err(Error::PoolTooSmall {
            pool: n,
            negatives: m,
        });
    }
    let per_anchor = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Neighbors> {
            let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
            for j in (0..n).filter(|&j| j != i) {
                dist.push((manhattan(&profiles[i], &profiles[j])?, j));
            }
            let positive = dist
                .iter()
                .copied()
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, j)| j)
                .expect("pool has at least two members");
            dist.retain(|&(_, j)| j != positive);
            dist.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let negatives = dist.iter().take(m).map(|&(_, j)| j).collect();
            Ok(Neighbors {
                positive,
                negatives,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NeighborAssignment { per_anchor })
}

/// Density-based clustering with Euclidean neighbourhoods `‖x − y‖ ≤ eps`
/// (a point counts as its own neighbour). Clusters are numbered in the order
/// their first core point appears; border points join the first cluster that
/// reaches them; everything else is [`NOISE`].
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    debug_assert!(eps > 0.0 && min_pts >= 1);
    let n = points.len();
    let eps2 = eps * eps;
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| sq_dist(&points[i], &points[j]) <= eps2)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels = vec![None::<i32>; n];
    let mut next_cluster = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start].is_some() || !is_core[start] {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[start] = Some(cluster);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighborhoods[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    if is_core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(NOISE)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadruplet {
    pub anchor: usize,
    /// Patch removed from the anchor to form the masked sample.
    pub masked_patch: usize,
    pub similar: usize,
    pub different: usize,
}

/// Draws `n_quads` quadruplets from a clustering. Noise is never sampled;
/// the anchor comes from a cluster with at least two members.
pub fn sample_quadruplets<R: Rng>(
    labels: &[i32],
    n_patches: usize,
    n_quads: usize,
    rng: &mut R,
) -> Result<Vec<Quadruplet>> {
    let n_clusters = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            members[l as usize].push(i);
        }
    }
    let non_empty = members.iter().filter(|m| !m.is_empty()).count();
    if non_empty < 2 {
        return Err(Error::InsufficientClusters(format!(
            "{non_empty} non-noise clusters, need 2"
        )));
    }
    let anchors: Vec<usize> = members
        .iter()
        .filter(|m| m.len() >= 2)
        .flatten()
        .copied()
        .collect();
    if anchors.is_empty() {
        return Err(Error::InsufficientClusters(
            "no cluster has two members".into(),
        ));
    }
    if n_patches == 0 {
        return Err(Error::ShapeMismatch("samples have no patches".into()));
    }
    let non_noise: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    let mut quads = Vec::with_capacity(n_quads);
    for _ in 0..n_quads {
        let anchor = anchors[rng.gen_range(0..anchors.len())];
        let cluster = labels[anchor];
        let mates = &members[cluster as usize];
        let similar = loop {
            let c = mates[rng.gen_range(0..mates.len())];
            if c != anchor {
                break c;
            }
        };
        let outside: Vec<usize> = non_noise
            .iter()
            .copied()
            .filter(|&i| labels[i] != cluster)
            .collect();
        let different = outside[rng.gen_range(0..outside.len())];
        let masked_patch = rng.gen_range(0..n_patches);
        quads.push(Quadruplet {
            anchor,
            masked_patch,
            similar,
            different,
        });
    }
    Ok(quads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prof(v: &[f64]) -> DistanceProfile {
        DistanceProfile::new(v.to_vec()).unwrap()
    }

    #[test]
    fn augment_shapes_and_zero_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let pool = augment(&batch, 0.0, &mut rng);
        assert_eq!(pool.items.len(), 6);
        assert_eq!(pool.items[3..], batch[..]);
        assert_eq!(pool.origin, vec![0, 1, 2, 0, 1, 2]);
        let pool = augment(&batch, 0.1, &mut rng);
        assert_ne!(pool.items[3], batch[0]);
    }

    #[test]
    fn closest_profile_is_positive() {
        let profiles = vec![
            prof(&[1.0, 0.0]),
            prof(&[0.9, 0.1]),
            prof(&[0.1, 0.9]),
            prof(&[0.5, 0.5]),
        ];
        let a = mine_neighbors(&profiles, 2).unwrap();
        assert_eq!(a.per_anchor[0].positive, 1);
        assert_eq!(a.per_anchor[0].negatives, vec![2, 3]);
    }

    #[test]
    fn identical_profiles_use_lowest_index() {
        let profiles = vec![prof(&[0.5, 0.5]); 5];
        let a = mine_neighbors(&profiles, 2).unwrap();
        assert_eq!(a.per_anchor[0].positive, 1);
        assert_eq!(a.per_anchor[0].negatives, vec![2, 3]);
        assert_eq!(a.per_anchor[3].positive, 0);
        assert_eq!(a.per_anchor[3].negatives, vec![1, 2]);
    }

    #[test]
    fn pool_too_small() {
        let profiles = vec![prof(&[1.0]); 3];
        assert!(matches!(
            mine_neighbors(&profiles, 2),
            Err(Error::PoolTooSmall { pool: 3, .. })
        ));
    }

    #[test]
    fn dbscan_identical_points_form_one_cluster() {
        let pts = vec![vec![0.3, 0.3]; 6];
        assert_eq!(dbscan(&pts, 1.0, 4), vec![0; 6]);
    }

    #[test]
    fn dbscan_sparse_points_are_noise() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![2.0 * i as f64, 0.0]).collect();
        assert_eq!(dbscan(&pts, 1.0, 4), vec![NOISE; 5]);
    }

    #[test]
    fn dbscan_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(vec![0.1 * i as f64, 0.0]);
            pts.push(vec![10.0 + 0.1 * i as f64, 0.0]);
        }
        let labels = dbscan(&pts, 1.0, 4);
        assert!(labels.iter().all(|&l| l >= 0));
        for i in 0..5 {
            assert_eq!(labels[2 * i], labels[0]);
            assert_eq!(labels[2 * i + 1], labels[1]);
        }
        assert_ne!(labels[0], labels[1]);
    }

    #[test]
    fn dbscan_border_goes_to_first_cluster() {
        // 1.0 is a non-core point within reach of the cores at 0.0 and 2.0
        let pts: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 1.0, 2.0, 2.5, 3.0]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let labels = dbscan(&pts, 1.0, 4);
        assert_eq!(labels, vec![0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn forced_quadruplet() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels = vec![0, NOISE, 0, 1];
        let quads = sample_quadruplets(&labels, 16, 20, &mut rng).unwrap();
        for q in quads {
            assert!(q.anchor == 0 || q.anchor == 2);
            assert_eq!(q.similar, 2 - q.anchor);
            assert_eq!(q.different, 3);
            assert!(q.masked_patch < 16);
        }
    }

    #[test]
    fn single_cluster_is_insufficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_quadruplets(&[0, 0, 0, NOISE], 4, 1, &mut rng),
            Err(Error::InsufficientClusters(_))
        ));
        assert!(matches!(
            sample_quadruplets(&[0, 1, 2], 4, 1, &mut rng),
            Err(Error::InsufficientClusters(_))
        ));
    }
}
