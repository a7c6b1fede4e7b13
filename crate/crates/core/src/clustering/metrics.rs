use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use crate::dataio::split_labels;
use crate::error::{Error, Result};

/// Matched clustering accuracy on a target set.
///
/// Old and New are restricted to known- and novel-class samples under the
/// single matching found on the whole set; an empty subset reports 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcdMetrics {
    pub all: f64,
    pub old: f64,
    pub new: f64,
    pub n_old: usize,
    pub n_new: usize,
    /// Cluster id to class label, only for clusters matched to a real class.
    pub matching: BTreeMap<usize, i32>,
}

pub fn gcd_accuracy(assignment: &[usize], labels: &[i32], known: &[i32]) -> Result<GcdMetrics> {
    if assignment.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} assignments for {} labels",
            assignment.len(),
            labels.len()
        )));
    }
    if assignment.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (old_idx, new_idx) = split_labels(labels, known)?;

    let clusters: Vec<usize> = sorted_unique(assignment.iter().copied());
    let classes: Vec<i32> = sorted_unique(labels.iter().copied());
    let n = clusters.len().max(classes.len());
    let mut contingency = vec![vec![0.0; n]; n];
    for (&a, &l) in assignment.iter().zip(labels) {
        let r = clusters.binary_search(&a).expect("cluster listed");
        let c = classes.binary_search(&l).expect("class listed");
        contingency[r][c] += 1.0;
    }
    // rows in an order fixed by their counts, so that the choice among
    // equally good matchings does not depend on the cluster ids
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        contingency[b]
            .partial_cmp(&contingency[a])
            .expect("finite counts")
    });
    let cost: Vec<Vec<f64>> = order
        .iter()
        .map(|&r| contingency[r].iter().map(|&x| -x).collect())
        .collect();
    let m = hungarian(&cost)?;
    let matching: BTreeMap<usize, i32> = m
        .row_to_col
        .iter()
        .enumerate()
        .map(|(i, &c)| (order[i], c))
        .filter(|&(r, c)| r < clusters.len() && c < classes.len())
        .map(|(r, c)| (clusters[r], classes[c]))
        .collect();

    let hit = |i: usize| matching.get(&assignment[i]) == Some(&labels[i]);
    let frac = |idx: &[usize]| {
        if idx.is_empty() {
            0.0
        } else {
            idx.iter().filter(|&&i| hit(i)).count() as f64 / idx.len() as f64
        }
    };
    let all = (0..labels.len()).filter(|&i| hit(i)).count() as f64 / labels.len() as f64;
    Ok(GcdMetrics {
        all,
        old: frac(&old_idx),
        new: frac(&new_idx),
        n_old: old_idx.len(),
        n_new: new_idx.len(),
        matching,
    })
}

fn sorted_unique<T: Ord>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = it.collect();
    v.sort();
    v.dedup();
    v
}

/// Area under the ROC curve of `scores` for separating positives from
/// negatives; tied scores count one half.
pub fn auroc(positive_scores: &[f64], negative_scores: &[f64]) -> Result<f64> {
    if positive_scores.is_empty() || negative_scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if positive_scores
        .iter()
        .chain(negative_scores)
        .any(|s| !s.is_finite())
    {
        return Err(Error::NonFiniteValue("auroc score".into()));
    }
    // rank-sum with average ranks over ties
    let mut all: Vec<(f64, bool)> = positive_scores
        .iter()
        .map(|&s| (s, true))
        .chain(negative_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += avg_rank * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let np = positive_scores.len() as f64;
    let nn = negative_scores.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}
