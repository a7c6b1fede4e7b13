//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use adgcd::geometry::DistanceProfile;
use adgcd::mining::NOISE;

/// Minimum total cost over all permutations.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for c in 0..cost.len() {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, acc + cost[row][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}

/// Best matched count between two labelings over all injective maps from
/// clusters to classes.
pub fn brute_force_matches(assignment: &[usize], labels: &[i32]) -> usize {
    let mut clusters: Vec<usize> = assignment.to_vec();
    clusters.sort();
    clusters.dedup();
    let mut classes: Vec<i32> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let count = |c: usize, l: i32| {
        assignment
            .iter()
            .zip(labels)
            .filter(|&(&a, &b)| a == c && b == l)
            .count()
    };
    fn go(
        i: usize,
        clusters: &[usize],
        classes: &[i32],
        used: &mut Vec<bool>,
        count: &dyn Fn(usize, i32) -> usize,
    ) -> usize {
        if i == clusters.len() {
            return 0;
        }
        // cluster i may stay unmatched
        let mut best = go(i + 1, clusters, classes, used, count);
        for j in 0..classes.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(
                    count(clusters[i], classes[j]) + go(i + 1, clusters, classes, used, count),
                );
                used[j] = false;
            }
        }
        best
    }
    go(
        0,
        &clusters,
        &classes,
        &mut vec![false; classes.len()],
        &count,
    )
}

/// DBSCAN via union-find over core points; a border point joins the
/// adjacent core component with the smallest lowest core index.
pub fn naive_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let close = |i: usize, j: usize| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            <= eps * eps
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| close(i, j)).count() >= min_pts)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && close(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                // keep the smaller index as root
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut labels = vec![NOISE; n];
    let mut root_label = std::collections::BTreeMap::new();
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let next = root_label.len() as i32;
            labels[i] = *root_label.entry(r).or_insert(next);
        }
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let best_root = (0..n)
            .filter(|&j| core[j] && close(i, j))
            .map(|j| find(&mut parent, j))
            .min();
        if let Some(r) = best_root {
            labels[i] = root_label[&r];
        }
    }
    labels
}

/// Renumbers cluster ids by first appearance; noise stays noise.
pub fn canonical(labels: &[i32]) -> Vec<i32> {
    let mut map = std::collections::BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                l
            } else {
                let next = map.len() as i32;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

/// Positive and negatives of one anchor by exhaustive ranking.
pub fn brute_force_neighbors(
    profiles: &[DistanceProfile],
    anchor: usize,
    m: usize,
) -> (usize, Vec<usize>) {
    let dist = |j: usize| -> f64 {
        profiles[anchor]
            .probs
            .iter()
            .zip(&profiles[j].probs)
            .map(|(a, b)| (a - b).abs())
            .sum()
    };
    let mut others: Vec<(f64, usize)> = (0..profiles.len())
        .filter(|&j| j != anchor)
        .map(|j| (dist(j), j))
        .collect();
    others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let positive = others[0].1;
    let mut rest: Vec<(f64, usize)> = others[1..].to_vec();
    rest.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    (positive, rest.iter().take(m).map(|x| x.1).collect())
}

/// Textbook Lloyd iterations from given centers without pins. An empty
/// cluster keeps its center. Returns the objective, the final assignment and
/// whether any cluster was ever empty.
pub fn reference_lloyd(
    points: &[Vec<f64>],
    mut centers: Vec<Vec<f64>>,
    max_iter: usize,
) -> (f64, Vec<usize>, bool) {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (k, c) in centers.iter().enumerate() {
                    let d = sq(p, c);
                    if d < best.1 {
                        best = (k, d);
                    }
                }
                best.0
            })
            .collect()
    };
    let mut a = assign(&centers);
    let mut went_empty = false;
    for _ in 0..max_iter {
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&a)
                .filter(|(_, &x)| x == k)
                .map(|(p, _)| p)
                .collect();
            went_empty |= members.is_empty();
            if !members.is_empty() {
                for d in 0..c.len() {
                    c[d] = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let next = assign(&centers);
        if next == a {
            break;
        }
        a = next;
    }
    let objective = points
        .iter()
        .zip(&a)
        .map(|(p, &k)| sq(p, &centers[k]))
        .sum();
    (objective, a, went_empty)
}
