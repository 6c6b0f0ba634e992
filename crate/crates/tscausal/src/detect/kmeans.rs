//! One-dimensional k-means clustering used to separate causal from
//! non-causal relevance scores, plus the edge selection built on it.

use crate::error::{Error, Result};
use crate::seeds;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Result of a 1-D k-means run.
#[derive(Debug, Clone)]
pub struct Clustering {
    /// Cluster index per input value.
    pub assignments: Vec<usize>,
    /// Final centroids (one per effective cluster).
    pub centroids: Vec<f64>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
}

/// Outcome of thresholding scores into edge sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSelection {
    /// Indices whose scores fall in the top classes, ascending.
    pub sources: Vec<usize>,
    /// Number of clusters actually realized (may be fewer than asked
    /// for when the scores carry fewer distinct values).
    pub effective_classes: usize,
    /// True when the scores could not support the requested clustering
    /// (fewer distinct values than classes, e.g. all-equal scores).
    pub degenerate: bool,
}

fn lloyd(values: &[f64], mut centroids: Vec<f64>, max_iters: usize) -> Clustering {
    let k = centroids.len();
    let mut assignments = vec![0usize; values.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, &v) in values.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, &centre) in centroids.iter().enumerate() {
                let d = (v - centre) * (v - centre);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&a, &v) in assignments.iter().zip(values) {
            sums[a] += v;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = values
        .iter()
        .zip(&assignments)
        .map(|(&v, &a)| (v - centroids[a]) * (v - centroids[a]))
        .sum();
    Clustering {
        assignments,
        centroids,
        inertia,
    }
}

/// Cluster scalar `values` into at most `k` groups.
///
/// Runs 10 restarts of Lloyd's algorithm — one seeded from quantiles of
/// the distinct values, nine from seeded random draws of distinct values
/// — and keeps the lowest-inertia result. When the data holds fewer than
/// `k` distinct values the effective cluster count shrinks to match.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64, max_iters: usize) -> Result<Clustering> {
    if values.is_empty() {
        return Err(Error::arg("kmeans_1d got no values".to_string()));
    }
    if k == 0 {
        return Err(Error::arg("kmeans_1d needs at least one cluster".to_string()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::arg(format!("kmeans_1d got non-finite value {bad}")));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    distinct.dedup();
    let k_eff = k.min(distinct.len());
    if k_eff == 1 {
        let centre = values.iter().sum::<f64>() / values.len() as f64;
        return Ok(lloyd(values, vec![centre], 1));
    }

    let mut best: Option<Clustering> = None;
    for restart in 0..10u64 {
        let init: Vec<f64> = if restart == 0 {
            // Quantile spread over the distinct values.
            (0..k_eff)
                .map(|r| {
                    let pos = (2 * r + 1) * distinct.len() / (2 * k_eff);
                    distinct[pos.min(distinct.len() - 1)]
                })
                .collect()
        } else {
            let mut rng = ChaCha12Rng::seed_from_u64(seeds::derive(seed, restart));
            let mut pool = distinct.clone();
            pool.shuffle(&mut rng);
            pool.truncate(k_eff);
            pool
        };
        let run = lloyd(values, init, max_iters);
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart ran"))
}

/// Partition `scores` into `classes` clusters and keep the indices in
/// the union of the `top` highest-centroid clusters.
pub fn select_edges(
    scores: &[f64],
    classes: usize,
    top: usize,
    seed: u64,
    max_iters: usize,
) -> Result<EdgeSelection> {
    if classes == 0 || top == 0 || top > classes {
        return Err(Error::arg(format!(
            "edge selection needs 1 ≤ top ≤ classes, got top={top}, classes={classes}"
        )));
    }
    let clustering = kmeans_1d(scores, classes, seed, max_iters)?;
    let k_eff = clustering.centroids.len();
    let degenerate = k_eff < classes;

    // Rank clusters by centroid, highest first.
    let mut order: Vec<usize> = (0..k_eff).collect();
    order.sort_by(|&a, &b| {
        clustering.centroids[b]
            .partial_cmp(&clustering.centroids[a])
            .expect("finite centroids")
    });
    let keep: Vec<usize> = order.into_iter().take(top.min(k_eff)).collect();
    let mut sources: Vec<usize> = clustering
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, a)| keep.contains(a))
        .map(|(i, _)| i)
        .collect();
    sources.sort_unstable();
    Ok(EdgeSelection {
        sources,
        effective_classes: k_eff,
        degenerate,
    })
}

/// Map the peak slot of a kernel-relevance slice to a causal delay.
///
/// Slice position `t` (0-based) corresponds to lag `T−1−t`: the final
/// slot multiplies the current sample (delay 0), the first slot the
/// oldest one (delay T−1). Ties resolve toward the most recent slot,
/// i.e. the smallest delay.
pub fn delay_of(slice: &[f64]) -> Result<u32> {
    if slice.is_empty() {
        return Err(Error::arg("delay_of got an empty slice".to_string()));
    }
    let mut best = 0usize;
    for (t, &v) in slice.iter().enumerate() {
        if v >= slice[best] {
            best = t;
        }
    }
    Ok((slice.len() - 1 - best) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_well_separated_groups() {
        let scores = [0.9, 0.85, 0.10, 0.05];
        let sel = select_edges(&scores, 2, 1, 7, 100).unwrap();
        assert_eq!(sel.sources, vec![0, 1]);
        assert_eq!(sel.effective_classes, 2);
        assert!(!sel.degenerate);
    }

    #[test]
    fn top_two_of_three_classes() {
        let scores = [1.0, 0.95, 0.5, 0.45, 0.02, 0.01];
        let sel = select_edges(&scores, 3, 2, 7, 100).unwrap();
        assert_eq!(sel.sources, vec![0, 1, 2, 3]);
        assert_eq!(sel.effective_classes, 3);
    }

    #[test]
    fn all_equal_scores_degenerate_to_one_class() {
        let scores = [0.3; 5];
        let sel = select_edges(&scores, 2, 1, 7, 100).unwrap();
        assert_eq!(sel.sources, vec![0, 1, 2, 3, 4]);
        assert_eq!(sel.effective_classes, 1);
        assert!(sel.degenerate);
    }

    #[test]
    fn single_value_is_degenerate_but_selected() {
        let sel = select_edges(&[0.7], 2, 1, 7, 100).unwrap();
        assert_eq!(sel.sources, vec![0]);
        assert!(sel.degenerate);
    }

    #[test]
    fn clustering_is_deterministic_per_seed() {
        let values: Vec<f64> = (0..40)
            .map(|i| if i % 3 == 0 { 1.0 + 0.01 * i as f64 } else { 0.01 * i as f64 })
            .collect();
        let a = kmeans_1d(&values, 2, 42, 100).unwrap();
        let b = kmeans_1d(&values, 2, 42, 100).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn restarts_recover_obvious_split() {
        // Two tight groups far apart: the optimum puts one centroid in
        // each; inertia is the within-group spread only.
        let mut values = vec![10.0, 10.1, 10.2];
        values.extend([0.0, 0.1, 0.2]);
        let c = kmeans_1d(&values, 2, 1, 100).unwrap();
        let mut centroids = c.centroids.clone();
        centroids.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centroids[0] - 0.1).abs() < 1e-12);
        assert!((centroids[1] - 10.1).abs() < 1e-12);
        assert!(c.inertia < 0.05);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(kmeans_1d(&[], 2, 0, 100).is_err());
        assert!(kmeans_1d(&[1.0], 0, 0, 100).is_err());
        assert!(kmeans_1d(&[f64::NAN], 1, 0, 100).is_err());
        assert!(select_edges(&[1.0, 2.0], 2, 0, 0, 100).is_err());
        assert!(select_edges(&[1.0, 2.0], 2, 3, 0, 100).is_err());
    }

    #[test]
    fn delay_reads_peak_position_from_the_right() {
        // T = 4: last slot is delay 0, first is delay 3.
        assert_eq!(delay_of(&[0.0, 0.0, 0.0, 9.0]).unwrap(), 0);
        assert_eq!(delay_of(&[9.0, 0.0, 0.0, 0.0]).unwrap(), 3);
        assert_eq!(delay_of(&[0.0, 7.0, 0.1, 0.2]).unwrap(), 2);
        // Tie resolves to the most recent slot (smallest delay).
        assert_eq!(delay_of(&[5.0, 1.0, 5.0, 2.0]).unwrap(), 1);
        assert!(delay_of(&[]).is_err());
    }
}
