//! Seeded k-means over embedded nodes: k-means++ initialization followed by
//! Lloyd iterations, fully deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DiffusionError, Embedding};

/// Lloyd iteration cap; assignments almost always stabilize much earlier.
pub const MAX_KMEANS_ITERS: usize = 300;

/// Result of a k-means run over `n` embedded points.
#[derive(Debug, Clone)]
pub struct ClusterLabels {
    k: usize,
    dim: usize,
    labels: Vec<u32>,
    /// Row-major `k × dim`.
    centroids: Vec<f64>,
    inertia: f64,
    iterations: usize,
}

impl ClusterLabels {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Sum of squared distances from each point to its centroid.
    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Number of points assigned to cluster `c`.
    pub fn cluster_size(&self, c: usize) -> usize {
        self.labels.iter().filter(|&&l| l as usize == c).count()
    }

    /// Relabels clusters through a permutation (`new id = perm[old id]`),
    /// moving centroids accordingly. Used to impose a canonical order.
    pub fn remap(&self, perm: &[u32]) -> ClusterLabels {
        assert_eq!(perm.len(), self.k);
        let mut seen = vec![false; self.k];
        for &p in perm {
            assert!((p as usize) < self.k && !seen[p as usize], "not a permutation");
            seen[p as usize] = true;
        }
        let labels = self.labels.iter().map(|&l| perm[l as usize]).collect();
        let mut centroids = vec![0.0; self.k * self.dim];
        for old in 0..self.k {
            let new = perm[old] as usize;
            centroids[new * self.dim..(new + 1) * self.dim]
                .copy_from_slice(&self.centroids[old * self.dim..(old + 1) * self.dim]);
        }
        ClusterLabels {
            k: self.k,
            dim: self.dim,
            labels,
            centroids,
            inertia: self.inertia,
            iterations: self.iterations,
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters the embedded nodes into `k` groups.
///
/// Initialization is k-means++ driven by a seeded generator; Lloyd updates
/// assign ties to the lowest cluster index and re-seed any emptied cluster
/// to the point farthest from its current centroid, so runs are repeatable
/// bit for bit.
pub fn kmeans(embedding: &Embedding, k: usize, seed: u64) -> Result<ClusterLabels, DiffusionError> {
    let n = embedding.n();
    let dim = embedding.omega();
    if k == 0 || k > n {
        return Err(DiffusionError::BadK { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids = vec![0.0; k * dim];
    let first = rng.gen_range(0..n);
    centroids[..dim].copy_from_slice(embedding.point(first));
    let mut seed_dist: Vec<f64> = (0..n)
        .map(|i| dist2(embedding.point(i), &centroids[..dim]))
        .collect();
    for c in 1..k {
        let total: f64 = seed_dist.iter().sum();
        let chosen = if total > 0.0 {
            let r = rng.gen::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (i, &d) in seed_dist.iter().enumerate() {
                cum += d;
                if cum > r {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining points coincide with chosen centroids; fall back
            // to the first index not yet used.
            (0..n)
                .find(|&i| {
                    (0..c).all(|cc| embedding.point(i) != &centroids[cc * dim..(cc + 1) * dim])
                })
                .unwrap_or(0)
        };
        centroids[c * dim..(c + 1) * dim].copy_from_slice(embedding.point(chosen));
        for i in 0..n {
            let d = dist2(embedding.point(i), &centroids[c * dim..(c + 1) * dim]);
            if d < seed_dist[i] {
                seed_dist[i] = d;
            }
        }
    }

    Ok(lloyd(embedding, k, centroids))
}

/// Number of k-means++ restarts the segmentation stages use.
pub const KMEANS_RESTARTS: usize = 8;

/// Runs [`kmeans`] `restarts` times with sub-seeds drawn from a generator
/// seeded with `seed` and keeps the run with the lowest inertia (the
/// earliest such run on ties), so no single unlucky initialization decides
/// the clustering. Fully deterministic for a given seed.
pub fn kmeans_restarts(
    embedding: &Embedding,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterLabels, DiffusionError> {
    assert!(restarts > 0, "at least one restart required");
    let mut sub = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterLabels> = None;
    for _ in 0..restarts {
        let run = kmeans(embedding, k, sub.gen())?;
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts > 0"))
}

/// Like [`kmeans`] but starting from caller-supplied centroids (row-major
/// `k × dim`) instead of k-means++; useful when the caller knows a good
/// deterministic initialization.
pub fn kmeans_seeded(
    embedding: &Embedding,
    k: usize,
    init_centroids: Vec<f64>,
) -> Result<ClusterLabels, DiffusionError> {
    let n = embedding.n();
    let dim = embedding.omega();
    if k == 0 || k > n || init_centroids.len() != k * dim {
        return Err(DiffusionError::BadK { k, n });
    }
    if init_centroids.iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::BadK { k, n });
    }
    Ok(lloyd(embedding, k, init_centroids))
}

/// Shared Lloyd loop; `centroids` is consumed as the starting position.
fn lloyd(embedding: &Embedding, k: usize, mut centroids: Vec<f64>) -> ClusterLabels {
    let n = embedding.n();
    let dim = embedding.omega();
    let mut labels = vec![0u32; n];
    let mut iterations = 0;
    for _ in 0..MAX_KMEANS_ITERS {
        iterations += 1;
        // Assignment: independent per point, ties to the lowest index.
        let new_labels: Vec<u32> = (0..n)
            .into_par_iter()
            .map(|i| {
                let pt = embedding.point(i);
                let mut best = 0u32;
                let mut best_d = dist2(pt, &centroids[..dim]);
                for c in 1..k {
                    let d = dist2(pt, &centroids[c * dim..(c + 1) * dim]);
                    if d < best_d {
                        best_d = d;
                        best = c as u32;
                    }
                }
                best
            })
            .collect();
        let changed = new_labels != labels;
        labels = new_labels;

        // Update: per-cluster means accumulated in point order.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let c = l as usize;
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(embedding.point(i)) {
                *s += v;
            }
        }
        let mut reseeded = vec![false; n];
        let mut repaired = false;
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *dst = s / counts[c] as f64;
                }
            } else {
                // Deterministic repair: move the centroid onto the point
                // farthest from its own centroid (lowest index on ties),
                // skipping points already consumed by this repair round.
                let mut far = None;
                let mut far_d = -1.0;
                for i in 0..n {
                    if reseeded[i] {
                        continue;
                    }
                    let d = dist2(
                        embedding.point(i),
                        &centroids[labels[i] as usize * dim..(labels[i] as usize + 1) * dim],
                    );
                    if d > far_d {
                        far_d = d;
                        far = Some(i);
                    }
                }
                let i = far.expect("k <= n guarantees a repair candidate");
                reseeded[i] = true;
                repaired = true;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(embedding.point(i));
            }
        }

        if !changed && !repaired && iterations > 1 {
            break;
        }
    }

    let inertia = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| dist2(embedding.point(i), &centroids[l as usize * dim..(l as usize + 1) * dim]))
        .sum();
    ClusterLabels { k, dim, labels, centroids, inertia, iterations }
}
