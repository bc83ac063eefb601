//! Diffusion maps over a sparse affinity graph.
//!
//! The affinity kernel is row-normalized into a Markov transition matrix
//! `P = D⁻¹K` (`D` = diagonal of row sums `s`). `P` is similar to the
//! symmetric matrix `M = D^{1/2} P D^{-1/2}`, so its spectrum is real and
//! the eigenproblem is solved symmetrically, then mapped back to right
//! eigenvectors `ψ = D^{-1/2} φ` of `P`.
//!
//! Eigenvectors are normalized to unit norm under the stationary
//! distribution `π = s / Σs` and sign-fixed so the largest-magnitude
//! coordinate is positive. With that normalization the full-dimension
//! embedding `Ψ_τ(i) = (λ_m^τ ψ_m(i))_m` reproduces the diffusion distance
//!
//! ```text
//! D_τ(i, j)² = Σ_u (P^τ[i,u] - P^τ[j,u])² / π(u)
//! ```
//!
//! exactly, which [`dense_diffusion_distance`] computes independently by
//! dense matrix powers for small graphs. The constant eigenpair `(1, 𝟙)`
//! carries no geometry and is dropped from the embedding.

mod eigen;
mod kmeans;

pub use kmeans::{kmeans, kmeans_restarts, kmeans_seeded, ClusterLabels, KMEANS_RESTARTS, MAX_KMEANS_ITERS};

use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

use crate::graph::SparseAffinity;

/// Absolute tolerance on row sums of the transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Relative tolerance on eigen-residuals `‖Pψ - λψ‖∞ / ‖ψ‖∞`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
/// Hard cap on matrix-vector products per spectral decomposition.
pub const MAX_MATVECS: usize = 10_000;
/// Largest graph the dense diffusion-distance reference accepts.
pub const ORACLE_MAX_NODES: usize = 64;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("nodes with zero degree cannot be row-normalized: {}", format_nodes(.0))]
    ZeroDegree(Vec<usize>),
    #[error("requested {count} eigenpairs from a {n}-node graph")]
    BadCount { count: usize, n: usize },
    #[error("diffusion time tau must be >= 1")]
    BadTau,
    #[error("spectrum holds {0} pairs; embedding needs the trivial pair plus at least one more")]
    TooFewPairs(usize),
    #[error("eigensolver failed to converge: {0}")]
    ConvergenceFailure(String),
    #[error("k must be in 1..=#points, got k = {k} for {n} points")]
    BadK { k: usize, n: usize },
    #[error("dense diffusion-distance reference supports n <= {ORACLE_MAX_NODES}, got {0}")]
    OracleTooLarge(usize),
}

fn format_nodes(nodes: &[usize]) -> String {
    const SHOW: usize = 8;
    let shown: Vec<String> = nodes.iter().take(SHOW).map(|n| n.to_string()).collect();
    if nodes.len() > SHOW {
        format!("[{}, … {} more]", shown.join(", "), nodes.len() - SHOW)
    } else {
        format!("[{}]", shown.join(", "))
    }
}

/// Row-stochastic Markov matrix with the degrees it was normalized by.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    /// Row-normalized transition probabilities.
    vals: Vec<f64>,
    /// Kernel row sums `s(i)` (Markov degrees).
    degrees: Vec<f64>,
}

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Largest `|row sum - 1|` over all rows.
    pub fn max_row_sum_deviation(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).1.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `out = P · v`, deterministic for any thread count (each row is an
    /// independent sequential dot product).
    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.n);
        assert_eq!(out.len(), self.n);
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let (cols, vals) = {
                let span = self.row_ptr[i]..self.row_ptr[i + 1];
                (&self.cols[span.clone()], &self.vals[span])
            };
            let mut acc = 0.0;
            for (&j, &p) in cols.iter().zip(vals) {
                acc += p * v[j as usize];
            }
            *o = acc;
        });
    }

    /// Dense copy of `P`, row-major. Intended for small-graph references.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &p) in cols.iter().zip(vals) {
                dense[i * self.n + j as usize] = p;
            }
        }
        dense
    }
}

/// Normalizes each kernel row by its sum: `p(i,j) = k(i,j) / s(i)`.
/// Nodes whose row sums to zero (no stored entries) are reported together.
pub fn markov_normalize(affinity: &SparseAffinity) -> Result<TransitionMatrix, DiffusionError> {
    let n = affinity.n();
    let mut degrees = Vec::with_capacity(n);
    let mut zero_nodes = Vec::new();
    for i in 0..n {
        let s: f64 = affinity.row(i).1.iter().sum();
        if s <= 0.0 {
            zero_nodes.push(i);
        }
        degrees.push(s);
    }
    if !zero_nodes.is_empty() {
        return Err(DiffusionError::ZeroDegree(zero_nodes));
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(affinity.nnz());
    let mut vals = Vec::with_capacity(affinity.nnz());
    row_ptr.push(0);
    for i in 0..n {
        let (rcols, rvals) = affinity.row(i);
        for (&j, &k) in rcols.iter().zip(rvals) {
            cols.push(j);
            vals.push(k / degrees[i]);
        }
        row_ptr.push(cols.len());
    }
    Ok(TransitionMatrix { n, row_ptr, cols, vals, degrees })
}

/// Eigenpairs of the transition matrix, eigenvalues descending. Vector `m`
/// is the right eigenvector `ψ_m` of `P`, unit-norm under the stationary
/// distribution and sign-fixed.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    /// `vectors[m]` has length `n`.
    vectors: Vec<Vec<f64>>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vector(&self, m: usize) -> &[f64] {
        &self.vectors[m]
    }

    /// Dumps `index,lambda` CSV lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,lambda")?;
        for (m, lambda) in self.eigenvalues.iter().enumerate() {
            writeln!(w, "{},{}", m + 1, lambda)?;
        }
        Ok(())
    }
}

/// Computes the `count` largest-magnitude eigenpairs of `P`, presented in
/// descending eigenvalue order.
///
/// Small problems are solved densely (Jacobi rotations); larger ones use
/// restarted Lanczos with full reorthogonalization on the symmetric
/// conjugate, within a budget of [`MAX_MATVECS`] matrix-vector products.
pub fn spectral_decompose(p: &TransitionMatrix, count: usize) -> Result<Spectrum, DiffusionError> {
    let n = p.n();
    if count == 0 || count > n {
        return Err(DiffusionError::BadCount { count, n });
    }

    // M = D^{1/2} P D^{-1/2}: m(i,j) = p(i,j) · sqrt(s_i / s_j).
    let sqrt_s: Vec<f64> = p.degrees.iter().map(|&s| s.sqrt()).collect();
    let mut m_vals = vec![0.0; p.vals.len()];
    for i in 0..n {
        for k in p.row_ptr[i]..p.row_ptr[i + 1] {
            m_vals[k] = p.vals[k] * sqrt_s[i] / sqrt_s[p.cols[k] as usize];
        }
    }

    let parallel = n >= 4096;
    let matvec = |v: &[f64], out: &mut [f64]| {
        let row = |i: usize, out_i: &mut f64| {
            let span = p.row_ptr[i]..p.row_ptr[i + 1];
            let mut acc = 0.0;
            for (&j, &m) in p.cols[span.clone()].iter().zip(&m_vals[span]) {
                acc += m * v[j as usize];
            }
            *out_i = acc;
        };
        if parallel {
            out.par_iter_mut().enumerate().for_each(|(i, o)| row(i, o));
        } else {
            out.iter_mut().enumerate().for_each(|(i, o)| row(i, o));
        }
    };

    let sym = if n <= 128 || count * 3 >= n {
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            let span = p.row_ptr[i]..p.row_ptr[i + 1];
            for (&j, &m) in p.cols[span.clone()].iter().zip(&m_vals[span]) {
                dense[i * n + j as usize] = m;
            }
        }
        eigen::dense_symmetric_eigen(dense, n)
    } else {
        eigen::lanczos_topk(n, &matvec, count, MAX_MATVECS)
            .map_err(DiffusionError::ConvergenceFailure)?
    };

    // Select the `count` largest-magnitude pairs; order them by eigenvalue
    // descending (a +λ outranks -λ of equal magnitude).
    let mut order: Vec<usize> = (0..sym.values.len()).collect();
    order.sort_by(|&a, &b| {
        sym.values[b]
            .abs()
            .total_cmp(&sym.values[a].abs())
            .then(sym.values[b].total_cmp(&sym.values[a]))
    });
    let mut selected: Vec<usize> = order.into_iter().take(count).collect();
    selected.sort_by(|&a, &b| sym.values[b].total_cmp(&sym.values[a]));

    // ψ = √S · D^{-1/2} φ gives ⟨ψ, ψ⟩_π = 1 for unit φ.
    let total_degree: f64 = p.degrees.iter().sum();
    let scale = total_degree.sqrt();
    let mut eigenvalues = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for idx in selected {
        let mut psi: Vec<f64> = sym.vectors[idx]
            .iter()
            .zip(&sqrt_s)
            .map(|(&phi, &rs)| scale * phi / rs)
            .collect();
        fix_sign(&mut psi);
        eigenvalues.push(sym.values[idx]);
        vectors.push(psi);
    }

    // Authoritative residual check in P space.
    let mut buf = vec![0.0; n];
    for (lambda, psi) in eigenvalues.iter().zip(&vectors) {
        p.matvec(psi, &mut buf);
        let inf_norm = psi.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let resid = buf
            .iter()
            .zip(psi)
            .fold(0.0f64, |acc, (&pv, &v)| acc.max((pv - lambda * v).abs()));
        if resid > EIGEN_RESIDUAL_TOL * inf_norm {
            return Err(DiffusionError::ConvergenceFailure(format!(
                "residual {resid:.3e} exceeds {EIGEN_RESIDUAL_TOL:.0e}·‖ψ‖∞ for λ = {lambda}"
            )));
        }
    }
    Ok(Spectrum { eigenvalues, vectors })
}

/// Flips the vector so its largest-magnitude coordinate (first such index on
/// ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Diffusion-map coordinates: row `i` holds `(λ_m^τ ψ_m(i))` over the
/// non-trivial eigenpairs `m = 2..=count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    n: usize,
    omega: usize,
    /// Row-major `n × omega`.
    coords: Vec<f64>,
}

impl Embedding {
    /// Wraps raw coordinates (row-major `n × omega`).
    pub fn from_coords(n: usize, omega: usize, coords: Vec<f64>) -> Self {
        assert_eq!(coords.len(), n * omega);
        Embedding { n, omega, coords }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.omega..(i + 1) * self.omega]
    }

    /// Euclidean distance between embedded nodes `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Dumps `node,c1,..,cω` CSV lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "node")?;
        for m in 1..=self.omega {
            write!(w, ",c{m}")?;
        }
        writeln!(w)?;
        for i in 0..self.n {
            write!(w, "{i}")?;
            for c in self.point(i) {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Builds the τ-step embedding from a spectrum, dropping the constant pair.
pub fn embed(spectrum: &Spectrum, tau: u32) -> Result<Embedding, DiffusionError> {
    if tau == 0 {
        return Err(DiffusionError::BadTau);
    }
    if spectrum.len() < 2 {
        return Err(DiffusionError::TooFewPairs(spectrum.len()));
    }
    let n = spectrum.vector(0).len();
    let omega = spectrum.len() - 1;
    let mut coords = vec![0.0; n * omega];
    for m in 0..omega {
        let lambda_tau = spectrum.eigenvalues[m + 1].powi(tau as i32);
        let psi = spectrum.vector(m + 1);
        for i in 0..n {
            coords[i * omega + m] = lambda_tau * psi[i];
        }
    }
    Ok(Embedding { n, omega, coords })
}

/// Reference diffusion distance `D_τ(i, j)` computed from dense powers of
/// `P`, independent of the spectral path. Supports `n ≤ 64`.
pub fn dense_diffusion_distance(
    p: &TransitionMatrix,
    tau: u32,
    i: usize,
    j: usize,
) -> Result<f64, DiffusionError> {
    let n = p.n();
    if n > ORACLE_MAX_NODES {
        return Err(DiffusionError::OracleTooLarge(n));
    }
    if tau == 0 {
        return Err(DiffusionError::BadTau);
    }
    assert!(i < n && j < n, "node index out of range");

    let base = p.to_dense();
    let mut pow = base.clone();
    for _ in 1..tau {
        let mut next = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let v = pow[r * n + k];
                if v == 0.0 {
                    continue;
                }
                for c in 0..n {
                    next[r * n + c] += v * base[k * n + c];
                }
            }
        }
        pow = next;
    }

    let total: f64 = p.degrees.iter().sum();
    let mut d2 = 0.0;
    for u in 0..n {
        let diff = pow[i * n + u] - pow[j * n + u];
        // 1/π(u) = Σs / s(u)
        d2 += diff * diff * total / p.degrees[u];
    }
    Ok(d2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseAffinity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affinity_from_dense(dense: &[Vec<f64>]) -> SparseAffinity {
        let n = dense.len();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in i..n {
                if dense[i][j] != 0.0 {
                    entries.push((i, j, dense[i][j]));
                }
            }
        }
        SparseAffinity::from_entries(n, &entries).unwrap()
    }

    /// Random connected affinity: a chain plus extra random edges.
    pub(crate) fn random_connected_affinity(n: usize, rng: &mut ChaCha8Rng) -> SparseAffinity {
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, 1.0));
        }
        for i in 1..n {
            entries.push((i - 1, i, rng.gen_range(0.05..1.0)));
        }
        let extra = n * 3;
        for _ in 0..extra {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                let (a, b) = (i.min(j), i.max(j));
                entries.push((a, b, rng.gen_range(0.05..1.0)));
            }
        }
        // Deduplicate conflicting repeats: keep the last value per pair.
        let mut map = std::collections::HashMap::new();
        for (i, j, w) in entries {
            map.insert((i, j), w);
        }
        let entries: Vec<_> = map.into_iter().map(|((i, j), w)| (i, j, w)).collect();
        SparseAffinity::from_entries(n, &entries).unwrap()
    }

    #[test]
    fn markov_rows_match_hand_computation() {
        let aff = affinity_from_dense(&[vec![1.0, 3.0], vec![3.0, 1.0]]);
        let p = markov_normalize(&aff).unwrap();
        let (cols, vals) = p.row(0);
        assert_eq!(cols, &[0, 1]);
        assert_eq!(vals, &[0.25, 0.75]);
        let (_, vals) = p.row(1);
        assert_eq!(vals, &[0.75, 0.25]);
        assert_eq!(p.degrees(), &[4.0, 4.0]);
    }

    #[test]
    fn markov_reports_zero_degree_nodes() {
        // Node 1 has no entries at all.
        let aff = SparseAffinity::from_entries(3, &[(0, 0, 1.0), (2, 2, 1.0), (0, 2, 0.5)]).unwrap();
        let err = markov_normalize(&aff).unwrap_err();
        match err {
            DiffusionError::ZeroDegree(nodes) => assert_eq!(nodes, vec![1]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn row_sums_stay_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(2..40);
            let aff = random_connected_affinity(n, &mut rng);
            let p = markov_normalize(&aff).unwrap();
            assert!(p.max_row_sum_deviation() <= ROW_SUM_TOL);
        }
    }

    #[test]
    fn two_state_spectrum_is_exact() {
        let aff = affinity_from_dense(&[vec![0.9, 0.1], vec![0.1, 0.9]]);
        let p = markov_normalize(&aff).unwrap();
        let spec = spectral_decompose(&p, 2).unwrap();
        assert!((spec.eigenvalues()[0] - 1.0).abs() < 1e-12);
        assert!((spec.eigenvalues()[1] - 0.8).abs() < 1e-12);
        // ψ₁ is the constant vector 𝟙, ψ₂ ∝ (1, -1) with positive first entry.
        for &v in spec.vector(0) {
            assert!((v - 1.0).abs() < 1e-10);
        }
        let psi2 = spec.vector(1);
        assert!((psi2[0] - 1.0).abs() < 1e-10 && (psi2[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn spectrum_contract_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = rng.gen_range(6..80);
            let aff = random_connected_affinity(n, &mut rng);
            let p = markov_normalize(&aff).unwrap();
            let count = rng.gen_range(2..=n.min(6));
            let spec = spectral_decompose(&p, count).unwrap();
            assert!((spec.eigenvalues()[0] - 1.0).abs() <= 1e-8);
            for &l in spec.eigenvalues() {
                assert!(l.abs() <= 1.0 + 1e-8);
            }
            for w in spec.eigenvalues().windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn embedding_scales_with_lambda_to_tau() {
        let aff = affinity_from_dense(&[vec![0.9, 0.1], vec![0.1, 0.9]]);
        let p = markov_normalize(&aff).unwrap();
        let spec = spectral_decompose(&p, 2).unwrap();
        let e1 = embed(&spec, 1).unwrap();
        let e2 = embed(&spec, 2).unwrap();
        // λ₂ = 0.8: one more diffusion step scales coordinates by 0.8.
        for i in 0..2 {
            assert!((e2.point(i)[0] - 0.8 * e1.point(i)[0]).abs() < 1e-12);
        }
        assert!(matches!(embed(&spec, 0), Err(DiffusionError::BadTau)));
    }

    #[test]
    fn two_state_diffusion_distance_is_exact() {
        let aff = affinity_from_dense(&[vec![0.9, 0.1], vec![0.1, 0.9]]);
        let p = markov_normalize(&aff).unwrap();
        // Rows of P differ by (0.8, -0.8); π = (1/2, 1/2), so
        // D₁² = 2 · 0.64 / 0.5 = 2.56.
        let d = dense_diffusion_distance(&p, 1, 0, 1).unwrap();
        assert!((d - 1.6).abs() < 1e-12);
        // Full embedding distance must agree.
        let spec = spectral_decompose(&p, 2).unwrap();
        let e = embed(&spec, 1).unwrap();
        assert!((e.distance(0, 1) - d).abs() < 1e-12);
    }

    #[test]
    fn embedding_distances_match_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..8 {
            let n = rng.gen_range(3..=20);
            let aff = random_connected_affinity(n, &mut rng);
            let p = markov_normalize(&aff).unwrap();
            let spec = spectral_decompose(&p, n).unwrap();
            for tau in [1u32, 2, 5] {
                let e = embed(&spec, tau).unwrap();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let want = dense_diffusion_distance(&p, tau, i, j).unwrap();
                        let got = e.distance(i, j);
                        let rel = (got - want).abs() / want.max(1e-300);
                        assert!(rel <= 1e-6, "n={n} tau={tau} ({i},{j}): {got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn permutation_relabeling_permutes_embedding_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let n = rng.gen_range(4..=10);
            let aff = random_connected_affinity(n, &mut rng);
            // Random permutation π.
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let mut entries = Vec::new();
            for i in 0..n {
                let (cols, vals) = aff.row(i);
                for (&j, &w) in cols.iter().zip(vals) {
                    entries.push((perm[i], perm[j as usize], w));
                }
            }
            let paff = SparseAffinity::from_entries(n, &entries).unwrap();

            let e = embed(&spectral_decompose(&markov_normalize(&aff).unwrap(), n).unwrap(), 1).unwrap();
            let pe = embed(&spectral_decompose(&markov_normalize(&paff).unwrap(), n).unwrap(), 1).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let d = e.distance(i, j);
                    let pd = pe.distance(perm[i], perm[j]);
                    assert!((d - pd).abs() <= 1e-9 * d.max(1.0), "{d} vs {pd}");
                }
            }
        }
    }

    #[test]
    fn decompose_rejects_bad_counts() {
        let aff = affinity_from_dense(&[vec![1.0, 0.5], vec![0.5, 1.0]]);
        let p = markov_normalize(&aff).unwrap();
        assert!(matches!(
            spectral_decompose(&p, 0),
            Err(DiffusionError::BadCount { .. })
        ));
        assert!(matches!(
            spectral_decompose(&p, 3),
            Err(DiffusionError::BadCount { .. })
        ));
    }

    #[test]
    fn oracle_rejects_large_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let aff = random_connected_affinity(65, &mut rng);
        let p = markov_normalize(&aff).unwrap();
        assert!(matches!(
            dense_diffusion_distance(&p, 1, 0, 1),
            Err(DiffusionError::OracleTooLarge(65))
        ));
    }
}
