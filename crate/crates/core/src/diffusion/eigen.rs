//! Symmetric eigensolvers backing the spectral decomposition: cyclic Jacobi
//! for dense problems and restarted Lanczos (full reorthogonalization) for
//! the sparse top-of-spectrum case.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed for the deterministic Lanczos start vector.
const LANCZOS_SEED: u64 = 0x6c61_6e63_7a73;
/// Internal Ritz-residual tolerance (leaves headroom for the caller's
/// P-space check after the diagonal similarity transform).
const RITZ_TOL: f64 = 1e-11;
/// A Lanczos β below this signals an invariant subspace.
const BREAKDOWN_TOL: f64 = 1e-13;
/// Maximum Jacobi sweeps; cyclic Jacobi converges in far fewer.
const MAX_JACOBI_SWEEPS: usize = 60;

/// Eigenpairs of a symmetric matrix; `vectors[k]` is a unit eigenvector for
/// `values[k]`. Order is unspecified — callers sort.
#[derive(Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// Full eigendecomposition of a dense symmetric matrix (row-major `n × n`)
/// by cyclic Jacobi rotations.
pub fn dense_symmetric_eigen(mut a: Vec<f64>, n: usize) -> SymEigen {
    assert_eq!(a.len(), n * n);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    if n > 1 {
        for sweep in 0..MAX_JACOBI_SWEEPS {
            let off: f64 = (0..n)
                .map(|p| ((p + 1)..n).map(|q| a[p * n + q].abs()).sum::<f64>())
                .sum();
            if off == 0.0 {
                break;
            }
            // Threshold schedule: skip tiny elements early so rotations go to
            // work where they matter (classic cyclic-Jacobi refinement).
            let thresh = if sweep < 3 { 0.2 * off / (n * n) as f64 } else { 0.0 };
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    rotate(&mut a, &mut v, n, p, q, thresh, sweep);
                }
            }
        }
    }
    let values: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let vectors: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..n).map(|i| v[i * n + k]).collect())
        .collect();
    SymEigen { values, vectors }
}

/// One Jacobi rotation annihilating `a[p][q]` if it is large enough.
fn rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize, thresh: f64, sweep: usize) {
    let apq = a[p * n + q];
    let g = 100.0 * apq.abs();
    // Element already negligible relative to the diagonal: zero it and skip.
    if sweep >= 4
        && a[p * n + p].abs() + g == a[p * n + p].abs()
        && a[q * n + q].abs() + g == a[q * n + q].abs()
    {
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
        return;
    }
    if apq.abs() <= thresh {
        return;
    }
    let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
    let t = if theta.abs() + g == theta.abs() {
        // Very large θ: t ≈ 1/(2θ) avoids overflow in the sqrt.
        1.0 / (2.0 * theta)
    } else {
        let t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);
    let h = t * apq;

    a[p * n + p] -= h;
    a[q * n + q] += h;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    let jrot = |a: &mut [f64], i: usize, j: usize, k: usize, l: usize| {
        let g = a[i * n + j];
        let h = a[k * n + l];
        a[i * n + j] = g - s * (h + g * tau);
        a[k * n + l] = h + s * (g - h * tau);
    };
    for j in 0..p {
        jrot(a, j, p, j, q);
        let (x, y) = (a[j * n + p], a[j * n + q]);
        a[p * n + j] = x;
        a[q * n + j] = y;
    }
    for j in (p + 1)..q {
        jrot(a, p, j, j, q);
        let (x, y) = (a[p * n + j], a[j * n + q]);
        a[j * n + p] = x;
        a[q * n + j] = y;
    }
    for j in (q + 1)..n {
        jrot(a, p, j, q, j);
        let (x, y) = (a[p * n + j], a[q * n + j]);
        a[j * n + p] = x;
        a[j * n + q] = y;
    }
    for j in 0..n {
        jrot(v, j, p, j, q);
    }
}

/// Computes the `count` largest-magnitude eigenpairs of a symmetric operator
/// given only through `matvec`, by Lanczos with full reorthogonalization.
/// Unconverged runs restart with a larger basis until `max_matvecs` products
/// have been spent.
pub fn lanczos_topk<F>(
    n: usize,
    matvec: &F,
    count: usize,
    max_matvecs: usize,
) -> Result<SymEigen, String>
where
    F: Fn(&[f64], &mut [f64]),
{
    assert!(count >= 1 && count <= n);
    let mut basis_size = (4 * count + 40).min(n);
    let mut spent = 0usize;
    loop {
        let budget = max_matvecs.saturating_sub(spent);
        if budget < basis_size {
            return Err(format!(
                "matvec budget exhausted ({spent} of {max_matvecs} used, basis {basis_size} needed)"
            ));
        }
        let (result, used) = lanczos_run(n, matvec, count, basis_size);
        spent += used;
        match result {
            Some(eig) => return Ok(eig),
            None => {
                if basis_size == n {
                    return Err(format!(
                        "no convergence at full basis size {n} after {spent} matvecs"
                    ));
                }
                basis_size = ((basis_size as f64 * 1.6) as usize).min(n);
            }
        }
    }
}

/// Single Lanczos pass with basis size `m`. Returns converged eigenpairs or
/// `None`, plus the number of matvecs consumed.
fn lanczos_run<F>(n: usize, matvec: &F, count: usize, m: usize) -> (Option<SymEigen>, usize)
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alphas: Vec<f64> = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);
    let mut spent = 0usize;

    let mut v = random_unit(n, &mut rng);
    let mut w = vec![0.0; n];
    let mut invariant = false;
    while basis.len() < m {
        basis.push(v.clone());
        matvec(&v, &mut w);
        spent += 1;
        let alpha = dot(&w, &v);
        alphas.push(alpha);
        axpy(&mut w, -alpha, &v);
        if let Some(prev) = basis.len().checked_sub(2).map(|i| &basis[i]) {
            axpy(&mut w, -betas[basis.len() - 2], prev);
        }
        // Full reorthogonalization, two passes for numerical safety.
        for _ in 0..2 {
            for u in &basis {
                let c = dot(&w, u);
                axpy(&mut w, -c, u);
            }
        }
        let beta = norm(&w);
        if beta < BREAKDOWN_TOL {
            // Invariant subspace. If it already spans enough pairs the Ritz
            // values are exact; otherwise continue in the orthogonal
            // complement (disconnected components land here).
            if basis.len() >= count {
                invariant = true;
                betas.push(0.0);
                break;
            }
            let mut fresh = random_unit(n, &mut rng);
            for _ in 0..2 {
                for u in &basis {
                    let c = dot(&fresh, u);
                    axpy(&mut fresh, -c, u);
                }
            }
            let fnorm = norm(&fresh);
            if fnorm < BREAKDOWN_TOL {
                // Basis already spans the whole space.
                invariant = true;
                betas.push(0.0);
                break;
            }
            scale(&mut fresh, 1.0 / fnorm);
            betas.push(0.0);
            v = fresh;
        } else {
            betas.push(beta);
            scale(&mut w, 1.0 / beta);
            std::mem::swap(&mut v, &mut w);
        }
    }

    let k = basis.len();
    // Dense tridiagonal T in a k×k buffer; Jacobi handles it quickly at the
    // basis sizes used here.
    let mut t = vec![0.0; k * k];
    for i in 0..k {
        t[i * k + i] = alphas[i];
        if i + 1 < k && betas[i] != 0.0 {
            t[i * k + (i + 1)] = betas[i];
            t[(i + 1) * k + i] = betas[i];
        }
    }
    let tri = dense_symmetric_eigen(t, k);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        tri.values[b]
            .abs()
            .total_cmp(&tri.values[a].abs())
            .then(tri.values[b].total_cmp(&tri.values[a]))
    });
    let selected: Vec<usize> = order.into_iter().take(count).collect();

    if !invariant {
        let beta_last = betas[k - 1];
        let converged = selected
            .iter()
            .all(|&idx| (beta_last * tri.vectors[idx][k - 1]).abs() <= RITZ_TOL);
        if !converged {
            return (None, spent);
        }
    }

    // Ritz vectors y = V u, renormalized.
    let mut values = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for idx in selected {
        let u = &tri.vectors[idx];
        let mut y = vec![0.0; n];
        for (uc, bv) in u.iter().zip(&basis) {
            if *uc != 0.0 {
                axpy(&mut y, *uc, bv);
            }
        }
        let ny = norm(&y);
        if ny > 0.0 {
            scale(&mut y, 1.0 / ny);
        }
        values.push(tri.values[idx]);
        vectors.push(y);
    }
    (Some(SymEigen { values, vectors }), spent)
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = norm(&v);
    scale(&mut v, 1.0 / nv);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn scale(v: &mut [f64], a: f64) {
    for x in v.iter_mut() {
        *x *= a;
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }

    fn check_pairs(a: &[f64], n: usize, eig: &SymEigen, tol: f64) {
        for (val, vec) in eig.values.iter().zip(&eig.vectors) {
            assert!((norm(vec) - 1.0).abs() < 1e-10);
            for i in 0..n {
                let mut av = 0.0;
                for j in 0..n {
                    av += a[i * n + j] * vec[j];
                }
                assert!(
                    (av - val * vec[i]).abs() < tol,
                    "residual too large for eigenvalue {val}"
                );
            }
        }
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // diag(3, 1) rotated by 45°: eigenvalues stay 3 and 1.
        let a = vec![2.0, 1.0, 1.0, 2.0];
        let eig = dense_symmetric_eigen(a.clone(), 2);
        let mut vals = eig.values.clone();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        check_pairs(&a, 2, &eig, 1e-12);
    }

    #[test]
    fn jacobi_handles_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 5, 17, 40] {
            let a = random_symmetric(n, &mut rng);
            let eig = dense_symmetric_eigen(a.clone(), n);
            assert_eq!(eig.values.len(), n);
            check_pairs(&a, n, &eig, 1e-9);
            // Trace equals eigenvalue sum.
            let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
            let sum: f64 = eig.values.iter().sum();
            assert!((trace - sum).abs() < 1e-9 * trace.abs().max(1.0));
        }
    }

    #[test]
    fn lanczos_matches_dense_top_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [150usize, 300] {
            let a = random_symmetric(n, &mut rng);
            let matvec = |v: &[f64], out: &mut [f64]| {
                for i in 0..n {
                    out[i] = (0..n).map(|j| a[i * n + j] * v[j]).sum();
                }
            };
            let count = 5;
            let eig = lanczos_topk(n, &matvec, count, 10_000).unwrap();
            check_pairs(&a, n, &eig, 1e-8);

            let dense = dense_symmetric_eigen(a.clone(), n);
            let mut all = dense.values.clone();
            all.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
            let mut got = eig.values.clone();
            got.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
            for (g, w) in got.iter().zip(all.iter().take(count)) {
                assert!((g - w).abs() < 1e-8, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn lanczos_handles_block_diagonal_operator() {
        // Two disconnected blocks: breakdown path must still find both ends.
        let n = 200;
        let matvec = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                // Simple diagonal operator with two plateaus and unique extremes.
                let d = if i == 0 {
                    2.0
                } else if i < n / 2 {
                    0.5
                } else {
                    -0.25
                };
                out[i] = d * v[i];
            }
        };
        let eig = lanczos_topk(n, &matvec, 2, 10_000).unwrap();
        let mut vals = eig.values.clone();
        vals.sort_by(|a, b| b.total_cmp(a));
        assert!((vals[0] - 2.0).abs() < 1e-9);
        assert!((vals[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn lanczos_reports_budget_exhaustion() {
        let n = 500;
        let matvec = |v: &[f64], out: &mut [f64]| {
            out.copy_from_slice(v);
        };
        // Budget far below even one basis construction.
        let err = lanczos_topk(n, &matvec, 5, 10).unwrap_err();
        assert!(err.contains("budget"), "{err}");
    }
}
