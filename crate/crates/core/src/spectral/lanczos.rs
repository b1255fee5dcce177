//! Symmetric Lanczos for the smallest eigenpairs of a sparse matrix.
//!
//! Every new Lanczos vector is orthogonalized twice against the whole basis.
//! When the Krylov space becomes invariant (`β ≈ 0`) the iteration restarts
//! from a fresh random vector orthogonal to the basis, so repeated
//! eigenvalues from disconnected components are still reached.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SsrError};
use crate::sparse::SparseSymmetricMatrix;

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Residual tolerance `||L y − θ y||` for each returned pair.
    pub tol: f64,
    pub max_iterations: usize,
    /// Ritz convergence is tested every this many steps.
    pub check_every: usize,
    pub seed: u64,
}

impl LanczosOptions {
    pub fn for_k(k: usize) -> Self {
        LanczosOptions {
            tol: 1e-8,
            max_iterations: 10 * k,
            check_every: (k / 2).max(8),
            seed: 0x5eed_1a9c,
        }
    }
}

const BREAKDOWN: f64 = 1e-12;

fn orthogonalize(w: &mut Array1<f64>, basis: &[Array1<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.scaled_add(-c, q);
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize, basis: &[Array1<f64>]) -> Option<Array1<f64>> {
    for _ in 0..8 {
        let mut v: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, basis);
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            return Some(v / norm);
        }
    }
    None
}

struct Ritz {
    values: Vec<f64>,
    /// Columns of the tridiagonal eigenvector matrix for the selected values.
    vectors: DMatrix<f64>,
    residual_estimates: Vec<f64>,
}

fn ritz(alpha: &[f64], beta: &[f64], k: usize, last_beta: f64) -> Ritz {
    let j = alpha.len();
    let t = DMatrix::from_fn(j, j, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order.truncate(k);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(&order);
    let residual_estimates = (0..order.len())
        .map(|c| (last_beta * vectors[(j - 1, c)]).abs())
        .collect();
    Ritz {
        values,
        vectors,
        residual_estimates,
    }
}

/// Returns the `k` smallest eigenpairs as `(values, N × k vectors)`, unsorted
/// sign convention.
pub(crate) fn smallest_eigenpairs(
    l: &SparseSymmetricMatrix,
    k: usize,
    opts: &LanczosOptions,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = l.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let max_iter = opts.max_iterations.max(k).min(n);
    let min_steps = (2 * k).min(n);

    let mut q = random_unit(&mut rng, n, &basis).expect("n > 0");
    let mut last_ritz: Option<Ritz> = None;
    let mut last_beta = 0.0;
    loop {
        let mut w = l.matvec(q.view());
        let a = q.dot(&w);
        basis.push(q);
        orthogonalize(&mut w, &basis);
        let b = w.dot(&w).sqrt();
        alpha.push(a);
        let steps = basis.len();
        let exhausted = steps == n || steps >= max_iter;
        // An invariant subspace reports zero residuals for every Ritz pair it
        // contains, so convergence is only trusted away from breakdowns and
        // after the basis has grown past 2k.
        let due = steps >= min_steps
            && (steps % opts.check_every == 0 || exhausted || b < BREAKDOWN);
        if due {
            let r = ritz(&alpha, &beta, k, b);
            let done = exhausted
                || (b >= BREAKDOWN && r.residual_estimates.iter().all(|&e| e <= opts.tol));
            last_beta = b;
            last_ritz = Some(r);
            if done {
                break;
            }
        }
        if exhausted {
            break;
        }
        if b < BREAKDOWN {
            match random_unit(&mut rng, n, &basis) {
                Some(v) => {
                    beta.push(0.0);
                    q = v;
                }
                None => break,
            }
        } else {
            beta.push(b);
            q = w / b;
        }
    }

    let steps = basis.len();
    let r = match last_ritz {
        Some(r) if r.values.len() == k && r.vectors.nrows() == steps => r,
        _ => ritz(&alpha, &beta, k, last_beta),
    };
    if r.values.len() < k {
        return Err(SsrError::NoConvergence {
            iterations: steps,
            max_residual: f64::INFINITY,
        });
    }
    let mut vecs = Array2::zeros((n, k));
    for c in 0..k {
        let mut col = vecs.column_mut(c);
        for (i, qi) in basis.iter().enumerate() {
            col.scaled_add(r.vectors[(i, c)], qi);
        }
        let norm = col.dot(&col).sqrt();
        col /= norm;
    }
    let mut max_residual: f64 = 0.0;
    for c in 0..k {
        let y = vecs.column(c);
        let res = l.matvec(y) - &y.mapv(|v| v * r.values[c]);
        max_residual = max_residual.max(res.dot(&res).sqrt());
    }
    // The Ritz estimate ignores rounding in the basis; allow a small margin
    // when checking the true residual.
    if max_residual > 10.0 * opts.tol {
        return Err(SsrError::NoConvergence {
            iterations: steps,
            max_residual,
        });
    }
    Ok((r.values, vecs))
}
