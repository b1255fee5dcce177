//! Laplacian eigendecomposition and the graph Fourier transform.
//!
//! A [`Spectrum`] holds eigenpairs sorted by ascending eigenvalue. In full mode
//! every eigenpair is computed with a dense symmetric solver; in truncated mode
//! only the `K` smallest are found with Lanczos, and whatever the retained
//! modes cannot represent is carried by the residual projector `I − UUᵀ`.
//!
//! Eigenvector signs are normalized so that the largest-magnitude entry of each
//! vector is positive, which makes decompositions reproducible.

mod bands;
mod lanczos;

pub use bands::{
    band_report, build_band_stack, partition_bands, plan_partitions, reconstruct_band, BandPartition,
    BandReportRow, BandStack, Modality, PartitionScope,
};
pub use lanczos::LanczosOptions;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Result, SsrError};
use crate::sparse::SparseSymmetricMatrix;

pub const DEFAULT_DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralMode {
    /// All `N` eigenpairs via a dense solver.
    Full,
    /// The `K` smallest eigenpairs via Lanczos with full reorthogonalization.
    Truncated(usize),
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Array1<f64>,
    /// `N × K`, column-orthonormal.
    pub eigenvectors: Array2<f64>,
    pub truncated: bool,
    pub residual_projector_present: bool,
}

impl Spectrum {
    pub fn n_nodes(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `||UᵀU − I||_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.eigenvectors.t().dot(&self.eigenvectors);
        g.indexed_iter()
            .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }
}

/// Eigendecomposes a symmetric Laplacian.
pub fn eigendecompose(
    l: &SparseSymmetricMatrix,
    mode: SpectralMode,
    dense_limit: usize,
) -> Result<Spectrum> {
    let n = l.n();
    match mode {
        SpectralMode::Full => {
            if n > dense_limit {
                return Err(SsrError::DenseLimit { n, limit: dense_limit });
            }
            let (vals, vecs) = dense_symmetric_eigen(&l.to_dense());
            Ok(finish(vals, vecs, false))
        }
        SpectralMode::Truncated(k) => {
            if k == 0 || k > n {
                return Err(SsrError::InvalidArgument(format!(
                    "truncated spectrum needs 0 < K <= N (K={k}, N={n})"
                )));
            }
            let (vals, vecs) = lanczos::smallest_eigenpairs(l, k, &LanczosOptions::for_k(k))?;
            // Retaining every mode leaves nothing for the residual band.
            let truncated = k < n;
            Ok(finish(vals, vecs, truncated))
        }
    }
}

/// Dense symmetric eigensolver on an `ndarray` matrix; unsorted output.
pub(crate) fn dense_symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(m);
    let vecs = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, j)]);
    (eig.eigenvalues.iter().copied().collect(), vecs)
}

fn finish(vals: Vec<f64>, vecs: Array2<f64>, truncated: bool) -> Spectrum {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let eigenvalues: Array1<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut eigenvectors = vecs.select(Axis(1), &order);
    for mut col in eigenvectors.columns_mut() {
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    Spectrum {
        eigenvalues,
        eigenvectors,
        truncated,
        residual_projector_present: truncated,
    }
}

fn check_rows(spectrum: &Spectrum, x: &ArrayView2<f64>, context: &str) -> Result<()> {
    if x.nrows() != spectrum.n_nodes() {
        return Err(SsrError::shape(context, spectrum.n_nodes(), x.nrows()));
    }
    Ok(())
}

/// Graph Fourier transform `X̂ = UᵀX`.
pub fn gft_forward(spectrum: &Spectrum, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_rows(spectrum, &x, "gft_forward rows")?;
    Ok(spectrum.eigenvectors.t().dot(&x))
}

/// Inverse transform `U X̂` over the retained modes.
pub fn gft_inverse(spectrum: &Spectrum, xhat: ArrayView2<f64>) -> Result<Array2<f64>> {
    if xhat.nrows() != spectrum.n_modes() {
        return Err(SsrError::shape("gft_inverse rows", spectrum.n_modes(), xhat.nrows()));
    }
    Ok(spectrum.eigenvectors.dot(&xhat))
}

/// Energy `E_k = ||x̂_k||²` of each spectral row.
pub fn band_energies(xhat: ArrayView2<f64>) -> Vec<f64> {
    xhat.rows().into_iter().map(|r| r.dot(&r)).collect()
}

/// Energy of `X` left outside the retained modes, `||X||² − Σ E_k`, clamped at 0.
pub fn residual_energy(x: ArrayView2<f64>, energies: &[f64]) -> f64 {
    let total: f64 = x.iter().map(|v| v * v).sum();
    (total - energies.iter().sum::<f64>()).max(0.0)
}
