//! Compressed sparse row storage for symmetric matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Result, SsrError};

/// A square sparse matrix in CSR layout whose sparsity pattern and values are
/// symmetric. Column indices within each row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetricMatrix {
    /// Builds from `(row, col, value)` entries. Both `(i, j)` and `(j, i)` must
    /// be supplied for off-diagonal entries; duplicates are summed.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, j, _) in &entries {
            if i >= n || j >= n {
                return Err(SsrError::OutOfRange {
                    context: "sparse triplet".into(),
                    index: i.max(j),
                    len: n,
                });
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
                continue;
            }
            last = Some((i, j));
            row_offsets[i + 1] += 1;
            col_indices.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let m = SparseSymmetricMatrix {
            n,
            row_offsets,
            col_indices,
            values,
        };
        m.check_symmetric(1e-12)?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    fn check_symmetric(&self, tol: f64) -> Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let (tcols, tvals) = self.row(j);
                let mirrored = tcols.binary_search(&i).ok().map(|p| tvals[p]);
                match mirrored {
                    Some(w) if (w - v).abs() <= tol => {}
                    _ => {
                        return Err(SsrError::InvalidArgument(format!(
                            "matrix not symmetric at ({i}, {j})"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn matvec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut y = Array1::zeros(self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            y[i] = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
        y
    }

    /// Sparse × dense product `self · x` for an `n × d` matrix.
    pub fn mul_dense(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let d = x.ncols();
        let mut y = Array2::zeros((self.n, d));
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut out = y.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.scaled_add(v, &x.row(j));
            }
        }
        y
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                a[[i, j]] = v;
            }
        }
        a
    }
}
