//! Minimal sparse-matrix support: coordinate triplets for assembly and
//! compressed rows for products.
//!
//! Stored explicit zeros are forbidden everywhere, so nonzero counts are
//! exact: `push` drops exact zeros and sparse products drop entries whose
//! accumulated value is exactly 0.0.

use crate::error::{MooError, Result};

/// Coordinate-format builder. Duplicate entries are summed on conversion.
#[derive(Debug, Clone)]
pub struct Coo {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Coo {
    pub fn new(rows: usize, cols: usize) -> Self {
        Coo { rows, cols, entries: Vec::new() }
    }

    /// Add an entry; exact zeros are dropped so stored-zero counts stay exact.
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    pub fn to_csr(&self) -> Csr {
        let mut entries = self.entries.clone();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != 0.0);

        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(merged.len());
        let mut values = Vec::with_capacity(merged.len());
        let mut pos = 0usize;
        for r in 0..self.rows {
            while pos < merged.len() && merged[pos].0 == r {
                indices.push(merged[pos].1);
                values.push(merged[pos].2);
                pos += 1;
            }
            indptr[r + 1] = indices.len();
        }
        Csr { rows: self.rows, cols: self.cols, indptr, indices, values }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    /// out = self * x
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in idx.iter().zip(val) {
                acc += v * x[c];
            }
            out[r] = acc;
        }
    }

    /// out += self^T * x
    pub fn mul_vec_t_add(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                out[c] += v * xr;
            }
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut fill = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0f64; self.nnz()];
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                let p = fill[c];
                indices[p] = r;
                values[p] = v;
                fill[c] += 1;
            }
        }
        Csr { rows: self.cols, cols: self.rows, indptr, indices, values }
    }

    /// self * other with exact-zero dropping.
    pub fn mul_csr(&self, other: &Csr) -> Csr {
        assert_eq!(self.cols, other.rows);
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0f64; other.cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; other.cols];
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&k, &v) in idx.iter().zip(val) {
                let (oidx, oval) = other.row(k);
                for (&c, &ov) in oidx.iter().zip(oval) {
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    acc[c] += v * ov;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                if acc[c] != 0.0 {
                    indices.push(c);
                    values.push(acc[c]);
                }
                acc[c] = 0.0;
                mark[c] = false;
            }
            touched.clear();
            indptr[r + 1] = indices.len();
        }
        Csr { rows: self.rows, cols: other.cols, indptr, indices, values }
    }

    pub fn scale(&self, s: f64) -> Csr {
        assert!(s != 0.0, "scale(0.0) would discard structure");
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                m[(r, c)] = v;
            }
        }
        m
    }
}

/// Exact sparsity ratio of a matrix: (#nonzeros)/(rows*cols).
///
/// Stored zeros are forbidden by construction, so `nnz` is the true count.
pub fn sparsity_ratio(m: &Csr) -> Result<f64> {
    if m.rows == 0 || m.cols == 0 {
        return Err(MooError::EmptyMatrix);
    }
    Ok(m.nnz() as f64 / (m.rows as f64 * m.cols as f64))
}
