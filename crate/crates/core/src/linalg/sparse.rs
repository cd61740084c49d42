use super::{DenseMatrix, Scalar};
use crate::error::{Error, Result};

/// Compressed sparse row matrix. Column indices are strictly increasing within
/// each row, so there are no duplicate (row, col) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T: Scalar = f64> {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 {
            return Err(Error::Config(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[rows] != col_indices.len() {
            return Err(Error::Config(
                "row_offsets must start at 0 and end at the number of stored entries".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(Error::Config(format!(
                "{} column indices but {} values",
                col_indices.len(),
                values.len()
            )));
        }
        for r in 0..rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(Error::Config(format!("row_offsets decreases at row {r}")));
            }
            let cidx = &col_indices[lo..hi];
            if cidx.iter().any(|&c| c >= cols) {
                return Err(Error::Config(format!(
                    "column index out of range in row {r}"
                )));
            }
            if cidx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "column indices in row {r} are not strictly increasing"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a matrix from (row, col, value) triplets in any order.
    /// Duplicate coordinates are rejected.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, T)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Config(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1)
        {
            return Err(Error::Config(format!(
                "duplicate entry at ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut row_offsets = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_offsets[r + 1] += 1;
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        let col_indices = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2).collect();
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Stores every nonzero entry of `dense`.
    pub fn from_dense(dense: &DenseMatrix<T>) -> Self {
        let mut row_offsets = Vec::with_capacity(dense.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..dense.rows() {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != T::zero() {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            rows: dense.rows(),
            cols: dense.cols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cidx, vals) = self.row(i);
            for (&j, &v) in cidx.iter().zip(vals) {
                out.set(i, j, v);
            }
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn row_mut(&mut self, i: usize) -> (&[usize], &mut [T]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &mut self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cidx, vals) = self.row(i);
        match cidx.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.row(i).1.iter().copied().sum())
            .collect()
    }

    /// Same sparsity pattern, values replaced by `f(row, col, value)`.
    pub fn map_entries(&self, f: impl Fn(usize, usize, T) -> T) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            for k in lo..hi {
                out.values[k] = f(i, self.col_indices[k], self.values[k]);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for i in 0..self.rows {
            let (cidx, vals) = self.row(i);
            for (&j, &v) in cidx.iter().zip(vals) {
                let slot = next[j];
                col_indices[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|i| {
            let (cidx, vals) = self.row(i);
            cidx.iter()
                .zip(vals)
                .all(|(&j, &v)| (v.as_f64() - self.get(j, i).as_f64()).abs() <= tol)
        })
    }

    pub fn cast<U: Scalar>(&self) -> SparseMatrix<U> {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values: self.values.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut row_offsets = Vec::with_capacity(idx.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &i in idx {
            let (c, v) = self.row(i);
            col_indices.extend_from_slice(c);
            values.extend_from_slice(v);
            row_offsets.push(col_indices.len());
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            row_offsets,
            col_indices,
            values,
        }
    }
}
