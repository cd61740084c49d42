//! Dense and sparse kernels.
//!
//! Every kernel is a pure function. Row-parallel kernels give each output row
//! to exactly one worker and accumulate it in a fixed order, so results are
//! bitwise identical whatever the thread count.

mod dense;
mod sparse;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rayon::prelude::*;

pub use dense::DenseMatrix;
pub use sparse::SparseMatrix;

use crate::error::{Error, Result};

/// Floating-point element type. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Work (multiply-adds) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

fn for_each_row<T: Scalar>(
    out: &mut DenseMatrix<T>,
    work: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    let cols = out.cols();
    if cols == 0 {
        return;
    }
    if work >= PAR_THRESHOLD {
        out.values_mut()
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        out.values_mut()
            .chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// `S · X`.
pub fn spmm<T: Scalar>(s: &SparseMatrix<T>, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if s.cols() != x.rows() {
        return Err(Error::shape("spmm", s.shape(), x.shape()));
    }
    let mut out = DenseMatrix::zeros(s.rows(), x.cols());
    for_each_row(&mut out, s.nnz() * x.cols(), |i, row| {
        let (cidx, vals) = s.row(i);
        for (&k, &v) in cidx.iter().zip(vals) {
            for (o, &xv) in row.iter_mut().zip(x.row(k)) {
                *o += v * xv;
            }
        }
    });
    Ok(out)
}

/// `Sᵀ · X` without building `Sᵀ`.
pub fn spmm_transposed<T: Scalar>(
    s: &SparseMatrix<T>,
    x: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if s.rows() != x.rows() {
        return Err(Error::shape("spmm_transposed", s.shape(), x.shape()));
    }
    let mut out = DenseMatrix::zeros(s.cols(), x.cols());
    for i in 0..s.rows() {
        let (cidx, vals) = s.row(i);
        let xi = x.row(i);
        for (&j, &v) in cidx.iter().zip(vals) {
            for (o, &xv) in out.row_mut(j).iter_mut().zip(xi) {
                *o += v * xv;
            }
        }
    }
    Ok(out)
}

/// Sparse × sparse product, row by row with a dense accumulator.
pub fn spgemm<T: Scalar>(a: &SparseMatrix<T>, b: &SparseMatrix<T>) -> Result<SparseMatrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape("spgemm", a.shape(), b.shape()));
    }
    let mut acc = vec![T::zero(); b.cols()];
    let mut seen = vec![false; b.cols()];
    let mut touched: Vec<usize> = Vec::new();
    let mut row_offsets = Vec::with_capacity(a.rows() + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for i in 0..a.rows() {
        let (acols, avals) = a.row(i);
        for (&k, &av) in acols.iter().zip(avals) {
            let (bcols, bvals) = b.row(k);
            for (&j, &bv) in bcols.iter().zip(bvals) {
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                }
                acc[j] += av * bv;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            col_indices.push(j);
            values.push(acc[j]);
            acc[j] = T::zero();
            seen[j] = false;
        }
        touched.clear();
        row_offsets.push(col_indices.len());
    }
    SparseMatrix::new(a.rows(), b.cols(), row_offsets, col_indices, values)
}

/// `A · B`.
pub fn gemm<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape("gemm", a.shape(), b.shape()));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for_each_row(&mut out, a.rows() * a.cols() * b.cols(), |i, row| {
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `Aᵀ · B`.
pub fn gemm_tn<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.rows() != b.rows() {
        return Err(Error::shape("gemm_tn", a.shape(), b.shape()));
    }
    let mut out = DenseMatrix::zeros(a.cols(), b.cols());
    for_each_row(&mut out, a.rows() * a.cols() * b.cols(), |r, row| {
        for i in 0..a.rows() {
            let av = a.get(i, r);
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(b.row(i)) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `A · Bᵀ`.
pub fn gemm_nt<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape("gemm_nt", a.shape(), b.shape()));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.rows());
    for_each_row(&mut out, a.rows() * a.cols() * b.rows(), |i, row| {
        let ai = a.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = ai.iter().zip(b.row(j)).map(|(&x, &y)| x * y).sum();
        }
    });
    Ok(out)
}

/// Scales every nonzero row to unit Euclidean norm. Zero rows are left alone.
pub fn row_unit_normalize<T: Scalar>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm > T::zero() {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    out
}

/// Sparse counterpart of [`row_unit_normalize`].
pub fn row_unit_normalize_sparse<T: Scalar>(x: &SparseMatrix<T>) -> SparseMatrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let (_, vals) = out.row_mut(i);
        let norm = vals.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm > T::zero() {
            for v in vals.iter_mut() {
                *v /= norm;
            }
        }
    }
    out
}

/// A node-indexed matrix held densely or sparsely. Network inputs use this so
/// that bag-of-words features never need to be densified.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeMatrix<T: Scalar = f64> {
    Dense(DenseMatrix<T>),
    Sparse(SparseMatrix<T>),
}

impl<T: Scalar> NodeMatrix<T> {
    pub fn rows(&self) -> usize {
        match self {
            NodeMatrix::Dense(m) => m.rows(),
            NodeMatrix::Sparse(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            NodeMatrix::Dense(m) => m.cols(),
            NodeMatrix::Sparse(m) => m.cols(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        match self {
            NodeMatrix::Dense(m) => m.clone(),
            NodeMatrix::Sparse(m) => m.to_dense(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> NodeMatrix<U> {
        match self {
            NodeMatrix::Dense(m) => NodeMatrix::Dense(m.cast()),
            NodeMatrix::Sparse(m) => NodeMatrix::Sparse(m.cast()),
        }
    }

    /// `S · self`, keeping the representation.
    pub fn premultiply(&self, s: &SparseMatrix<T>) -> Result<Self> {
        Ok(match self {
            NodeMatrix::Dense(m) => NodeMatrix::Dense(spmm(s, m)?),
            NodeMatrix::Sparse(m) => NodeMatrix::Sparse(spgemm(s, m)?),
        })
    }

    /// `self · W`.
    pub fn matmul(&self, w: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        match self {
            NodeMatrix::Dense(m) => gemm(m, w),
            NodeMatrix::Sparse(m) => spmm(m, w),
        }
    }

    /// `selfᵀ · U`.
    pub fn t_matmul(&self, u: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        match self {
            NodeMatrix::Dense(m) => gemm_tn(m, u),
            NodeMatrix::Sparse(m) => spmm_transposed(m, u),
        }
    }

    pub fn stored_values(&self) -> usize {
        match self {
            NodeMatrix::Dense(m) => m.values().len(),
            NodeMatrix::Sparse(m) => m.nnz(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn p3_row() -> SparseMatrix {
        let third = 1.0 / 3.0;
        SparseMatrix::from_triplets(
            3,
            3,
            vec![
                (0, 0, 0.5),
                (0, 1, 0.5),
                (1, 0, third),
                (1, 1, third),
                (1, 2, third),
                (2, 1, 0.5),
                (2, 2, 0.5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn spmm_identity_is_noop() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(spmm(&SparseMatrix::identity(3), &x).unwrap(), x);
    }

    #[test]
    fn spmm_p3_matches_triple_loop() {
        let s = p3_row();
        let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        let got = spmm(&s, &x).unwrap();
        let oracle = dense_mul(&s.to_dense(), &x);
        assert!(got.max_abs_diff(&oracle) < 1e-15);
        let want =
            DenseMatrix::from_rows(&[[0.5, 0.5], [2.0 / 3.0, 1.0 / 3.0], [0.5, 0.5]]).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn spmm_zero_operator_annihilates() {
        let s = SparseMatrix::<f64>::zeros(2, 3);
        let x = DenseMatrix::filled(3, 4, 1.0);
        assert_eq!(spmm(&s, &x).unwrap(), DenseMatrix::zeros(2, 4));
    }

    #[test]
    fn spmm_shape_error_names_both_shapes() {
        let s = SparseMatrix::<f64>::identity(3);
        let x = DenseMatrix::zeros(2, 4);
        let msg = spmm(&s, &x).unwrap_err().to_string();
        assert!(msg.contains("3x3") && msg.contains("2x4"), "{msg}");
    }

    #[test]
    fn spmm_transposed_single_entry() {
        let s = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap();
        let x = DenseMatrix::from_rows(&[[3.0], [7.0]]).unwrap();
        let got = spmm_transposed(&s, &x).unwrap();
        let oracle = dense_mul(&s.to_dense().transpose(), &x);
        assert_eq!(got, oracle);
        assert_eq!(got, DenseMatrix::from_rows(&[[0.0], [3.0]]).unwrap());
    }

    #[test]
    fn spmm_transposed_on_symmetric_matches_spmm() {
        let s = SparseMatrix::from_triplets(
            3,
            3,
            vec![
                (0, 1, 0.3),
                (1, 0, 0.3),
                (1, 1, 2.0),
                (2, 2, -1.0),
                (0, 2, 0.7),
                (2, 0, 0.7),
            ],
        )
        .unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 4.0], [3.0, 1.5]]).unwrap();
        let a = spmm(&s, &x).unwrap();
        let b = spmm_transposed(&s, &x).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        let id = SparseMatrix::identity(3);
        assert_eq!(spmm_transposed(&id, &x).unwrap(), x);
    }

    #[test]
    fn gemm_hand_values_and_degenerate_shapes() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert_eq!(
            gemm(&a, &b).unwrap(),
            DenseMatrix::from_rows(&[[3.0], [7.0]]).unwrap()
        );
        assert_eq!(gemm(&a, &DenseMatrix::identity(2)).unwrap(), a);
        let empty = DenseMatrix::<f64>::zeros(0, 3);
        let c = gemm(&empty, &DenseMatrix::zeros(3, 5)).unwrap();
        assert_eq!(c.shape(), (0, 5));
        assert!(gemm(&a, &DenseMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn transposed_gemms_match_explicit_transpose() {
        let a = DenseMatrix::from_fn(4, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let b = DenseMatrix::from_fn(4, 2, |i, j| (i * j) as f64 + 0.25);
        assert!(
            gemm_tn(&a, &b)
                .unwrap()
                .max_abs_diff(&dense_mul(&a.transpose(), &b))
                < 1e-12
        );
        let c = DenseMatrix::from_fn(5, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        assert!(
            gemm_nt(&a, &c)
                .unwrap()
                .max_abs_diff(&dense_mul(&a, &c.transpose()))
                < 1e-12
        );
    }

    #[test]
    fn spgemm_matches_dense_product() {
        let s = p3_row();
        let x = SparseMatrix::from_triplets(3, 2, vec![(0, 0, 1.0), (2, 1, 2.0)]).unwrap();
        let got = spgemm(&s, &x).unwrap().to_dense();
        assert!(got.max_abs_diff(&dense_mul(&s.to_dense(), &x.to_dense())) < 1e-15);
    }

    #[test]
    fn row_normalization_cases() {
        let x = DenseMatrix::from_rows(&[[3.0, 4.0], [0.0, 0.0], [0.6, 0.8]]).unwrap();
        let y = row_unit_normalize(&x);
        assert!((y.get(0, 0) - 0.6).abs() < 1e-15 && (y.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(y.row(1), &[0.0, 0.0]);
        assert!((y.get(2, 0) - 0.6).abs() < 1e-12 && (y.get(2, 1) - 0.8).abs() < 1e-12);
        let s = row_unit_normalize_sparse(&SparseMatrix::from_dense(&x));
        assert!(s.to_dense().max_abs_diff(&y) < 1e-15);
    }

    #[test]
    fn sparse_constructor_rejects_bad_structure() {
        assert!(SparseMatrix::<f64>::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseMatrix::<f64>::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::<f64>::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
    }
}
