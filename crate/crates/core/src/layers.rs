//! Differentiable primitives: smoothing, linear, activation, softmax, dropout.
//!
//! Each primitive exposes a forward function and a vector-Jacobian product
//! (vjp) that maps an upstream gradient on the output to a gradient on the
//! input (and on the weights, for [`linear_vjp`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::linalg::{
    gemm, gemm_nt, gemm_tn, spmm, spmm_transposed, DenseMatrix, NodeMatrix, Scalar,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: DenseMatrix<T>) -> DenseMatrix<T> {
        match self {
            Activation::Relu => relu_forward(&x),
            Activation::Identity => x,
        }
    }
}

/// One step of an executable chain. Smoothing layers refer to an operator
/// slot owned by the compiled network.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Smoothing {
        operator: usize,
        activation: Activation,
    },
    Linear {
        in_dim: usize,
        out_dim: usize,
        param: usize,
    },
    Activation(Activation),
    Softmax,
    Dropout(f64),
}

impl LayerKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            LayerKind::Smoothing { .. } => "Smoothing",
            LayerKind::Linear { .. } => "Linear",
            LayerKind::Activation(Activation::Relu) => "ReLU",
            LayerKind::Activation(Activation::Identity) => "Identity",
            LayerKind::Softmax => "Softmax",
            LayerKind::Dropout(_) => "Dropout",
        }
    }
}

/// What a training-mode forward pass keeps for the backward pass.
#[derive(Clone, Debug)]
pub enum LayerState<T: Scalar> {
    Nothing,
    /// Input of a linear layer.
    Input(NodeMatrix<T>),
    /// Output of a relu (positive exactly where the input was positive).
    ReluOutput(DenseMatrix<T>),
    /// Per-entry dropout scale: 0 or 1/(1 - rate).
    DropoutMask(Vec<T>),
    /// Softmax output.
    Probabilities(DenseMatrix<T>),
}

pub fn smoothing_forward<T: Scalar>(
    s: &PropagationOperator<T>,
    x: &DenseMatrix<T>,
    activation: Activation,
) -> Result<DenseMatrix<T>> {
    Ok(activation.apply(spmm(&s.matrix, x)?))
}

/// `Sᵀ · upstream`. Any activation gradient must already be applied.
pub fn smoothing_vjp<T: Scalar>(
    s: &PropagationOperator<T>,
    upstream: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    spmm_transposed(&s.matrix, upstream)
}

pub fn linear_forward<T: Scalar>(x: &DenseMatrix<T>, w: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    gemm(x, w)
}

/// Returns `(upstream · Wᵀ, Xᵀ · upstream)`.
pub fn linear_vjp<T: Scalar>(
    x: &DenseMatrix<T>,
    w: &DenseMatrix<T>,
    upstream: &DenseMatrix<T>,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let dw = gemm_tn(x, upstream)?;
    let dx = gemm_nt(upstream, w)?;
    Ok((dx, dw))
}

pub fn relu_forward<T: Scalar>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient is zero at exactly zero input.
pub fn relu_vjp<T: Scalar>(
    input_or_output: &DenseMatrix<T>,
    upstream: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if input_or_output.shape() != upstream.shape() {
        return Err(Error::shape(
            "relu_vjp",
            input_or_output.shape(),
            upstream.shape(),
        ));
    }
    let mut out = upstream.clone();
    for (g, &x) in out.values_mut().iter_mut().zip(input_or_output.values()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(out)
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows_forward<T: Scalar>(z: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Full softmax Jacobian product: row j is `P_j ⊙ (u_j − (u_j·P_j) 1)`.
pub fn softmax_rows_vjp<T: Scalar>(
    p: &DenseMatrix<T>,
    upstream: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if p.shape() != upstream.shape() {
        return Err(Error::shape(
            "softmax_rows_vjp",
            p.shape(),
            upstream.shape(),
        ));
    }
    let mut out = DenseMatrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let (pi, ui) = (p.row(i), upstream.row(i));
        let dot: T = pi.iter().zip(ui).map(|(&a, &b)| a * b).sum();
        for ((o, &pv), &uv) in out.row_mut(i).iter_mut().zip(pi).zip(ui) {
            *o = pv * (uv - dot);
        }
    }
    Ok(out)
}

/// Inverted dropout. In inference mode, or with `rate == 0`, the input is
/// returned unchanged and no mask is produced.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    x: &NodeMatrix<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(NodeMatrix<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate {rate} is outside [0, 1)"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mut out = x.clone();
    let stored: &mut [T] = match &mut out {
        NodeMatrix::Dense(m) => m.values_mut(),
        NodeMatrix::Sparse(m) => m.values_mut(),
    };
    let mut mask = Vec::with_capacity(stored.len());
    for v in stored.iter_mut() {
        let scale = if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        };
        *v *= scale;
        mask.push(scale);
    }
    Ok((out, Some(mask)))
}

pub fn dropout_vjp<T: Scalar>(mask: &[T], upstream: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if mask.len() != upstream.values().len() {
        return Err(Error::Config(format!(
            "dropout mask has {} entries, upstream has {}",
            mask.len(),
            upstream.values().len()
        )));
    }
    let mut out = upstream.clone();
    for (g, &m) in out.values_mut().iter_mut().zip(mask) {
        *g *= m;
    }
    Ok(out)
}

/// Glorot-uniform initialization: `U(-r, r)` with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> DenseMatrix<T> {
    let r = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| T::lit(rng.random_range(-r..r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{augment, normalize, GraphTopology, Normalization};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    /// Central difference of `loss` with respect to every entry of `x`.
    fn numeric_grad(x: &DenseMatrix, loss: impl Fn(&DenseMatrix) -> f64) -> DenseMatrix {
        let h = 1e-5;
        let mut g = DenseMatrix::zeros(x.rows(), x.cols());
        for k in 0..x.values().len() {
            let mut plus = x.clone();
            plus.values_mut()[k] += h;
            let mut minus = x.clone();
            minus.values_mut()[k] -= h;
            g.values_mut()[k] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        g
    }

    fn sum_sq(m: &DenseMatrix) -> f64 {
        m.values().iter().map(|v| v * v).sum()
    }

    fn random_operator(n: usize, rng: &mut ChaCha8Rng, mode: Normalization) -> PropagationOperator {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < 0.4 {
                    edges.push((u, v));
                }
            }
        }
        let g = GraphTopology::new(n, edges).unwrap();
        normalize(&augment(&g), mode).unwrap()
    }

    #[test]
    fn smoothing_identity_cases() {
        let x = DenseMatrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap();
        let id = PropagationOperator::identity(2);
        assert_eq!(smoothing_forward(&id, &x, Activation::Identity).unwrap(), x);
        let neg = x.map(|v: f64| -v.abs() - 1.0);
        assert_eq!(
            smoothing_forward(&id, &neg, Activation::Relu).unwrap(),
            DenseMatrix::zeros(2, 2)
        );
        assert_eq!(smoothing_vjp(&id, &x).unwrap(), x);
    }

    #[test]
    fn smoothing_row_operator_keeps_probability_rows() {
        let g = GraphTopology::new(3, [(0, 1), (1, 2)]).unwrap();
        let s = normalize(&augment(&g), Normalization::Row).unwrap();
        let p = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        let out = smoothing_forward(&s, &p, Activation::Identity).unwrap();
        let want =
            DenseMatrix::from_rows(&[[0.5, 0.5], [2.0 / 3.0, 1.0 / 3.0], [0.5, 0.5]]).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn smoothing_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let mode = if trial % 2 == 0 {
                Normalization::Row
            } else {
                Normalization::Symmetric
            };
            let s = random_operator(5, &mut rng, mode);
            let x = rand_matrix(5, 3, &mut rng);
            let loss =
                |x: &DenseMatrix| sum_sq(&smoothing_forward(&s, x, Activation::Identity).unwrap());
            let out = smoothing_forward(&s, &x, Activation::Identity).unwrap();
            let upstream = out.map(|v| 2.0 * v);
            let analytic = smoothing_vjp(&s, &upstream).unwrap();
            let numeric = numeric_grad(&x, loss);
            for (a, n) in analytic.values().iter().zip(numeric.values()) {
                assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn symmetric_smoothing_vjp_is_spmm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_operator(6, &mut rng, Normalization::Symmetric);
        let u = rand_matrix(6, 2, &mut rng);
        let a = smoothing_vjp(&s, &u).unwrap();
        let b = spmm(&s.matrix, &u).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn linear_scalar_chain_rule() {
        let x = DenseMatrix::from_rows(&[[3.0]]).unwrap();
        let w = DenseMatrix::from_rows(&[[-2.0]]).unwrap();
        let u = DenseMatrix::from_rows(&[[5.0]]).unwrap();
        let (dx, dw) = linear_vjp(&x, &w, &u).unwrap();
        assert_eq!(dx.get(0, 0), 5.0 * -2.0);
        assert_eq!(dw.get(0, 0), 3.0 * 5.0);
    }

    #[test]
    fn linear_identity_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_matrix(4, 3, &mut rng);
        let u = rand_matrix(4, 3, &mut rng);
        let id = DenseMatrix::identity(3);
        assert_eq!(linear_forward(&x, &id).unwrap(), x);
        let (_, dw) = linear_vjp(&x, &id, &u).unwrap();
        assert!(dw.max_abs_diff(&gemm(&x.transpose(), &u).unwrap()) < 1e-12);
    }

    #[test]
    fn linear_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = rand_matrix(4, 3, &mut rng);
            let w = rand_matrix(3, 2, &mut rng);
            let out = linear_forward(&x, &w).unwrap();
            let (dx, dw) = linear_vjp(&x, &w, &out.map(|v| 2.0 * v)).unwrap();
            let ndx = numeric_grad(&x, |x| sum_sq(&linear_forward(x, &w).unwrap()));
            let ndw = numeric_grad(&w, |w| sum_sq(&linear_forward(&x, w).unwrap()));
            for (a, n) in dx.values().iter().zip(ndx.values()) {
                assert!(rel_err(*a, *n) < 1e-6);
            }
            for (a, n) in dw.values().iter().zip(ndw.values()) {
                assert!(rel_err(*a, *n) < 1e-6);
            }
        }
    }

    #[test]
    fn relu_cases() {
        let x = DenseMatrix::from_rows(&[[0.0, 2.0, -1.0]]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.row(0), &[0.0, 2.0, 0.0]);
        let g = relu_vjp(&x, &DenseMatrix::filled(1, 3, 1.0)).unwrap();
        assert_eq!(g.row(0), &[0.0, 1.0, 0.0]);
        let pos = DenseMatrix::from_rows(&[[0.5, 3.0]]).unwrap();
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn relu_vjp_matches_finite_differences_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut x = rand_matrix(4, 4, &mut rng);
            for v in x.values_mut() {
                if v.abs() < 1e-6 {
                    *v = 0.5;
                }
            }
            let y = relu_forward(&x);
            let analytic = relu_vjp(&x, &y.map(|v| 2.0 * v)).unwrap();
            let numeric = numeric_grad(&x, |x| sum_sq(&relu_forward(x)));
            for (a, n) in analytic.values().iter().zip(numeric.values()) {
                assert!(rel_err(*a, *n) < 1e-5);
            }
        }
    }

    #[test]
    fn softmax_known_rows() {
        let z = DenseMatrix::from_rows(&[[0.0, 0.0], [1000.0, 0.0]]).unwrap();
        let p = softmax_rows_forward(&z);
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.get(1, 0), 1.0);
        assert!(p.get(1, 1) < 1e-300 || p.get(1, 1) == 0.0);
        assert!(p.all_finite());
    }

    #[test]
    fn softmax_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let z = rand_matrix(3, 4, &mut rng).map(|v| 3.0 * v);
            let p = softmax_rows_forward(&z);
            let analytic = softmax_rows_vjp(&p, &p.map(|v| 2.0 * v)).unwrap();
            let numeric = numeric_grad(&z, |z| sum_sq(&softmax_rows_forward(z)));
            for (a, n) in analytic.values().iter().zip(numeric.values()) {
                assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
            }
            for i in 0..p.rows() {
                let s: f64 = p.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = NodeMatrix::Dense(DenseMatrix::filled(100, 100, 1.0));
        let (y, mask) = dropout_forward(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        let (y, mask) = dropout_forward(&x, 0.7, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());

        let (y, mask) = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let y = y.to_dense();
        let survivors = y.values().iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.05, "survivor fraction {frac}");
        assert!(y.values().iter().all(|&v| v == 0.0 || v == 2.0));
        let g = dropout_vjp(&mask.unwrap(), &DenseMatrix::filled(100, 100, 1.0)).unwrap();
        assert_eq!(g, y);
        assert!(dropout_forward(&x, 1.0, &mut rng, true).is_err());
    }
}
