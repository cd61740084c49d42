//! Masked cross-entropy, Adam, and the full-batch training loop with early
//! stopping on validation accuracy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataSplit, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::linalg::{DenseMatrix, NodeMatrix, Scalar};
use crate::networks::{CompiledNetwork, Mode, Parameters};

/// Smallest probability fed to a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            dropout: 0.5,
            weight_decay: 5e-4,
            max_epochs: 500,
            patience: 25,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    /// Rates must lie in `[0, 1)`; epoch counts must be positive.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("dropout", self.dropout),
            ("weight_decay", self.weight_decay),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1)")));
            }
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs and patience must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of the true class over `nodes`, and its
/// gradient with respect to `p`.
pub fn masked_cross_entropy<T: Scalar>(
    p: &DenseMatrix<T>,
    labels: &[usize],
    nodes: &[usize],
) -> Result<(f64, DenseMatrix<T>)> {
    if nodes.is_empty() {
        return Err(Error::Config(
            "cross-entropy over an empty labeled set".into(),
        ));
    }
    let scale = 1.0 / nodes.len() as f64;
    let mut grad = DenseMatrix::zeros(p.rows(), p.cols());
    let mut loss = 0.0;
    for &i in nodes {
        let c = labels[i];
        let raw = p.get(i, c).as_f64();
        // f64::max would turn NaN into the clamp and hide divergence.
        let q = if raw.is_nan() {
            raw
        } else {
            raw.max(LOG_CLAMP)
        };
        loss -= q.ln();
        grad.set(i, c, grad.get(i, c) - T::lit(scale / q));
    }
    Ok((loss * scale, grad))
}

#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar = f64> {
    m: Vec<DenseMatrix<T>>,
    v: Vec<DenseMatrix<T>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        let zeros = || {
            shapes
                .iter()
                .map(|&(r, c)| DenseMatrix::zeros(r, c))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update with `weight_decay · W` added to each
/// gradient.
pub fn adam_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    state: &mut AdamState<T>,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.0.len() != grads.0.len() || params.0.len() != state.m.len() {
        return Err(Error::Config(
            "parameter, gradient and optimizer state counts differ".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let one = T::one();
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let (lr, wd, eps) = (
        T::lit(learning_rate),
        T::lit(weight_decay),
        T::lit(state.eps),
    );
    for k in 0..params.0.len() {
        let w = &mut params.0[k];
        let g = &grads.0[k];
        if w.shape() != g.shape() || w.shape() != state.m[k].shape() {
            return Err(crate::error::Error::Shape {
                op: "adam_step",
                left: w.shape(),
                right: g.shape(),
            });
        }
        let m = state.m[k].values_mut();
        let v = state.v[k].values_mut();
        for (((w, &g), m), v) in w.values_mut().iter_mut().zip(g.values()).zip(m).zip(v) {
            let g = g + wd * *w;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Last epoch run.
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

impl TrainHistory {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }

    /// `epoch,train_loss,train_accuracy,val_accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_accuracy,val_accuracy\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_accuracy, r.val_accuracy
            ));
        }
        out
    }
}

/// Infer-mode class probabilities.
pub fn predict<T: Scalar>(
    net: &CompiledNetwork<T>,
    params: &Parameters<T>,
    input: &NodeMatrix<T>,
) -> Result<DenseMatrix<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(net.forward(params, input, Mode::Infer, &mut rng)?.0)
}

/// Prepares the dataset's features for `net` and trains it.
pub fn train<T: Scalar>(
    net: &CompiledNetwork<T>,
    dataset: &Dataset,
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<(Parameters<T>, TrainHistory)> {
    let input = net.prepare_input(&dataset.input().cast())?;
    train_prepared(net, &input, &dataset.labels, split, config)
}

/// Trains on an input already passed through
/// [`CompiledNetwork::prepare_input`]. Returns the parameters of the epoch
/// with the highest validation accuracy (earliest on ties).
pub fn train_prepared<T: Scalar>(
    net: &CompiledNetwork<T>,
    input: &NodeMatrix<T>,
    labels: &[usize],
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<(Parameters<T>, TrainHistory)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = net.init_params(&mut rng);
    rng.set_stream(1);
    let mut adam = AdamState::new(net.param_shapes());
    let mut history = TrainHistory {
        best_val_accuracy: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let (p, trace) = net.forward(&params, input, Mode::Train, &mut rng)?;
        let (loss, d_p) = masked_cross_entropy(&p, labels, &split.train)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                learning_rate: config.learning_rate,
            });
        }
        let grads = net.backward(&params, &trace, &d_p)?;
        adam_step(
            &mut params,
            &grads,
            &mut adam,
            config.learning_rate,
            config.weight_decay,
        )?;

        let p = predict(net, &params, input)?;
        let val_accuracy = accuracy(&p, labels, &split.val)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
            train_accuracy: accuracy(&p, labels, &split.train)?,
            val_accuracy,
        });
        history.stopped_epoch = epoch;
        if val_accuracy > history.best_val_accuracy {
            history.best_val_accuracy = val_accuracy;
            history.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.early_stopped = true;
                break;
            }
        }
    }
    Ok((best, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub network: String,
    pub checked: usize,
    /// Entries left out because the step straddled a non-differentiable point.
    pub skipped: usize,
    pub max_relative_error: f64,
    pub worst_parameter: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Relative error with a floor on the denominator so that two near-zero
/// values compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    relative_error_with_floor(a, b, 1e-6)
}

/// [`relative_error`] with an explicit denominator floor.
pub fn relative_error_with_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(floor)
}

/// Compares backpropagated gradients of the masked cross-entropy against
/// central differences (h = 1e-5) for every parameter entry. Dropout masks
/// are held fixed by reseeding before each forward pass.
pub fn gradient_check(
    net: &CompiledNetwork<f64>,
    input: &NodeMatrix<f64>,
    labels: &[usize],
    nodes: &[usize],
    seed: u64,
) -> Result<GradCheckReport> {
    let h = 1e-5;
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
    let input = net.prepare_input(input)?;
    let eval = |p: &Parameters| -> Result<_> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let (out, trace) = net.forward(p, &input, Mode::Train, &mut rng)?;
        let (loss, d_out) = masked_cross_entropy(&out, labels, nodes)?;
        Ok((loss, d_out, trace))
    };
    let (_, d_out, trace) = eval(&params)?;
    let grads = net.backward(&params, &trace, &d_out)?;
    let mut report = GradCheckReport {
        network: net.name.clone(),
        checked: 0,
        skipped: 0,
        max_relative_error: 0.0,
        worst_parameter: None,
    };
    for (k, g) in grads.0.iter().enumerate() {
        for idx in 0..g.values().len() {
            let mut plus = params.clone();
            plus.0[k].values_mut()[idx] += h;
            let mut minus = params.clone();
            minus.0[k].values_mut()[idx] -= h;
            let numeric = (eval(&plus)?.0 - eval(&minus)?.0) / (2.0 * h);
            let err = relative_error(g.values()[idx], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst_parameter.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst_parameter = Some((k, idx));
            }
        }
    }
    Ok(report)
}
