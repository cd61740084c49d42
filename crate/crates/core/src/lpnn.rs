//! LPNN baseline: a free label field `f` and a feature network `g` fitted
//! jointly under a smoothness, fit and agreement objective.
//!
//! ```text
//! μ_G Tr(fᵀ(I − S)f) + μ_l Σ_L ‖f_i − y_i‖² + μ_u Σ_U ‖f_i‖²
//!   + λ_l Σ_L KL(y_i ‖ g_i) + λ_u Σ_U KL(softmax(f_i) ‖ g_i)
//! ```
//!
//! All terms are sums over nodes. `f` rows are unconstrained, so the last
//! term compares `g` with the row softmax of `f`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataSplit, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::graph::PropagationOperator;
use crate::layers::{softmax_rows_forward, softmax_rows_vjp, Activation};
use crate::linalg::{spmm, spmm_transposed, DenseMatrix, NodeMatrix};
use crate::networks::{
    compile, CompiledNetwork, Mode, NetworkSpec, OperatorSet, Parameters, Stage,
};
use crate::training::{
    adam_step, predict, relative_error_with_floor, AdamState, EpochRecord, GradCheckReport,
    TrainConfig, TrainHistory, LOG_CLAMP,
};

/// Hidden widths of `g`.
pub const G_HIDDEN: [usize; 2] = [128, 64];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LpnnWeights {
    pub mu_g: f64,
    pub mu_l: f64,
    pub mu_u: f64,
    pub lambda_l: f64,
    pub lambda_u: f64,
}

impl LpnnWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.mu_g,
            self.mu_l,
            self.mu_u,
            self.lambda_l,
            self.lambda_u,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "LPNN weights must be nonnegative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Loss value, its five terms (weighted, in declaration order), and the
/// gradients with respect to `f` and to `g`'s output.
#[derive(Clone, Debug)]
pub struct LpnnLoss {
    pub total: f64,
    pub terms: [f64; 5],
    pub df: DenseMatrix,
    pub dg: DenseMatrix,
}

fn clamped_ln(v: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.max(LOG_CLAMP).ln()
    }
}

pub fn lpnn_loss(
    f: &DenseMatrix,
    g_out: &DenseMatrix,
    s: &PropagationOperator,
    labels: &[usize],
    labeled: &[usize],
    weights: &LpnnWeights,
) -> Result<LpnnLoss> {
    if f.shape() != g_out.shape() {
        return Err(Error::Shape {
            op: "lpnn_loss",
            left: f.shape(),
            right: g_out.shape(),
        });
    }
    let (n, m) = f.shape();
    let mut is_labeled = vec![false; n];
    for &i in labeled {
        is_labeled[i] = true;
    }
    let w = weights;
    let mut terms = [0.0; 5];
    let mut df = DenseMatrix::zeros(n, m);
    let mut dg = DenseMatrix::zeros(n, m);

    // Smoothness: Tr(fᵀ(I − S)f), gradient (I − S)f + (I − Sᵀ)f.
    let sf = spmm(&s.matrix, f)?;
    let stf = spmm_transposed(&s.matrix, f)?;
    let mut trace = 0.0;
    for k in 0..f.values().len() {
        let fv = f.values()[k];
        trace += fv * (fv - sf.values()[k]);
        df.values_mut()[k] += w.mu_g * (2.0 * fv - sf.values()[k] - stf.values()[k]);
    }
    terms[0] = w.mu_g * trace;

    let q = softmax_rows_forward(f);
    let mut dq = DenseMatrix::zeros(n, m);
    for i in 0..n {
        if is_labeled[i] {
            let y = labels[i];
            for c in 0..m {
                let target = if c == y { 1.0 } else { 0.0 };
                let diff = f.get(i, c) - target;
                terms[1] += w.mu_l * diff * diff;
                df.set(i, c, df.get(i, c) + 2.0 * w.mu_l * diff);
            }
            // KL(y ‖ g) with one-hot y is −ln g_y.
            let gy = g_out.get(i, y);
            terms[3] -= w.lambda_l * clamped_ln(gy);
            dg.set(i, y, dg.get(i, y) - w.lambda_l / gy.max(LOG_CLAMP));
        } else {
            for c in 0..m {
                let fv = f.get(i, c);
                terms[2] += w.mu_u * fv * fv;
                df.set(i, c, df.get(i, c) + 2.0 * w.mu_u * fv);

                let (qv, gv) = (q.get(i, c), g_out.get(i, c));
                let (lq, lg) = (clamped_ln(qv), clamped_ln(gv));
                terms[4] += w.lambda_u * qv * (lq - lg);
                dq.set(i, c, w.lambda_u * (lq + 1.0 - lg));
                dg.set(i, c, dg.get(i, c) - w.lambda_u * qv / gv.max(LOG_CLAMP));
            }
        }
    }
    if w.lambda_u != 0.0 {
        df.add_scaled(&softmax_rows_vjp(&q, &dq)?, 1.0)?;
    }
    Ok(LpnnLoss {
        total: terms.iter().sum(),
        terms,
        df,
        dg,
    })
}

/// The spec used for `g`: two ReLU hidden layers and a softmax output.
pub fn g_spec() -> NetworkSpec {
    NetworkSpec {
        name: "lpnn-g".into(),
        stages: vec![
            Stage::Mlp {
                hidden_dims: G_HIDDEN.to_vec(),
                activation: Activation::Relu,
            },
            Stage::LinearClassifier,
            Stage::Softmax,
        ],
        allow_unnormalized_lp: false,
    }
}

#[derive(Clone, Debug)]
pub struct LpnnModel {
    pub f: DenseMatrix,
    pub g: CompiledNetwork,
    pub g_params: Parameters,
}

impl LpnnModel {
    /// Class probabilities from the feature network; the default prediction.
    pub fn predict_g(&self, input: &NodeMatrix) -> Result<DenseMatrix> {
        predict(&self.g, &self.g_params, input)
    }

    /// Row softmax of the label field.
    pub fn predict_f(&self) -> DenseMatrix {
        softmax_rows_forward(&self.f)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LpnnHistory {
    /// Accuracies here come from `g`.
    pub history: TrainHistory,
    /// Validation accuracy of `softmax(f)` per epoch.
    pub f_val_accuracy: Vec<f64>,
}

/// Jointly fits `f` and `g` with Adam. Weight decay applies to `g` only.
/// Early stopping and model selection use `g`'s validation accuracy.
pub fn train_lpnn(
    dataset: &Dataset,
    operators: &OperatorSet,
    split: &DataSplit,
    config: &TrainConfig,
    weights: &LpnnWeights,
) -> Result<(LpnnModel, LpnnHistory)> {
    config.validate()?;
    weights.validate()?;
    let g = compile(
        &g_spec(),
        operators,
        dataset.feature_dim(),
        dataset.num_classes,
        config.dropout,
    )?;
    let input = dataset.input();
    let labels = &dataset.labels;
    let s = &operators.feature;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut g_params = g.init_params(&mut rng);
    rng.set_stream(1);
    let mut f = DenseMatrix::zeros(dataset.num_nodes(), dataset.num_classes);
    let mut g_adam = AdamState::new(g.param_shapes());
    let mut f_adam = AdamState::new(&[f.shape()]);

    let mut out = LpnnHistory::default();
    out.history.best_val_accuracy = f64::NEG_INFINITY;
    let mut best = (f.clone(), g_params.clone());
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let (g_out, trace) = g.forward(&g_params, &input, Mode::Train, &mut rng)?;
        let loss = lpnn_loss(&f, &g_out, s, labels, &split.train, weights)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                learning_rate: config.learning_rate,
            });
        }
        let g_grads = g.backward(&g_params, &trace, &loss.dg)?;
        adam_step(
            &mut g_params,
            &g_grads,
            &mut g_adam,
            config.learning_rate,
            config.weight_decay,
        )?;
        let mut f_params = Parameters(vec![f]);
        adam_step(
            &mut f_params,
            &Parameters(vec![loss.df]),
            &mut f_adam,
            config.learning_rate,
            0.0,
        )?;
        f = f_params.0.pop().unwrap();

        let p = predict(&g, &g_params, &input)?;
        let val_accuracy = accuracy(&p, labels, &split.val)?;
        out.f_val_accuracy
            .push(accuracy(&softmax_rows_forward(&f), labels, &split.val)?);
        let h = &mut out.history;
        h.epochs.push(EpochRecord {
            epoch,
            train_loss: loss.total,
            train_accuracy: accuracy(&p, labels, &split.train)?,
            val_accuracy,
        });
        h.stopped_epoch = epoch;
        if val_accuracy > h.best_val_accuracy {
            h.best_val_accuracy = val_accuracy;
            h.best_epoch = epoch;
            best = (f.clone(), g_params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                h.early_stopped = true;
                break;
            }
        }
    }
    let (f, g_params) = best;
    Ok((LpnnModel { f, g, g_params }, out))
}

/// Finite-difference check of the LPNN objective over every entry of `f`
/// and every weight of `g`.
pub fn lpnn_gradient_check(
    g: &CompiledNetwork,
    input: &NodeMatrix,
    s: &PropagationOperator,
    labels: &[usize],
    labeled: &[usize],
    weights: &LpnnWeights,
    seed: u64,
) -> Result<GradCheckReport> {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g_params = g.init_params(&mut rng);
    let n = g.num_nodes();
    let m = g.num_classes();
    let f = DenseMatrix::from_fn(n, m, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
    let eval = |f: &DenseMatrix, p: &Parameters| -> Result<_> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
        let (out, trace) = g.forward(p, input, Mode::Train, &mut rng)?;
        Ok((lpnn_loss(f, &out, s, labels, labeled, weights)?, trace))
    };
    let (loss, trace) = eval(&f, &g_params)?;
    let g_grads = g.backward(&g_params, &trace, &loss.dg)?;

    let mut report = GradCheckReport {
        network: "lpnn".into(),
        checked: 0,
        skipped: 0,
        max_relative_error: 0.0,
        worst_parameter: None,
    };
    // The objective is a sum over nodes, so central-difference roundoff
    // (about eps * |loss| / h) grows with its magnitude; entries below this
    // floor are not resolvable at h = 1e-5.
    let floor = 1e-5 * loss.total.abs().max(1.0);
    let base = loss.total;
    let mut record = |slot: usize, idx: usize, analytic: f64, plus: f64, minus: f64| {
        // One-sided slopes that disagree mean the step crossed a ReLU kink.
        let forward = (plus - base) / h;
        let backward = (base - minus) / h;
        if relative_error_with_floor(forward, backward, floor) > 1e-3 {
            report.skipped += 1;
            return;
        }
        let err = relative_error_with_floor(analytic, (plus - minus) / (2.0 * h), floor);
        report.checked += 1;
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst_parameter = Some((slot, idx));
        }
    };
    for idx in 0..f.values().len() {
        let mut plus = f.clone();
        plus.values_mut()[idx] += h;
        let mut minus = f.clone();
        minus.values_mut()[idx] -= h;
        let (lp, lm) = (
            eval(&plus, &g_params)?.0.total,
            eval(&minus, &g_params)?.0.total,
        );
        record(0, idx, loss.df.values()[idx], lp, lm);
    }
    for (k, grad) in g_grads.0.iter().enumerate() {
        for idx in 0..grad.values().len() {
            let mut plus = g_params.clone();
            plus.0[k].values_mut()[idx] += h;
            let mut minus = g_params.clone();
            minus.0[k].values_mut()[idx] -= h;
            let (lp, lm) = (eval(&f, &plus)?.0.total, eval(&f, &minus)?.0.total);
            record(k + 1, idx, grad.values()[idx], lp, lm);
        }
    }
    Ok(report)
}
