use std::sync::Arc;

use rand::Rng;

use super::cost::{estimate_cost, CostEstimate};
use super::spec::{NetworkSpec, OperatorKind, Stage};
use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::layers::{
    dropout_forward, dropout_vjp, glorot_uniform, relu_forward, relu_vjp, softmax_rows_forward,
    softmax_rows_vjp, Activation, LayerKind, LayerState,
};
use crate::linalg::{gemm_nt, spmm, spmm_transposed, DenseMatrix, NodeMatrix, Scalar};

/// The operators a network may smooth with: slot 0 for features, slot 1 for
/// labels.
#[derive(Clone, Debug)]
pub struct OperatorSet<T: Scalar = f64> {
    pub feature: Arc<PropagationOperator<T>>,
    pub label: Arc<PropagationOperator<T>>,
}

impl<T: Scalar> OperatorSet<T> {
    pub fn new(feature: PropagationOperator<T>, label: PropagationOperator<T>) -> Self {
        Self {
            feature: Arc::new(feature),
            label: Arc::new(label),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.feature.num_nodes()
    }

    fn slot(kind: OperatorKind) -> usize {
        match kind {
            OperatorKind::Symmetric => 0,
            OperatorKind::Row => 1,
        }
    }

    fn get(&self, slot: usize) -> &PropagationOperator<T> {
        if slot == 0 {
            &self.feature
        } else {
            &self.label
        }
    }

    pub fn cast<U: Scalar>(&self) -> OperatorSet<U> {
        OperatorSet::new(self.feature.cast(), self.label.cast())
    }
}

/// Learnable weights, one matrix per linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T: Scalar = f64>(pub Vec<DenseMatrix<T>>);

impl<T: Scalar> Parameters<T> {
    pub fn zeros_like(shapes: &[(usize, usize)]) -> Self {
        Parameters(
            shapes
                .iter()
                .map(|&(r, c)| DenseMatrix::zeros(r, c))
                .collect(),
        )
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|m| m.values().len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(DenseMatrix::all_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|m| m.values().iter())
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-layer state from a forward pass. Empty in inference mode.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Scalar> {
    mode: Mode,
    states: Vec<LayerState<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// A validated executable chain.
#[derive(Clone, Debug)]
pub struct CompiledNetwork<T: Scalar = f64> {
    pub name: String,
    operators: OperatorSet<T>,
    /// Leading identity smoothings, folded into a precomputed input.
    input_prefix: Vec<usize>,
    layers: Vec<LayerKind>,
    param_shapes: Vec<(usize, usize)>,
    input_dim: usize,
    num_classes: usize,
    cost: CostEstimate,
}

/// `S^L X` by successive products.
pub fn precompute_fp<T: Scalar>(
    s: &PropagationOperator<T>,
    x: &DenseMatrix<T>,
    layers: usize,
) -> Result<DenseMatrix<T>> {
    let mut out = x.clone();
    for _ in 0..layers {
        out = spmm(&s.matrix, &out)?;
    }
    Ok(out)
}

/// Validates `spec` and expands it into a layer chain. Dropout layers are
/// inserted before every linear layer when `dropout > 0`.
pub fn compile<T: Scalar>(
    spec: &NetworkSpec,
    operators: &OperatorSet<T>,
    input_dim: usize,
    num_classes: usize,
    dropout: f64,
) -> Result<CompiledNetwork<T>> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::Compile(format!(
            "dropout {dropout} is outside [0, 1)"
        )));
    }
    if operators.feature.num_nodes() != operators.label.num_nodes() {
        return Err(Error::Compile(
            "feature and label operators cover different node counts".into(),
        ));
    }
    let softmax_count = spec
        .stages
        .iter()
        .filter(|s| matches!(s, Stage::Softmax))
        .count();
    if softmax_count != 1 {
        return Err(Error::Compile(format!(
            "network '{}' needs exactly one softmax stage, found {softmax_count}",
            spec.name
        )));
    }

    let mut layers = Vec::new();
    let mut param_shapes = Vec::new();
    let mut dim = input_dim;
    let mut seen_param = false;
    let mut seen_softmax = false;

    let mut linear = |layers: &mut Vec<LayerKind>, in_dim: usize, out_dim: usize| {
        if dropout > 0.0 {
            layers.push(LayerKind::Dropout(dropout));
        }
        layers.push(LayerKind::Linear {
            in_dim,
            out_dim,
            param: param_shapes.len(),
        });
        param_shapes.push((in_dim, out_dim));
    };

    for (k, stage) in spec.stages.iter().enumerate() {
        if seen_softmax && !matches!(stage, Stage::Lp { .. }) {
            return Err(Error::Compile(format!(
                "stage {k} ({stage:?}) follows the softmax; only LP stages may"
            )));
        }
        match stage {
            Stage::Fp {
                layers: l,
                operator,
            } => {
                if seen_param {
                    return Err(Error::Compile(format!(
                        "FP stage {k} appears after a parameterized stage"
                    )));
                }
                let slot = OperatorSet::<T>::slot(*operator);
                for _ in 0..*l {
                    layers.push(LayerKind::Smoothing {
                        operator: slot,
                        activation: Activation::Identity,
                    });
                }
            }
            Stage::Mlp {
                hidden_dims,
                activation,
            } => {
                for &h in hidden_dims {
                    if h == 0 {
                        return Err(Error::Compile(format!("stage {k}: zero hidden dimension")));
                    }
                    linear(&mut layers, dim, h);
                    layers.push(LayerKind::Activation(*activation));
                    dim = h;
                }
                seen_param = true;
            }
            Stage::LinearClassifier => {
                linear(&mut layers, dim, num_classes);
                dim = num_classes;
                seen_param = true;
            }
            Stage::GcnBlock {
                layers: smoothed,
                hidden_dims,
                operator,
            } => {
                let depth = hidden_dims.len() + 1;
                if *smoothed > depth {
                    return Err(Error::Compile(format!(
                        "stage {k}: {smoothed} smoothings but only {depth} linear layers"
                    )));
                }
                let slot = OperatorSet::<T>::slot(*operator);
                let outs = hidden_dims
                    .iter()
                    .copied()
                    .chain(std::iter::once(num_classes));
                for (t, out) in outs.enumerate() {
                    if out == 0 {
                        return Err(Error::Compile(format!("stage {k}: zero hidden dimension")));
                    }
                    if t < *smoothed {
                        layers.push(LayerKind::Smoothing {
                            operator: slot,
                            activation: Activation::Identity,
                        });
                    }
                    linear(&mut layers, dim, out);
                    if t + 1 < depth {
                        layers.push(LayerKind::Activation(Activation::Relu));
                    }
                    dim = out;
                }
                seen_param = true;
            }
            Stage::Softmax => {
                if dim != num_classes {
                    return Err(Error::Compile(format!(
                        "dimension chain broken at stage {k} (softmax): width {dim}, expected {num_classes} classes"
                    )));
                }
                layers.push(LayerKind::Softmax);
                seen_softmax = true;
            }
            Stage::Lp {
                layers: l,
                operator,
            } => {
                if !seen_softmax {
                    return Err(Error::Compile(format!(
                        "LP stage {k} must come after the softmax"
                    )));
                }
                let slot = OperatorSet::<T>::slot(*operator);
                // Single precision row sums drift from 1 by a few ulps per entry.
                let tol = 1e-9_f64.max(1e3 * T::epsilon().as_f64());
                if *l > 0
                    && !spec.allow_unnormalized_lp
                    && !operators.get(slot).is_row_stochastic(tol)
                {
                    return Err(Error::Compile(format!(
                        "LP stage {k} needs a row-normalized operator so outputs stay probabilities"
                    )));
                }
                for _ in 0..*l {
                    layers.push(LayerKind::Smoothing {
                        operator: slot,
                        activation: Activation::Identity,
                    });
                }
            }
        }
    }

    let prefix_len = layers
        .iter()
        .take_while(|l| {
            matches!(
                l,
                LayerKind::Smoothing {
                    activation: Activation::Identity,
                    ..
                }
            )
        })
        .count();
    let input_prefix = layers
        .drain(..prefix_len)
        .map(|l| match l {
            LayerKind::Smoothing { operator, .. } => operator,
            _ => unreachable!(),
        })
        .collect();

    let cost = estimate_cost(
        spec,
        operators.num_nodes(),
        operators.feature.matrix.nnz(),
        input_dim,
        num_classes,
    );

    Ok(CompiledNetwork {
        name: spec.name.clone(),
        operators: operators.clone(),
        input_prefix,
        layers,
        param_shapes,
        input_dim,
        num_classes,
        cost,
    })
}

impl<T: Scalar> CompiledNetwork<T> {
    pub fn layers(&self) -> &[LayerKind] {
        &self.layers
    }

    /// Layer names, e.g. `["Dropout", "Linear", "Softmax"]`.
    pub fn layer_names(&self) -> Vec<&'static str> {
        self.layers.iter().map(LayerKind::short_name).collect()
    }

    pub fn param_shapes(&self) -> &[(usize, usize)] {
        &self.param_shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shapes.iter().map(|(r, c)| r * c).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_nodes(&self) -> usize {
        self.operators.num_nodes()
    }

    pub fn cost(&self) -> &CostEstimate {
        &self.cost
    }

    pub fn operators(&self) -> &OperatorSet<T> {
        &self.operators
    }

    /// Number of leading smoothings folded into the precomputed input.
    pub fn precomputed_depth(&self) -> usize {
        self.input_prefix.len()
    }

    /// Applies the folded FP prefix. The result is what [`forward`](Self::forward) expects.
    pub fn prepare_input(&self, x: &NodeMatrix<T>) -> Result<NodeMatrix<T>> {
        if x.shape() != (self.num_nodes(), self.input_dim) {
            return Err(Error::shape(
                "prepare_input",
                x.shape(),
                (self.num_nodes(), self.input_dim),
            ));
        }
        let mut out = x.clone();
        for &slot in &self.input_prefix {
            out = out.premultiply(&self.operators.get(slot).matrix)?;
        }
        Ok(out)
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Parameters<T> {
        Parameters(
            self.param_shapes
                .iter()
                .map(|&(r, c)| glorot_uniform(r, c, rng))
                .collect(),
        )
    }

    fn first_param_layer(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l, LayerKind::Linear { .. }))
            .unwrap_or(self.layers.len())
    }

    /// Runs the chain on a prepared input. In [`Mode::Infer`] dropout is
    /// bypassed and the returned trace is empty.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &Parameters<T>,
        input: &NodeMatrix<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(DenseMatrix<T>, ForwardTrace<T>)> {
        if input.shape() != (self.num_nodes(), self.input_dim) {
            return Err(Error::shape(
                "forward",
                input.shape(),
                (self.num_nodes(), self.input_dim),
            ));
        }
        if params.0.len() != self.param_shapes.len()
            || params
                .0
                .iter()
                .zip(&self.param_shapes)
                .any(|(p, &s)| p.shape() != s)
        {
            return Err(Error::Config(format!(
                "parameter shapes do not match network '{}'",
                self.name
            )));
        }
        let train = mode == Mode::Train;
        let mut states = Vec::with_capacity(if train { self.layers.len() } else { 0 });
        let mut cur = input.clone();
        let dense = |m: NodeMatrix<T>| match m {
            NodeMatrix::Dense(d) => d,
            NodeMatrix::Sparse(s) => s.to_dense(),
        };
        for layer in &self.layers {
            let (next, state) = match layer {
                LayerKind::Dropout(rate) => {
                    let (out, mask) = dropout_forward(&cur, *rate, rng, train)?;
                    (
                        out,
                        mask.map_or(LayerState::Nothing, LayerState::DropoutMask),
                    )
                }
                LayerKind::Linear { param, .. } => {
                    let out = cur.matmul(&params.0[*param])?;
                    let state = if train {
                        LayerState::Input(cur)
                    } else {
                        LayerState::Nothing
                    };
                    (NodeMatrix::Dense(out), state)
                }
                LayerKind::Activation(Activation::Relu) => {
                    let out = relu_forward(&dense(cur));
                    let state = if train {
                        LayerState::ReluOutput(out.clone())
                    } else {
                        LayerState::Nothing
                    };
                    (NodeMatrix::Dense(out), state)
                }
                LayerKind::Activation(Activation::Identity) => (cur, LayerState::Nothing),
                LayerKind::Smoothing {
                    operator,
                    activation,
                } => {
                    let s = self.operators.get(*operator);
                    let out = spmm(&s.matrix, &dense(cur))?;
                    match activation {
                        Activation::Identity => (NodeMatrix::Dense(out), LayerState::Nothing),
                        Activation::Relu => {
                            let out = relu_forward(&out);
                            let state = if train {
                                LayerState::ReluOutput(out.clone())
                            } else {
                                LayerState::Nothing
                            };
                            (NodeMatrix::Dense(out), state)
                        }
                    }
                }
                LayerKind::Softmax => {
                    let p = softmax_rows_forward(&dense(cur));
                    let state = if train {
                        LayerState::Probabilities(p.clone())
                    } else {
                        LayerState::Nothing
                    };
                    (NodeMatrix::Dense(p), state)
                }
            };
            if train {
                states.push(state);
            }
            cur = next;
        }
        Ok((dense(cur), ForwardTrace { mode, states }))
    }

    /// Gradients of every linear weight given the gradient on the output.
    pub fn backward(
        &self,
        params: &Parameters<T>,
        trace: &ForwardTrace<T>,
        d_output: &DenseMatrix<T>,
    ) -> Result<Parameters<T>> {
        if trace.mode != Mode::Train || trace.states.len() != self.layers.len() {
            return Err(Error::Usage(
                "backward needs the trace of a training-mode forward pass".into(),
            ));
        }
        let mut grads = Parameters::zeros_like(&self.param_shapes);
        let first = self.first_param_layer();
        let mut up = d_output.clone();
        for idx in (first..self.layers.len()).rev() {
            let state = &trace.states[idx];
            match (&self.layers[idx], state) {
                (LayerKind::Softmax, LayerState::Probabilities(p)) => {
                    up = softmax_rows_vjp(p, &up)?;
                }
                (LayerKind::Smoothing { operator, .. }, st) => {
                    if let LayerState::ReluOutput(out) = st {
                        up = relu_vjp(out, &up)?;
                    }
                    up = spmm_transposed(&self.operators.get(*operator).matrix, &up)?;
                }
                (LayerKind::Activation(Activation::Relu), LayerState::ReluOutput(out)) => {
                    up = relu_vjp(out, &up)?;
                }
                (LayerKind::Activation(Activation::Identity), _) => {}
                (LayerKind::Linear { param, .. }, LayerState::Input(x)) => {
                    grads.0[*param] = x.t_matmul(&up)?;
                    if idx > first {
                        up = gemm_nt(&up, &params.0[*param])?;
                    }
                }
                (LayerKind::Dropout(_), LayerState::DropoutMask(mask)) => {
                    up = dropout_vjp(mask, &up)?;
                }
                (LayerKind::Dropout(_), LayerState::Nothing) => {}
                (layer, _) => {
                    return Err(Error::Usage(format!(
                        "trace state does not match layer {} at position {idx}",
                        layer.short_name()
                    )))
                }
            }
        }
        Ok(grads)
    }
}
