//! Declarative network specs, their compilation into layer chains, and the
//! forward/backward passes over those chains.

mod compiled;
mod cost;
mod spec;

pub use compiled::{
    compile, precompute_fp, CompiledNetwork, ForwardTrace, Mode, OperatorSet, Parameters,
};
pub use cost::{estimate_cost, CostEstimate};
pub use spec::{NetworkSpec, OperatorKind, Preset, Stage};

use crate::error::Result;
use crate::graph::{augment, normalize, GraphTopology, Normalization};

impl OperatorSet<f64> {
    /// Symmetric-normalized `I + A` for features, row-normalized for labels.
    pub fn standard(g: &GraphTopology) -> Result<Self> {
        let a = augment(g);
        Ok(Self::new(
            normalize(&a, Normalization::Symmetric)?,
            normalize(&a, Normalization::Row)?,
        ))
    }
}
