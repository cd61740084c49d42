use serde::{Deserialize, Serialize};

use super::spec::{NetworkSpec, Stage};

/// Operation counts per cost term. All feature widths are taken as `d`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// `L · N_E · d`, smoothing of features inside the trained network.
    pub feature_prop: u64,
    /// `L · n · d²`, nonlinear hidden transformations.
    pub hidden: u64,
    /// `n · d · M`, the softmax classifier.
    pub classifier: u64,
    /// `L_l · N_E · M`, label propagation.
    pub label_prop: u64,
}

impl CostEstimate {
    pub fn total(&self) -> u64 {
        self.feature_prop + self.hidden + self.classifier + self.label_prop
    }

    /// Names of the nonzero terms, in a fixed order.
    pub fn nonzero_terms(&self) -> Vec<&'static str> {
        [
            ("feature_prop", self.feature_prop),
            ("hidden", self.hidden),
            ("classifier", self.classifier),
            ("label_prop", self.label_prop),
        ]
        .into_iter()
        .filter(|&(_, v)| v > 0)
        .map(|(k, _)| k)
        .collect()
    }
}

/// Cost of one epoch of `spec` on a graph with `n` nodes and an operator with
/// `n_e` stored entries, input width `d` and `m` classes.
///
/// FP stages cost nothing here: they are computed once before training. For
/// a GCN block, `L` is its number of smoothed layers; for an MLP stage it is
/// its number of linear layers including the classifier.
pub fn estimate_cost(spec: &NetworkSpec, n: usize, n_e: usize, d: usize, m: usize) -> CostEstimate {
    let (n, n_e, d, m) = (n as u64, n_e as u64, d as u64, m as u64);
    let mut cost = CostEstimate::default();
    for stage in &spec.stages {
        match stage {
            Stage::Fp { .. } | Stage::Softmax => {}
            Stage::Mlp { hidden_dims, .. } => {
                cost.hidden += (hidden_dims.len() as u64 + 1) * n * d * d;
            }
            Stage::LinearClassifier => cost.classifier += n * d * m,
            Stage::GcnBlock { layers, .. } => {
                let l = *layers as u64;
                cost.feature_prop += l * n_e * d;
                cost.hidden += l * n * d * d;
                cost.classifier += n * d * m;
            }
            Stage::Lp { layers, .. } => cost.label_prop += *layers as u64 * n_e * m,
        }
    }
    cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::Preset;

    const N: usize = 2708;
    const NE: usize = 13264;
    const D: usize = 1433;
    const M: usize = 7;

    fn cost(p: Preset) -> CostEstimate {
        estimate_cost(&p.spec(None, None, 64), N, NE, D, M)
    }

    #[test]
    fn sgcn_has_only_classifier_term() {
        let c = cost(Preset::Sgcn);
        assert_eq!(c.nonzero_terms(), vec!["classifier"]);
        assert_eq!(c.classifier, 2708 * 1433 * 7);
    }

    #[test]
    fn gcn_lp_has_all_four_terms() {
        let c = cost(Preset::GcnLp);
        assert_eq!(c.nonzero_terms().len(), 4);
        assert_eq!(c.feature_prop, 13264 * 1433);
        assert_eq!(c.hidden, 2708 * 1433 * 1433);
        assert_eq!(c.label_prop, 13264 * 7);
    }

    #[test]
    fn linear_lp_terms() {
        let c = cost(Preset::LinearLp);
        assert_eq!(c.nonzero_terms(), vec!["classifier", "label_prop"]);
        assert_eq!(c.label_prop, 2 * 13264 * 7);
    }

    #[test]
    fn row_term_sets() {
        let terms = |p| cost(p).nonzero_terms();
        assert_eq!(
            terms(Preset::Gcn),
            vec!["feature_prop", "hidden", "classifier"]
        );
        assert_eq!(terms(Preset::FpMlp), vec!["hidden", "classifier"]);
        assert_eq!(terms(Preset::SgcnLp), vec!["classifier", "label_prop"]);
        assert_eq!(
            terms(Preset::MlpLp),
            vec!["hidden", "classifier", "label_prop"]
        );
    }
}
