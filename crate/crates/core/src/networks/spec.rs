use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Activation;

/// Which operator slot of an [`OperatorSet`](super::OperatorSet) a stage uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Feature operator, symmetric normalization by default.
    Symmetric,
    /// Label operator, row normalization by default.
    Row,
}

fn symmetric() -> OperatorKind {
    OperatorKind::Symmetric
}

fn row() -> OperatorKind {
    OperatorKind::Row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    /// Feature propagation: `layers` parameter-free smoothings of the input.
    Fp {
        layers: usize,
        #[serde(default = "symmetric")]
        operator: OperatorKind,
    },
    /// Feed-forward hidden layers; each is linear followed by `activation`.
    Mlp {
        hidden_dims: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    /// Linear map to the class dimension.
    LinearClassifier,
    /// Graph convolution stack ending at the class dimension. It has
    /// `hidden_dims.len() + 1` linear layers, and the first `layers` of them
    /// are preceded by a smoothing.
    GcnBlock {
        layers: usize,
        hidden_dims: Vec<usize>,
        #[serde(default = "symmetric")]
        operator: OperatorKind,
    },
    Softmax,
    /// Label propagation: `layers` smoothings of the class probabilities.
    Lp {
        layers: usize,
        #[serde(default = "row")]
        operator: OperatorKind,
    },
}

impl Stage {
    pub fn is_parameterized(&self) -> bool {
        matches!(
            self,
            Stage::Mlp { .. } | Stage::LinearClassifier | Stage::GcnBlock { .. }
        )
    }
}

/// Declarative network description. Serialized as JSON:
///
/// ```json
/// {"name": "mlp-lp",
///  "stages": [{"kind": "mlp", "hidden_dims": [64]},
///             {"kind": "linear_classifier"},
///             {"kind": "softmax"},
///             {"kind": "lp", "layers": 2}]}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub stages: Vec<Stage>,
    /// Lets LP stages use an operator that is not row-stochastic. Only the
    /// propagation-model experiments set this.
    #[serde(default)]
    pub allow_unnormalized_lp: bool,
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn lp_layers(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Lp { layers, .. } => *layers,
                _ => 0,
            })
            .sum()
    }
}

/// The seven named compositions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "sgcn")]
    Sgcn,
    #[serde(rename = "fp-mlp")]
    FpMlp,
    #[serde(rename = "sgcn-lp")]
    SgcnLp,
    #[serde(rename = "gcn-lp")]
    GcnLp,
    #[serde(rename = "linear-lp")]
    LinearLp,
    #[serde(rename = "mlp-lp")]
    MlpLp,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Gcn,
        Preset::Sgcn,
        Preset::FpMlp,
        Preset::SgcnLp,
        Preset::GcnLp,
        Preset::LinearLp,
        Preset::MlpLp,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Preset::Gcn => "gcn",
            Preset::Sgcn => "sgcn",
            Preset::FpMlp => "fp-mlp",
            Preset::SgcnLp => "sgcn-lp",
            Preset::GcnLp => "gcn-lp",
            Preset::LinearLp => "linear-lp",
            Preset::MlpLp => "mlp-lp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Preset::Gcn => "GCN",
            Preset::Sgcn => "SGCN",
            Preset::FpMlp => "FP+MLP",
            Preset::SgcnLp => "SGCN+LP",
            Preset::GcnLp => "GCN+LP",
            Preset::LinearLp => "Linear+LP",
            Preset::MlpLp => "MLP+LP",
        }
    }

    /// Feature-side depth when not overridden. Presets that combine both
    /// propagation kinds split two smoothings as one FP and one LP.
    pub fn default_layers(self) -> usize {
        match self {
            Preset::Gcn | Preset::Sgcn | Preset::FpMlp => 2,
            Preset::SgcnLp | Preset::GcnLp => 1,
            Preset::LinearLp | Preset::MlpLp => 0,
        }
    }

    pub fn default_lp_layers(self) -> usize {
        match self {
            Preset::Gcn | Preset::Sgcn | Preset::FpMlp => 0,
            Preset::SgcnLp | Preset::GcnLp => 1,
            Preset::LinearLp | Preset::MlpLp => 2,
        }
    }

    pub fn has_hidden_layer(self) -> bool {
        !matches!(self, Preset::Sgcn | Preset::SgcnLp | Preset::LinearLp)
    }

    pub fn has_lp(self) -> bool {
        self.default_lp_layers() > 0
    }

    /// Expands to stages. `layers` is the FP depth for SGCN-style presets and
    /// the number of smoothed layers for GCN-style presets; `lp_layers` is
    /// the LP depth. Both fall back to the preset defaults.
    pub fn spec(
        self,
        layers: Option<usize>,
        lp_layers: Option<usize>,
        hidden: usize,
    ) -> NetworkSpec {
        let l = layers.unwrap_or(self.default_layers());
        let ll = lp_layers.unwrap_or(self.default_lp_layers());
        let fp = |layers| Stage::Fp {
            layers,
            operator: OperatorKind::Symmetric,
        };
        let mlp = || Stage::Mlp {
            hidden_dims: vec![hidden],
            activation: Activation::Relu,
        };
        let gcn = |layers: usize| Stage::GcnBlock {
            layers,
            hidden_dims: vec![hidden; layers.max(2) - 1],
            operator: OperatorKind::Symmetric,
        };
        let lp = |layers| Stage::Lp {
            layers,
            operator: OperatorKind::Row,
        };
        let mut stages = match self {
            Preset::Gcn => vec![gcn(l), Stage::Softmax],
            Preset::Sgcn => vec![fp(l), Stage::LinearClassifier, Stage::Softmax],
            Preset::FpMlp => vec![fp(l), mlp(), Stage::LinearClassifier, Stage::Softmax],
            Preset::SgcnLp => vec![fp(l), Stage::LinearClassifier, Stage::Softmax],
            Preset::GcnLp => vec![gcn(l), Stage::Softmax],
            Preset::LinearLp => vec![Stage::LinearClassifier, Stage::Softmax],
            Preset::MlpLp => vec![mlp(), Stage::LinearClassifier, Stage::Softmax],
        };
        if ll > 0 || self.has_lp() {
            stages.push(lp(ll));
        }
        NetworkSpec {
            name: self.key().to_string(),
            stages,
            allow_unnormalized_lp: false,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['+', '_'], "-");
        Preset::ALL
            .into_iter()
            .find(|p| p.key() == key)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown preset '{s}' (expected one of gcn, sgcn, fp-mlp, sgcn-lp, gcn-lp, linear-lp, mlp-lp)"
                ))
            })
    }
}
