//! Command-line driver: split generation, single runs, sweeps, propagation
//! model grids, gradient checks, cost estimates and rank reports.

pub mod commands;
pub mod sweep;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gcompose_core::data::{self, DataSplit, Dataset};
use gcompose_core::evaluation::accuracy;
use gcompose_core::graph::{augment, mixed_operator, normalize};
use gcompose_core::lpnn::{train_lpnn, LpnnWeights};
use gcompose_core::networks::{compile, OperatorSet, Preset};
use gcompose_core::training::{predict, train_prepared, Precision, TrainConfig, TrainHistory};
use gcompose_core::{
    Error, GraphTopology, NetworkSpec, Normalization, PropagationOperator, Scalar,
};

#[derive(Debug, Parser)]
#[command(
    name = "gcompose",
    version,
    about = "Compose, train and compare propagation networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the 5 sizes x 10 random splits under <dataset-dir>/splits.
    Splits(SplitsArgs),
    /// Train one configuration and report its test accuracy.
    Train(TrainArgs),
    /// Random search; the configuration with the best validation accuracy wins.
    Sweep(SweepArgs),
    /// Mean (std) table with average ranks from stored results.
    Compare(CompareArgs),
    /// Train over a grid of (alpha, beta) label-propagation operators.
    PropmodelSweep(PropmodelArgs),
    /// Check analytical gradients against finite differences on a small random graph.
    Gradcheck(GradcheckArgs),
    /// Per-term operation counts of a network.
    Cost(CostArgs),
}

#[derive(Debug, Args)]
pub struct SplitsArgs {
    #[arg(long)]
    pub dataset_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    /// Row-normalized I + A.
    #[default]
    Row,
    /// Symmetric-normalized I + A (not row-stochastic).
    Symmetric,
    /// Row-normalized alpha*I + beta*A.
    Mix,
    /// D^-alpha (I + A) D^-beta.
    Exponents,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

/// Options shared by every command that trains.
#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset_dir: PathBuf,
    /// Preset name, `lpnn`, or a path to a network spec JSON file.
    #[arg(long)]
    pub method: String,
    /// Training-set size index 1..=5.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub split: usize,
    #[arg(long, conflicts_with = "size")]
    pub standard_split: bool,
    /// Feature-side layers (FP depth, or smoothed GCN layers).
    #[arg(long = "l")]
    pub layers: Option<usize>,
    /// Label propagation layers.
    #[arg(long = "ll")]
    pub lp_layers: Option<usize>,
    /// Label propagation operator.
    #[arg(long, value_enum, default_value_t = OperatorChoice::Row)]
    pub operator: OperatorChoice,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Training seed (sweep seed for `sweep`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with a run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub mu_g: Option<f64>,
    #[arg(long)]
    pub mu_l: Option<f64>,
    #[arg(long)]
    pub mu_u: Option<f64>,
    #[arg(long)]
    pub lambda_l: Option<f64>,
    #[arg(long)]
    pub lambda_u: Option<f64>,
    /// Directory for result files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Sample every rate uniformly in (0, 1).
    #[arg(long)]
    pub unit_space: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory searched recursively for run results.
    pub results: PathBuf,
    /// Only this size index; all sizes found otherwise.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PropModel {
    Mix,
    Exponents,
}

#[derive(Debug, Args)]
pub struct PropmodelArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub model: PropModel,
    /// Comma-separated alpha:beta pairs.
    #[arg(long)]
    pub grid: Option<String>,
    /// Configurations per grid point; 1 trains the flag configuration.
    #[arg(long, default_value_t = 1)]
    pub budget: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub unit_space: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// One method; every preset and lpnn when omitted.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    #[arg(long, requires_all = ["edges", "dim", "classes"])]
    pub nodes: Option<usize>,
    /// Stored entries of the propagation operator.
    #[arg(long)]
    pub edges: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long = "l")]
    pub layers: Option<usize>,
    #[arg(long = "ll")]
    pub lp_layers: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
}

/// A failed command with its process exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// 1 usage/configuration, 2 data, 3 numeric failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Compile(_) | Error::Shape { .. } => 1,
        Error::NonFinite { .. } => 3,
        Error::Data(_)
        | Error::Parse { .. }
        | Error::Ingestion(_)
        | Error::Split { .. }
        | Error::StandardSplitUnavailable(_)
        | Error::ZeroRow { .. }
        | Error::Io(_)
        | Error::Json(_) => 2,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Everything a single training run is configured by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub hidden: usize,
    pub lpnn: LpnnWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            hidden: 64,
            lpnn: LpnnWeights {
                mu_g: 0.5,
                mu_l: 0.5,
                mu_u: 0.5,
                lambda_l: 0.5,
                lambda_u: 0.5,
            },
        }
    }
}

impl RunConfig {
    /// Config file (if any) overlaid with explicit flags.
    pub fn from_args(args: &RunArgs) -> gcompose_core::Result<Self> {
        let mut c = match &args.config {
            Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        let t = &mut c.train;
        set(&mut t.learning_rate, args.lr);
        set(&mut t.dropout, args.dropout);
        set(&mut t.weight_decay, args.weight_decay);
        set(&mut t.max_epochs, args.epochs);
        set(&mut t.patience, args.patience);
        set(&mut t.seed, args.seed);
        set(&mut t.precision, args.precision.map(Into::into));
        set(&mut c.hidden, args.hidden);
        let w = &mut c.lpnn;
        set(&mut w.mu_g, args.mu_g);
        set(&mut w.mu_l, args.mu_l);
        set(&mut w.mu_u, args.mu_u);
        set(&mut w.lambda_l, args.lambda_l);
        set(&mut w.lambda_u, args.lambda_u);
        c.train.validate()?;
        c.lpnn.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Preset(Preset),
    Lpnn,
    Spec(NetworkSpec),
}

impl Method {
    pub fn parse(s: &str) -> gcompose_core::Result<Self> {
        if s.eq_ignore_ascii_case("lpnn") {
            return Ok(Method::Lpnn);
        }
        if let Ok(p) = s.parse() {
            return Ok(Method::Preset(p));
        }
        let path = Path::new(s);
        if path.is_file() {
            return Ok(Method::Spec(NetworkSpec::from_json(
                &std::fs::read_to_string(path)?,
            )?));
        }
        Err(Error::Usage(format!(
            "unknown method '{s}': expected a preset (gcn, sgcn, fp-mlp, sgcn-lp, gcn-lp, linear-lp, mlp-lp), lpnn, or a spec file"
        )))
    }

    pub fn key(&self) -> String {
        match self {
            Method::Preset(p) => p.key().to_string(),
            Method::Lpnn => "lpnn".into(),
            Method::Spec(s) => s.name.clone(),
        }
    }

    /// The network spec, for methods that have one.
    pub fn spec(
        &self,
        layers: Option<usize>,
        lp_layers: Option<usize>,
        hidden: usize,
    ) -> Option<NetworkSpec> {
        match self {
            Method::Preset(p) => Some(p.spec(layers, lp_layers, hidden)),
            Method::Spec(s) => Some(s.clone()),
            Method::Lpnn => None,
        }
    }
}

/// Builds the label-propagation operator. The flag says whether it is only
/// accepted with the row-stochastic check disabled.
pub fn label_operator(
    g: &GraphTopology,
    choice: OperatorChoice,
    alpha: Option<f64>,
    beta: Option<f64>,
) -> gcompose_core::Result<(PropagationOperator, bool)> {
    let pair = || match (alpha, beta) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Usage(format!(
            "--operator {choice:?} needs both --alpha and --beta"
        ))),
    };
    Ok(match choice {
        OperatorChoice::Row => (normalize(&augment(g), Normalization::Row)?, false),
        OperatorChoice::Symmetric => (normalize(&augment(g), Normalization::Symmetric)?, true),
        OperatorChoice::Mix => {
            let (a, b) = pair()?;
            (mixed_operator(g, a, b, Normalization::Row)?, false)
        }
        OperatorChoice::Exponents => {
            let (a, b) = pair()?;
            let mode = Normalization::General {
                alpha_exp: a,
                beta_exp: b,
            };
            (normalize(&augment(g), mode)?, true)
        }
    })
}

/// A dataset, a split and a method, ready to train under any config.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub dataset: Dataset,
    pub split: DataSplit,
    pub operators: OperatorSet,
    pub allow_unnormalized_lp: bool,
    pub method: Method,
    pub layers: Option<usize>,
    pub lp_layers: Option<usize>,
}

/// Result of training one configuration.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
    pub history: TrainHistory,
    /// Method-specific extras, e.g. the label-field accuracy for LPNN.
    pub extra: serde_json::Value,
}

impl Experiment {
    pub fn from_args(args: &RunArgs) -> gcompose_core::Result<Self> {
        let method = Method::parse(&args.method)?;
        let dataset = data::load_dataset(&args.dataset_dir)?;
        let split = if args.standard_split {
            data::load_standard_split(&args.dataset_dir, &dataset)?
        } else {
            let size = args.size.unwrap_or(1);
            if !(1..=data::NUM_SIZES).contains(&size) || args.split >= data::NUM_SPLITS {
                return Err(Error::Usage(format!(
                    "--size must be 1..={} and --split 0..{}",
                    data::NUM_SIZES,
                    data::NUM_SPLITS
                )));
            }
            data::read_split(&args.dataset_dir, size, args.split)?
        };
        split.validate(dataset.num_nodes())?;
        Self::new(dataset, split, method, args)
    }

    pub fn new(
        dataset: Dataset,
        split: DataSplit,
        method: Method,
        args: &RunArgs,
    ) -> gcompose_core::Result<Self> {
        let g = &dataset.topology;
        let feature = normalize(&augment(g), Normalization::Symmetric)?;
        let (label, allow) = label_operator(g, args.operator, args.alpha, args.beta)?;
        Ok(Self {
            operators: OperatorSet::new(feature, label),
            allow_unnormalized_lp: allow,
            dataset,
            split,
            method,
            layers: args.layers,
            lp_layers: args.lp_layers,
        })
    }

    pub fn with_label_operator(&self, label: PropagationOperator, allow: bool) -> Self {
        let mut e = self.clone();
        e.operators = OperatorSet::new((*self.operators.feature).clone(), label);
        e.allow_unnormalized_lp = allow;
        e
    }

    pub fn network_spec(&self, hidden: usize) -> Option<NetworkSpec> {
        let mut spec = self.method.spec(self.layers, self.lp_layers, hidden)?;
        spec.allow_unnormalized_lp |= self.allow_unnormalized_lp;
        Some(spec)
    }

    pub fn run(&self, config: &RunConfig) -> gcompose_core::Result<Outcome> {
        match (&self.method, config.train.precision) {
            (Method::Lpnn, _) => self.run_lpnn(config),
            (_, Precision::F64) => self.run_network::<f64>(config),
            (_, Precision::F32) => self.run_network::<f32>(config),
        }
    }

    fn run_network<T: Scalar>(&self, config: &RunConfig) -> gcompose_core::Result<Outcome> {
        let spec = self
            .network_spec(config.hidden)
            .expect("network methods have a spec");
        let ops: OperatorSet<T> = self.operators.cast();
        let d = &self.dataset;
        let net = compile(
            &spec,
            &ops,
            d.feature_dim(),
            d.num_classes,
            config.train.dropout,
        )?;
        let input = net.prepare_input(&d.input().cast())?;
        let (params, history) =
            train_prepared(&net, &input, &d.labels, &self.split, &config.train)?;
        let p = predict(&net, &params, &input)?;
        Ok(Outcome {
            val_accuracy: history.best_val_accuracy,
            test_accuracy: accuracy(&p, &d.labels, &self.split.test)?,
            best_epoch: history.best_epoch,
            history,
            extra: serde_json::json!({ "layers": net.layer_names(), "parameters": net.parameter_count() }),
        })
    }

    fn run_lpnn(&self, config: &RunConfig) -> gcompose_core::Result<Outcome> {
        let d = &self.dataset;
        let (model, h) = train_lpnn(d, &self.operators, &self.split, &config.train, &config.lpnn)?;
        let p = model.predict_g(&d.input())?;
        let f_test = accuracy(&model.predict_f(), &d.labels, &self.split.test)?;
        let f_val = h
            .f_val_accuracy
            .get(h.history.best_epoch.saturating_sub(1))
            .copied();
        Ok(Outcome {
            val_accuracy: h.history.best_val_accuracy,
            test_accuracy: accuracy(&p, &d.labels, &self.split.test)?,
            best_epoch: h.history.best_epoch,
            history: h.history,
            extra: serde_json::json!({
                "prediction": "g",
                "f_test_accuracy": f_test,
                "f_val_accuracy": f_val,
                "note": "unlabeled KL term compares g with softmax(f)",
            }),
        })
    }
}

/// Parses and runs `args` (including the program name), writing the
/// command's report to `out`.
pub fn run_cli<I, S>(args: I, out: &mut dyn std::io::Write) -> CliResult<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError {
        code: 1,
        message: e.to_string(),
    })?;
    commands::execute(cli.command, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::Usage("x".into())), 1);
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Data("x".into())), 2);
        assert_eq!(exit_code(&Error::ZeroRow { node: 3 }), 2);
        let e = Error::NonFinite {
            epoch: 4,
            learning_rate: 0.9,
        };
        assert_eq!(exit_code(&e), 3);
    }

    #[test]
    fn method_names() {
        assert_eq!(Method::parse("LPNN").unwrap(), Method::Lpnn);
        assert_eq!(
            Method::parse("gcn-lp").unwrap(),
            Method::Preset(Preset::GcnLp)
        );
        assert_eq!(Method::parse("gcn-lp").unwrap().key(), "gcn-lp");
        assert!(matches!(Method::parse("resnet"), Err(Error::Usage(_))));
        assert!(Method::Lpnn.spec(None, None, 16).is_none());
    }

    #[test]
    fn run_config_round_trips_and_fills_defaults() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"dropout": 0.1}"#).unwrap();
        assert_eq!(partial.train.dropout, 0.1);
        assert_eq!(partial.hidden, c.hidden);
    }

    #[test]
    fn operator_choices_need_their_exponents() {
        let g = GraphTopology::new(3, [(0, 1)]).unwrap();
        assert!(matches!(
            label_operator(&g, OperatorChoice::Mix, Some(0.5), None),
            Err(Error::Usage(_))
        ));
        let (_, allow) = label_operator(&g, OperatorChoice::Row, None, None).unwrap();
        assert!(!allow);
        let (_, allow) =
            label_operator(&g, OperatorChoice::Exponents, Some(0.5), Some(0.5)).unwrap();
        assert!(allow);
        assert!(matches!(
            label_operator(&g, OperatorChoice::Mix, Some(0.0), Some(1.0)),
            Err(Error::ZeroRow { .. })
        ));
    }
}
