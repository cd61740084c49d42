use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gcompose_core::data::{self, DataSplit};
use gcompose_core::evaluation::{compare, render_report, RunResult};
use gcompose_core::graph::{augment, normalize};
use gcompose_core::lpnn::{g_spec, lpnn_gradient_check, LpnnWeights};
use gcompose_core::networks::{compile, estimate_cost, OperatorSet, Preset};
use gcompose_core::training::{gradient_check, GradCheckReport};
use gcompose_core::{DenseMatrix, Error, GraphTopology, NodeMatrix, Normalization};

use crate::sweep::{run_sweep, SweepSpace, Trial};
use crate::{
    label_operator, CliError, CliResult, Command, CompareArgs, CostArgs, Experiment, GradcheckArgs,
    Method, OperatorChoice, Outcome, PropModel, PropmodelArgs, RunArgs, RunConfig, SplitsArgs,
    SweepArgs, TrainArgs,
};

const RESULT_SUFFIX: &str = ".result.json";

pub fn execute(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Splits(a) => splits(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Sweep(a) => sweep(&a, out),
        Command::Compare(a) => compare_cmd(&a, out),
        Command::PropmodelSweep(a) => propmodel(&a, out),
        Command::Gradcheck(a) => gradcheck(&a, out),
        Command::Cost(a) => cost(&a, out),
    }
}

fn io(e: std::io::Error) -> CliError {
    Error::Io(e).into()
}

/// Writes via a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

fn run_dir(root: &Path, dataset: &str, method: &str) -> PathBuf {
    root.join(dataset).join(method)
}

fn run_stem(split: &DataSplit) -> String {
    if split.size_index == 0 {
        "standard".into()
    } else {
        format!("size{}-split{}", split.size_index, split.split_index)
    }
}

fn splits(args: &SplitsArgs, out: &mut dyn Write) -> CliResult<()> {
    let ds = data::load_dataset(&args.dataset_dir)?;
    let set = data::generate_splits(&ds, args.seed)?;
    let paths = data::write_splits(&args.dataset_dir, &set)?;
    writeln!(
        out,
        "{}: {} nodes, {} classes, training sizes {:?}, wrote {} split files",
        ds.name,
        ds.num_nodes(),
        ds.num_classes,
        set.sizes,
        paths.len()
    )
    .map_err(io)
}

fn run_config_json(
    exp: &Experiment,
    args: &RunArgs,
    config: &RunConfig,
    outcome: &Outcome,
) -> serde_json::Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    let obj = v.as_object_mut().expect("config is an object");
    obj.insert(
        "operator".into(),
        serde_json::to_value(args.operator).expect("enum serializes"),
    );
    if let Some(a) = args.alpha {
        obj.insert("alpha".into(), a.into());
    }
    if let Some(b) = args.beta {
        obj.insert("beta".into(), b.into());
    }
    if let Some(spec) = exp.network_spec(config.hidden) {
        obj.insert(
            "spec".into(),
            serde_json::to_value(&spec).expect("spec serializes"),
        );
    }
    obj.insert("details".into(), outcome.extra.clone());
    v
}

fn result_for(exp: &Experiment, outcome: &Outcome, config: serde_json::Value) -> RunResult {
    RunResult {
        method: exp.method.key(),
        dataset: exp.dataset.name.clone(),
        size_index: exp.split.size_index,
        split_index: exp.split.split_index,
        test_accuracy: outcome.test_accuracy,
        best_val_accuracy: outcome.val_accuracy,
        best_epoch: outcome.best_epoch,
        config,
        history_path: None,
    }
}

fn summary_line(r: &RunResult) -> String {
    format!(
        "{} on {} ({}): val {:.2}%, test {:.2}%, best epoch {}",
        r.method,
        r.dataset,
        if r.size_index == 0 {
            "standard split".to_string()
        } else {
            format!("size {} split {}", r.size_index, r.split_index)
        },
        100.0 * r.best_val_accuracy,
        100.0 * r.test_accuracy,
        r.best_epoch
    )
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let a = &args.run;
    let config = RunConfig::from_args(a)?;
    let exp = Experiment::from_args(a)?;
    let outcome = exp.run(&config)?;
    let mut result = result_for(&exp, &outcome, run_config_json(&exp, a, &config, &outcome));
    if let Some(root) = &a.out {
        let dir = run_dir(root, &result.dataset, &result.method);
        let stem = run_stem(&exp.split);
        let history = dir.join(format!("{stem}.history.json"));
        write_atomic(&history, &outcome.history.to_json())?;
        result.history_path = Some(history.display().to_string());
        write_atomic(
            &dir.join(format!("{stem}{RESULT_SUFFIX}")),
            &to_json(&result),
        )?;
    }
    writeln!(out, "{}", summary_line(&result)).map_err(io)
}

fn sweep_space(unit_space: bool) -> SweepSpace {
    if unit_space {
        SweepSpace::unit()
    } else {
        SweepSpace::desk()
    }
}

/// Samples and runs `budget` configurations of `exp`; returns all trials and
/// the selected one.
fn search(
    exp: &Experiment,
    base: &RunConfig,
    space: &SweepSpace,
    budget: usize,
    jobs: usize,
    seed: u64,
) -> gcompose_core::Result<(Vec<Trial>, usize)> {
    if budget == 0 {
        return Err(Error::Usage("--budget must be at least 1".into()));
    }
    let configs = space.sample(base, budget, seed);
    run_sweep(configs, jobs, |c| {
        exp.run(c)
            .map(|o| (o.val_accuracy, o.test_accuracy, o.best_epoch))
    })
}

fn sweep(args: &SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let a = &args.run;
    let base = RunConfig::from_args(a)?;
    let exp = Experiment::from_args(a)?;
    let seed = a.seed.unwrap_or(0);
    let (trials, best) = search(
        &exp,
        &base,
        &sweep_space(args.unit_space),
        args.budget,
        args.jobs,
        seed,
    )?;
    let t = &trials[best];
    let outcome = Outcome {
        val_accuracy: t.val_accuracy,
        test_accuracy: t.test_accuracy,
        best_epoch: t.best_epoch,
        history: Default::default(),
        extra: serde_json::json!({
            "sweep_seed": seed,
            "budget": args.budget,
            "selected_trial": best,
            "failed_trials": trials.iter().filter(|t| t.error.is_some()).count(),
        }),
    };
    let result = result_for(
        &exp,
        &outcome,
        run_config_json(&exp, a, &t.config, &outcome),
    );
    if let Some(root) = &a.out {
        let dir = run_dir(root, &result.dataset, &result.method);
        let stem = run_stem(&exp.split);
        write_atomic(&dir.join(format!("{stem}.trials.json")), &to_json(&trials))?;
        write_atomic(
            &dir.join(format!("{stem}{RESULT_SUFFIX}")),
            &to_json(&result),
        )?;
    }
    writeln!(
        out,
        "{} trials, {} failed, selected #{}",
        trials.len(),
        trials.iter().filter(|t| t.error.is_some()).count(),
        best
    )
    .map_err(io)?;
    writeln!(out, "{}", summary_line(&result)).map_err(io)
}

fn collect_results(dir: &Path, found: &mut Vec<RunResult>) -> CliResult<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<std::io::Result<_>>()
        .map_err(io)?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_results(&path, found)?;
        } else if path.to_string_lossy().ends_with(RESULT_SUFFIX) {
            let text = std::fs::read_to_string(&path).map_err(io)?;
            let r = serde_json::from_str(&text)
                .map_err(|err| CliError::from(Error::Data(format!("{}: {err}", path.display()))))?;
            found.push(r);
        }
    }
    Ok(())
}

fn compare_cmd(args: &CompareArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut results = Vec::new();
    collect_results(&args.results, &mut results)?;
    if results.is_empty() {
        return Err(Error::Data(format!("no run results under {}", args.results.display())).into());
    }
    let sizes: BTreeSet<usize> = match args.size {
        Some(s) => [s].into(),
        None => results.iter().map(|r| r.size_index).collect(),
    };
    let mut report = String::new();
    for size in sizes {
        let (table, summaries) = compare(&results, size)?;
        let label = if size == 0 {
            "standard split".to_string()
        } else {
            format!("training size {size}")
        };
        report.push_str(&format!("== {label} ==\n"));
        report.push_str(&render_report(&table, &summaries));
        report.push('\n');
    }
    if let Some(path) = &args.out {
        write_atomic(path, &report)?;
    }
    out.write_all(report.as_bytes()).map_err(io)
}

/// Grid used when `--grid` is not given.
pub const DEFAULT_GRID: [(f64, f64); 10] = [
    (0.0, 1.0),
    (0.1, 0.9),
    (0.25, 0.75),
    (0.33, 0.67),
    (0.5, 0.5),
    (0.67, 0.33),
    (0.75, 0.25),
    (0.9, 0.1),
    (1.0, 0.0),
    (1.0, 1.0),
];

pub fn parse_grid(s: &str) -> gcompose_core::Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let bad = || Error::Usage(format!("grid point '{pair}' is not alpha:beta"));
            let (a, b) = pair.trim().split_once(':').ok_or_else(bad)?;
            Ok((
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct GridRow {
    alpha: f64,
    beta: f64,
    val_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    config: Option<RunConfig>,
    error: Option<String>,
}

fn propmodel(args: &PropmodelArgs, out: &mut dyn Write) -> CliResult<()> {
    let a = &args.run;
    let base = RunConfig::from_args(a)?;
    let exp = Experiment::from_args(a)?;
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None => DEFAULT_GRID.to_vec(),
    };
    let choice = match args.model {
        PropModel::Mix => OperatorChoice::Mix,
        PropModel::Exponents => OperatorChoice::Exponents,
    };
    let space = sweep_space(args.unit_space);
    let seed = a.seed.unwrap_or(0);
    let mut rows = Vec::with_capacity(grid.len());
    for &(alpha, beta) in &grid {
        let attempt = || -> gcompose_core::Result<(f64, f64, RunConfig)> {
            let (op, allow) =
                label_operator(&exp.dataset.topology, choice, Some(alpha), Some(beta))?;
            let point = exp.with_label_operator(op, allow);
            if args.budget <= 1 {
                let o = point.run(&base)?;
                Ok((o.val_accuracy, o.test_accuracy, base.clone()))
            } else {
                let (trials, best) = search(&point, &base, &space, args.budget, args.jobs, seed)?;
                let t = &trials[best];
                Ok((t.val_accuracy, t.test_accuracy, t.config.clone()))
            }
        };
        rows.push(match attempt() {
            Ok((val, test, config)) => GridRow {
                alpha,
                beta,
                val_accuracy: Some(val),
                test_accuracy: Some(test),
                config: Some(config),
                error: None,
            },
            Err(e) => GridRow {
                alpha,
                beta,
                val_accuracy: None,
                test_accuracy: None,
                config: None,
                error: Some(e.to_string()),
            },
        });
    }
    if let Some(root) = &a.out {
        let name = format!(
            "propmodel-{}-{}.json",
            match args.model {
                PropModel::Mix => "mix",
                PropModel::Exponents => "exponents",
            },
            run_stem(&exp.split)
        );
        write_atomic(
            &run_dir(root, &exp.dataset.name, &exp.method.key()).join(name),
            &to_json(&rows),
        )?;
    }
    writeln!(
        out,
        "{:>6} {:>6} {:>8} {:>8}",
        "alpha", "beta", "val", "test"
    )
    .map_err(io)?;
    for r in &rows {
        match (&r.error, r.val_accuracy, r.test_accuracy) {
            (None, Some(v), Some(t)) => {
                writeln!(
                    out,
                    "{:>6.2} {:>6.2} {:>8.2} {:>8.2}",
                    r.alpha,
                    r.beta,
                    100.0 * v,
                    100.0 * t
                )
            }
            (e, _, _) => writeln!(
                out,
                "{:>6.2} {:>6.2} error: {}",
                r.alpha,
                r.beta,
                e.as_deref().unwrap_or("unknown")
            ),
        }
        .map_err(io)?;
    }
    Ok(())
}

/// Small connected random graph with dense random features.
fn gradcheck_instance(
    n: usize,
    seed: u64,
) -> gcompose_core::Result<(GraphTopology, NodeMatrix, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    edges.extend(
        (0..n)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .filter(|(u, v)| u != v),
    );
    let g = GraphTopology::new(n, edges)?;
    let dim = 5;
    let x = DenseMatrix::new(
        n,
        dim,
        (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let labels = (0..n).map(|i| i % 3).collect();
    Ok((g, NodeMatrix::Dense(x), labels))
}

fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.nodes < 3 {
        return Err(Error::Usage("--nodes must be at least 3".into()).into());
    }
    let methods = match &args.method {
        Some(m) => vec![Method::parse(m)?],
        None => Preset::ALL
            .iter()
            .map(|&p| Method::Preset(p))
            .chain([Method::Lpnn])
            .collect(),
    };
    let (g, input, labels) = gradcheck_instance(args.nodes, args.seed)?;
    let ops = OperatorSet::standard(&g)?;
    let labeled: Vec<usize> = (0..args.nodes / 2).collect();
    let all: Vec<usize> = (0..args.nodes).collect();
    let classes = 3;
    let mut failed = Vec::new();
    for method in methods {
        let report: GradCheckReport = match &method {
            Method::Lpnn => {
                let net = compile(&g_spec(), &ops, input.cols(), classes, 0.0)?;
                let w = LpnnWeights {
                    mu_g: 0.7,
                    mu_l: 0.4,
                    mu_u: 0.3,
                    lambda_l: 0.6,
                    lambda_u: 0.2,
                };
                lpnn_gradient_check(&net, &input, &ops.label, &labels, &labeled, &w, args.seed)?
            }
            m => {
                let spec = m.spec(None, None, 4).expect("network method");
                let net = compile(&spec, &ops, input.cols(), classes, 0.3)?;
                gradient_check(&net, &input, &labels, &all, args.seed)?
            }
        };
        let ok = report.passed(args.tolerance);
        writeln!(
            out,
            "{:<10} {:>6} entries ({} skipped at kinks)  max relative error {:.3e}  {}",
            method.key(),
            report.checked,
            report.skipped,
            report.max_relative_error,
            if ok { "ok" } else { "FAILED" }
        )
        .map_err(io)?;
        if !ok {
            failed.push(method.key());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError {
            code: 3,
            message: format!("gradient check failed for {}", failed.join(", ")),
        })
    }
}

#[derive(Debug, Serialize)]
struct CostReport {
    method: String,
    n: usize,
    n_e: usize,
    d: usize,
    m: usize,
    /// Nonzero terms only.
    terms: serde_json::Map<String, serde_json::Value>,
    total: u64,
}

fn cost(args: &CostArgs, out: &mut dyn Write) -> CliResult<()> {
    let method = Method::parse(&args.method)?;
    let spec = method
        .spec(args.layers, args.lp_layers, args.hidden)
        .ok_or_else(|| Error::Usage("lpnn has no per-epoch cost model".into()))?;
    let (n, n_e, d, m) = match (&args.dataset_dir, args.nodes) {
        (Some(dir), None) => {
            let ds = data::load_dataset(dir)?;
            let s = normalize(&augment(&ds.topology), Normalization::Symmetric)?;
            (
                ds.num_nodes(),
                s.matrix.nnz(),
                ds.feature_dim(),
                ds.num_classes,
            )
        }
        (None, Some(n)) => (
            n,
            args.edges.expect("clap requires --edges"),
            args.dim.expect("clap requires --dim"),
            args.classes.expect("clap requires --classes"),
        ),
        _ => {
            return Err(Error::Usage(
                "give either --dataset-dir or --nodes/--edges/--dim/--classes".into(),
            )
            .into())
        }
    };
    let c = estimate_cost(&spec, n, n_e, d, m);
    let all = [
        ("feature_prop", c.feature_prop),
        ("hidden", c.hidden),
        ("classifier", c.classifier),
        ("label_prop", c.label_prop),
    ];
    let terms = all
        .into_iter()
        .filter(|&(k, _)| c.nonzero_terms().contains(&k))
        .map(|(k, v)| (k.to_string(), v.into()))
        .collect();
    let report = CostReport {
        method: method.key(),
        n,
        n_e,
        d,
        m,
        terms,
        total: c.total(),
    };
    writeln!(out, "{}", to_json(&report)).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(
            parse_grid("0:1, 0.5:0.5").unwrap(),
            vec![(0.0, 1.0), (0.5, 0.5)]
        );
        assert!(matches!(parse_grid("0.5"), Err(Error::Usage(_))));
        assert!(matches!(parse_grid("a:b"), Err(Error::Usage(_))));
    }

    #[test]
    fn default_grid_has_ten_points_within_unit_square() {
        assert_eq!(DEFAULT_GRID.len(), 10);
        assert!(DEFAULT_GRID
            .iter()
            .all(|&(a, b)| (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)));
    }

    #[test]
    fn gradcheck_instance_is_connected_and_deterministic() {
        let (g, x, l) = gradcheck_instance(8, 4).unwrap();
        let (g2, x2, _) = gradcheck_instance(8, 4).unwrap();
        assert_eq!(g.edges(), g2.edges());
        assert_eq!(x.to_dense(), x2.to_dense());
        assert!(g.degrees().iter().all(|&d| d > 0));
        assert_eq!(l.len(), 8);
    }
}
