use std::path::{Path, PathBuf};

use gcompose_cli::run_cli;
use gcompose_cli::sweep::{select_best, Trial};
use gcompose_core::evaluation::RunResult;
use gcompose_core::synthetic::{generate, SyntheticConfig};

struct Fixture {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    generate(&SyntheticConfig::balanced("toy", 4, 420, 5))
        .unwrap()
        .write(&data)
        .unwrap();
    let out = tmp.path().join("results");
    let f = Fixture {
        data,
        out,
        _tmp: tmp,
    };
    f.run(&["splits"]).unwrap();
    f
}

impl Fixture {
    /// Runs a command with `--dataset-dir` filled in; returns stdout or the exit code.
    fn run(&self, args: &[&str]) -> Result<String, i32> {
        let mut argv = vec![
            "gcompose",
            args[0],
            "--dataset-dir",
            self.data.to_str().unwrap(),
        ];
        argv.extend(&args[1..]);
        run_raw(&argv)
    }
}

fn run_raw(argv: &[&str]) -> Result<String, i32> {
    let mut out = Vec::new();
    match run_cli(argv, &mut out) {
        Ok(()) => Ok(String::from_utf8(out).unwrap()),
        Err(e) => Err(e.code),
    }
}

fn read_result(path: &Path) -> RunResult {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const FAST: [&str; 2] = ["--epochs", "60"];

#[test]
fn splits_command_writes_all_fifty() {
    let f = fixture();
    let n = walk(&f.data.join("splits")).len();
    assert_eq!(n, 50);
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn exit_codes() {
    let f = fixture();
    assert_eq!(f.run(&["train", "--method", "nope"]), Err(1));
    assert_eq!(f.run(&["train", "--method", "gcn", "--size", "9"]), Err(1));
    assert_eq!(
        f.run(&["train", "--method", "gcn", "--dropout", "1.5"]),
        Err(1)
    );
    assert_eq!(
        f.run(&["train", "--method", "gcn", "--operator", "mix"]),
        Err(1)
    );
    assert_eq!(
        f.run(&["train", "--method", "gcn", "--standard-split"]),
        Err(2)
    );
    assert_eq!(
        run_raw(&[
            "gcompose",
            "train",
            "--method",
            "gcn",
            "--dataset-dir",
            "/nonexistent"
        ]),
        Err(2)
    );
    assert_eq!(run_raw(&["gcompose", "frobnicate"]), Err(1));
    assert_eq!(
        run_raw(&[
            "gcompose",
            "cost",
            "--method",
            "lpnn",
            "--nodes",
            "3",
            "--edges",
            "3",
            "--dim",
            "2",
            "--classes",
            "2"
        ]),
        Err(1)
    );
}

#[test]
fn train_is_replayable_and_writes_results() {
    let f = fixture();
    let out = f.out.to_str().unwrap();
    let mut args = vec![
        "train", "--method", "gcn-lp", "--seed", "7", "--split", "3", "--out", out,
    ];
    args.extend(FAST);
    let first = f.run(&args).unwrap();
    let path = f.out.join("toy/gcn-lp/size1-split3.result.json");
    let a = std::fs::read_to_string(&path).unwrap();
    let history =
        std::fs::read_to_string(f.out.join("toy/gcn-lp/size1-split3.history.json")).unwrap();
    assert_eq!(f.run(&args).unwrap(), first);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), a);
    assert_eq!(
        std::fs::read_to_string(f.out.join("toy/gcn-lp/size1-split3.history.json")).unwrap(),
        history
    );
    let r = read_result(&path);
    assert_eq!(
        (
            r.method.as_str(),
            r.dataset.as_str(),
            r.size_index,
            r.split_index
        ),
        ("gcn-lp", "toy", 1, 3)
    );
    assert!(r.test_accuracy > 0.5, "{r:?}");
    assert_eq!(r.config["seed"], 7);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let f = fixture();
    let cfg = f.data.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"learning_rate": 0.05, "hidden": 8, "seed": 3, "max_epochs": 40}"#,
    )
    .unwrap();
    let out = f.out.to_str().unwrap();
    f.run(&[
        "train",
        "--method",
        "gcn",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        out,
    ])
    .unwrap();
    let r = read_result(&f.out.join("toy/gcn/size1-split0.result.json"));
    assert_eq!(r.config["learning_rate"], 0.05);
    assert_eq!(r.config["hidden"], 8);
    assert_eq!(r.config["seed"], 4);
}

#[test]
fn single_precision_tracks_double() {
    let f = fixture();
    let out64 = f.out.join("f64");
    let out32 = f.out.join("f32");
    for (p, o) in [("f64", &out64), ("f32", &out32)] {
        let mut args = vec![
            "train",
            "--method",
            "mlp-lp",
            "--precision",
            p,
            "--out",
            o.to_str().unwrap(),
        ];
        args.extend(FAST);
        f.run(&args).unwrap();
    }
    let a = read_result(&out64.join("toy/mlp-lp/size1-split0.result.json"));
    let b = read_result(&out32.join("toy/mlp-lp/size1-split0.result.json"));
    assert!(
        (a.test_accuracy - b.test_accuracy).abs() < 0.05,
        "{a:?} vs {b:?}"
    );
}

#[test]
fn sweep_is_parallel_invariant_and_selects_on_validation_only() {
    let f = fixture();
    let mut files = Vec::new();
    for jobs in ["1", "3"] {
        let out = f.out.join(format!("jobs{jobs}"));
        let mut args = vec![
            "sweep", "--method", "sgcn", "--budget", "6", "--seed", "11", "--jobs", jobs,
        ];
        args.extend(["--out", out.to_str().unwrap()]);
        args.extend(FAST);
        f.run(&args).unwrap();
        let dir = out.join("toy/sgcn");
        files.push((
            std::fs::read_to_string(dir.join("size1-split0.trials.json")).unwrap(),
            std::fs::read_to_string(dir.join("size1-split0.result.json")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);

    let trials: Vec<Trial> = serde_json::from_str(&files[0].0).unwrap();
    assert_eq!(trials.len(), 6);
    let result: RunResult = serde_json::from_str(&files[0].1).unwrap();
    let vals: Vec<Option<f64>> = trials
        .iter()
        .map(|t| t.error.is_none().then_some(t.val_accuracy))
        .collect();
    let chosen = select_best(&vals).unwrap();
    assert_eq!(result.config["details"]["selected_trial"], chosen);
    assert_eq!(result.best_val_accuracy, trials[chosen].val_accuracy);
    assert_eq!(result.test_accuracy, trials[chosen].test_accuracy);
    // Selection must not change when test accuracies are scrambled.
    let mut scrambled = trials.clone();
    scrambled
        .iter_mut()
        .enumerate()
        .for_each(|(i, t)| t.test_accuracy = i as f64);
    let vals2: Vec<Option<f64>> = scrambled
        .iter()
        .map(|t| t.error.is_none().then_some(t.val_accuracy))
        .collect();
    assert_eq!(select_best(&vals2), Some(chosen));
}

#[test]
fn compare_reports_ranks_and_names_missing_cells() {
    let f = fixture();
    let out = f.out.to_str().unwrap();
    for split in ["0", "1"] {
        for method in ["sgcn", "linear-lp"] {
            let mut args = vec!["train", "--method", method, "--split", split, "--out", out];
            args.extend(FAST);
            f.run(&args).unwrap();
        }
    }
    let report = run_raw(&["gcompose", "compare", out]).unwrap();
    assert!(report.contains("training size 1"), "{report}");
    assert!(report.lines().any(|l| l.starts_with("sgcn")));
    assert!(report.lines().any(|l| l.starts_with("linear-lp")));

    // A second dataset with only one method leaves a hole in the table.
    let other = f.out.join("other/sgcn");
    std::fs::create_dir_all(&other).unwrap();
    let mut r = read_result(&f.out.join("toy/sgcn/size1-split0.result.json"));
    r.dataset = "other".into();
    std::fs::write(
        other.join("size1-split0.result.json"),
        serde_json::to_string(&r).unwrap(),
    )
    .unwrap();
    let mut sink = Vec::new();
    let err = run_cli(["gcompose", "compare", out], &mut sink).unwrap_err();
    assert_eq!(err.code, 2);
    assert!(
        err.message.contains("(linear-lp, other)"),
        "{}",
        err.message
    );
}

#[test]
fn propmodel_sweep_identities() {
    let f = fixture();
    let mut args = vec![
        "propmodel-sweep",
        "--method",
        "mlp-lp",
        "--model",
        "exponents",
        "--grid",
        "0.5:0.5",
    ];
    args.extend(FAST);
    let grid = f.run(&args).unwrap();
    let mut args = vec!["train", "--method", "mlp-lp", "--operator", "symmetric"];
    args.extend(FAST);
    let direct = f.run(&args).unwrap();
    let test_of_grid: f64 = grid
        .lines()
        .nth(1)
        .unwrap()
        .split_whitespace()
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    let test_of_direct = direct
        .split("test ")
        .nth(1)
        .unwrap()
        .split('%')
        .next()
        .unwrap()
        .parse::<f64>()
        .unwrap();
    assert_eq!(test_of_grid, test_of_direct);

    // mix(0, 1) removes self-loops; the error is reported per row, the rest runs.
    let mut args = vec![
        "propmodel-sweep",
        "--method",
        "mlp-lp",
        "--model",
        "mix",
        "--grid",
        "0:1,1:1",
    ];
    args.extend(FAST);
    let out = f.run(&args).unwrap();
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].split_whitespace().count() == 4, "{out}");
}

#[test]
fn lpnn_trains_through_the_cli() {
    let f = fixture();
    let out = f.out.to_str().unwrap();
    let mut args = vec!["train", "--method", "lpnn", "--out", out];
    args.extend(FAST);
    f.run(&args).unwrap();
    let r = read_result(&f.out.join("toy/lpnn/size1-split0.result.json"));
    assert_eq!(r.config["details"]["prediction"], "g");
    assert!(r.config["details"]["f_test_accuracy"].is_number());
}

#[test]
fn gradcheck_command_passes() {
    let out = run_raw(&[
        "gcompose",
        "gradcheck",
        "--method",
        "gcn-lp",
        "--nodes",
        "6",
    ])
    .unwrap();
    assert!(out.contains("ok"), "{out}");
}

#[test]
fn spec_file_method() {
    let f = fixture();
    let spec = f.data.join("net.json");
    std::fs::write(
        &spec,
        r#"{"name": "two-hop-lp", "stages": [
            {"kind": "fp", "layers": 1},
            {"kind": "linear_classifier"},
            {"kind": "softmax"},
            {"kind": "lp", "layers": 2}
        ]}"#,
    )
    .unwrap();
    let out = f.out.to_str().unwrap();
    let mut args = vec!["train", "--method", spec.to_str().unwrap(), "--out", out];
    args.extend(FAST);
    f.run(&args).unwrap();
    assert!(f
        .out
        .join("toy/two-hop-lp/size1-split0.result.json")
        .is_file());
}
