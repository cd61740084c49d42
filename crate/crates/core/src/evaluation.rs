//! Accuracy, mean/std aggregation over splits, and average-rank tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Scalar};

/// Fraction of `nodes` whose argmax class (ties to the lowest index) equals
/// its label.
pub fn accuracy<T: Scalar>(p: &DenseMatrix<T>, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Config("accuracy over an empty node set".into()));
    }
    let correct = nodes
        .iter()
        .filter(|&&i| p.argmax_row(i) == labels[i])
        .count();
    Ok(correct as f64 / nodes.len() as f64)
}

/// One trained model evaluated on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub dataset: String,
    /// 1..=5 for generated splits, 0 for the standard split.
    pub size_index: usize,
    pub split_index: usize,
    pub test_accuracy: f64,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_path: Option<String>,
}

/// Mean and sample standard deviation, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

/// `accuracies` are fractions in `[0, 1]`.
pub fn aggregate(accuracies: &[f64]) -> Result<Summary> {
    if accuracies.len() < 2 {
        return Err(Error::Data(format!(
            "standard deviation needs at least 2 results, got {}",
            accuracies.len()
        )));
    }
    let n = accuracies.len() as f64;
    let pct: Vec<f64> = accuracies.iter().map(|a| 100.0 * a).collect();
    let mean = pct.iter().sum::<f64>() / n;
    let var = pct.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Summary {
        mean,
        std: var.sqrt(),
    })
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ({:.1})", self.mean, self.std)
    }
}

impl FromStr for Summary {
    type Err = Error;

    /// Parses `"82.2 (1.1)"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("expected 'mean (std)', got '{s}'"));
        let (mean, rest) = s.trim().split_once('(').ok_or_else(bad)?;
        let std = rest.strip_suffix(')').ok_or_else(bad)?;
        Ok(Summary {
            mean: mean.trim().parse().map_err(|_| bad())?,
            std: std.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Methods × datasets mean accuracies with their ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `means[i][k]` for method `i`, dataset `k`.
    pub means: Vec<Vec<f64>>,
    pub ranks: Vec<Vec<f64>>,
    /// Mean rank per method.
    pub average: Vec<f64>,
}

/// Ranks within each dataset column (1 = highest mean, ties get the average
/// of the ranks they span) and averages them per method.
pub fn average_rank(
    methods: &[String],
    datasets: &[String],
    means: &[Vec<Option<f64>>],
) -> Result<RankTable> {
    let missing: Vec<String> = methods
        .iter()
        .enumerate()
        .flat_map(|(i, m)| {
            datasets.iter().enumerate().filter_map(move |(k, d)| {
                match means.get(i).and_then(|row| row.get(k)).copied().flatten() {
                    Some(_) => None,
                    None => Some(format!("({m}, {d})")),
                }
            })
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "missing results for {}",
            missing.join(", ")
        )));
    }
    if methods.is_empty() || datasets.is_empty() {
        return Err(Error::Data(
            "rank table needs at least one method and dataset".into(),
        ));
    }
    let means: Vec<Vec<f64>> = means
        .iter()
        .map(|row| row.iter().map(|v| v.unwrap()).collect())
        .collect();
    let mut ranks = vec![vec![0.0; datasets.len()]; methods.len()];
    for k in 0..datasets.len() {
        let mut order: Vec<usize> = (0..methods.len()).collect();
        order.sort_by(|&a, &b| means[b][k].total_cmp(&means[a][k]));
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && means[order[end]][k] == means[order[start]][k] {
                end += 1;
            }
            // positions start..end hold ranks start+1..=end
            let rank = (start + 1 + end) as f64 / 2.0;
            for &i in &order[start..end] {
                ranks[i][k] = rank;
            }
            start = end;
        }
    }
    let average = ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / datasets.len() as f64)
        .collect();
    Ok(RankTable {
        methods: methods.to_vec(),
        datasets: datasets.to_vec(),
        means,
        ranks,
        average,
    })
}

/// Groups results by `(method, dataset, size_index)`, keeping only the test
/// accuracies.
pub fn group_results(results: &[RunResult]) -> BTreeMap<(String, String, usize), Vec<f64>> {
    let mut out: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    for r in results {
        out.entry((r.method.clone(), r.dataset.clone(), r.size_index))
            .or_default()
            .push(r.test_accuracy);
    }
    out
}

/// Builds the per-size comparison from stored results. Methods and datasets
/// keep first-seen order.
pub fn compare(results: &[RunResult], size_index: usize) -> Result<(RankTable, Vec<Vec<Summary>>)> {
    let mut methods: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    for r in results.iter().filter(|r| r.size_index == size_index) {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
    }
    let groups = group_results(results);
    let mut summaries = Vec::with_capacity(methods.len());
    let mut means = Vec::with_capacity(methods.len());
    for m in &methods {
        let mut srow = Vec::new();
        let mut mrow = Vec::new();
        for d in &datasets {
            match groups.get(&(m.clone(), d.clone(), size_index)) {
                Some(accs) if accs.len() >= 2 => {
                    let s = aggregate(accs)?;
                    mrow.push(Some(s.mean));
                    srow.push(s);
                }
                Some(accs) if accs.len() == 1 => {
                    let mean = 100.0 * accs[0];
                    mrow.push(Some(mean));
                    srow.push(Summary { mean, std: 0.0 });
                }
                _ => {
                    mrow.push(None);
                    srow.push(Summary {
                        mean: f64::NAN,
                        std: f64::NAN,
                    });
                }
            }
        }
        summaries.push(srow);
        means.push(mrow);
    }
    Ok((average_rank(&methods, &datasets, &means)?, summaries))
}

/// Plain-text table: one row per method, `mean (std)` per dataset, R last.
pub fn render_report(table: &RankTable, summaries: &[Vec<Summary>]) -> String {
    let width = table
        .methods
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(7)
        .max(7);
    let mut out = format!("{:<width$}", "Methods");
    for d in &table.datasets {
        out.push_str(&format!(" | {d:>12}"));
    }
    out.push_str(" |    R\n");
    for (i, m) in table.methods.iter().enumerate() {
        out.push_str(&format!("{m:<width$}"));
        for s in &summaries[i] {
            out.push_str(&format!(" | {:>12}", s.to_string()));
        }
        out.push_str(&format!(" | {:>4.1}\n", table.average[i]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_ties_go_to_lowest_class() {
        let p = DenseMatrix::filled(4, 3, 1.0 / 3.0);
        assert_eq!(accuracy(&p, &[0, 1, 0, 2], &[0, 1, 2, 3]).unwrap(), 0.5);
        assert!(accuracy(&p, &[0, 1, 0, 2], &[]).is_err());
    }

    #[test]
    fn aggregate_hand_values() {
        let s = aggregate(&[0.80, 0.84]).unwrap();
        assert!((s.mean - 82.0).abs() < 1e-12);
        assert!((s.std - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate(&[0.7; 10]).unwrap().std, 0.0);
        assert!(aggregate(&[0.7]).is_err());
    }

    #[test]
    fn summary_format_round_trips() {
        let s: Summary = "82.2 (1.1)".parse().unwrap();
        assert_eq!(s.to_string(), "82.2 (1.1)");
        assert!("82.2".parse::<Summary>().is_err());
    }

    #[test]
    fn ties_share_fractional_rank() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let t = average_rank(
            &names(&["a", "b", "c"]),
            &names(&["x"]),
            &[vec![Some(0.9)], vec![Some(0.9)], vec![Some(0.5)]],
        )
        .unwrap();
        assert_eq!(t.ranks, vec![vec![1.5], vec![1.5], vec![3.0]]);
    }

    #[test]
    fn missing_cell_is_named() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let err = average_rank(
            &names(&["a", "b"]),
            &names(&["x", "y"]),
            &[vec![Some(0.9), Some(0.8)], vec![Some(0.7), None]],
        )
        .unwrap_err();
        assert!(err.to_string().contains("(b, y)"), "{err}");
    }
}
