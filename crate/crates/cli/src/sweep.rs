//! Uniform random search over training hyperparameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gcompose_core::lpnn::LpnnWeights;
use gcompose_core::{Error, Result};

use crate::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// `exp` of a uniform draw in `[ln lo, ln hi)`.
    LogUniform { lo: f64, hi: f64 },
}

impl Domain {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Domain::Uniform { lo, hi } => rng.random_range(lo..hi),
            Domain::LogUniform { lo, hi } => rng.random_range(lo.ln()..hi.ln()).exp(),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Domain::Uniform { lo, hi } | Domain::LogUniform { lo, hi } => v >= lo && v < hi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpace {
    pub learning_rate: Domain,
    pub dropout: Domain,
    pub weight_decay: Domain,
    pub hidden: Vec<usize>,
    /// Domain of each of the five LPNN loss weights.
    pub lpnn_weight: Domain,
}

impl SweepSpace {
    /// Every rate uniform in `[0, 1)`.
    pub fn unit() -> Self {
        let unit = Domain::Uniform { lo: 0.0, hi: 1.0 };
        Self {
            learning_rate: unit,
            dropout: unit,
            weight_decay: unit,
            hidden: vec![8, 16, 32, 64, 128],
            lpnn_weight: unit,
        }
    }

    /// Learning rate and weight decay drawn log-uniformly from ranges where
    /// Adam training is usually stable; everything else as in [`unit`](Self::unit).
    pub fn desk() -> Self {
        Self {
            learning_rate: Domain::LogUniform { lo: 1e-4, hi: 1e-1 },
            weight_decay: Domain::LogUniform { lo: 1e-6, hi: 1e-1 },
            ..Self::unit()
        }
    }

    /// Draws `budget` configurations. Each gets its own training seed from
    /// the same stream, so the sequence depends only on `seed`.
    pub fn sample(&self, base: &RunConfig, budget: usize, seed: u64) -> Vec<RunConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..budget)
            .map(|_| {
                let mut c = base.clone();
                c.train.learning_rate = self.learning_rate.sample(&mut rng);
                c.train.dropout = self.dropout.sample(&mut rng);
                c.train.weight_decay = self.weight_decay.sample(&mut rng);
                c.hidden = self.hidden[rng.random_range(0..self.hidden.len())];
                let mut w = || self.lpnn_weight.sample(&mut rng);
                c.lpnn = LpnnWeights {
                    mu_g: w(),
                    mu_l: w(),
                    mu_u: w(),
                    lambda_l: w(),
                    lambda_u: w(),
                };
                c.train.seed = rng.random();
                c
            })
            .collect()
    }
}

/// Outcome of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: RunConfig,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
    /// Set when training aborted; accuracies are then NaN.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Index of the highest validation accuracy, earliest on ties. Only the
/// validation accuracies are visible to the selection.
pub fn select_best(val_accuracies: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in val_accuracies.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Runs `configs` on `jobs` threads and returns the trials in config order
/// with the selected index. Fails only if every configuration failed.
pub fn run_sweep<F>(configs: Vec<RunConfig>, jobs: usize, run: F) -> Result<(Vec<Trial>, usize)>
where
    F: Fn(&RunConfig) -> Result<(f64, f64, usize)> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} sweep workers: {e}")))?;
    let trials: Vec<Trial> = pool.install(|| {
        configs
            .into_par_iter()
            .enumerate()
            .map(|(index, config)| match run(&config) {
                Ok((val, test, epoch)) => Trial {
                    index,
                    config,
                    val_accuracy: val,
                    test_accuracy: test,
                    best_epoch: epoch,
                    error: None,
                },
                Err(e) => Trial {
                    index,
                    config,
                    val_accuracy: f64::NAN,
                    test_accuracy: f64::NAN,
                    best_epoch: 0,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });
    let vals: Vec<Option<f64>> = trials
        .iter()
        .map(|t| t.error.is_none().then_some(t.val_accuracy))
        .collect();
    match select_best(&vals) {
        Some(i) => Ok((trials, i)),
        None => Err(Error::NonFinite {
            epoch: 0,
            learning_rate: f64::NAN,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_domain_and_repeat() {
        for space in [SweepSpace::unit(), SweepSpace::desk()] {
            let a = space.sample(&RunConfig::default(), 300, 11);
            assert_eq!(a, space.sample(&RunConfig::default(), 300, 11));
            for c in &a {
                assert!(space.learning_rate.contains(c.train.learning_rate));
                assert!(space.dropout.contains(c.train.dropout));
                assert!(space.weight_decay.contains(c.train.weight_decay));
                assert!(space.hidden.contains(&c.hidden));
                assert!(c
                    .lpnn
                    .as_array()
                    .iter()
                    .all(|&w| space.lpnn_weight.contains(w)));
            }
        }
    }

    #[test]
    fn selection_prefers_first_of_ties_and_skips_failures() {
        assert_eq!(
            select_best(&[Some(0.5), Some(0.7), None, Some(0.7)]),
            Some(1)
        );
        assert_eq!(select_best(&[None, None]), None);
    }

    #[test]
    fn parallel_sweep_matches_sequential() {
        let configs = SweepSpace::desk().sample(&RunConfig::default(), 40, 3);
        let score = |c: &RunConfig| {
            let v = (c.train.learning_rate * 1e4).round() / 1e4;
            Ok((v, 1.0 - v, c.hidden))
        };
        let one = run_sweep(configs.clone(), 1, score).unwrap();
        let four = run_sweep(configs, 4, score).unwrap();
        assert_eq!(one.1, four.1);
        assert_eq!(
            serde_json::to_string(&one.0).unwrap(),
            serde_json::to_string(&four.0).unwrap()
        );
    }

    #[test]
    fn all_failures_is_an_error() {
        let configs = SweepSpace::desk().sample(&RunConfig::default(), 3, 3);
        let err = run_sweep(configs, 2, |_| {
            Err(Error::NonFinite {
                epoch: 1,
                learning_rate: 0.5,
            })
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
