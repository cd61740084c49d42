//! Seeded planted-partition datasets: labelled graphs with homophilous edges
//! and class-dependent bag-of-words features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::linalg::SparseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub name: String,
    /// Nodes per class; labels are shuffled over node ids.
    pub class_sizes: Vec<usize>,
    pub feature_dim: usize,
    /// Active words per node.
    pub words_per_node: usize,
    /// Probability that a word is drawn from the node's class vocabulary.
    pub feature_signal: f64,
    /// Expected degree.
    pub avg_degree: f64,
    /// Probability that an edge stays inside the class.
    pub homophily: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Small default instance with `classes` equal classes of `per_class` nodes.
    pub fn balanced(name: &str, classes: usize, per_class: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            class_sizes: vec![per_class; classes],
            feature_dim: 200,
            words_per_node: 12,
            feature_signal: 0.35,
            avg_degree: 4.0,
            homophily: 0.8,
            seed,
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    let m = cfg.class_sizes.len();
    if m == 0 || cfg.class_sizes.contains(&0) {
        return Err(Error::Config("every class needs at least one node".into()));
    }
    if cfg.feature_dim < m || cfg.words_per_node == 0 {
        return Err(Error::Config(format!(
            "feature_dim {} must be at least the class count {m} and words_per_node positive",
            cfg.feature_dim
        )));
    }
    for (what, p) in [
        ("feature_signal", cfg.feature_signal),
        ("homophily", cfg.homophily),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{what} = {p} is outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<usize> = cfg
        .class_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    labels.shuffle(&mut rng);
    let n = labels.len();

    let mut members = vec![Vec::new(); m];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let num_edges = (cfg.avg_degree * n as f64 / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(num_edges);
    let mut attempts = 0;
    while edges.len() < num_edges && attempts < 100 * num_edges {
        attempts += 1;
        let u = rng.random_range(0..n);
        let v = if rng.random_bool(cfg.homophily) {
            let same = &members[labels[u]];
            same[rng.random_range(0..same.len())]
        } else {
            rng.random_range(0..n)
        };
        if u != v {
            edges.push((u, v));
        }
    }
    let topology = GraphTopology::new(n, edges)?;

    // Class c owns the vocabulary slice [c*block, (c+1)*block).
    let block = cfg.feature_dim / m;
    let mut triplets = Vec::with_capacity(n * cfg.words_per_node);
    for (i, &c) in labels.iter().enumerate() {
        let mut cols: Vec<usize> = (0..cfg.words_per_node)
            .map(|_| {
                if rng.random_bool(cfg.feature_signal) {
                    c * block + rng.random_range(0..block)
                } else {
                    rng.random_range(0..cfg.feature_dim)
                }
            })
            .collect();
        cols.sort_unstable();
        cols.dedup();
        triplets.extend(cols.into_iter().map(|j| (i, j, 1.0)));
    }
    let features = SparseMatrix::from_triplets(n, cfg.feature_dim, triplets)?;
    Dataset::new(cfg.name.clone(), topology, features, labels, m)
}
