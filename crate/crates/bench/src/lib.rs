//! Synthetic inputs for the benchmarks.

use gcompose_core::{GraphTopology, SparseMatrix};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random graph with roughly `avg_degree` neighbours per node.
pub fn random_graph(n: usize, avg_degree: usize, seed: u64) -> GraphTopology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<_> = (0..n * avg_degree / 2)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
        .collect();
    GraphTopology::new(n, edges).expect("ids in range")
}

/// Binary bag-of-words style features with `per_row` active entries per node.
pub fn random_features(n: usize, dim: usize, per_row: usize, seed: u64) -> SparseMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(n * per_row);
    for i in 0..n {
        let mut cols: Vec<usize> = (0..per_row).map(|_| rng.random_range(0..dim)).collect();
        cols.sort_unstable();
        cols.dedup();
        triplets.extend(cols.into_iter().map(|j| (i, j, 1.0)));
    }
    SparseMatrix::from_triplets(n, dim, triplets).expect("valid triplets")
}

/// Uniform random class labels.
pub fn random_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}
