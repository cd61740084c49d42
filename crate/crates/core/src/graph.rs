//! Adjacency construction and normalized propagation operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Scalar, SparseMatrix};

/// Undirected simple graph. Edges are stored once, as `(min, max)`, sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphTopology {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl GraphTopology {
    /// Validates node ids, drops self-loops and collapses duplicate or
    /// reversed pairs.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Ingestion(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u != v {
                out.push((u.min(v), u.max(v)));
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self {
            num_nodes,
            edges: out,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }
}

/// `Ã = I + A`.
pub fn augment(g: &GraphTopology) -> SparseMatrix<f64> {
    mix_entries(g, 1.0, 1.0)
}

/// `Ã = αI + βA`. Zero-weight entries are not stored, so `alpha = 0` leaves
/// isolated nodes with an empty row; [`normalize`] rejects those.
pub fn mix_self_neighbor(g: &GraphTopology, alpha: f64, beta: f64) -> Result<SparseMatrix<f64>> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    Ok(mix_entries(g, alpha, beta))
}

fn mix_entries(g: &GraphTopology, alpha: f64, beta: f64) -> SparseMatrix<f64> {
    let n = g.num_nodes();
    let mut triplets = Vec::with_capacity(n + 2 * g.num_edges());
    if alpha != 0.0 {
        triplets.extend((0..n).map(|i| (i, i, alpha)));
    }
    if beta != 0.0 {
        for &(u, v) in g.edges() {
            triplets.push((u, v, beta));
            triplets.push((v, u, beta));
        }
    }
    SparseMatrix::from_triplets(n, n, triplets).expect("validated topology yields a valid matrix")
}

/// How a nonnegative matrix is turned into a propagation operator. The degree
/// matrix is always the diagonal of row sums of the matrix being normalized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `D^{-1/2} Ã D^{-1/2}`
    Symmetric,
    /// `D^{-1} Ã`
    Row,
    /// `D^{-a} Ã D^{-b}`
    General { alpha_exp: f64, beta_exp: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationOperator<T: Scalar = f64> {
    pub matrix: SparseMatrix<T>,
    pub normalization: Normalization,
    /// `(alpha_self, beta_neighbor)` used to build the matrix, if not `(1, 1)`.
    pub mix: Option<(f64, f64)>,
}

impl<T: Scalar> PropagationOperator<T> {
    pub fn num_nodes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: SparseMatrix::identity(n),
            normalization: Normalization::Row,
            mix: Some((1.0, 0.0)),
        }
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.matrix.values().iter().all(|&v| v >= T::zero())
            && self
                .matrix
                .row_sums()
                .iter()
                .all(|s| (s.as_f64() - 1.0).abs() <= tol)
    }

    pub fn cast<U: Scalar>(&self) -> PropagationOperator<U> {
        PropagationOperator {
            matrix: self.matrix.cast(),
            normalization: self.normalization,
            mix: self.mix,
        }
    }
}

pub fn normalize(a: &SparseMatrix<f64>, mode: Normalization) -> Result<PropagationOperator<f64>> {
    if a.rows() != a.cols() {
        return Err(Error::Config(format!(
            "propagation matrix must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if let Some(&v) = a.values().iter().find(|&&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Config(format!(
            "propagation matrix must be nonnegative and finite, found {v}"
        )));
    }
    let deg = a.row_sums();
    if let Some(node) = deg.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroRow { node });
    }
    // Exponent pairs that coincide with a named mode take its arithmetic, so
    // the identities hold bit for bit.
    let arithmetic = match mode {
        Normalization::General {
            alpha_exp: 0.5,
            beta_exp: 0.5,
        } => Normalization::Symmetric,
        Normalization::General {
            alpha_exp: 1.0,
            beta_exp: 0.0,
        } => Normalization::Row,
        other => other,
    };
    let matrix = match arithmetic {
        Normalization::Symmetric => {
            let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
            a.map_entries(|i, j, v| v * inv_sqrt[i] * inv_sqrt[j])
        }
        Normalization::Row => a.map_entries(|i, _, v| v / deg[i]),
        Normalization::General {
            alpha_exp,
            beta_exp,
        } => {
            let left: Vec<f64> = deg.iter().map(|d| d.powf(-alpha_exp)).collect();
            let right: Vec<f64> = deg.iter().map(|d| d.powf(-beta_exp)).collect();
            a.map_entries(|i, j, v| left[i] * v * right[j])
        }
    };
    Ok(PropagationOperator {
        matrix,
        normalization: mode,
        mix: None,
    })
}

/// Mixes, then normalizes, recording the mix on the operator.
pub fn mixed_operator(
    g: &GraphTopology,
    alpha: f64,
    beta: f64,
    mode: Normalization,
) -> Result<PropagationOperator<f64>> {
    let a = mix_self_neighbor(g, alpha, beta)?;
    let mut op = normalize(&a, mode)?;
    op.mix = Some((alpha, beta));
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> GraphTopology {
        GraphTopology::new(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn augment_empty_graph_is_identity() {
        let g = GraphTopology::new(3, []).unwrap();
        assert_eq!(augment(&g), SparseMatrix::identity(3));
    }

    #[test]
    fn augment_p3_degrees() {
        let a = augment(&p3());
        assert_eq!(a.row_sums(), vec![2.0, 3.0, 2.0]);
        assert_eq!(a.nnz(), 3 + 2 * 2);
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn duplicate_and_reversed_edges_stored_once() {
        let g = GraphTopology::new(2, [(0, 1), (1, 0), (0, 1), (1, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(augment(&g).get(0, 1), 1.0);
    }

    #[test]
    fn out_of_range_edge_is_named() {
        let err = GraphTopology::new(3, [(0, 3)]).unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)));
        assert!(err.to_string().contains("(0, 3)"));
    }

    #[test]
    fn symmetric_p3_values() {
        let s = normalize(&augment(&p3()), Normalization::Symmetric).unwrap();
        assert!((s.matrix.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((s.matrix.get(0, 1) - 0.40825).abs() < 1e-5);
        assert!((s.matrix.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!(s.matrix.is_symmetric(1e-12));
    }

    #[test]
    fn row_p3_values() {
        let s = normalize(&augment(&p3()), Normalization::Row).unwrap();
        let want = [[0.5, 0.5, 0.0], [1.0 / 3.0; 3], [0.0, 0.5, 0.5]];
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert!((s.matrix.get(i, j) - w).abs() < 1e-15);
            }
        }
        assert!(s.is_row_stochastic(1e-12));
    }

    #[test]
    fn general_exponent_identities() {
        let a = augment(&p3());
        let sym = normalize(&a, Normalization::Symmetric).unwrap();
        let half = normalize(
            &a,
            Normalization::General {
                alpha_exp: 0.5,
                beta_exp: 0.5,
            },
        )
        .unwrap();
        assert_eq!(sym.matrix, half.matrix);
        let row = normalize(&a, Normalization::Row).unwrap();
        let one_zero = normalize(
            &a,
            Normalization::General {
                alpha_exp: 1.0,
                beta_exp: 0.0,
            },
        )
        .unwrap();
        assert_eq!(row.matrix, one_zero.matrix);
        let near = normalize(
            &a,
            Normalization::General {
                alpha_exp: 0.5000001,
                beta_exp: 0.4999999,
            },
        )
        .unwrap();
        assert!(sym.matrix.to_dense().max_abs_diff(&near.matrix.to_dense()) < 1e-6);
        let zero = normalize(
            &a,
            Normalization::General {
                alpha_exp: 0.0,
                beta_exp: 0.0,
            },
        )
        .unwrap();
        assert_eq!(zero.matrix, a);
    }

    #[test]
    fn mix_special_cases() {
        let g = p3();
        assert_eq!(mix_self_neighbor(&g, 1.0, 1.0).unwrap(), augment(&g));
        assert_eq!(
            mix_self_neighbor(&g, 1.0, 0.0).unwrap(),
            SparseMatrix::identity(3)
        );
        assert!(mix_self_neighbor(&g, 1.5, 0.0).is_err());
    }

    #[test]
    fn mix_without_self_weight_rejects_isolated_node() {
        let g = GraphTopology::new(3, [(0, 1)]).unwrap();
        let err = mixed_operator(&g, 0.0, 1.0, Normalization::Row).unwrap_err();
        assert!(matches!(err, Error::ZeroRow { node: 2 }), "{err}");
    }

    #[test]
    fn single_node_symmetric_is_one() {
        let g = GraphTopology::new(1, []).unwrap();
        let s = normalize(&augment(&g), Normalization::Symmetric).unwrap();
        assert_eq!(s.matrix.to_dense().values(), &[1.0]);
    }
}
