//! Composable graph networks built from feature propagation, label
//! propagation and feed-forward layers, with the training, data, sweep and
//! evaluation machinery to compare them.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod lpnn;
pub mod networks;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use graph::{GraphTopology, Normalization, PropagationOperator};
pub use linalg::{DenseMatrix, NodeMatrix, Scalar, SparseMatrix};
pub use networks::{compile, CompiledNetwork, Mode, NetworkSpec, OperatorSet, Parameters, Preset};
