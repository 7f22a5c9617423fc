//! Client-local relational data: graphs with node features, labels and splits.

mod adjacency;
mod generate;
mod io;
mod partition;

pub use adjacency::NormalizedAdjacency;
pub use generate::{complete_graph, path_graph, planted_partition_graph, PlantedPartition};
pub use io::{load_graph_csv, write_graph_csv, GraphFiles};
pub use partition::{dirichlet_label_partition, ClientGraph, Partition, PartitionSpec, PartitionWarning};

use num_rational::Ratio;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("feature matrix has {rows} rows but the graph has {n_nodes} nodes")]
    FeatureRows { rows: usize, n_nodes: usize },
    #[error("label vector has length {len} but the graph has {n_nodes} nodes")]
    LabelLength { len: usize, n_nodes: usize },
    #[error("split vector has length {len} but the graph has {n_nodes} nodes")]
    SplitLength { len: usize, n_nodes: usize },
    #[error("label {label} at node {node} is not below the class count {n_classes}")]
    LabelOutOfRange { node: usize, label: usize, n_classes: usize },
    #[error("graph must have at least {required} node(s), got {got}")]
    TooFewNodes { required: usize, got: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

/// Evaluation split a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Undirected graph with node features, class labels and a per-node split
/// assignment. Edges are stored once as `(lo, hi)` with `lo < hi`, sorted and
/// deduplicated; self-loops are never stored. A node carries at most one
/// split, so the three masks are disjoint by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix<T>,
    labels: Vec<usize>,
    n_classes: usize,
    splits: Vec<Option<Split>>,
}

impl<T: Scalar> Graph<T> {
    /// Validates and canonicalizes the inputs. Self-loop edges are dropped and
    /// duplicate undirected edges merged.
    pub fn new(
        features: Matrix<T>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<usize>,
        n_classes: usize,
        splits: Vec<Option<Split>>,
    ) -> Result<Self, GraphError> {
        let n_nodes = features.rows();
        if labels.len() != n_nodes {
            return Err(GraphError::LabelLength {
                len: labels.len(),
                n_nodes,
            });
        }
        if splits.len() != n_nodes {
            return Err(GraphError::SplitLength {
                len: splits.len(),
                n_nodes,
            });
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(GraphError::LabelOutOfRange {
                node,
                label,
                n_classes,
            });
        }
        let mut canon = Vec::new();
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(GraphError::EdgeOutOfRange(a, b, n_nodes));
            }
            if a != b {
                canon.push((a.min(b), a.max(b)));
            }
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Self {
            n_nodes,
            edges: canon,
            features,
            labels,
            n_classes,
            splits,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn splits(&self) -> &[Option<Split>] {
        &self.splits
    }

    pub fn mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|s| *s == Some(split)).collect()
    }

    pub fn train_mask(&self) -> Vec<bool> {
        self.mask(Split::Train)
    }

    pub fn val_mask(&self) -> Vec<bool> {
        self.mask(Split::Val)
    }

    pub fn test_mask(&self) -> Vec<bool> {
        self.mask(Split::Test)
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == Some(split)).count()
    }

    /// Replaces every split assignment.
    pub fn with_splits(mut self, splits: Vec<Option<Split>>) -> Result<Self, GraphError> {
        if splits.len() != self.n_nodes {
            return Err(GraphError::SplitLength {
                len: splits.len(),
                n_nodes: self.n_nodes,
            });
        }
        self.splits = splits;
        Ok(self)
    }

    /// Pads or keeps the feature matrix so it has exactly `dim` columns.
    /// Extra columns are zero. Fails if `dim` is smaller than the current width.
    pub fn pad_features(&self, dim: usize) -> Option<Self> {
        let d = self.feature_dim();
        if dim < d {
            return None;
        }
        let mut g = self.clone();
        g.features = Matrix::from_fn(self.n_nodes, dim, |i, j| {
            if j < d {
                self.features[(i, j)]
            } else {
                T::zero()
            }
        });
        Some(g)
    }

    /// Widens the class count. Labels stay valid since they only need to be below it.
    pub fn with_n_classes(mut self, n_classes: usize) -> Self {
        self.n_classes = self.n_classes.max(n_classes);
        self
    }

    /// Subgraph induced on `nodes`, relabeled `0..nodes.len()` in the given order.
    /// Edges leaving the node set are dropped.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.n_nodes];
        for (new, &old) in nodes.iter().enumerate() {
            local[old] = new;
        }
        let features = Matrix::from_fn(nodes.len(), self.feature_dim(), |i, j| {
            self.features[(nodes[i], j)]
        });
        let edges = self
            .edges
            .iter()
            .filter(|(a, b)| local[*a] != usize::MAX && local[*b] != usize::MAX)
            .map(|&(a, b)| (local[a], local[b]));
        let labels = nodes.iter().map(|&v| self.labels[v]).collect();
        let splits = nodes.iter().map(|&v| self.splits[v]).collect();
        Self::new(features, edges, labels, self.n_classes, splits)
            .expect("induced subgraph of a valid graph is valid")
    }
}

/// Edge density `2|E| / (|V|(|V|−1))`, exact.
pub fn graph_density<T: Scalar>(g: &Graph<T>) -> Result<Ratio<u64>, GraphError> {
    let n = g.n_nodes() as u64;
    if n < 2 {
        return Err(GraphError::TooFewNodes {
            required: 2,
            got: g.n_nodes(),
        });
    }
    Ok(Ratio::new(2 * g.n_edges() as u64, n * (n - 1)))
}

/// Mean degree `2|E| / |V|`, exact.
pub fn mean_degree<T: Scalar>(g: &Graph<T>) -> Result<Ratio<u64>, GraphError> {
    if g.n_nodes() == 0 {
        return Err(GraphError::TooFewNodes { required: 1, got: 0 });
    }
    Ok(Ratio::new(2 * g.n_edges() as u64, g.n_nodes() as u64))
}

/// Lossy float view of a ratio, for reporting.
pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_and_degree_of_small_graphs() {
        let k3 = complete_graph::<f64>(3).unwrap();
        assert_eq!(graph_density(&k3).unwrap(), Ratio::from_integer(1));
        assert_eq!(mean_degree(&k3).unwrap(), Ratio::from_integer(2));
        let p3 = path_graph::<f64>(3).unwrap();
        assert_eq!(graph_density(&p3).unwrap(), Ratio::new(2, 3));
        assert_eq!(mean_degree(&p3).unwrap(), Ratio::new(4, 3));
        let p1 = path_graph::<f64>(1).unwrap();
        assert!(matches!(graph_density(&p1), Err(GraphError::TooFewNodes { .. })));
    }

    #[test]
    fn reference_dataset_mean_degree() {
        // 13,752 nodes and 491,722 undirected edges.
        let d = Ratio::<u64>::new(2 * 491_722, 13_752);
        assert!((ratio_to_f64(d) - 71.5).abs() < 0.05);
    }

    #[test]
    fn constructor_canonicalizes_edges() {
        let g = Graph::<f64>::new(
            Matrix::identity(3),
            vec![(1, 0), (0, 1), (2, 2), (2, 1)],
            vec![0; 3],
            1,
            vec![None; 3],
        )
        .unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        let bad_edge = Graph::<f64>::new(Matrix::identity(2), vec![(0, 2)], vec![0; 2], 1, vec![None; 2]);
        assert!(matches!(bad_edge, Err(GraphError::EdgeOutOfRange(0, 2, 2))));
        let bad_label = Graph::<f64>::new(Matrix::identity(2), vec![], vec![0, 3], 2, vec![None; 2]);
        assert!(matches!(bad_label, Err(GraphError::LabelOutOfRange { node: 1, .. })));
        let bad_len = Graph::<f64>::new(Matrix::identity(2), vec![], vec![0], 1, vec![None; 2]);
        assert!(matches!(bad_len, Err(GraphError::LabelLength { .. })));
    }

    #[test]
    fn induced_subgraph_drops_cut_edges() {
        let p = path_graph::<f64>(4).unwrap();
        let sub = p.induced_subgraph(&[0, 1, 3]);
        assert_eq!(sub.edges(), &[(0, 1)]);
        assert_eq!(sub.features()[(2, 3)], 1.0);
    }
}
