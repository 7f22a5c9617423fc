use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

use super::{Graph, GraphError, Split};

fn check_n(n: usize) -> Result<(), GraphError> {
    if n == 0 {
        Err(GraphError::TooFewNodes { required: 1, got: 0 })
    } else {
        Ok(())
    }
}

/// Path `0 − 1 − … − (n−1)` with identity features, all labels 0 and every node in train.
pub fn path_graph<T: Scalar>(n: usize) -> Result<Graph<T>, GraphError> {
    check_n(n)?;
    let edges = (1..n).map(|i| (i - 1, i));
    Graph::new(Matrix::identity(n), edges, vec![0; n], 1, vec![Some(Split::Train); n])
}

/// Complete graph on `n` nodes, same defaults as [`path_graph`].
pub fn complete_graph<T: Scalar>(n: usize) -> Result<Graph<T>, GraphError> {
    check_n(n)?;
    let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    Graph::new(Matrix::identity(n), edges, vec![0; n], 1, vec![Some(Split::Train); n])
}

/// Parameters of a planted-partition (stochastic block model) graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPartition {
    pub n_blocks: usize,
    pub block_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub class_sep: f64,
}

impl PlantedPartition {
    pub fn n_nodes(&self) -> usize {
        self.n_blocks * self.block_size
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::InvalidParameters(m.to_string()));
        if self.n_blocks == 0 || self.block_size == 0 {
            return bad("blocks must be non-empty");
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad("require 0 <= p_out <= p_in <= 1");
        }
        if self.n_classes == 0 || self.feature_dim == 0 {
            return bad("n_classes and feature_dim must be positive");
        }
        if !self.class_sep.is_finite() {
            return bad("class_sep must be finite");
        }
        Ok(())
    }
}

/// Samples a planted-partition graph.
///
/// Node `v` sits in block `v / block_size` and has label `block mod n_classes`.
/// Draw order from a ChaCha8 stream seeded with `seed`:
/// 1. one uniform `[0,1)` draw per pair `(i, j)`, `i < j`, in lexicographic
///    order; the edge exists iff the draw is below `p_in` (same block) or `p_out`;
/// 2. `feature_dim` standard normal draws per node, in node order, added to the
///    class mean `±class_sep · e_{c mod d}` (sign flips every `d` classes).
///
/// Splits are deterministic: within each class, nodes in index order cycle
/// through train, train, train, val, test.
pub fn planted_partition_graph<T: Scalar>(
    params: &PlantedPartition,
    seed: u64,
) -> Result<Graph<T>, GraphError> {
    params.validate()?;
    let n = params.n_nodes();
    let block = |v: usize| v / params.block_size;
    let mut rng = rng_from_seed(seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block(i) == block(j) { params.p_in } else { params.p_out };
            let u: f64 = rng.random();
            if u < p {
                edges.push((i, j));
            }
        }
    }

    let d = params.feature_dim;
    let labels: Vec<usize> = (0..n).map(|v| block(v) % params.n_classes).collect();
    let mut features = Matrix::zeros(n, d);
    for v in 0..n {
        let c = labels[v];
        let sign = if (c / d).is_multiple_of(2) { 1.0 } else { -1.0 };
        for j in 0..d {
            let noise: f64 = rng.sample(StandardNormal);
            let mean = if j == c % d { sign * params.class_sep } else { 0.0 };
            features[(v, j)] = T::lit(mean + noise);
        }
    }

    let mut seen = vec![0usize; params.n_classes];
    let splits = labels
        .iter()
        .map(|&c| {
            let slot = seen[c] % 5;
            seen[c] += 1;
            Some(match slot {
                0..=2 => Split::Train,
                3 => Split::Val,
                _ => Split::Test,
            })
        })
        .collect();

    Graph::new(features, edges, labels, params.n_classes, splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blocks(p_in: f64, p_out: f64) -> PlantedPartition {
        PlantedPartition {
            n_blocks: 2,
            block_size: 20,
            p_in,
            p_out,
            n_classes: 2,
            feature_dim: 4,
            class_sep: 1.0,
        }
    }

    #[test]
    fn path_and_complete_edge_counts() {
        assert_eq!(path_graph::<f64>(3).unwrap().edges(), &[(0, 1), (1, 2)]);
        assert_eq!(complete_graph::<f64>(3).unwrap().n_edges(), 3);
        assert_eq!(complete_graph::<f64>(6).unwrap().n_edges(), 15);
        assert_eq!(path_graph::<f64>(1).unwrap().n_edges(), 0);
        assert!(path_graph::<f64>(0).is_err());
        assert!(complete_graph::<f64>(0).is_err());
        assert_eq!(path_graph::<f64>(4).unwrap().features(), &Matrix::identity(4));
    }

    #[test]
    fn within_block_edges_follow_binomial() {
        let g = planted_partition_graph::<f64>(&two_blocks(0.5, 0.02), 7).unwrap();
        let within = g.edges().iter().filter(|(a, b)| a / 20 == b / 20).count() as f64;
        // Two blocks of C(20,2) = 190 pairs each at p = 0.5.
        let trials = 2.0 * 190.0;
        let mean = 0.5 * trials;
        let sd = (trials * 0.25f64).sqrt();
        assert_eq!(mean, 190.0);
        assert!((within - mean).abs() <= 4.0 * sd, "within = {within}");
        let across = g.n_edges() as f64 - within;
        let across_sd = (400.0 * 0.02 * 0.98f64).sqrt();
        assert!((across - 8.0).abs() <= 4.0 * across_sd, "across = {across}");
    }

    #[test]
    fn zero_probabilities_give_no_edges() {
        let g = planted_partition_graph::<f64>(&two_blocks(0.0, 0.0), 3).unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn same_seed_same_graph() {
        let a = planted_partition_graph::<f64>(&two_blocks(0.3, 0.05), 11).unwrap();
        let b = planted_partition_graph::<f64>(&two_blocks(0.3, 0.05), 11).unwrap();
        let c = planted_partition_graph::<f64>(&two_blocks(0.3, 0.05), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut p = two_blocks(0.1, 0.2);
        assert!(planted_partition_graph::<f64>(&p, 0).is_err());
        p = two_blocks(0.5, 0.1);
        p.block_size = 0;
        assert!(planted_partition_graph::<f64>(&p, 0).is_err());
    }

    #[test]
    fn splits_are_sixty_twenty_twenty_per_class() {
        let g = planted_partition_graph::<f64>(&two_blocks(0.2, 0.01), 1).unwrap();
        for c in 0..2 {
            let of = |s| {
                (0..g.n_nodes())
                    .filter(|&v| g.labels()[v] == c && g.splits()[v] == Some(s))
                    .count()
            };
            assert_eq!(of(Split::Train), 12);
            assert_eq!(of(Split::Val), 4);
            assert_eq!(of(Split::Test), 4);
        }
    }
}
