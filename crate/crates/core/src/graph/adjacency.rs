use crate::linalg::{Csr, Matrix};
use crate::scalar::Scalar;

use super::{Graph, GraphError};

/// Symmetrically normalized adjacency with self-loops,
/// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree matrix of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<T> {
    matrix: Csr<T>,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    pub fn from_graph(g: &Graph<T>) -> Result<Self, GraphError> {
        let n = g.n_nodes();
        if n == 0 {
            return Err(GraphError::TooFewNodes { required: 1, got: 0 });
        }
        let mut degree = vec![1usize; n];
        for &(a, b) in g.edges() {
            degree[a] += 1;
            degree[b] += 1;
        }
        let weight = |a: usize, b: usize| T::one() / T::from_usize_lossy(degree[a] * degree[b]).sqrt();
        let mut rows: Vec<Vec<(usize, T)>> = (0..n)
            .map(|i| vec![(i, T::one() / T::from_usize_lossy(degree[i]))])
            .collect();
        for &(a, b) in g.edges() {
            let w = weight(a, b);
            rows[a].push((b, w));
            rows[b].push((a, w));
        }
        Ok(Self {
            matrix: Csr::from_rows(n, rows),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn csr(&self) -> &Csr<T> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix.get(i, j)
    }

    /// `Ã · h`
    pub fn propagate(&self, h: &Matrix<T>) -> Matrix<T> {
        self.matrix.matmul_dense(h)
    }

    pub fn to_dense(&self) -> Matrix<T> {
        self.matrix.to_dense()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{complete_graph, path_graph};

    #[test]
    fn path3_matches_printed_operator() {
        let adj = NormalizedAdjacency::from_graph(&path_graph::<f64>(3).unwrap()).unwrap();
        let expect = [[0.50, 0.41, 0.0], [0.41, 0.33, 0.41], [0.0, 0.41, 0.50]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert!((adj.get(i, j) - e).abs() < 0.005, "({i},{j})");
            }
        }
    }

    #[test]
    fn triangle_is_one_third_all_ones() {
        let adj = NormalizedAdjacency::from_graph(&complete_graph::<f64>(3).unwrap()).unwrap();
        let d = adj.to_dense();
        for &x in d.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_node_is_identity() {
        let adj = NormalizedAdjacency::from_graph(&path_graph::<f64>(1).unwrap()).unwrap();
        assert_eq!(adj.to_dense(), Matrix::identity(1));
    }

    #[test]
    fn isolated_nodes_get_unit_diagonal() {
        let g = Graph::<f64>::new(Matrix::identity(3), vec![(0, 1)], vec![0; 3], 1, vec![None; 3]).unwrap();
        let adj = NormalizedAdjacency::from_graph(&g).unwrap();
        assert_eq!(adj.get(2, 2), 1.0);
        assert_eq!(adj.get(0, 1), 0.5);
    }
}
