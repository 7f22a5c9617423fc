use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

use super::{Graph, GraphError, Split};

/// Dirichlet label-skew partition parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n_clients == 0 {
            return Err(GraphError::InvalidParameters("n_clients must be >= 1".into()));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(GraphError::InvalidParameters(
                "dirichlet_alpha must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionWarning {
    /// A class has fewer nodes than there are clients.
    SmallClass { class: usize, count: usize },
    /// A client received no training nodes and is excluded from federation.
    NoTrainNodes { client: usize },
}

/// One client's share: the induced subgraph plus the original index of each node.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientGraph<T> {
    pub client: usize,
    pub graph: Graph<T>,
    pub global_ids: Vec<usize>,
}

impl<T: Scalar> ClientGraph<T> {
    pub fn has_train_nodes(&self) -> bool {
        self.graph.count(Split::Train) > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub clients: Vec<ClientGraph<T>>,
    pub warnings: Vec<PartitionWarning>,
}

impl<T: Scalar> Partition<T> {
    /// Clients that hold at least one training node.
    pub fn active_clients(&self) -> impl Iterator<Item = &ClientGraph<T>> {
        self.clients.iter().filter(|c| c.has_train_nodes())
    }
}

/// Splits `g` across `spec.n_clients` clients with Dirichlet label skew.
///
/// For each class in ascending order the class's nodes are shuffled, client
/// shares are drawn from `Dirichlet(alpha · 1_K)` and the shuffled list is cut
/// at `round(cumulative share · class size)`. Each client then receives the
/// subgraph induced on its nodes, kept in ascending original order; edges
/// between clients are dropped.
pub fn dirichlet_label_partition<T: Scalar>(
    g: &Graph<T>,
    spec: &PartitionSpec,
) -> Result<Partition<T>, GraphError> {
    spec.validate()?;
    let k = spec.n_clients;
    let mut rng = rng_from_seed(spec.seed);
    let gamma = Gamma::new(spec.dirichlet_alpha, 1.0)
        .map_err(|e| GraphError::InvalidParameters(e.to_string()))?;

    let mut warnings = Vec::new();
    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in 0..g.n_classes() {
        let mut nodes: Vec<usize> = (0..g.n_nodes()).filter(|&v| g.labels()[v] == class).collect();
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < k {
            warnings.push(PartitionWarning::SmallClass {
                class,
                count: nodes.len(),
            });
        }
        nodes.shuffle(&mut rng);
        let mut shares: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = shares.iter().sum();
        if total > 0.0 && total.is_finite() {
            shares.iter_mut().for_each(|s| *s /= total);
        } else {
            // Every gamma draw underflowed; the limit of a tiny-alpha Dirichlet is a vertex.
            let pick = nodes[0] % k;
            shares = (0..k).map(|i| if i == pick { 1.0 } else { 0.0 }).collect();
        }
        let n_c = nodes.len();
        let mut start = 0;
        let mut acc = 0.0;
        for (client, share) in shares.iter().enumerate() {
            acc += share;
            let end = if client + 1 == k {
                n_c
            } else {
                ((acc * n_c as f64).round() as usize).clamp(start, n_c)
            };
            owned[client].extend_from_slice(&nodes[start..end]);
            start = end;
        }
    }

    let clients: Vec<ClientGraph<T>> = owned
        .into_iter()
        .enumerate()
        .map(|(client, mut ids)| {
            ids.sort_unstable();
            ClientGraph {
                client,
                graph: g.induced_subgraph(&ids),
                global_ids: ids,
            }
        })
        .collect();
    for c in &clients {
        if !c.has_train_nodes() {
            warnings.push(PartitionWarning::NoTrainNodes { client: c.client });
        }
    }
    Ok(Partition { clients, warnings })
}
