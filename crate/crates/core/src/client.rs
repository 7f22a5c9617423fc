//! Client-side local training.

use thiserror::Error;

use crate::gnn::{gradient, FlatVector, GroupFilter, ModelError, ParameterSet};
use crate::graph::{Graph, NormalizedAdjacency, Split};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ClientError {
    #[error("client {client} has no training nodes")]
    NoTrainNodes { client: usize },
    #[error("local loss diverged at round {round} on client {client}")]
    Divergence { round: usize, client: usize },
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Local optimization regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trainer<T> {
    /// `E` full-batch gradient steps.
    FedAvgSgd,
    /// Exactly one full-batch gradient step, regardless of `E`.
    FedSgd,
    /// `E` full-batch steps on the loss plus `(mu/2)·‖θ − θ_global‖²`. The
    /// quadratic term is taken implicitly, so each step is
    /// `θ ← (θ − lr·∇L(θ) + lr·mu·θ_global) / (1 + lr·mu)` on the shared layers,
    /// which stays stable for any `mu`.
    FedProx { mu: T },
}

/// Loss and gradient of the objective a client minimizes.
pub trait LocalObjective<T: Scalar> {
    fn loss_and_grad(
        &self,
        params: &ParameterSet<T>,
        prox: Option<(&FlatVector<T>, T)>,
    ) -> Result<(T, ParameterSet<T>), ModelError>;
}

/// Masked cross-entropy of a GCN on the client's training nodes.
pub struct GcnObjective<'a, T> {
    pub adj: &'a NormalizedAdjacency<T>,
    pub features: &'a Matrix<T>,
    pub labels: &'a [usize],
    pub mask: Vec<bool>,
}

impl<T: Scalar> LocalObjective<T> for GcnObjective<'_, T> {
    fn loss_and_grad(
        &self,
        params: &ParameterSet<T>,
        prox: Option<(&FlatVector<T>, T)>,
    ) -> Result<(T, ParameterSet<T>), ModelError> {
        let out = gradient(params, self.adj, self.features, self.labels, &self.mask, prox)?;
        Ok((out.loss, out.grad))
    }
}

#[derive(Debug, Clone)]
pub struct ClientState<T> {
    pub client_id: usize,
    pub graph: Graph<T>,
    pub adj: NormalizedAdjacency<T>,
    /// Full local model. Shared layers are overwritten every round; local layers persist.
    pub params: ParameterSet<T>,
    pub trainer: Trainer<T>,
    pub lr: T,
    pub epochs: usize,
}

impl<T: Scalar> ClientState<T> {
    pub fn new(
        client_id: usize,
        graph: Graph<T>,
        params: ParameterSet<T>,
        trainer: Trainer<T>,
        lr: T,
        epochs: usize,
    ) -> Result<Self, ClientError> {
        let adj = NormalizedAdjacency::from_graph(&graph)
            .map_err(|e| ClientError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            client_id,
            graph,
            adj,
            params,
            trainer,
            lr,
            epochs,
        })
    }

    pub fn n_train(&self) -> usize {
        self.graph.count(Split::Train)
    }

    fn steps(&self) -> Result<usize, ClientError> {
        match self.trainer {
            Trainer::FedSgd => Ok(1),
            _ if self.epochs == 0 => Err(ClientError::InvalidConfig("epochs must be >= 1".into())),
            _ => Ok(self.epochs),
        }
    }
}

/// Parameter displacement of one client's shared layers for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate<T> {
    pub client_id: usize,
    pub round: usize,
    pub delta: FlatVector<T>,
    pub n_train: usize,
}

/// Trains on the client's own graph starting from `global_shared`.
pub fn local_train<T: Scalar>(
    state: &mut ClientState<T>,
    global_shared: &FlatVector<T>,
    round: usize,
) -> Result<LocalUpdate<T>, ClientError> {
    let mask = state.graph.train_mask();
    // The objective borrows the graph while training mutates only the parameters.
    let graph = state.graph.clone();
    let adj = state.adj.clone();
    let objective = GcnObjective {
        adj: &adj,
        features: graph.features(),
        labels: graph.labels(),
        mask,
    };
    local_train_with(state, global_shared, round, &objective)
}

/// [`local_train`] against an arbitrary objective.
pub fn local_train_with<T: Scalar, O: LocalObjective<T> + ?Sized>(
    state: &mut ClientState<T>,
    global_shared: &FlatVector<T>,
    round: usize,
    objective: &O,
) -> Result<LocalUpdate<T>, ClientError> {
    let client = state.client_id;
    let n_train = state.n_train();
    if n_train == 0 {
        return Err(ClientError::NoTrainNodes { client });
    }
    let steps = state.steps()?;
    state.params.assign(global_shared)?;
    let shrink = match state.trainer {
        Trainer::FedProx { mu } if mu < T::zero() => {
            return Err(ClientError::InvalidConfig("mu must be non-negative".into()))
        }
        Trainer::FedProx { mu } if mu > T::zero() => Some(state.lr * mu),
        _ => None,
    };
    for _ in 0..steps {
        let (loss, grad) = objective.loss_and_grad(&state.params, None)?;
        if !loss.is_finite() {
            return Err(ClientError::Divergence { round, client });
        }
        state.params.descend(&grad, state.lr);
        if let Some(k) = shrink {
            let mut shared = state.params.flatten(GroupFilter::Shared);
            let denom = T::one() + k;
            for (v, &c) in shared.values.iter_mut().zip(&global_shared.values) {
                *v = (*v + k * c) / denom;
            }
            state.params.assign(&shared)?;
        }
    }
    let delta = state.params.flatten(GroupFilter::Shared).sub(global_shared)?;
    if delta.values.iter().any(|v| !v.is_finite()) {
        return Err(ClientError::Divergence { round, client });
    }
    Ok(LocalUpdate {
        client_id: client,
        round,
        delta,
        n_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{Activation, HeadPlacement, ModelConfig};
    use crate::graph::{planted_partition_graph, PlantedPartition};
    use crate::linalg::norm;
    use crate::rng::rng_from_seed;

    fn graph(seed: u64) -> Graph<f64> {
        let p = PlantedPartition {
            n_blocks: 3,
            block_size: 8,
            p_in: 0.4,
            p_out: 0.05,
            n_classes: 3,
            feature_dim: 5,
            class_sep: 1.0,
        };
        planted_partition_graph(&p, seed).unwrap()
    }

    fn state(seed: u64, trainer: Trainer<f64>, lr: f64) -> (ClientState<f64>, FlatVector<f64>) {
        let cfg = ModelConfig {
            n_layers: 2,
            hidden_dim: 6,
            activation: Activation::Relu,
            in_dim: 5,
            out_dim: 3,
            bias: true,
        };
        let params: ParameterSet<f64> = cfg.init(HeadPlacement::Shared, &mut rng_from_seed(seed)).unwrap();
        let global = params.flatten(GroupFilter::Shared);
        (ClientState::new(0, graph(seed), params, trainer, lr, 1).unwrap(), global)
    }

    /// `½(w − a)²` on a scalar linear model.
    struct Quadratic(f64);

    impl LocalObjective<f64> for Quadratic {
        fn loss_and_grad(
            &self,
            params: &ParameterSet<f64>,
            _prox: Option<(&FlatVector<f64>, f64)>,
        ) -> Result<(f64, ParameterSet<f64>), ModelError> {
            let w = params.layers[0].weight[(0, 0)];
            let mut g = params.zeros_like();
            g.layers[0].weight[(0, 0)] = w - self.0;
            Ok((0.5 * (w - self.0).powi(2), g))
        }
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let (mut s, global) = state(1, Trainer::FedAvgSgd, 0.0);
        let u = local_train(&mut s, &global, 0).unwrap();
        assert!(u.delta.values.iter().all(|&v| v == 0.0));
        assert_eq!(u.n_train, s.n_train());
    }

    #[test]
    fn one_step_on_quadratic_matches_closed_form() {
        let (w0, a, lr) = (0.8, -1.7, 0.3);
        let params = ParameterSet::linear(Matrix::from_vec(1, 1, vec![w0]).unwrap());
        let global = params.flatten(GroupFilter::Shared);
        let g = crate::graph::path_graph::<f64>(1).unwrap();
        let mut s = ClientState::new(4, g, params, Trainer::FedAvgSgd, lr, 1).unwrap();
        let u = local_train_with(&mut s, &global, 2, &Quadratic(a)).unwrap();
        assert!((u.delta.values[0] - (-lr * (w0 - a))).abs() < 1e-15);
        assert_eq!((u.client_id, u.round), (4, 2));
    }

    #[test]
    fn huge_prox_weight_pins_client_to_global() {
        let (mut plain, global) = state(5, Trainer::FedAvgSgd, 0.05);
        let base = norm(&local_train(&mut plain, &global, 0).unwrap().delta.values);
        let (mut prox, _) = state(5, Trainer::FedProx { mu: 1e6 }, 0.05);
        let pinned = norm(&local_train(&mut prox, &global, 0).unwrap().delta.values);
        assert!(pinned < 1e-3 * base, "{pinned} vs {base}");
    }

    #[test]
    fn fedsgd_and_single_epoch_fedavg_agree() {
        let (mut a, global) = state(9, Trainer::FedAvgSgd, 0.1);
        let (mut b, _) = state(9, Trainer::FedSgd, 0.1);
        b.epochs = 7;
        let da = local_train(&mut a, &global, 0).unwrap().delta;
        let db = local_train(&mut b, &global, 0).unwrap().delta;
        assert_eq!(da, db);
    }

    #[test]
    fn training_is_deterministic() {
        let (mut a, global) = state(2, Trainer::FedAvgSgd, 0.1);
        let (mut b, _) = state(2, Trainer::FedAvgSgd, 0.1);
        a.epochs = 3;
        b.epochs = 3;
        assert_eq!(
            local_train(&mut a, &global, 0).unwrap(),
            local_train(&mut b, &global, 0).unwrap()
        );
    }

    #[test]
    fn missing_train_nodes_and_divergence_are_reported() {
        let (mut s, global) = state(3, Trainer::FedAvgSgd, 0.1);
        let g = s.graph.clone();
        s.graph = g.clone().with_splits(vec![None; g.n_nodes()]).unwrap();
        assert_eq!(
            local_train(&mut s, &global, 0),
            Err(ClientError::NoTrainNodes { client: 0 })
        );

        let (mut s, global) = state(3, Trainer::FedAvgSgd, 1e300);
        s.epochs = 5;
        assert_eq!(
            local_train(&mut s, &global, 7),
            Err(ClientError::Divergence { round: 7, client: 0 })
        );
    }

    #[test]
    fn prox_monotone_in_mu() {
        for trial in 0..10 {
            let mut last = f64::INFINITY;
            for mu in [0.0, 0.5, 2.0, 8.0] {
                let (mut s, global) = state(100 + trial, Trainer::FedProx { mu }, 0.05);
                s.epochs = 4;
                let n = norm(&local_train(&mut s, &global, 0).unwrap().delta.values);
                assert!(n <= last + 1e-15, "trial {trial} mu {mu}: {n} > {last}");
                last = n;
            }
        }
    }
}
