//! Checks shared by the acceptance binary and the integration tests. Each
//! returns the measured quantity so the caller decides pass/fail.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use ggrs_core::client::LocalUpdate;
use ggrs_core::gnn::{forward, gradient, masked_cross_entropy, Activation, GroupFilter, HeadPlacement, ModelConfig, ParameterSet};
use ggrs_core::graph::{dirichlet_label_partition, planted_partition_graph, Graph, NormalizedAdjacency, PartitionSpec, PlantedPartition, Split};
use ggrs_core::harness::{Federation, RunConfig};
use ggrs_core::linalg::{norm, Matrix};
use ggrs_core::metrics::symmetric_eigen;
use ggrs_core::rng::rng_from_seed;
use ggrs_core::server::{Aggregator, AggregatorConfig, Epsilon, Regulation};
use ggrs_core::FlatVector64;

/// Gradients smaller than this are compared on an absolute rather than relative scale.
pub const GRAD_DENOM_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-4;

pub fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> RunConfig {
    RunConfig::from_file(&config_dir().join(name)).expect("bundled config parses")
}

/// Erdős–Rényi graph with Gaussian-ish features and random labels, every node in train.
pub fn random_graph(seed: u64, n: usize, p: f64, dim: usize, classes: usize) -> Graph<f64> {
    let mut rng = rng_from_seed(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let features = Matrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0));
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Graph::new(features, edges, labels, classes, vec![Some(Split::Train); n]).expect("valid random graph")
}

fn loss_at(params: &ParameterSet<f64>, adj: &NormalizedAdjacency<f64>, g: &Graph<f64>, mask: &[bool]) -> f64 {
    let pass = forward(params, adj, g.features()).expect("forward");
    masked_cross_entropy(pass.logits(), g.labels(), mask).expect("loss")
}

/// Max over coordinates of `|a − f| / max(|a|, |f|, GRAD_DENOM_FLOOR)` for a
/// random 2-layer ReLU GCN on a random graph of at most 20 nodes.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed ^ 0xA5A5);
    let n = rng.random_range(4..=20);
    let dim = rng.random_range(2..=5);
    let classes = rng.random_range(2..=4);
    let g = random_graph(seed, n, 0.3, dim, classes);
    let adj = NormalizedAdjacency::from_graph(&g).unwrap();
    let cfg = ModelConfig {
        n_layers: 2,
        hidden_dim: rng.random_range(2..=6),
        activation: Activation::Relu,
        in_dim: dim,
        out_dim: classes,
        bias: rng.random_bool(0.5),
    };
    let params: ParameterSet<f64> = cfg.init(HeadPlacement::Shared, &mut rng).unwrap();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    let analytic = gradient(&params, &adj, g.features(), g.labels(), &mask, None)
        .unwrap()
        .grad
        .flatten(GroupFilter::All);
    let base = params.flatten(GroupFilter::All);
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let eval = |shift: f64| {
            let mut flat = base.clone();
            flat.values[i] += shift;
            let mut p = params.clone();
            p.assign(&flat).unwrap();
            loss_at(&p, &adj, &g, &mask)
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        let a = analytic.values[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_DENOM_FLOOR);
        worst = worst.max(err);
    }
    worst
}

/// Largest parameter gap over `rounds` rounds between a one-client plain
/// federation and full-batch gradient descent run directly on that client.
pub fn centralized_gap(seed: u64, rounds: usize, epochs: usize) -> f64 {
    let text = format!(
        "experiment.rounds = {rounds}\n\
         source.g.kind = planted_partition\n\
         source.g.n_blocks = 3\n\
         source.g.block_size = 8\n\
         source.g.n_classes = 3\n\
         source.g.feature_dim = 6\n\
         model.hidden = 8\n\
         model.bias = true\n\
         client.lr = 0.3\n\
         client.epochs = {epochs}\n"
    );
    let cfg = RunConfig::parse(&text, "centralized.cfg", Path::new(".")).unwrap();
    let mut fed = Federation::build(&cfg, Regulation::Plain, seed).unwrap();
    let client = fed.clients()[0].clone();
    let mask = client.graph.train_mask();
    let mut central = fed.global().clone();
    let mut worst: f64 = 0.0;
    for _ in 0..rounds {
        fed.step().unwrap();
        for _ in 0..epochs {
            let g = gradient(&central, &client.adj, client.graph.features(), client.graph.labels(), &mask, None).unwrap();
            central.descend(&g.grad, cfg.client.lr);
        }
        let a = fed.global().flatten(GroupFilter::All);
        let b = central.flatten(GroupFilter::All);
        for (x, y) in a.values.iter().zip(&b.values) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

fn flat_template(len: usize) -> FlatVector64 {
    let params = ParameterSet::linear(Matrix::zeros(len, 1));
    params.flatten(GroupFilter::Shared)
}

fn updates_from(template: &FlatVector64, deltas: &[Vec<f64>], round: usize) -> Vec<LocalUpdate<f64>> {
    deltas
        .iter()
        .enumerate()
        .map(|(k, d)| LocalUpdate {
            client_id: k,
            round,
            delta: FlatVector64 {
                values: d.clone(),
                layout: template.layout.clone(),
            },
            n_train: 1,
        })
        .collect()
}

/// Largest gap between GGRS and plain averaging when every client sends the
/// same update, well inside the clipping radius, over several rounds. The
/// direction is fixed across rounds so updates stay aligned with the reference.
pub fn identical_update_gap(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let len = 12;
    let template = flat_template(len);
    let mut plain = Aggregator::new(AggregatorConfig::default(), template.layout.clone()).unwrap();
    let ggrs_cfg = AggregatorConfig {
        epsilon: Epsilon::Fixed(1e6),
        subspace_dim: 2,
        window: 6,
        ..AggregatorConfig::ggrs()
    };
    let mut ggrs = Aggregator::new(ggrs_cfg, template.layout.clone()).unwrap();
    let dir: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut worst: f64 = 0.0;
    for round in 0..6 {
        let scale = rng.random_range(0.1..2.0);
        let d: Vec<f64> = dir.iter().map(|v| scale * v).collect();
        let ups = updates_from(&template, &vec![d; 3], round);
        let a = plain.aggregate(&ups).unwrap().global_delta;
        let b = ggrs.aggregate(&ups).unwrap().global_delta;
        for (x, y) in a.values.iter().zip(&b.values) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Largest `‖R(Δ_k)‖ − ‖Δ_k‖` over random rounds of random client updates;
/// non-positive when regulation never amplifies.
pub fn regulated_norm_excess(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let len = 10;
    let template = flat_template(len);
    let cfg = AggregatorConfig {
        subspace_dim: 2,
        window: 8,
        ..AggregatorConfig::ggrs()
    };
    let mut agg = Aggregator::new(cfg, template.layout.clone()).unwrap();
    let blocks = template.layout.blocks();
    let mut worst = f64::NEG_INFINITY;
    for round in 0..20 {
        let deltas: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let scale = rng.random_range(0.01..10.0);
                (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
            })
            .collect();
        let ups = updates_from(&template, &deltas, round);
        let out = agg.aggregate(&ups).unwrap();
        for (c, d) in out.report.clients.iter().zip(&deltas) {
            let mut reg = d.clone();
            for (b, &coef) in blocks.iter().zip(&c.coefficients) {
                for v in &mut reg[b.clone()] {
                    *v *= coef;
                }
            }
            worst = worst.max(norm(&reg) - norm(d));
        }
    }
    worst
}

pub fn random_symmetric(seed: u64, n: usize) -> Matrix<f64> {
    let mut rng = rng_from_seed(seed);
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0);
            m.as_mut_slice()[i * n + j] = v;
            m.as_mut_slice()[j * n + i] = v;
        }
    }
    m
}

/// `(|Σλ − tr A|, ‖V Λ Vᵀ − A‖_F)`
pub fn eigen_errors(a: &Matrix<f64>) -> (f64, f64) {
    let e = symmetric_eigen(a).unwrap();
    let n = a.rows();
    let sum: f64 = e.values.iter().sum();
    let lambda = Matrix::from_fn(n, n, |i, j| if i == j { e.values[i] } else { 0.0 });
    let recon = e.vectors.matmul(&lambda).matmul_t(&e.vectors);
    let diff = Matrix::from_fn(n, n, |i, j| recon[(i, j)] - a[(i, j)]);
    ((sum - a.trace()).abs(), diff.frobenius())
}

/// Whether every node lands in exactly one client, for a skewed partition.
pub fn partition_covers(seed: u64) -> bool {
    let params = PlantedPartition {
        n_blocks: 4,
        block_size: 25,
        p_in: 0.2,
        p_out: 0.02,
        n_classes: 4,
        feature_dim: 4,
        class_sep: 1.0,
    };
    let g: Graph<f64> = planted_partition_graph(&params, seed).unwrap();
    let spec = PartitionSpec {
        n_clients: 5,
        dirichlet_alpha: 0.3,
        seed,
    };
    let p = dirichlet_label_partition(&g, &spec).unwrap();
    let mut seen = vec![0usize; g.n_nodes()];
    for c in &p.clients {
        for &v in &c.global_ids {
            seen[v] += 1;
        }
    }
    seen.iter().all(|&s| s == 1)
}

/// Largest `|share − 1/K|` over clients and classes, where `share` is the
/// fraction of a class's nodes given to a client, for a near-uniform Dirichlet.
pub fn near_uniform_share_deviation(seed: u64) -> f64 {
    let (k, classes, per_class) = (4, 4, 100);
    let mut labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    labels.shuffle(&mut rng_from_seed(seed));
    let n = labels.len();
    let g: Graph<f64> = Graph::new(Matrix::zeros(n, 1), vec![], labels, classes, vec![Some(Split::Train); n]).unwrap();
    let spec = PartitionSpec {
        n_clients: k,
        dirichlet_alpha: 1e6,
        seed,
    };
    let p = dirichlet_label_partition(&g, &spec).unwrap();
    let mut worst: f64 = 0.0;
    for c in &p.clients {
        for class in 0..classes {
            let count = c.graph.labels().iter().filter(|&&y| y == class).count();
            worst = worst.max((count as f64 / per_class as f64 - 1.0 / k as f64).abs());
        }
    }
    worst
}
