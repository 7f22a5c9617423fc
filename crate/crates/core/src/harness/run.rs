//! The federated round loop and its on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::client::{local_train, ClientError, ClientState, LocalUpdate, Trainer};
use crate::gnn::{forward, induced_operator, FlatVector, Group, GroupFilter, HeadPlacement, ModelConfig, ParameterSet};
use crate::graph::{
    complete_graph, dirichlet_label_partition, load_graph_csv, path_graph, planted_partition_graph, Graph,
    PartitionSpec, PartitionWarning, Split,
};
use crate::metrics::{correct_count, mean_alignment, operator_spectrum, pairwise_coherence, RoundMetrics};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::server::{Aggregator, Regulation, ServerError};

use super::config::{regulation_name, Dataset, Regime, RunConfig, TrainerKind};
use super::HarnessError;

pub const METRICS_HEADER: &str = "round,seed,test_acc,gamma_mean,alignment,sensitivity,clip_rate,atten_rate";

/// Number of trailing rounds averaged in the summary.
pub const FINAL_WINDOW: usize = 10;

/// One line of the regulation JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulationRecord {
    pub round: usize,
    pub client: usize,
    pub cos_ref: Option<f64>,
    pub atten: bool,
    pub retention: Vec<f64>,
    pub clip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedClient {
    pub source: String,
    pub partition_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub metrics: RoundMetrics,
    pub regulation: Vec<RegulationRecord>,
}

/// Builds graph `si` of the config for one seed, before padding.
pub(crate) fn build_source_graph(cfg: &RunConfig, si: usize, seed: u64) -> Result<Graph<f64>, HarnessError> {
    let g = match &cfg.sources[si].dataset {
        Dataset::Path(n) => path_graph(*n)?,
        Dataset::Complete(n) => complete_graph(*n)?,
        Dataset::PlantedPartition(p) => planted_partition_graph(p, derive_seed(seed, Stream::Graph, si as u64))?,
        Dataset::Csv(files) => load_graph_csv(files)?,
    };
    Ok(g)
}

pub(crate) fn partition_spec(cfg: &RunConfig, si: usize, seed: u64) -> PartitionSpec {
    PartitionSpec {
        n_clients: cfg.sources[si].clients,
        dirichlet_alpha: cfg.sources[si].dirichlet_alpha,
        seed: derive_seed(seed, Stream::Partition, si as u64),
    }
}

/// Live state of one (config, variant, seed) simulation.
#[derive(Debug)]
pub struct Federation {
    clients: Vec<ClientState<f64>>,
    global: ParameterSet<f64>,
    shared: FlatVector<f64>,
    aggregator: Aggregator<f64>,
    round: usize,
    seed: u64,
    excluded: Vec<ExcludedClient>,
    warnings: Vec<String>,
}

impl Federation {
    pub fn build(cfg: &RunConfig, variant: Regulation, seed: u64) -> Result<Self, HarnessError> {
        let graphs = (0..cfg.sources.len())
            .map(|si| build_source_graph(cfg, si, seed))
            .collect::<Result<Vec<_>, _>>()?;
        let in_dim = graphs.iter().map(Graph::feature_dim).max().unwrap_or(0);
        let max_classes = graphs.iter().map(Graph::n_classes).max().unwrap_or(0);

        let head = match cfg.regime {
            Regime::IntraDomain => HeadPlacement::Shared,
            Regime::CrossDomain => HeadPlacement::Local,
        };
        let model_for = |out_dim: usize| ModelConfig {
            n_layers: cfg.model.n_layers,
            hidden_dim: cfg.model.hidden_dim,
            activation: cfg.model.activation,
            in_dim,
            out_dim,
            bias: cfg.model.bias,
        };
        let global_out = match cfg.regime {
            Regime::IntraDomain => max_classes,
            Regime::CrossDomain => graphs[0].n_classes(),
        };
        let global: ParameterSet<f64> = model_for(global_out).init(head, &mut stream_rng(seed, Stream::ModelInit, 0))?;
        let shared = global.flatten(GroupFilter::Shared);

        let trainer = match cfg.client.trainer {
            TrainerKind::FedAvg => Trainer::FedAvgSgd,
            TrainerKind::FedSgd => Trainer::FedSgd,
            TrainerKind::FedProx => Trainer::FedProx { mu: cfg.client.mu },
        };

        let mut clients = Vec::new();
        let mut excluded = Vec::new();
        let mut warnings = Vec::new();
        for (si, g) in graphs.into_iter().enumerate() {
            let name = &cfg.sources[si].name;
            let mut g = g.pad_features(in_dim).expect("in_dim is the maximum feature width");
            if cfg.regime == Regime::IntraDomain {
                g = g.with_n_classes(max_classes);
            }
            let out_dim = g.n_classes();
            let partition = dirichlet_label_partition(&g, &partition_spec(cfg, si, seed))?;
            for w in &partition.warnings {
                warnings.push(match w {
                    PartitionWarning::SmallClass { class, count } => {
                        format!("source {name}: class {class} has only {count} nodes")
                    }
                    PartitionWarning::NoTrainNodes { client } => {
                        format!("source {name}: client {client} has no training nodes")
                    }
                });
            }
            for cg in partition.clients {
                if !cg.has_train_nodes() {
                    excluded.push(ExcludedClient {
                        source: name.clone(),
                        partition_index: cg.client,
                        reason: "no training nodes".into(),
                    });
                    continue;
                }
                let id = clients.len();
                let params = match cfg.regime {
                    Regime::IntraDomain => global.clone(),
                    Regime::CrossDomain => {
                        let mut p: ParameterSet<f64> =
                            model_for(out_dim).init(head, &mut stream_rng(seed, Stream::HeadInit, id as u64))?;
                        p.assign(&shared)?;
                        p
                    }
                };
                let state = ClientState::new(id, cg.graph, params, trainer, cfg.client.lr, cfg.client.epochs)
                    .map_err(HarnessError::Client)?;
                clients.push(state);
            }
        }
        if clients.is_empty() {
            return Err(HarnessError::Server(ServerError::NoUpdates));
        }

        let mut agg_cfg = cfg.aggregator.clone();
        agg_cfg.regulation = variant;
        agg_cfg.proxy_seed = derive_seed(seed, Stream::Proxy, 0);
        let aggregator = Aggregator::new(agg_cfg, shared.layout.clone()).map_err(HarnessError::Server)?;

        Ok(Self {
            clients,
            global,
            shared,
            aggregator,
            round: 0,
            seed,
            excluded,
            warnings,
        })
    }

    pub fn clients(&self) -> &[ClientState<f64>] {
        &self.clients
    }

    /// Current global model; in cross-domain mode only its shared layers are meaningful.
    pub fn global(&self) -> &ParameterSet<f64> {
        &self.global
    }

    pub fn shared(&self) -> &FlatVector<f64> {
        &self.shared
    }

    pub fn aggregator(&self) -> &Aggregator<f64> {
        &self.aggregator
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn excluded(&self) -> &[ExcludedClient] {
        &self.excluded
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Runs one communication round: broadcast, local training, aggregation,
    /// global update and evaluation.
    pub fn step(&mut self) -> Result<RoundOutput, HarnessError> {
        let round = self.round;
        let shared = &self.shared;
        let updates: Vec<LocalUpdate<f64>> = self
            .clients
            .par_iter_mut()
            .map(|c| local_train(c, shared, round))
            .collect::<Result<_, _>>()
            .map_err(|e| match e {
                ClientError::Divergence { round, client } => HarnessError::Divergence {
                    round,
                    client: Some(client),
                },
                other => HarnessError::Client(other),
            })?;

        for u in &updates {
            if u.delta.layout != self.shared.layout || u.delta.len() != self.shared.len() {
                return Err(HarnessError::Invariant {
                    round,
                    msg: format!("client {} sent an update of the wrong shape", u.client_id),
                });
            }
            if u.delta.layout.slots.iter().any(|s| s.group == Group::Local) {
                return Err(HarnessError::Invariant {
                    round,
                    msg: format!("client {} transmitted local-head parameters", u.client_id),
                });
            }
        }

        let outcome = self.aggregator.aggregate(&updates).map_err(|e| match e {
            ServerError::NonFinite => HarnessError::Divergence { round, client: None },
            other => HarnessError::Server(other),
        })?;

        let before = self.shared.values.clone();
        for (v, &d) in self.shared.values.iter_mut().zip(&outcome.global_delta.values) {
            *v += d;
        }
        for ((&a, &b), &d) in self.shared.values.iter().zip(&before).zip(&outcome.global_delta.values) {
            if !a.is_finite() {
                return Err(HarnessError::Divergence { round, client: None });
            }
            // (b + d) − b reproduces d up to the rounding of the addition.
            if ((a - b) - d).abs() > f64::EPSILON * (a.abs() + b.abs()) {
                return Err(HarnessError::Invariant {
                    round,
                    msg: "global step differs from the aggregated delta".into(),
                });
            }
        }
        self.global.assign(&self.shared)?;

        let shared = &self.shared;
        let evals = self
            .clients
            .par_iter()
            .map(|c| -> Result<(usize, usize, usize), HarnessError> {
                let mut p = c.params.clone();
                p.assign(shared)?;
                let pass = forward(&p, &c.adj, c.graph.features())?;
                let mask = c.graph.mask(Split::Test);
                if !mask.iter().any(|&m| m) {
                    return Ok((c.client_id, 0, 0));
                }
                let (correct, total) =
                    correct_count(pass.logits(), c.graph.labels(), &mask).map_err(|e| HarnessError::Invariant {
                        round,
                        msg: e.to_string(),
                    })?;
                Ok((c.client_id, correct, total))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (correct, total) = evals.iter().fold((0, 0), |(a, b), e| (a + e.1, b + e.2));
        let test_accuracy = if total == 0 { f64::NAN } else { correct as f64 / total as f64 };
        let client_accuracies = evals
            .iter()
            .filter(|e| e.2 > 0)
            .map(|e| (e.0, e.1 as f64 / e.2 as f64))
            .collect();

        let deltas: Vec<&[f64]> = updates.iter().map(|u| u.delta.values.as_slice()).collect();
        let coherence = pairwise_coherence(&deltas);
        let proxies: Vec<&[f64]> = outcome.proxies.iter().map(|p| p.values.as_slice()).collect();
        let alignment = mean_alignment(&proxies, &outcome.reference_before);
        let sensitivity = crate::metrics::sensitivity_norm(&outcome.global_delta.values);
        let spectrum = induced_operator(&self.global, &self.clients[0].adj)
            .ok()
            .and_then(|t| operator_spectrum(&t).ok());

        let metrics = RoundMetrics {
            round,
            seed: self.seed,
            test_accuracy,
            client_accuracies,
            gamma_mean: coherence.mean_off_diagonal(),
            gamma: coherence.gamma,
            alignment: alignment.value,
            alignment_degenerate: alignment.degenerate,
            sensitivity,
            spectrum,
            clip_rate: outcome.report.clip_rate(),
            atten_rate: outcome.report.attenuation_rate(),
        };
        let regulation = outcome
            .report
            .clients
            .iter()
            .map(|c| RegulationRecord {
                round,
                client: c.client_id,
                cos_ref: c.cos_ref,
                atten: c.attenuated,
                retention: c.retention.clone(),
                clip: c.clip,
            })
            .collect();
        self.round += 1;
        Ok(RoundOutput { metrics, regulation })
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
    pub regulation: Vec<RegulationRecord>,
    pub excluded: Vec<ExcludedClient>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub regulation: Regulation,
    pub seeds: Vec<SeedResult>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variants: Vec<VariantResult>,
}

/// Runs every regulation variant of `cfg` for every seed (or only `seed_override`).
pub fn run_experiment(cfg: &RunConfig, seed_override: Option<u64>) -> Result<RunResult, HarnessError> {
    let seeds = match seed_override {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let mut variants = Vec::new();
    for &variant in &cfg.variants {
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let mut fed = Federation::build(cfg, variant, seed)?;
            let mut rounds = Vec::with_capacity(cfg.rounds);
            let mut regulation = Vec::new();
            for _ in 0..cfg.rounds {
                let out = fed.step()?;
                rounds.push(out.metrics);
                regulation.extend(out.regulation);
            }
            per_seed.push(SeedResult {
                seed,
                rounds,
                regulation,
                excluded: fed.excluded.clone(),
                warnings: fed.warnings.clone(),
            });
        }
        variants.push(VariantResult {
            regulation: variant,
            seeds: per_seed,
        });
    }
    Ok(RunResult { variants })
}

#[derive(Debug, Serialize)]
struct Stat {
    mean: f64,
    std: f64,
}

fn stat(xs: &[f64]) -> Stat {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Stat { mean, std }
}

#[derive(Debug, Serialize)]
struct VariantSummary {
    regulation: &'static str,
    test_acc: Stat,
    alignment: Stat,
    sensitivity: Stat,
    gamma_mean: Stat,
    alignment_trajectory: Vec<f64>,
    gamma_mean_trajectory: Vec<f64>,
    excluded_clients: Vec<ExcludedClient>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    rounds: usize,
    seeds: Vec<u64>,
    final_window: usize,
    variants: Vec<VariantSummary>,
}

impl VariantResult {
    /// Per-seed mean of `f` over the last [`FINAL_WINDOW`] rounds.
    pub fn final_window_means(&self, f: impl Fn(&RoundMetrics) -> f64) -> Vec<f64> {
        self.seeds
            .iter()
            .map(|s| {
                let tail = &s.rounds[s.rounds.len().saturating_sub(FINAL_WINDOW)..];
                tail.iter().map(&f).sum::<f64>() / tail.len() as f64
            })
            .collect()
    }

    /// Per-round mean of `f` across seeds.
    pub fn trajectory(&self, f: impl Fn(&RoundMetrics) -> f64) -> Vec<f64> {
        let n_rounds = self.seeds.first().map_or(0, |s| s.rounds.len());
        (0..n_rounds)
            .map(|t| self.seeds.iter().map(|s| f(&s.rounds[t])).sum::<f64>() / self.seeds.len() as f64)
            .collect()
    }

    fn summary(&self) -> VariantSummary {
        VariantSummary {
            regulation: regulation_name(self.regulation),
            test_acc: stat(&self.final_window_means(|m| m.test_accuracy)),
            alignment: stat(&self.final_window_means(|m| m.alignment)),
            sensitivity: stat(&self.final_window_means(|m| m.sensitivity)),
            gamma_mean: stat(&self.final_window_means(|m| m.gamma_mean)),
            alignment_trajectory: self.trajectory(|m| m.alignment),
            gamma_mean_trajectory: self.trajectory(|m| m.gamma_mean),
            excluded_clients: self.seeds.iter().flat_map(|s| s.excluded.clone()).collect(),
        }
    }
}

pub(crate) fn metrics_csv(seeds: &[SeedResult]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for s in seeds {
        for m in &s.rounds {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                m.round, m.seed, m.test_accuracy, m.gamma_mean, m.alignment, m.sensitivity, m.clip_rate, m.atten_rate
            );
        }
    }
    out
}

pub(crate) fn regulation_jsonl(records: &[RegulationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `config.txt`, `summary.json` and, per variant, `metrics.csv` and
/// one `regulation_seed<N>.jsonl` per seed under `out_dir`.
pub fn write_outputs(cfg: &RunConfig, result: &RunResult, out_dir: &Path) -> Result<(), HarnessError> {
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|source| HarnessError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    mkdir(out_dir)?;
    write(&out_dir.join("config.txt"), &cfg.source_text)?;
    for v in &result.variants {
        let dir = out_dir.join(regulation_name(v.regulation));
        mkdir(&dir)?;
        write(&dir.join("metrics.csv"), &metrics_csv(&v.seeds))?;
        for s in &v.seeds {
            write(
                &dir.join(format!("regulation_seed{}.jsonl", s.seed)),
                &regulation_jsonl(&s.regulation),
            )?;
        }
    }
    let summary = Summary {
        experiment: &cfg.name,
        rounds: cfg.rounds,
        seeds: result
            .variants
            .first()
            .map(|v| v.seeds.iter().map(|s| s.seed).collect())
            .unwrap_or_default(),
        final_window: FINAL_WINDOW,
        variants: result.variants.iter().map(VariantResult::summary).collect(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&out_dir.join("summary.json"), &(json + "\n"))
}

