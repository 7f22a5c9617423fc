//! Experiment configuration.
//!
//! Grammar: one `section.key = value` assignment per line; `#` starts a
//! comment; blank lines are ignored. Lists are comma-separated. Sources are
//! declared as `source.<name>.<key>` and keep their order of first appearance.
//!
//! ```text
//! experiment.name = hetero
//! experiment.rounds = 50
//! experiment.seeds = 1, 2, 3
//! experiment.regime = intra_domain      # or cross_domain
//! experiment.out = out/hetero
//!
//! source.dense.kind = planted_partition # path | complete | planted_partition | csv
//! source.dense.n_blocks = 4
//! source.dense.clients = 2
//! source.dense.dirichlet_alpha = 0.3
//!
//! model.layers = 2
//! client.trainer = fedavg               # fedavg | fedsgd | fedprox
//! aggregator.regulation = plain, ggrs
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gnn::Activation;
use crate::graph::{GraphFiles, PlantedPartition};
use crate::server::{AggregatorConfig, Epsilon, Fallback, ProxyDim, ReferenceInput, Regulation, Weighting};

#[derive(Debug, Error, PartialEq)]
#[error("{file}:{line}: {msg}")]
pub struct ConfigError {
    pub file: String,
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// All parameters are aggregated.
    IntraDomain,
    /// Only the encoder is aggregated; each client keeps its own head.
    CrossDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Path(usize),
    Complete(usize),
    PlantedPartition(PlantedPartition),
    Csv(GraphFiles),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub name: String,
    pub dataset: Dataset,
    pub clients: usize,
    pub dirichlet_alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerKind {
    FedAvg,
    FedSgd,
    FedProx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSettings {
    pub trainer: TrainerKind,
    pub mu: f64,
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub sources: Vec<SourceConfig>,
    pub regime: Regime,
    pub model: ModelSettings,
    pub client: ClientSettings,
    /// Template; `regulation` is overridden by each entry of `variants`.
    pub aggregator: AggregatorConfig<f64>,
    pub variants: Vec<Regulation>,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Verbatim config text, echoed into the output directory.
    pub source_text: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            sources: Vec::new(),
            regime: Regime::IntraDomain,
            model: ModelSettings {
                n_layers: 2,
                hidden_dim: 64,
                activation: Activation::Relu,
                bias: false,
            },
            client: ClientSettings {
                trainer: TrainerKind::FedAvg,
                mu: 0.01,
                lr: 0.05,
                epochs: 1,
            },
            aggregator: AggregatorConfig::default(),
            variants: vec![Regulation::Plain],
            rounds: 100,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("out"),
            source_text: String::new(),
        }
    }
}

pub fn regulation_name(r: Regulation) -> &'static str {
    match r {
        Regulation::Plain => "plain",
        Regulation::Ggrs => "ggrs",
    }
}

struct SourceDraft {
    name: String,
    line: usize,
    kind: Option<String>,
    n: Option<usize>,
    planted: PlantedPartition,
    files: [Option<PathBuf>; 4],
    clients: usize,
    dirichlet_alpha: f64,
}

impl SourceDraft {
    fn new(name: &str, line: usize) -> Self {
        Self {
            name: name.to_string(),
            line,
            kind: None,
            n: None,
            planted: PlantedPartition {
                n_blocks: 4,
                block_size: 25,
                p_in: 0.3,
                p_out: 0.02,
                n_classes: 4,
                feature_dim: 16,
                class_sep: 1.0,
            },
            files: [None, None, None, None],
            clients: 1,
            dirichlet_alpha: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses config text. Relative CSV paths resolve against `base_dir`.
    pub fn parse(text: &str, file: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig {
            source_text: text.to_string(),
            ..RunConfig::default()
        };
        let mut drafts: Vec<SourceDraft> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: String| ConfigError {
                file: file.to_string(),
                line,
                msg,
            };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `section.key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let (section, rest) = key
                .split_once('.')
                .ok_or_else(|| err(format!("key {key:?} has no section")))?;

            macro_rules! num {
                ($t:ty) => {
                    value
                        .parse::<$t>()
                        .map_err(|_| err(format!("{key}: cannot parse {value:?}")))?
                };
            }
            let flag = || match value {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(err(format!("{key}: expected true/false, got {value:?}"))),
            };

            match (section, rest) {
                ("experiment", "name") => cfg.name = value.to_string(),
                ("experiment", "rounds") => cfg.rounds = num!(usize),
                ("experiment", "seeds") => {
                    cfg.seeds = value
                        .split(',')
                        .map(|s| s.trim().parse::<u64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err(format!("seeds: cannot parse {value:?}")))?
                }
                ("experiment", "regime") => {
                    cfg.regime = match value {
                        "intra_domain" => Regime::IntraDomain,
                        "cross_domain" => Regime::CrossDomain,
                        _ => return Err(err(format!("unknown regime {value:?}"))),
                    }
                }
                ("experiment", "out") => cfg.out_dir = PathBuf::from(value),
                ("model", "layers") => cfg.model.n_layers = num!(usize),
                ("model", "hidden") => cfg.model.hidden_dim = num!(usize),
                ("model", "activation") => {
                    cfg.model.activation = match value {
                        "relu" => Activation::Relu,
                        "identity" => Activation::Identity,
                        _ => return Err(err(format!("unknown activation {value:?}"))),
                    }
                }
                ("model", "bias") => cfg.model.bias = flag()?,
                ("client", "trainer") => {
                    cfg.client.trainer = match value {
                        "fedavg" => TrainerKind::FedAvg,
                        "fedsgd" => TrainerKind::FedSgd,
                        "fedprox" => TrainerKind::FedProx,
                        _ => return Err(err(format!("unknown trainer {value:?}"))),
                    }
                }
                ("client", "mu") => cfg.client.mu = num!(f64),
                ("client", "lr") => cfg.client.lr = num!(f64),
                ("client", "epochs") => cfg.client.epochs = num!(usize),
                ("aggregator", "regulation") => {
                    cfg.variants = value
                        .split(',')
                        .map(|s| match s.trim() {
                            "plain" => Ok(Regulation::Plain),
                            "ggrs" => Ok(Regulation::Ggrs),
                            other => Err(err(format!("unknown regulation {other:?}"))),
                        })
                        .collect::<Result<_, _>>()?
                }
                ("aggregator", "alpha") => cfg.aggregator.alpha = num!(f64),
                ("aggregator", "beta") => cfg.aggregator.beta = num!(f64),
                ("aggregator", "epsilon") => {
                    cfg.aggregator.epsilon = match value {
                        "adaptive" => Epsilon::AdaptiveMedian,
                        _ => Epsilon::Fixed(num!(f64)),
                    }
                }
                ("aggregator", "subspace_dim") => cfg.aggregator.subspace_dim = num!(usize),
                ("aggregator", "window") => cfg.aggregator.window = num!(usize),
                ("aggregator", "proxy_dim") => {
                    cfg.aggregator.proxy_dim = match value {
                        "auto" => ProxyDim::Auto,
                        "none" => ProxyDim::Full,
                        _ => ProxyDim::Fixed(num!(usize)),
                    }
                }
                ("aggregator", "weights") => {
                    cfg.aggregator.weights = match value {
                        "uniform" => Weighting::Uniform,
                        "by_train_count" => Weighting::ByTrainCount,
                        _ => return Err(err(format!("unknown weighting {value:?}"))),
                    }
                }
                ("aggregator", "fallback") => {
                    cfg.aggregator.fallback = match value {
                        "largest_weight" => Fallback::LargestWeight,
                        "none" => Fallback::None,
                        _ => return Err(err(format!("unknown fallback {value:?}"))),
                    }
                }
                ("aggregator", "reference") => {
                    cfg.aggregator.reference_input = match value {
                        "raw" => ReferenceInput::Raw,
                        "regulated" => ReferenceInput::Regulated,
                        _ => return Err(err(format!("unknown reference input {value:?}"))),
                    }
                }
                ("source", rest) => {
                    let (name, field) = rest
                        .split_once('.')
                        .ok_or_else(|| err(format!("expected source.<name>.<key>, got {key:?}")))?;
                    let pos = match drafts.iter().position(|d| d.name == name) {
                        Some(p) => p,
                        None => {
                            drafts.push(SourceDraft::new(name, line));
                            drafts.len() - 1
                        }
                    };
                    let d = &mut drafts[pos];
                    match field {
                        "kind" => d.kind = Some(value.to_string()),
                        "n" => d.n = Some(num!(usize)),
                        "n_blocks" => d.planted.n_blocks = num!(usize),
                        "block_size" => d.planted.block_size = num!(usize),
                        "p_in" => d.planted.p_in = num!(f64),
                        "p_out" => d.planted.p_out = num!(f64),
                        "n_classes" => d.planted.n_classes = num!(usize),
                        "feature_dim" => d.planted.feature_dim = num!(usize),
                        "class_sep" => d.planted.class_sep = num!(f64),
                        "edges" => d.files[0] = Some(base_dir.join(value)),
                        "features" => d.files[1] = Some(base_dir.join(value)),
                        "labels" => d.files[2] = Some(base_dir.join(value)),
                        "splits" => d.files[3] = Some(base_dir.join(value)),
                        "clients" => d.clients = num!(usize),
                        "dirichlet_alpha" => d.dirichlet_alpha = num!(f64),
                        _ => return Err(err(format!("unknown source key {field:?}"))),
                    }
                }
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }

        for d in drafts {
            let err = |msg: String| ConfigError {
                file: file.to_string(),
                line: d.line,
                msg: format!("source {}: {msg}", d.name),
            };
            let dataset = match d.kind.as_deref() {
                Some("path") => Dataset::Path(d.n.ok_or_else(|| err("path needs n".into()))?),
                Some("complete") => Dataset::Complete(d.n.ok_or_else(|| err("complete needs n".into()))?),
                Some("planted_partition") => Dataset::PlantedPartition(d.planted.clone()),
                Some("csv") => {
                    let [Some(edges), Some(features), Some(labels), Some(splits)] = d.files.clone() else {
                        return Err(err("csv needs edges, features, labels and splits".into()));
                    };
                    Dataset::Csv(GraphFiles {
                        edges,
                        features,
                        labels,
                        splits,
                    })
                }
                Some(other) => return Err(err(format!("unknown kind {other:?}"))),
                None => return Err(err("missing kind".into())),
            };
            if d.clients == 0 {
                return Err(err("clients must be >= 1".into()));
            }
            cfg.sources.push(SourceConfig {
                name: d.name,
                dataset,
                clients: d.clients,
                dirichlet_alpha: d.dirichlet_alpha,
            });
        }

        cfg.validate().map_err(|msg| ConfigError {
            file: file.to_string(),
            line: 0,
            msg,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rounds == 0 {
            return Err("experiment.rounds must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return Err("at least one seed is required".into());
        }
        if self.sources.is_empty() {
            return Err("at least one source is required".into());
        }
        if self.variants.is_empty() {
            return Err("aggregator.regulation lists no variant".into());
        }
        if self.regime == Regime::CrossDomain {
            if self.sources.len() < 2 {
                return Err("cross_domain needs at least two sources".into());
            }
            if self.model.n_layers < 2 {
                return Err("cross_domain needs a 2-layer model (encoder + local head)".into());
            }
        }
        if !(self.client.lr >= 0.0 && self.client.lr.is_finite()) {
            return Err("client.lr must be a non-negative number".into());
        }
        if self.client.mu < 0.0 {
            return Err("client.mu must be non-negative".into());
        }
        if self.client.epochs == 0 {
            return Err("client.epochs must be >= 1".into());
        }
        for s in &self.sources {
            if s.dirichlet_alpha.is_nan() || s.dirichlet_alpha <= 0.0 {
                return Err(format!("source {}: dirichlet_alpha must be positive", s.name));
            }
        }
        self.aggregator.validate().map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two silos
experiment.name = demo
experiment.rounds = 5
experiment.seeds = 4, 5
experiment.regime = cross_domain

source.a.kind = planted_partition
source.a.n_blocks = 2
source.a.clients = 2
source.a.dirichlet_alpha = 0.3
source.b.kind = path   # tiny
source.b.n = 6

model.hidden = 8
client.trainer = fedprox
client.mu = 0.1
aggregator.regulation = plain, ggrs
aggregator.epsilon = 0.5
aggregator.proxy_dim = none
";

    #[test]
    fn parses_sample() {
        let cfg = RunConfig::parse(SAMPLE, "sample.cfg", Path::new(".")).unwrap();
        assert_eq!(cfg.name, "demo");
        assert_eq!(cfg.rounds, 5);
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.regime, Regime::CrossDomain);
        assert_eq!(cfg.sources.len(), 2);
        assert_eq!(cfg.sources[0].clients, 2);
        assert_eq!(cfg.sources[1].dataset, Dataset::Path(6));
        assert_eq!(cfg.client.trainer, TrainerKind::FedProx);
        assert_eq!(cfg.variants, vec![Regulation::Plain, Regulation::Ggrs]);
        assert_eq!(cfg.aggregator.epsilon, Epsilon::Fixed(0.5));
        assert_eq!(cfg.aggregator.proxy_dim, ProxyDim::Full);
        assert_eq!(cfg.source_text, SAMPLE);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "experiment.rounds = 3\nmodel.hiden = 4\n";
        let e = RunConfig::parse(text, "x.cfg", Path::new(".")).unwrap_err();
        assert_eq!((e.file.as_str(), e.line), ("x.cfg", 2));
        let e = RunConfig::parse("experiment.rounds = many\n", "x.cfg", Path::new(".")).unwrap_err();
        assert_eq!(e.line, 1);
        let e = RunConfig::parse("just words\n", "x.cfg", Path::new(".")).unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn semantic_checks() {
        let no_source = "experiment.rounds = 3\n";
        assert!(RunConfig::parse(no_source, "x", Path::new(".")).is_err());
        let one_silo = "experiment.regime = cross_domain\nsource.a.kind = complete\nsource.a.n = 3\n";
        assert!(RunConfig::parse(one_silo, "x", Path::new(".")).is_err());
        let zero_rounds = "experiment.rounds = 0\nsource.a.kind = complete\nsource.a.n = 3\n";
        assert!(RunConfig::parse(zero_rounds, "x", Path::new(".")).is_err());
        let csv_missing = "source.a.kind = csv\nsource.a.edges = e.csv\n";
        let e = RunConfig::parse(csv_missing, "x", Path::new(".")).unwrap_err();
        assert_eq!(e.line, 1);
    }
}
