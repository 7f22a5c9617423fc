//! Server-side aggregation: plain weighted averaging and geometry-regulated
//! aggregation against a running reference.

mod proxy;
mod reference;
mod regulate;

pub use proxy::{ProxyDim, ProxyMapper, ProxyVector, AUTO_REDUCED_DIM, AUTO_REDUCTION_THRESHOLD};
pub use reference::{dominant_directions, GeometricReference};
pub use regulate::{align_regulate, sensitivity_normalize, subspace_project};

use thiserror::Error;

use crate::client::LocalUpdate;
use crate::gnn::{FlatVector, Layout};
use crate::linalg::{cosine, norm};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ServerError {
    #[error("no client updates to aggregate")]
    NoUpdates,
    #[error("update layout does not match the shared model layout")]
    Layout,
    #[error("update contains non-finite values")]
    NonFinite,
    #[error("aggregation weights sum to zero")]
    ZeroWeights,
    #[error("invalid aggregator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regulation {
    /// Linear weighted averaging of the raw updates.
    Plain,
    /// Alignment attenuation, subspace projection and sensitivity clipping.
    Ggrs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon<T> {
    Fixed(T),
    /// Median of the current round's raw proxy norms.
    AdaptiveMedian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    ByTrainCount,
}

/// What stands in for the reference while it is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// Proxy of the largest-weight client, lowest client id on ties.
    LargestWeight,
    /// Keep the zero reference; every update then counts as aligned.
    None,
}

/// Which proxies feed the reference EMA. The window always keeps raw proxies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceInput {
    Raw,
    Regulated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorConfig<T> {
    pub regulation: Regulation,
    pub alpha: T,
    pub beta: T,
    pub epsilon: Epsilon<T>,
    pub subspace_dim: usize,
    pub window: usize,
    pub proxy_dim: ProxyDim,
    pub weights: Weighting,
    pub fallback: Fallback,
    pub reference_input: ReferenceInput,
    pub proxy_seed: u64,
}

impl<T: Scalar> Default for AggregatorConfig<T> {
    fn default() -> Self {
        Self {
            regulation: Regulation::Plain,
            alpha: T::lit(0.9),
            beta: T::lit(0.5),
            epsilon: Epsilon::AdaptiveMedian,
            subspace_dim: 8,
            window: 32,
            proxy_dim: ProxyDim::Auto,
            weights: Weighting::Uniform,
            fallback: Fallback::LargestWeight,
            reference_input: ReferenceInput::Raw,
            proxy_seed: 0,
        }
    }
}

impl<T: Scalar> AggregatorConfig<T> {
    pub fn ggrs() -> Self {
        Self {
            regulation: Regulation::Ggrs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        let bad = |m: &str| Err(ServerError::InvalidConfig(m.into()));
        if !(self.alpha >= T::zero() && self.alpha < T::one()) {
            return bad("alpha must lie in [0, 1)");
        }
        if !(self.beta >= T::zero() && self.beta < T::one()) {
            return bad("beta must lie in [0, 1)");
        }
        if self.subspace_dim > self.window {
            return bad("subspace_dim must not exceed window");
        }
        if let Epsilon::Fixed(e) = self.epsilon {
            if !(e > T::zero() && e.is_finite()) {
                return bad("epsilon must be positive");
            }
        }
        if let ProxyDim::Fixed(0) = self.proxy_dim {
            return bad("proxy_dim must be positive");
        }
        Ok(())
    }
}

/// Realized regulation of one client update.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRegulation<T> {
    pub client_id: usize,
    /// Cosine between the raw proxy and the reference used for the decision.
    pub cos_ref: Option<T>,
    pub attenuated: bool,
    pub factor: T,
    pub retention: Vec<T>,
    pub clip: T,
    /// Per-layer gain applied to the parameter update: `factor · retention · clip`.
    pub coefficients: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulationReport<T> {
    pub clients: Vec<ClientRegulation<T>>,
    /// Weight-averaged per-layer coefficient.
    pub layer_coefficients: Vec<T>,
    pub epsilon: T,
    pub used_fallback: bool,
}

impl<T: Scalar> RegulationReport<T> {
    pub fn attenuation_rate(&self) -> f64 {
        self.rate(|c| c.attenuated)
    }

    pub fn clip_rate(&self) -> f64 {
        self.rate(|c| c.clip < T::one())
    }

    fn rate(&self, pred: impl Fn(&ClientRegulation<T>) -> bool) -> f64 {
        if self.clients.is_empty() {
            return 0.0;
        }
        self.clients.iter().filter(|c| pred(c)).count() as f64 / self.clients.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct AggregateOutcome<T> {
    pub global_delta: FlatVector<T>,
    pub report: RegulationReport<T>,
    /// Raw proxies in ascending client order.
    pub proxies: Vec<ProxyVector<T>>,
    /// Client ids matching `proxies`.
    pub client_ids: Vec<usize>,
    pub weights: Vec<T>,
    /// Reference before this round's EMA step, as regulation saw it (no fallback).
    pub reference_before: Vec<T>,
}

/// Stateful server: proxy map plus geometric reference.
#[derive(Debug, Clone)]
pub struct Aggregator<T> {
    cfg: AggregatorConfig<T>,
    mapper: ProxyMapper<T>,
    reference: GeometricReference<T>,
}

impl<T: Scalar> Aggregator<T> {
    pub fn new(cfg: AggregatorConfig<T>, layout: Layout) -> Result<Self, ServerError> {
        cfg.validate()?;
        let mapper = ProxyMapper::new(layout, cfg.proxy_dim, cfg.proxy_seed);
        let reference = GeometricReference::new(mapper.proxy_len(), cfg.window, cfg.subspace_dim);
        Ok(Self {
            cfg,
            mapper,
            reference,
        })
    }

    pub fn config(&self) -> &AggregatorConfig<T> {
        &self.cfg
    }

    pub fn reference(&self) -> &GeometricReference<T> {
        &self.reference
    }

    pub fn mapper(&self) -> &ProxyMapper<T> {
        &self.mapper
    }

    fn weights(&self, updates: &[&LocalUpdate<T>]) -> Result<Vec<T>, ServerError> {
        let raw: Vec<T> = match self.cfg.weights {
            Weighting::Uniform => vec![T::one(); updates.len()],
            Weighting::ByTrainCount => updates.iter().map(|u| T::from_usize_lossy(u.n_train)).collect(),
        };
        let total: T = raw.iter().copied().sum();
        if total <= T::zero() {
            return Err(ServerError::ZeroWeights);
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }

    fn resolve_epsilon(&self, proxies: &[ProxyVector<T>]) -> T {
        match self.cfg.epsilon {
            Epsilon::Fixed(e) => e,
            Epsilon::AdaptiveMedian => {
                let mut norms: Vec<T> = proxies.iter().map(ProxyVector::norm).collect();
                norms.sort_by(|a, b| a.partial_cmp(b).expect("finite norms"));
                let n = norms.len();
                let median = if n % 2 == 1 {
                    norms[n / 2]
                } else {
                    (norms[n / 2 - 1] + norms[n / 2]) / T::lit(2.0)
                };
                if median > T::zero() {
                    median
                } else {
                    // More than half the proxies vanish: do not clip the rest to zero.
                    norms.last().copied().filter(|m| *m > T::zero()).unwrap_or(T::one())
                }
            }
        }
    }

    /// Regulates (or not, in plain mode) each update, returns `Σ w_k R(Δ_k)`,
    /// and advances the reference. Updates are processed in ascending client id.
    pub fn aggregate(&mut self, updates: &[LocalUpdate<T>]) -> Result<AggregateOutcome<T>, ServerError> {
        if updates.is_empty() {
            return Err(ServerError::NoUpdates);
        }
        let mut ordered: Vec<&LocalUpdate<T>> = updates.iter().collect();
        ordered.sort_by_key(|u| u.client_id);
        for u in &ordered {
            if u.delta.layout != *self.mapper.layout() {
                return Err(ServerError::Layout);
            }
        }
        let weights = self.weights(&ordered)?;
        let proxies: Vec<ProxyVector<T>> = ordered
            .iter()
            .map(|u| self.mapper.map(&u.delta))
            .collect::<Result<_, _>>()?;

        let reference_before = self.reference.r.clone();
        let use_fallback = norm(&reference_before) == T::zero() && self.cfg.fallback == Fallback::LargestWeight;
        let effective: &[T] = if use_fallback {
            // max_by picks the last maximum; scan in reverse so ties go to the lowest id.
            let k = (0..weights.len())
                .rev()
                .max_by(|&a, &b| weights[a].partial_cmp(&weights[b]).expect("finite weights"))
                .expect("non-empty");
            &proxies[k].values
        } else {
            &reference_before
        };

        let epsilon = self.resolve_epsilon(&proxies);
        let layout = self.mapper.layout().clone();
        let blocks = layout.blocks();
        let n_layers = blocks.len();
        let regulate = self.cfg.regulation == Regulation::Ggrs;

        let mut clients = Vec::with_capacity(ordered.len());
        let mut regulated = Vec::with_capacity(ordered.len());
        let mut global = FlatVector::zeros(layout.clone());
        for ((u, z), &w) in ordered.iter().zip(&proxies).zip(&weights) {
            let cos_ref = cosine(&z.values, effective);
            let (z_hat, factor, retention, clip) = if regulate {
                let (z1, factor) = align_regulate(&z.values, effective, self.cfg.beta);
                let (z2, retention) =
                    subspace_project(&z1, self.reference.basis(), self.mapper.proxy_blocks(), n_layers);
                let (z3, clip) = sensitivity_normalize(&z2, epsilon);
                (z3, factor, retention, clip)
            } else {
                (z.values.clone(), T::one(), vec![T::one(); n_layers], T::one())
            };
            let coefficients: Vec<T> = retention.iter().map(|&r| factor * r * clip).collect();
            for (r, &c) in blocks.iter().zip(&coefficients) {
                let gain = if regulate { w * c } else { w };
                for (g, &d) in global.values[r.clone()].iter_mut().zip(&u.delta.values[r.clone()]) {
                    *g += gain * d;
                }
            }
            clients.push(ClientRegulation {
                client_id: u.client_id,
                cos_ref,
                attenuated: factor < T::one(),
                factor,
                retention,
                clip,
                coefficients,
            });
            regulated.push(z_hat);
        }

        let raw: Vec<&[T]> = proxies.iter().map(|z| &z.values[..]).collect();
        let ema_input: Vec<&[T]> = match self.cfg.reference_input {
            ReferenceInput::Raw => raw.clone(),
            ReferenceInput::Regulated => regulated.iter().map(|v| &v[..]).collect(),
        };
        self.reference.update(&ema_input, &weights, self.cfg.alpha, &raw);

        let layer_coefficients = (0..n_layers)
            .map(|l| clients.iter().zip(&weights).map(|(c, &w)| w * c.coefficients[l]).sum())
            .collect();
        Ok(AggregateOutcome {
            global_delta: global,
            report: RegulationReport {
                clients,
                layer_coefficients,
                epsilon,
                used_fallback: use_fallback,
            },
            proxies,
            client_ids: ordered.iter().map(|u| u.client_id).collect(),
            weights,
            reference_before,
        })
    }
}
