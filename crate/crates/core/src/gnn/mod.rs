//! One- and two-layer graph convolutional networks.

mod flat;
mod forward;

pub use flat::{FlatVector, Layout, LayoutSlot};
pub use forward::{
    forward, gradient, induced_operator, masked_cross_entropy, ForwardPass, LossAndGradient,
};

use rand::Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mask selects no nodes")]
    EmptyMask,
    #[error("label {label} at node {node} is not below the output width {classes}")]
    LabelOutOfRange { node: usize, label: usize, classes: usize },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("unsupported model: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub(crate) fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
        }
    }

    pub(crate) fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu if pre > T::zero() => T::one(),
            Activation::Relu => T::zero(),
        }
    }
}

/// Which parameters leave the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// Aggregated by the server.
    Shared,
    /// Stays on the client (classifier head in cross-domain federation).
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupFilter {
    Shared,
    Local,
    All,
}

impl GroupFilter {
    pub fn admits(self, g: Group) -> bool {
        match self {
            GroupFilter::All => true,
            GroupFilter::Shared => g == Group::Shared,
            GroupFilter::Local => g == Group::Local,
        }
    }
}

/// Where the final layer lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadPlacement {
    /// Every layer is shared (intra-domain federation).
    Shared,
    /// The final layer stays local; all preceding layers form the shared encoder.
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl ModelConfig {
    /// Scalar one-layer linear model without bias.
    pub fn linear_scalar() -> Self {
        Self {
            n_layers: 1,
            hidden_dim: 1,
            activation: Activation::Identity,
            in_dim: 1,
            out_dim: 1,
            bias: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(1..=2).contains(&self.n_layers) {
            return Err(ModelError::InvalidConfig(format!(
                "n_layers must be 1 or 2, got {}",
                self.n_layers
            )));
        }
        if self.in_dim == 0 || self.out_dim == 0 || (self.n_layers == 2 && self.hidden_dim == 0) {
            return Err(ModelError::InvalidConfig("dimensions must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.n_layers == 1 {
            vec![(self.in_dim, self.out_dim)]
        } else {
            vec![(self.in_dim, self.hidden_dim), (self.hidden_dim, self.out_dim)]
        }
    }

    /// Glorot-uniform weights in `[−s, s]`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// drawn row-major layer by layer; biases start at zero.
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        head: HeadPlacement,
        rng: &mut R,
    ) -> Result<ParameterSet<T>, ModelError> {
        self.validate()?;
        if head == HeadPlacement::Local && self.n_layers < 2 {
            return Err(ModelError::InvalidConfig(
                "a local head needs at least one shared encoder layer".into(),
            ));
        }
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| {
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Matrix::from_fn(fan_in, fan_out, |_, _| T::lit(rng.random_range(-s..=s)));
                let group = if l == last && head == HeadPlacement::Local {
                    Group::Local
                } else {
                    Group::Shared
                };
                Layer {
                    weight,
                    bias: self.bias.then(|| vec![T::zero(); fan_out]),
                    group,
                }
            })
            .collect();
        Ok(ParameterSet::new(layers, self.activation))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Option<Vec<T>>,
    pub group: Group,
}

impl<T: Scalar> Layer<T> {
    pub fn n_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
            group: self.group,
        }
    }
}

/// Ordered GCN layers. The activation is applied after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub layers: Vec<Layer<T>>,
    pub activation: Activation,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new(layers: Vec<Layer<T>>, activation: Activation) -> Self {
        Self { layers, activation }
    }

    /// Bias-free one-layer linear model with the given weight matrix.
    pub fn linear(weight: Matrix<T>) -> Self {
        Self::new(
            vec![Layer {
                weight,
                bias: None,
                group: Group::Shared,
            }],
            Activation::Identity,
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self::new(self.layers.iter().map(Layer::zeros_like).collect(), self.activation)
    }

    pub fn n_params(&self, filter: GroupFilter) -> usize {
        self.layers
            .iter()
            .filter(|l| filter.admits(l.group))
            .map(Layer::n_params)
            .sum()
    }

    /// Checks that consecutive layers compose.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::Shape("no layers".into()));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(ModelError::Shape(format!(
                    "layer {l} outputs {} columns but layer {} expects {}",
                    pair[0].weight.cols(),
                    l + 1,
                    pair[1].weight.rows()
                )));
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(b) = &layer.bias {
                if b.len() != layer.weight.cols() {
                    return Err(ModelError::Shape(format!("layer {l} bias length")));
                }
            }
        }
        Ok(())
    }

    /// `self ← self − step · grad`, layer by layer.
    pub fn descend(&mut self, grad: &Self, step: T) {
        for (p, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, &d) in p.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
                *w -= step * d;
            }
            if let (Some(b), Some(db)) = (p.bias.as_mut(), g.bias.as_ref()) {
                for (w, &d) in b.iter_mut().zip(db) {
                    *w -= step * d;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn init_respects_glorot_bound_and_groups() {
        let cfg = ModelConfig {
            n_layers: 2,
            hidden_dim: 8,
            activation: Activation::Relu,
            in_dim: 4,
            out_dim: 3,
            bias: true,
        };
        let p: ParameterSet<f64> = cfg.init(HeadPlacement::Local, &mut rng_from_seed(1)).unwrap();
        let s = (6.0f64 / 12.0).sqrt();
        assert!(p.layers[0].weight.as_slice().iter().all(|w| w.abs() <= s));
        assert_eq!(p.layers[0].group, Group::Shared);
        assert_eq!(p.layers[1].group, Group::Local);
        assert_eq!(p.n_params(GroupFilter::Shared), 4 * 8 + 8);
        assert_eq!(p.n_params(GroupFilter::All), 40 + 8 * 3 + 3);
        p.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::linear_scalar();
        cfg.n_layers = 3;
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig::linear_scalar();
        assert!(cfg
            .init::<f64, _>(HeadPlacement::Local, &mut rng_from_seed(0))
            .is_err());
    }
}
