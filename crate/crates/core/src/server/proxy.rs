use std::ops::Range;

use rand::Rng;

use crate::gnn::{FlatVector, Layout};
use crate::linalg::norm;
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

use super::ServerError;

/// Shared-parameter count above which [`ProxyDim::Auto`] reduces proxies.
pub const AUTO_REDUCTION_THRESHOLD: usize = 4096;
/// Reduced width chosen by [`ProxyDim::Auto`].
pub const AUTO_REDUCED_DIM: usize = 1024;

const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyDim {
    /// Reduce to [`AUTO_REDUCED_DIM`] only when the layout exceeds [`AUTO_REDUCTION_THRESHOLD`].
    Auto,
    /// Never reduce.
    Full,
    /// Reduce whenever the layout is longer than this.
    Fixed(usize),
}

/// Geometric summary of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyVector<T> {
    pub values: Vec<T>,
    /// Euclidean norm of each layer block of the raw update.
    pub layer_norms: Vec<T>,
}

impl<T: Scalar> ProxyVector<T> {
    pub fn norm(&self) -> T {
        norm(&self.values)
    }
}

/// Layer-normalized proxy map, optionally followed by a run-constant random
/// sign projection.
///
/// Layer `l` of the update contributes `ρ_l · Δ_l / (‖Δ_l‖ + 1e-12)`, where
/// `ρ_l = ‖Δ_l‖ / Σ ‖Δ_l'‖` is its share of the total layer mass.
#[derive(Debug, Clone)]
pub struct ProxyMapper<T> {
    layout: Layout,
    blocks: Vec<Range<usize>>,
    /// Row-major `reduced × layout.len()` matrix of ±1.
    signs: Option<(usize, Vec<i8>)>,
    scale: T,
}

impl<T: Scalar> ProxyMapper<T> {
    pub fn new(layout: Layout, dim: ProxyDim, seed: u64) -> Self {
        let p = layout.len();
        let reduced = match dim {
            ProxyDim::Full => None,
            ProxyDim::Auto => (p > AUTO_REDUCTION_THRESHOLD).then_some(AUTO_REDUCED_DIM),
            ProxyDim::Fixed(d) => (p > d).then_some(d),
        };
        let signs = reduced.map(|d| {
            let mut rng = rng_from_seed(seed);
            let m: Vec<i8> = (0..d * p).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            (d, m)
        });
        let scale = reduced.map_or(T::one(), |d| T::one() / T::from_usize_lossy(d).sqrt());
        Self {
            blocks: layout.blocks(),
            layout,
            signs,
            scale,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn is_reduced(&self) -> bool {
        self.signs.is_some()
    }

    pub fn proxy_len(&self) -> usize {
        self.signs.as_ref().map_or(self.layout.len(), |(d, _)| *d)
    }

    /// Proxy-space index range of each layer, or `None` once projected.
    pub fn proxy_blocks(&self) -> Option<&[Range<usize>]> {
        (!self.is_reduced()).then_some(&self.blocks[..])
    }

    pub fn map(&self, delta: &FlatVector<T>) -> Result<ProxyVector<T>, ServerError> {
        if delta.layout != self.layout || delta.values.len() != self.layout.len() {
            return Err(ServerError::Layout);
        }
        if delta.values.iter().any(|v| !v.is_finite()) {
            return Err(ServerError::NonFinite);
        }
        let layer_norms: Vec<T> = self.blocks.iter().map(|r| norm(&delta.values[r.clone()])).collect();
        let total: T = layer_norms.iter().copied().sum();
        let mut flat = vec![T::zero(); self.layout.len()];
        if total > T::zero() {
            for (r, &n) in self.blocks.iter().zip(&layer_norms) {
                let gain = (n / total) / (n + T::lit(NORM_GUARD));
                for (o, &v) in flat[r.clone()].iter_mut().zip(&delta.values[r.clone()]) {
                    *o = gain * v;
                }
            }
        }
        let values = match &self.signs {
            None => flat,
            Some((d, m)) => {
                let p = flat.len();
                (0..*d)
                    .map(|i| {
                        let row = &m[i * p..(i + 1) * p];
                        let s: T = row
                            .iter()
                            .zip(&flat)
                            .map(|(&sg, &x)| if sg > 0 { x } else { -x })
                            .sum();
                        s * self.scale
                    })
                    .collect()
            }
        };
        Ok(ProxyVector { values, layer_norms })
    }
}
