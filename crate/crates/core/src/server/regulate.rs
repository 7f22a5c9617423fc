//! The three per-client regulation steps, applied in proxy space.

use std::ops::Range;

use crate::linalg::{dot, norm};
use crate::scalar::Scalar;

/// Keeps `z` if it does not oppose `reference`, otherwise scales it by `beta`.
/// Returns the regulated proxy and the factor applied (1 or `beta`).
pub fn align_regulate<T: Scalar>(z: &[T], reference: &[T], beta: T) -> (Vec<T>, T) {
    if dot(z, reference) >= T::zero() {
        (z.to_vec(), T::one())
    } else {
        (z.iter().map(|&v| beta * v).collect(), beta)
    }
}

/// Orthogonal projection onto `span(basis)` and the per-block retention
/// `‖projected block‖ / ‖block‖`, clamped to `[0, 1]` (1 for a zero block).
///
/// An empty basis is the identity with retention 1. With `blocks = None` (a
/// reduced proxy) a single whole-vector retention is reported for each of
/// `n_layers` layers.
pub fn subspace_project<T: Scalar>(
    z: &[T],
    basis: &[Vec<T>],
    blocks: Option<&[Range<usize>]>,
    n_layers: usize,
) -> (Vec<T>, Vec<T>) {
    if basis.is_empty() {
        return (z.to_vec(), vec![T::one(); n_layers]);
    }
    let mut out = vec![T::zero(); z.len()];
    for b in basis {
        let c = dot(z, b);
        for (o, &bi) in out.iter_mut().zip(b) {
            *o += c * bi;
        }
    }
    let ratio = |r: Range<usize>| {
        let raw = norm(&z[r.clone()]);
        if raw == T::zero() {
            return T::one();
        }
        (norm(&out[r]) / raw).max(T::zero()).min(T::one())
    };
    let retention = match blocks {
        Some(bs) => bs.iter().cloned().map(ratio).collect(),
        None => vec![ratio(0..z.len()); n_layers],
    };
    (out, retention)
}

/// `z / max(1, ‖z‖/ε)` and the clip factor `min(1, ε/‖z‖)`.
pub fn sensitivity_normalize<T: Scalar>(z: &[T], epsilon: T) -> (Vec<T>, T) {
    let n = norm(z);
    if n <= epsilon || n == T::zero() {
        return (z.to_vec(), T::one());
    }
    let factor = epsilon / n;
    (z.iter().map(|&v| v * factor).collect(), factor)
}
