use std::collections::VecDeque;

use crate::linalg::{axpy, dot, norm};
use crate::scalar::Scalar;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 500;
/// Directions whose squared singular value falls below this fraction of the
/// leading one are treated as absent.
const RANK_TOL: f64 = 1e-20;

/// Running geometric reference: an EMA of aggregated proxies, a sliding window
/// of recent proxies and an orthonormal basis of the window's dominant directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricReference<T> {
    pub r: Vec<T>,
    window: VecDeque<Vec<T>>,
    capacity: usize,
    subspace_dim: usize,
    basis: Vec<Vec<T>>,
}

impl<T: Scalar> GeometricReference<T> {
    /// Zero reference of length `dim`; a `subspace_dim` of 0 disables the basis.
    pub fn new(dim: usize, window: usize, subspace_dim: usize) -> Self {
        Self {
            r: vec![T::zero(); dim],
            window: VecDeque::with_capacity(window),
            capacity: window,
            subspace_dim,
            basis: Vec::new(),
        }
    }

    pub fn basis(&self) -> &[Vec<T>] {
        &self.basis
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn norm(&self) -> T {
        norm(&self.r)
    }

    /// `r ← α r + (1 − α) Σ w_k z_k`, then pushes `window_proxies` and refreshes the basis.
    ///
    /// The EMA and the window take separate inputs so that the window can keep
    /// raw proxies while the EMA is fed either raw or regulated ones.
    pub fn update(&mut self, ema_proxies: &[&[T]], weights: &[T], alpha: T, window_proxies: &[&[T]]) {
        debug_assert_eq!(ema_proxies.len(), weights.len());
        for v in self.r.iter_mut() {
            *v *= alpha;
        }
        let gain = T::one() - alpha;
        for (z, &w) in ema_proxies.iter().zip(weights) {
            axpy(gain * w, z, &mut self.r);
        }
        if self.capacity > 0 {
            for z in window_proxies {
                if self.window.len() == self.capacity {
                    self.window.pop_front();
                }
                self.window.push_back(z.to_vec());
            }
        }
        self.refresh_basis();
    }

    fn refresh_basis(&mut self) {
        self.basis.clear();
        if self.subspace_dim == 0 || self.window.len() < self.subspace_dim {
            return;
        }
        self.basis = dominant_directions(self.window.make_contiguous(), self.subspace_dim);
    }
}

fn orthogonalize<T: Scalar>(v: &mut [T], basis: &[Vec<T>]) {
    // Two Gram–Schmidt passes keep orthogonality near machine precision.
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            axpy(-c, b, v);
        }
    }
}

/// `Σ_j p_j (p_jᵀ v)`
fn gram_apply<T: Scalar>(cols: &[Vec<T>], v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    for p in cols {
        axpy(dot(p, v), p, &mut out);
    }
    out
}

/// Up to `m` leading left singular vectors of the matrix whose columns are
/// `cols`, by power iteration on `P Pᵀ` with deflation against the directions
/// already found. Stops early when the remaining spectrum is numerically zero.
pub fn dominant_directions<T: Scalar>(cols: &[Vec<T>], m: usize) -> Vec<Vec<T>> {
    let Some(dim) = cols.first().map(Vec::len) else {
        return Vec::new();
    };
    let tol = T::lit(POWER_TOL);
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut lead = T::zero();
    for _ in 0..m.min(dim) {
        // Start from the window column with the largest residual.
        let mut best: Option<(T, Vec<T>)> = None;
        for c in cols {
            let mut v = c.clone();
            orthogonalize(&mut v, &basis);
            let n = norm(&v);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, v));
            }
        }
        let Some((n0, mut v)) = best else { break };
        if n0 == T::zero() {
            break;
        }
        v.iter_mut().for_each(|x| *x /= n0);
        let mut sigma2 = T::zero();
        for _ in 0..POWER_MAX_ITERS {
            let mut w = gram_apply(cols, &v);
            orthogonalize(&mut w, &basis);
            let n = norm(&w);
            if n == T::zero() {
                sigma2 = T::zero();
                break;
            }
            w.iter_mut().for_each(|x| *x /= n);
            sigma2 = n;
            let diff = v.iter().zip(&w).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
            v = w;
            if diff < tol {
                break;
            }
        }
        if basis.is_empty() {
            lead = sigma2;
        }
        if sigma2 <= lead * T::lit(RANK_TOL) || sigma2 == T::zero() {
            break;
        }
        orthogonalize(&mut v, &basis);
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_update_from_zero_is_one_minus_alpha_times_proxy() {
        let mut r = GeometricReference::<f64>::new(3, 4, 0);
        let z = [0.2f64, -0.4, 1.0];
        r.update(&[&z], &[1.0], 0.9, &[&z]);
        for (a, b) in r.r.iter().zip(z) {
            assert!((a - 0.1 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn cancelling_proxies_only_decay_the_reference() {
        let mut r = GeometricReference::<f64>::new(1, 4, 0);
        r.r = vec![0.6];
        r.update(&[&[1.0], &[-1.0]], &[0.5, 0.5], 0.9, &[]);
        assert!((r.r[0] - 0.54).abs() < 1e-15);
    }

    #[test]
    fn identical_window_has_rank_one_basis() {
        let mut r = GeometricReference::<f64>::new(3, 8, 3);
        let z = [3.0, 0.0, 4.0];
        r.update(&[&z, &z, &z], &[1.0 / 3.0; 3], 0.5, &[&z, &z, &z]);
        assert_eq!(r.basis().len(), 1);
        let b = &r.basis()[0];
        assert!((b[0].abs() - 0.6).abs() < 1e-12 && (b[2].abs() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn basis_empty_until_window_holds_m_vectors() {
        let mut r = GeometricReference::<f64>::new(2, 8, 3);
        r.update(&[], &[], 0.9, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(r.basis().is_empty());
        r.update(&[], &[], 0.9, &[&[1.0, 1.0]]);
        assert_eq!(r.basis().len(), 2);
    }

    #[test]
    fn window_is_bounded() {
        let mut r = GeometricReference::<f64>::new(1, 3, 1);
        for i in 0..10 {
            r.update(&[], &[], 0.9, &[&[i as f64]]);
        }
        assert_eq!(r.window_len(), 3);
    }

    #[test]
    fn dominant_directions_are_orthonormal_and_ordered() {
        let cols: Vec<Vec<f64>> = (0..12)
            .map(|j| {
                let t = j as f64;
                vec![5.0 * t.cos(), 2.0 * t.sin(), 0.5 * (2.0 * t).cos(), 0.1 * t.sin() * t.cos(), 0.0]
            })
            .collect();
        let b = dominant_directions(&cols, 4);
        assert_eq!(b.len(), 4);
        for i in 0..4 {
            for j in 0..4 {
                let d = dot(&b[i], &b[j]);
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-10, "({i},{j}) = {d}");
            }
        }
        // Column scales make the axes the singular directions.
        assert!(b[0][0].abs() > 0.99);
        assert!(b[1][1].abs() > 0.99);
    }
}
