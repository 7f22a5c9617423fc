//! Per-round geometry and performance diagnostics.

use thiserror::Error;

use crate::linalg::{cosine, norm, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0})")]
    NotSymmetric(f64),
    #[error("mask selects no nodes")]
    EmptyMask,
    #[error("length mismatch: {0}")]
    Shape(String),
}

/// Pairwise cosine matrix of client updates. Zero-norm updates get an all-zero
/// row and column (diagonal included) and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Coherence<T> {
    pub gamma: Matrix<T>,
    pub zero_norm: Vec<bool>,
}

impl<T: Scalar> Coherence<T> {
    /// Mean of the off-diagonal entries over pairs of nonzero updates; 0 if there are none.
    pub fn mean_off_diagonal(&self) -> T {
        let k = self.gamma.rows();
        let mut sum = T::zero();
        let mut count = 0usize;
        for i in 0..k {
            for j in i + 1..k {
                if !self.zero_norm[i] && !self.zero_norm[j] {
                    sum += self.gamma[(i, j)];
                    count += 1;
                }
            }
        }
        if count == 0 {
            T::zero()
        } else {
            sum / T::from_usize_lossy(count)
        }
    }
}

pub fn pairwise_coherence<T: Scalar>(updates: &[&[T]]) -> Coherence<T> {
    let k = updates.len();
    let zero_norm: Vec<bool> = updates.iter().map(|u| norm(u) == T::zero()).collect();
    let mut gamma = Matrix::zeros(k, k);
    for i in 0..k {
        if zero_norm[i] {
            continue;
        }
        gamma[(i, i)] = T::one();
        for j in i + 1..k {
            let c = cosine(updates[i], updates[j]).unwrap_or(T::zero());
            gamma[(i, j)] = c;
            gamma[(j, i)] = c;
        }
    }
    Coherence { gamma, zero_norm }
}

/// Mean directional alignment of proxies with a reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment<T> {
    pub value: T,
    /// Set when the reference is zero or every proxy is zero; `value` is then 0.
    pub degenerate: bool,
}

/// Mean of `cos(z_k, r)` over the nonzero proxies.
pub fn mean_alignment<T: Scalar>(proxies: &[&[T]], reference: &[T]) -> Alignment<T> {
    let cosines: Vec<T> = proxies.iter().filter_map(|z| cosine(z, reference)).collect();
    if cosines.is_empty() {
        return Alignment {
            value: T::zero(),
            degenerate: true,
        };
    }
    let n = T::from_usize_lossy(cosines.len());
    Alignment {
        value: cosines.into_iter().sum::<T>() / n,
        degenerate: false,
    }
}

/// Euclidean norm of the applied global update.
pub fn sensitivity_norm<T: Scalar>(global_delta: &[T]) -> T {
    norm(global_delta)
}

/// Fraction of masked nodes whose arg-max logit equals the label. Ties resolve
/// to the lowest class index.
pub fn accuracy<T: Scalar>(logits: &Matrix<T>, labels: &[usize], mask: &[bool]) -> Result<f64, MetricsError> {
    let (correct, total) = correct_count(logits, labels, mask)?;
    Ok(correct as f64 / total as f64)
}

/// `(correct, masked)` counts behind [`accuracy`].
pub fn correct_count<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    mask: &[bool],
) -> Result<(usize, usize), MetricsError> {
    if labels.len() != logits.rows() || mask.len() != logits.rows() {
        return Err(MetricsError::Shape("labels/mask vs logits".into()));
    }
    let mut correct = 0;
    let mut total = 0;
    for i in (0..logits.rows()).filter(|&i| mask[i]) {
        total += 1;
        let row = logits.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok((correct, total))
}

const JACOBI_OFF_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen<T> {
    /// Descending.
    pub values: Vec<T>,
    /// Column `i` is the unit eigenvector of `values[i]`.
    pub vectors: Matrix<T>,
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls below
/// `1e-12 · max(1, ‖T‖_F)`. The input is symmetrized as `(T + Tᵀ)/2` after
/// checking it is symmetric to within `1e-9`.
pub fn symmetric_eigen<T: Scalar>(t: &Matrix<T>) -> Result<SymmetricEigen<T>, MetricsError> {
    if !t.is_square() {
        return Err(MetricsError::NotSquare(t.rows(), t.cols()));
    }
    let n = t.rows();
    let tt = t.transpose();
    let asym = t.max_abs_diff(&tt).to_f64_lossy();
    if asym > SYMMETRY_TOL {
        return Err(MetricsError::NotSymmetric(asym));
    }
    let half = T::lit(0.5);
    let mut a = Matrix::from_fn(n, n, |i, j| half * (t[(i, j)] + tt[(i, j)]));
    let mut v = Matrix::identity(n);
    let tol = T::lit(JACOBI_OFF_TOL) * a.frobenius().max(T::one());

    let off = |a: &Matrix<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) < tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let tan = tau.signum() / (tau.abs() + (T::one() + tau * tau).sqrt());
                let c = T::one() / (T::one() + tan * tan).sqrt();
                let s = tan * c;
                for k in 0..n {
                    let (x, y) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * x - s * y;
                    a[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * x - s * y;
                    a[(q, k)] = s * x + c * y;
                }
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                for k in 0..n {
                    let (x, y) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).expect("finite eigenvalues"));
    Ok(SymmetricEigen {
        values: order.iter().map(|&i| a[(i, i)]).collect(),
        vectors: Matrix::from_fn(n, n, |r, c| v[(r, order[c])]),
    })
}

/// Eigenvalues of a symmetric operator, descending.
pub fn operator_spectrum<T: Scalar>(t: &Matrix<T>) -> Result<Vec<T>, MetricsError> {
    symmetric_eigen(t).map(|e| e.values)
}

/// Diagnostics of one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub client_accuracies: Vec<(usize, f64)>,
    pub gamma: Matrix<f64>,
    pub gamma_mean: f64,
    pub alignment: f64,
    pub alignment_degenerate: bool,
    pub sensitivity: f64,
    pub spectrum: Option<Vec<f64>>,
    pub clip_rate: f64,
    pub atten_rate: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn coherence_examples() {
        let c = pairwise_coherence::<f64>(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(c.gamma[(0, 1)], 0.0);
        let c = pairwise_coherence::<f64>(&[&[1.0, 1.0], &[2.0, 2.0]]);
        assert_eq!(c.gamma[(0, 1)], 1.0);
        let c = pairwise_coherence::<f64>(&[&[1.0], &[-1.0]]);
        assert_eq!(c.gamma[(0, 1)], -1.0);
        assert_eq!(c.mean_off_diagonal(), -1.0);
    }

    #[test]
    fn zero_updates_are_flagged() {
        let c = pairwise_coherence::<f64>(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(c.zero_norm, vec![true, false, false]);
        assert_eq!(c.gamma[(0, 0)], 0.0);
        assert_eq!(c.gamma[(0, 1)], 0.0);
        assert_eq!(c.gamma[(1, 1)], 1.0);
    }

    #[test]
    fn alignment_examples() {
        let r = [2.0, 0.0];
        assert_eq!(mean_alignment::<f64>(&[&r, &r], &r).value, 1.0);
        assert_eq!(mean_alignment::<f64>(&[&[2.0, 0.0], &[-2.0, 0.0]], &r).value, 0.0);
        let at = |deg: f64| {
            let t = deg.to_radians();
            vec![t.cos(), t.sin()]
        };
        let (a, b, c) = (at(0.0), at(60.0), at(90.0));
        let g = mean_alignment::<f64>(&[&a, &b, &c], &r);
        assert!((g.value - 0.5).abs() < 1e-12);
        assert!(mean_alignment::<f64>(&[&a], &[0.0, 0.0]).degenerate);
    }

    #[test]
    fn sensitivity_examples() {
        assert_eq!(sensitivity_norm::<f64>(&[0.0, 0.0]), 0.0);
        assert_eq!(sensitivity_norm::<f64>(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn accuracy_examples_and_tie_rule() {
        let labels = [0, 2, 1, 1];
        let perfect = Matrix::from_fn(4, 3, |i, j| if j == labels[i] { 1.0 } else { 0.0 });
        assert_eq!(accuracy::<f64>(&perfect, &labels, &[true; 4]).unwrap(), 1.0);
        let flat = Matrix::<f64>::zeros(4, 3);
        let labels = [0, 2, 0, 1];
        assert_eq!(accuracy(&flat, &labels, &[true; 4]).unwrap(), 0.5);
        assert_eq!(accuracy(&flat, &labels, &[false; 4]), Err(MetricsError::EmptyMask));
    }

    #[test]
    fn accuracy_matches_brute_force_count() {
        let mut rng = rng_from_seed(17);
        let logits = Matrix::from_fn(10, 4, |_, _| rng.random_range(-1.0..1.0f64));
        let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..4)).collect();
        let mask: Vec<bool> = (0..10).map(|i| i % 3 != 1).collect();
        let mut hits = 0;
        let mut n = 0;
        for i in 0..10 {
            if !mask[i] {
                continue;
            }
            n += 1;
            let row = logits.row(i);
            let top = (0..4).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hits += usize::from(top == labels[i]);
        }
        assert_eq!(accuracy(&logits, &labels, &mask).unwrap(), hits as f64 / n as f64);
    }

    #[test]
    fn spectrum_of_all_ones_third() {
        let j = Matrix::from_fn(3, 3, |_, _| 1.0f64 / 3.0);
        let ev = operator_spectrum(&j).unwrap();
        for (a, b) in ev.iter().zip([1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn spectrum_rejects_bad_input() {
        assert_eq!(
            operator_spectrum(&Matrix::<f64>::zeros(2, 3)),
            Err(MetricsError::NotSquare(2, 3))
        );
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(operator_spectrum(&m), Err(MetricsError::NotSymmetric(_))));
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let mut rng = rng_from_seed(99);
        for _ in 0..20 {
            let b = Matrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0f64));
            let a = Matrix::from_fn(6, 6, |i, j| b[(i, j)] + b[(j, i)]);
            let e = symmetric_eigen(&a).unwrap();
            let lam = Matrix::from_fn(6, 6, |i, j| if i == j { e.values[i] } else { 0.0 });
            let rebuilt = e.vectors.matmul(&lam).matmul(&e.vectors.transpose());
            let mut diff = rebuilt.clone();
            for (d, &x) in diff.as_mut_slice().iter_mut().zip(a.as_slice()) {
                *d -= x;
            }
            assert!(diff.frobenius() < 1e-8);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
