use crate::graph::NormalizedAdjacency;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::{Activation, FlatVector, ModelError, ParameterSet};

/// Cached intermediates of one forward pass.
///
/// For layer `l`: `propagated[l] = Ã H^l`, `pre[l] = Ã H^l W_l (+ b_l)`, and
/// `hidden[l + 1] = σ(pre[l])` except for the last layer, whose output is the
/// raw logits. `hidden[0]` is the input feature matrix.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub hidden: Vec<Matrix<T>>,
    pub propagated: Vec<Matrix<T>>,
    pub pre: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn logits(&self) -> &Matrix<T> {
        self.hidden.last().expect("at least the input")
    }
}

pub fn forward<T: Scalar>(
    params: &ParameterSet<T>,
    adj: &NormalizedAdjacency<T>,
    x: &Matrix<T>,
) -> Result<ForwardPass<T>, ModelError> {
    params.validate()?;
    if adj.n_nodes() != x.rows() {
        return Err(ModelError::Shape(format!(
            "adjacency has {} nodes, features have {} rows",
            adj.n_nodes(),
            x.rows()
        )));
    }
    if params.layers[0].weight.rows() != x.cols() {
        return Err(ModelError::Shape(format!(
            "first layer expects {} input features, got {}",
            params.layers[0].weight.rows(),
            x.cols()
        )));
    }
    let depth = params.layers.len();
    let mut pass = ForwardPass {
        hidden: vec![x.clone()],
        propagated: Vec::with_capacity(depth),
        pre: Vec::with_capacity(depth),
    };
    for (l, layer) in params.layers.iter().enumerate() {
        let prop = adj.propagate(&pass.hidden[l]);
        let mut z = prop.matmul(&layer.weight);
        if let Some(b) = &layer.bias {
            for i in 0..z.rows() {
                for (v, &bj) in z.row_mut(i).iter_mut().zip(b) {
                    *v += bj;
                }
            }
        }
        let out = if l + 1 < depth {
            z.map(|v| params.activation.apply(v))
        } else {
            z.clone()
        };
        pass.propagated.push(prop);
        pass.pre.push(z);
        pass.hidden.push(out);
    }
    Ok(pass)
}

fn check_targets<T: Scalar>(logits: &Matrix<T>, labels: &[usize], mask: &[bool]) -> Result<usize, ModelError> {
    if labels.len() != logits.rows() || mask.len() != logits.rows() {
        return Err(ModelError::Shape("labels/mask length differs from logit rows".into()));
    }
    let mut count = 0;
    for (node, (&y, &m)) in labels.iter().zip(mask).enumerate() {
        if m {
            if y >= logits.cols() {
                return Err(ModelError::LabelOutOfRange {
                    node,
                    label: y,
                    classes: logits.cols(),
                });
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::EmptyMask);
    }
    Ok(count)
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

/// Mean softmax cross-entropy over the masked nodes.
pub fn masked_cross_entropy<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    mask: &[bool],
) -> Result<T, ModelError> {
    let count = check_targets(logits, labels, mask)?;
    let mut total = T::zero();
    for i in (0..logits.rows()).filter(|&i| mask[i]) {
        let row = logits.row(i);
        total += log_sum_exp(row) - row[labels[i]];
    }
    Ok(total / T::from_usize_lossy(count))
}

#[derive(Debug, Clone)]
pub struct LossAndGradient<T> {
    /// Cross-entropy plus the proximal penalty, if any.
    pub loss: T,
    pub grad: ParameterSet<T>,
    pub pass: ForwardPass<T>,
}

/// Analytic gradient of `masked_cross_entropy + (mu/2)·‖θ − center‖²`.
///
/// The proximal term covers exactly the layers in `prox_center`'s layout.
pub fn gradient<T: Scalar>(
    params: &ParameterSet<T>,
    adj: &NormalizedAdjacency<T>,
    x: &Matrix<T>,
    labels: &[usize],
    mask: &[bool],
    prox: Option<(&FlatVector<T>, T)>,
) -> Result<LossAndGradient<T>, ModelError> {
    let pass = forward(params, adj, x)?;
    let logits = pass.logits();
    let count = check_targets(logits, labels, mask)?;
    let inv = T::one() / T::from_usize_lossy(count);

    let mut loss = T::zero();
    let mut dz = Matrix::zeros(logits.rows(), logits.cols());
    for i in (0..logits.rows()).filter(|&i| mask[i]) {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        loss += lse - row[labels[i]];
        for (j, d) in dz.row_mut(i).iter_mut().enumerate() {
            *d = (row[j] - lse).exp() * inv;
        }
        dz[(i, labels[i])] -= inv;
    }
    loss *= inv;

    let mut grad = params.zeros_like();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        grad.layers[l].weight = pass.propagated[l].t_matmul(&dz);
        if let Some(gb) = grad.layers[l].bias.as_mut() {
            for i in 0..dz.rows() {
                for (g, &d) in gb.iter_mut().zip(dz.row(i)) {
                    *g += d;
                }
            }
        }
        if l > 0 {
            // Ã is symmetric, so Ãᵀ(dZ Wᵀ) = Ã(dZ Wᵀ).
            let dh = adj.propagate(&dz.matmul_t(&layer.weight));
            let pre = &pass.pre[l - 1];
            dz = Matrix::from_fn(dh.rows(), dh.cols(), |i, j| {
                dh[(i, j)] * params.activation.derivative(pre[(i, j)])
            });
        }
    }

    if let Some((center, mu)) = prox {
        if mu < T::zero() {
            return Err(ModelError::InvalidConfig("mu must be non-negative".into()));
        }
        if center.values.len() != center.layout.len() {
            return Err(ModelError::Layout("prox center length".into()));
        }
        let mut sq = T::zero();
        for (slot, range) in center.layout.slots.iter().zip(center.layout.blocks()) {
            let p = params
                .layers
                .get(slot.layer)
                .filter(|p| p.weight.shape() == (slot.rows, slot.cols) && p.bias.is_some() == slot.bias)
                .ok_or_else(|| ModelError::Layout(format!("prox center layer {} mismatch", slot.layer)))?;
            let g = &mut grad.layers[slot.layer];
            let own = p.weight.as_slice().iter().chain(p.bias.iter().flatten());
            let slots = g.weight.as_mut_slice().iter_mut().chain(g.bias.iter_mut().flatten());
            for ((&w, gw), &c) in own.zip(slots).zip(&center.values[range]) {
                let d = w - c;
                sq += d * d;
                *gw += mu * d;
            }
        }
        loss += mu * sq / T::lit(2.0);
    }

    Ok(LossAndGradient { loss, grad, pass })
}

/// Operator `T = Ã W` induced by a bias-free one-layer linear model with identity
/// features. A 1×1 weight scales `Ã`; a square weight whose side equals the node
/// count is multiplied on the right.
pub fn induced_operator<T: Scalar>(
    params: &ParameterSet<T>,
    adj: &NormalizedAdjacency<T>,
) -> Result<Matrix<T>, ModelError> {
    if params.layers.len() != 1 {
        return Err(ModelError::Unsupported(format!(
            "{}-layer model has no closed-form operator",
            params.layers.len()
        )));
    }
    if params.activation != Activation::Identity {
        return Err(ModelError::Unsupported("nonlinear activation".into()));
    }
    let layer = &params.layers[0];
    if layer.bias.is_some() {
        return Err(ModelError::Unsupported("affine layer".into()));
    }
    let w = &layer.weight;
    let a = adj.to_dense();
    if w.shape() == (1, 1) {
        Ok(a.scale(w[(0, 0)]))
    } else if w.is_square() && w.rows() == adj.n_nodes() {
        Ok(a.matmul(w))
    } else {
        Err(ModelError::Unsupported(format!(
            "weight of shape {:?} does not induce a node operator",
            w.shape()
        )))
    }
}
