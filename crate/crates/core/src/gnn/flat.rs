//! Canonical flat transport form of parameters: layers in order, each layer's
//! weight row-major followed by its bias.

use std::ops::Range;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::{Group, GroupFilter, Layer, ModelError, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutSlot {
    /// Index of the layer in the full parameter set.
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub bias: bool,
    pub group: Group,
}

impl LayoutSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols + if self.bias { self.cols } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    pub slots: Vec<LayoutSlot>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.slots.iter().map(LayoutSlot::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index range of each slot, in slot order.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.slots
            .iter()
            .map(|s| {
                let r = start..start + s.len();
                start = r.end;
                r
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatVector<T> {
    pub values: Vec<T>,
    pub layout: Layout,
}

impl<T: Scalar> FlatVector<T> {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![T::zero(); layout.len()],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Element-wise `self − other`; layouts must match.
    pub fn sub(&self, other: &Self) -> Result<Self, ModelError> {
        self.check_same(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn check_same(&self, other: &Self) -> Result<(), ModelError> {
        if self.layout != other.layout {
            return Err(ModelError::Layout("flat vectors have different layouts".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn layout(&self, filter: GroupFilter) -> Layout {
        Layout {
            slots: self
                .layers
                .iter()
                .enumerate()
                .filter(|(_, l)| filter.admits(l.group))
                .map(|(i, l)| LayoutSlot {
                    layer: i,
                    rows: l.weight.rows(),
                    cols: l.weight.cols(),
                    bias: l.bias.is_some(),
                    group: l.group,
                })
                .collect(),
        }
    }

    pub fn flatten(&self, filter: GroupFilter) -> FlatVector<T> {
        let layout = self.layout(filter);
        let mut values = Vec::with_capacity(layout.len());
        for slot in &layout.slots {
            let l = &self.layers[slot.layer];
            values.extend_from_slice(l.weight.as_slice());
            if let Some(b) = &l.bias {
                values.extend_from_slice(b);
            }
        }
        FlatVector { values, layout }
    }

    /// Rebuilds the layers described by `flat.layout`, in slot order.
    pub fn unflatten(flat: &FlatVector<T>, activation: super::Activation) -> Result<Self, ModelError> {
        if flat.values.len() != flat.layout.len() {
            return Err(ModelError::Layout(format!(
                "{} values for a layout of {}",
                flat.values.len(),
                flat.layout.len()
            )));
        }
        let layers = flat
            .layout
            .slots
            .iter()
            .zip(flat.layout.blocks())
            .map(|(slot, range)| {
                let chunk = &flat.values[range];
                let n_w = slot.rows * slot.cols;
                Layer {
                    weight: Matrix::from_vec(slot.rows, slot.cols, chunk[..n_w].to_vec())
                        .expect("slot length"),
                    bias: slot.bias.then(|| chunk[n_w..].to_vec()),
                    group: slot.group,
                }
            })
            .collect();
        Ok(Self::new(layers, activation))
    }

    /// Overwrites the layers named by `flat.layout` with its values.
    pub fn assign(&mut self, flat: &FlatVector<T>) -> Result<(), ModelError> {
        if flat.values.len() != flat.layout.len() {
            return Err(ModelError::Layout("value count does not match layout".into()));
        }
        for (slot, range) in flat.layout.slots.iter().zip(flat.layout.blocks()) {
            let layer = self
                .layers
                .get_mut(slot.layer)
                .ok_or_else(|| ModelError::Layout(format!("no layer {}", slot.layer)))?;
            if layer.weight.shape() != (slot.rows, slot.cols)
                || layer.bias.is_some() != slot.bias
                || layer.group != slot.group
            {
                return Err(ModelError::Layout(format!("layer {} shape differs", slot.layer)));
            }
            let chunk = &flat.values[range];
            let n_w = slot.rows * slot.cols;
            layer.weight.as_mut_slice().copy_from_slice(&chunk[..n_w]);
            if let Some(b) = layer.bias.as_mut() {
                b.copy_from_slice(&chunk[n_w..]);
            }
        }
        Ok(())
    }
}
