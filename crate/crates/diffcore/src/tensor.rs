use std::cell::OnceCell;

use crate::error::{DiffError, Result};

/// Dense row-major tensor with a same-shape gradient accumulator.
///
/// The accumulator is allocated on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: OnceCell<Vec<f64>>,
    requires_grad: bool,
}

impl DiffTensor {
    pub fn new(shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Self> {
        validate_shape("tensor", shape)?;
        if numel(shape) != values.len() {
            return Err(DiffError::LengthMismatch {
                shape: shape.to_vec(),
                len: values.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
            grad: OnceCell::new(),
            requires_grad,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; numel(shape)], false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad(&self) -> &[f64] {
        self.grad.get_or_init(|| vec![0.0; self.values.len()])
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f64] {
        self.grad();
        self.grad.get_mut().expect("initialized above")
    }

    pub(crate) fn accumulate(&mut self, delta: Vec<f64>) {
        debug_assert_eq!(delta.len(), self.values.len());
        match self.grad.get_mut() {
            Some(grad) => {
                for (g, d) in grad.iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            None => {
                let _ = self.grad.set(delta);
            }
        }
    }

    pub(crate) fn zero_grad(&mut self) {
        self.grad = OnceCell::new();
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn validate_shape(op: &'static str, shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(DiffError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "extents must be positive and rank at least 1".into(),
        });
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, axis extent, inner) strides.
pub(crate) fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(DiffError::AxisOutOfRange {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}
