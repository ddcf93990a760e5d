//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.
//!
//! The engine covers exactly what the forecasting blocks and the recurrent
//! controller need: broadcasting elementwise arithmetic, row-major linear
//! maps, axis permutes, temporal padding/pooling/convolution, patch
//! unfolding, a fused LSTM layer and a row-wise log-softmax.

mod activation;
mod gradcheck;
mod graph;
mod kernels;
mod lstm;
mod optim;

pub use activation::ActivationKind;
pub use gradcheck::{check_gradients, GradCheck, REL_FLOOR};
pub use graph::{Graph, Var};
pub use optim::{clip_global_norm, Adam, AdamState};

use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(usage_err!(
                "shape {:?} holds {} values but {} were supplied",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(usage_err!(
                "cannot reshape {:?} into {:?}",
                self.shape,
                shape
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Copy of the rows `start..start+len` along axis 0.
    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor {
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor {
            shape,
            data: self.data[start * row..(start + len) * row].to_vec(),
        }
    }

    /// Gather rows along axis 0.
    pub fn gather_rows(&self, rows: &[usize]) -> Tensor {
        let row: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            data.extend_from_slice(&self.data[r * row..(r + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor { shape, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
