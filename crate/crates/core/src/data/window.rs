use crate::error::{data_err, Result};
use crate::tensor::Tensor;

/// All stride-1 (input, target) pairs of a range, with equal input and
/// output length.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// `(n, L, C)`
    pub inputs: Tensor,
    /// `(n, L, C)`
    pub targets: Tensor,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn length(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn select(&self, rows: &[usize]) -> WindowSet {
        WindowSet {
            inputs: self.inputs.gather_rows(rows),
            targets: self.targets.gather_rows(rows),
        }
    }
}

/// Number of windows a range of `len` points yields for input length `length`.
pub fn window_count(len: usize, length: usize) -> usize {
    (len + 1).saturating_sub(2 * length)
}

/// Slice a time x channel block into windows: input `t..t+L`, target `t+L..t+2L`.
pub fn windowize(values: &[f64], channels: usize, length: usize) -> Result<WindowSet> {
    let len = values.len() / channels;
    if length == 0 || len < 2 * length {
        return Err(data_err!("a range of {len} points is shorter than 2 x {length}"));
    }
    let n = window_count(len, length);
    let row = length * channels;
    let mut inputs = Vec::with_capacity(n * row);
    let mut targets = Vec::with_capacity(n * row);
    for t in 0..n {
        inputs.extend_from_slice(&values[t * channels..(t + length) * channels]);
        targets.extend_from_slice(&values[(t + length) * channels..(t + 2 * length) * channels]);
    }
    Ok(WindowSet {
        inputs: Tensor::new(vec![n, length, channels], inputs)?,
        targets: Tensor::new(vec![n, length, channels], targets)?,
    })
}
