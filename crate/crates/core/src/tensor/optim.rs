use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{usage_err, Result};

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update. A missing gradient leaves its parameter
    /// and moments untouched.
    pub fn step(&self, params: &mut [Tensor], grads: &[Option<&[f64]>], state: &mut AdamState) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(usage_err!(
                "adam: {} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ));
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if g.len() != p.len() {
                return Err(usage_err!("adam: gradient {k} has {} values for {}", g.len(), p.len()));
            }
            let (m, v) = (&mut state.m[k], &mut state.v[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescale gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= c);
    }
    norm
}
