use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetworkInstance;
use crate::data::WindowSet;
use crate::error::{config_err, Result};
use crate::reward::rmse;
use crate::tensor::{clip_global_norm, Adam, AdamState, Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Epochs without improvement of the first validation RMSE before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Train on a fixed random subset of at most this many windows.
    pub max_train_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            patience: 5,
            seed: 0,
            max_train_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(config_err!("epochs, batch_size and patience must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(config_err!("learning_rate and clip_norm must be positive"));
        }
        if self.max_train_windows == Some(0) {
            return Err(config_err!("max_train_windows must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// RMSE on each validation set, in the order given; empty when failed.
    pub val_rmse: Vec<f64>,
    pub train_rmse: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Reason the model was marked failed (non-finite loss or forecasts).
    pub failure: Option<String>,
}

impl TrainOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    fn fail(epochs_run: usize, reason: String) -> TrainOutcome {
        TrainOutcome {
            val_rmse: Vec::new(),
            train_rmse: f64::NAN,
            epochs_run,
            best_epoch: 0,
            failure: Some(reason),
        }
    }
}

/// RMSE of `net` over every element of `windows`.
pub fn evaluate_rmse(net: &NetworkInstance, windows: &WindowSet) -> Result<f64> {
    let p = net.predict(&windows.inputs)?;
    rmse(p.data(), windows.targets.data())
}

/// Minimize MSE on `train` with Adam and gradient clipping; early stopping
/// and model selection use the first validation set. Non-finite losses mark
/// the model failed instead of returning an error.
pub fn train_child(net: &mut NetworkInstance, train: &WindowSet, vals: &[&WindowSet], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool: Vec<usize> = (0..train.len()).collect();
    if let Some(max) = cfg.max_train_windows {
        if pool.len() > max {
            pool.shuffle(&mut rng);
            pool.truncate(max);
            pool.sort_unstable();
        }
    }
    let used = train.select(&pool);
    let opt = Adam::new(cfg.learning_rate);
    let mut state = AdamState::new(&net.params);
    let mut best: Option<(f64, Vec<Tensor>, usize)> = None;
    let mut stagnant = 0;
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..used.len()).collect();
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let p = net.bind(&mut g);
            let x = g.constant(used.inputs.gather_rows(batch));
            let y = g.constant(used.targets.gather_rows(batch));
            let pred = net.forward(&mut g, &p, x, true, &mut rng)?;
            let loss = g.mse(pred, y)?;
            let lv = g.scalar_value(loss);
            if !lv.is_finite() {
                return Ok(TrainOutcome::fail(epochs_run, format!("non-finite training loss in epoch {epochs_run}")));
            }
            g.backward(loss)?;
            let mut grads: Vec<Vec<f64>> = p
                .iter()
                .zip(&net.params)
                .map(|(v, t)| g.grad_slice(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
                .collect();
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Ok(TrainOutcome::fail(epochs_run, format!("non-finite gradient in epoch {epochs_run}")));
            }
            let refs: Vec<Option<&[f64]>> = grads.iter().map(|g| Some(g.as_slice())).collect();
            opt.step(&mut net.params, &refs, &mut state)?;
        }
        let Some(monitor) = vals.first() else { continue };
        let score = evaluate_rmse(net, monitor)?;
        if !score.is_finite() {
            return Ok(TrainOutcome::fail(epochs_run, format!("non-finite validation RMSE in epoch {epochs_run}")));
        }
        if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
            best = Some((score, net.params.clone(), epochs_run));
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= cfg.patience {
                break;
            }
        }
    }
    let mut best_epoch = epochs_run;
    if let Some((_, params, e)) = best {
        net.params = params;
        best_epoch = e;
    }
    let mut val_rmse = Vec::with_capacity(vals.len());
    for v in vals {
        let r = evaluate_rmse(net, v)?;
        if !r.is_finite() {
            return Ok(TrainOutcome::fail(epochs_run, "non-finite validation RMSE".into()));
        }
        val_rmse.push(r);
    }
    let train_rmse = evaluate_rmse(net, &used)?;
    Ok(TrainOutcome {
        val_rmse,
        train_rmse,
        epochs_run,
        best_epoch,
        failure: None,
    })
}
