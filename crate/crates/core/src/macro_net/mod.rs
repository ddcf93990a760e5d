//! Genotype instantiation: RevIN, the block chain with skips, optional
//! prediction heads, training and inference.

mod blocks;
mod checkpoint;
mod train;

pub use blocks::{apply_gene, mixer_temporal, patch_tiling, BlockModule};
pub use checkpoint::NetworkCheckpoint;
pub use train::{evaluate_rmse, train_child, TrainConfig, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};
use crate::search_space::{validate, BlockKind, Genotype};
use crate::tensor::{Graph, Tensor, Var};

pub const REVIN_EPS: f64 = 1e-5;
/// Subsequence count of the factorized mixer.
pub const MIXER_FACTOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input_len: usize,
    pub horizon: usize,
    pub channels: usize,
}

impl Dims {
    pub fn square(len: usize, channels: usize) -> Dims {
        Dims {
            input_len: len,
            horizon: len,
            channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Multiplier on sampled hidden widths, for reduced-scale runs.
    pub hidden_scale: f64,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            hidden_scale: 1.0,
            seed: 0,
        }
    }
}

/// Width actually instantiated for a sampled hidden-unit count.
pub fn effective_hidden(units: u32, scale: f64) -> usize {
    ((units as f64 * scale).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    /// `(C, L, H)` per-channel temporal maps and their `(C, H)` biases.
    pub w_temporal: usize,
    pub b_temporal: usize,
    /// `(C, C)` channel map and bias.
    pub w_channel: usize,
    pub b_channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerModule {
    pub block: BlockModule,
    pub skip: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkInstance {
    pub genotype: Genotype,
    pub dims: Dims,
    pub options: BuildOptions,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub layers: Vec<LayerModule>,
    pub revin_gamma: usize,
    pub revin_beta: usize,
    pub heads: Option<Heads>,
}

struct ParamBuilder {
    names: Vec<String>,
    params: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.fixed(name, Tensor::new(shape.to_vec(), data).expect("param shape"))
    }

    fn fixed(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }
}

pub fn build_network(g: &Genotype, dims: Dims, options: BuildOptions) -> Result<NetworkInstance> {
    let violations = validate(g);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(config_err!("invalid genotype: {}", msg.join("; ")));
    }
    if dims.input_len != dims.horizon {
        return Err(config_err!("input length {} must equal horizon {}", dims.input_len, dims.horizon));
    }
    if dims.input_len == 0 || dims.channels == 0 {
        return Err(config_err!("dimensions must be positive"));
    }
    if !(options.hidden_scale > 0.0) {
        return Err(config_err!("hidden_scale must be positive"));
    }
    let (l, c) = (dims.input_len, dims.channels);
    let mut pb = ParamBuilder {
        names: Vec::new(),
        params: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(options.seed),
    };
    let revin_gamma = pb.fixed("revin.gamma".into(), Tensor::full(&[1, 1, c], 1.0));
    let revin_beta = pb.fixed("revin.beta".into(), Tensor::zeros(&[1, 1, c]));
    let mut layers = Vec::with_capacity(g.layers.len());
    for (i, gene) in g.layers.iter().enumerate() {
        let prefix = format!("layer{}.{}", i + 1, gene.block.name().to_ascii_lowercase());
        let name = |s: &str| format!("{prefix}.{s}");
        let hidden = gene.hidden_units.map(|h| effective_hidden(h, options.hidden_scale));
        let block = match gene.block {
            BlockKind::Patching => {
                let patch_len = gene.patch_length.unwrap() as usize;
                let stride = gene.stride.unwrap() as usize;
                let (patches, pad) = patch_tiling(l, patch_len, stride)?;
                let hidden = hidden.unwrap();
                BlockModule::Patching {
                    patch_len,
                    stride,
                    patches,
                    pad,
                    hidden,
                    act: gene.activation1,
                    dropout: gene.dropout,
                    w_patch: pb.uniform(name("w_patch"), &[patch_len, hidden], patch_len),
                    b_patch: pb.uniform(name("b_patch"), &[hidden], patch_len),
                    w_out: pb.uniform(name("w_out"), &[patches * hidden, l], patches * hidden),
                    b_out: pb.uniform(name("b_out"), &[l], patches * hidden),
                }
            }
            BlockKind::DnonlinearAvgpool | BlockKind::DnonlinearConv => {
                let kernel = gene.kernel_size.unwrap() as usize;
                if kernel > l {
                    return Err(config_err!("kernel size {kernel} exceeds sequence length {l}"));
                }
                let conv = (gene.block == BlockKind::DnonlinearConv).then(|| {
                    (
                        pb.uniform(name("w_conv"), &[c, kernel], kernel),
                        pb.uniform(name("b_conv"), &[c], kernel),
                    )
                });
                BlockModule::Decomposition {
                    kernel,
                    conv,
                    act_trend: gene.activation1,
                    act_seasonal: gene.activation2.expect("validated"),
                    dropout: gene.dropout,
                    w_trend: pb.uniform(name("w_trend"), &[l, l], l),
                    b_trend: pb.uniform(name("b_trend"), &[l], l),
                    w_seasonal: pb.uniform(name("w_seasonal"), &[l, l], l),
                    b_seasonal: pb.uniform(name("b_seasonal"), &[l], l),
                }
            }
            BlockKind::MTSMixer | BlockKind::TSMixer => {
                let factor = if gene.block == BlockKind::MTSMixer { MIXER_FACTOR } else { 1 };
                if l % factor != 0 {
                    return Err(config_err!("sequence length {l} is not divisible by mixer factor {factor}"));
                }
                let sub = l / factor;
                let hidden = hidden.unwrap();
                let bottleneck = (c / 2).max(1);
                BlockModule::Mixer {
                    factor,
                    hidden,
                    bottleneck,
                    act_temporal: gene.activation1,
                    act_channel: gene.activation2.expect("validated"),
                    dropout: gene.dropout,
                    w_t1: pb.uniform(name("w_t1"), &[sub, hidden], sub),
                    b_t1: pb.uniform(name("b_t1"), &[hidden], sub),
                    w_t2: pb.uniform(name("w_t2"), &[hidden, sub], hidden),
                    b_t2: pb.uniform(name("b_t2"), &[sub], hidden),
                    w_c1: pb.uniform(name("w_c1"), &[c, bottleneck], c),
                    b_c1: pb.uniform(name("b_c1"), &[bottleneck], c),
                    w_c2: pb.uniform(name("w_c2"), &[bottleneck, c], bottleneck),
                    b_c2: pb.uniform(name("b_c2"), &[c], bottleneck),
                }
            }
        };
        layers.push(LayerModule {
            block,
            skip: gene.skip.map(|s| s as usize),
        });
    }
    let heads = g.linear_projections.then(|| Heads {
        w_temporal: pb.uniform("head.w_temporal".into(), &[c, l, dims.horizon], l),
        b_temporal: pb.uniform("head.b_temporal".into(), &[c, dims.horizon], l),
        w_channel: pb.uniform("head.w_channel".into(), &[c, c], c),
        b_channel: pb.uniform("head.b_channel".into(), &[c], c),
    });
    Ok(NetworkInstance {
        genotype: g.clone(),
        dims,
        options,
        names: pb.names,
        params: pb.params,
        layers,
        revin_gamma,
        revin_beta,
        heads,
    })
}

/// Per-instance statistics captured by RevIN normalization.
pub struct RevinStats {
    pub mean: Var,
    pub std: Var,
}

/// Standardize each instance and channel over time, then apply the affine pair.
pub fn revin_normalize(g: &mut Graph, x: Var, gamma: Var, beta: Var) -> Result<(Var, RevinStats)> {
    let mean = g.mean_axis(x, 1)?;
    let centered = g.sub(x, mean)?;
    let sq = g.square(centered);
    let var = g.mean_axis(sq, 1)?;
    let var = g.add_scalar(var, REVIN_EPS);
    let std = g.sqrt(var);
    let z = g.div(centered, std)?;
    let z = g.mul(z, gamma)?;
    let z = g.add(z, beta)?;
    Ok((z, RevinStats { mean, std }))
}

pub fn revin_denormalize(g: &mut Graph, y: Var, gamma: Var, beta: Var, stats: &RevinStats) -> Result<Var> {
    let y = g.sub(y, beta)?;
    let gs = g.add_scalar(gamma, REVIN_EPS * REVIN_EPS);
    let y = g.div(y, gs)?;
    let y = g.mul(y, stats.std)?;
    g.add(y, stats.mean)
}

impl NetworkInstance {
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    /// Register all parameters as trainable leaves of `g`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Forward pass for a `(B, L, C)` input node.
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph, p: &[Var], x: Var, training: bool, rng: &mut R) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.dims.input_len || shape[2] != self.dims.channels {
            return Err(usage_err!(
                "input shape {:?} does not match (batch, {}, {})",
                shape,
                self.dims.input_len,
                self.dims.channels
            ));
        }
        let (gamma, beta) = (p[self.revin_gamma], p[self.revin_beta]);
        let (z0, stats) = revin_normalize(g, x, gamma, beta)?;
        let mut outs = vec![z0];
        for layer in &self.layers {
            let input = *outs.last().unwrap();
            let mut y = layer.block.forward(g, p, input, training, rng)?;
            if let Some(s) = layer.skip {
                let i = outs.len();
                y = g.add(y, outs[i - s])?;
            }
            outs.push(y);
        }
        let mut y = *outs.last().unwrap();
        if let Some(h) = &self.heads {
            y = self.apply_heads(g, p, y, h)?;
        }
        revin_denormalize(g, y, gamma, beta, &stats)
    }

    fn apply_heads(&self, g: &mut Graph, p: &[Var], y: Var, h: &Heads) -> Result<Var> {
        let b = g.shape(y)[0];
        let (l, hz, c) = (self.dims.input_len, self.dims.horizon, self.dims.channels);
        let yt = g.permute(y, &[0, 2, 1])?;
        let mut per_channel = Vec::with_capacity(c);
        for ch in 0..c {
            let xc = g.slice(yt, 1, ch, 1)?;
            let xc = g.reshape(xc, &[b, l])?;
            let w = g.slice(p[h.w_temporal], 0, ch, 1)?;
            let w = g.reshape(w, &[l, hz])?;
            let bias = g.slice(p[h.b_temporal], 0, ch, 1)?;
            let bias = g.reshape(bias, &[hz])?;
            let o = g.linear(xc, w, Some(bias))?;
            per_channel.push(g.reshape(o, &[b, 1, hz])?);
        }
        let t = g.concat(&per_channel, 1)?;
        let t = g.permute(t, &[0, 2, 1])?;
        g.linear(t, p[h.w_channel], Some(p[h.b_channel]))
    }

    /// Forecasts for `(B, L, C)` inputs in evaluation mode, one forward pass
    /// per chunk of `chunk` windows.
    pub fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        self.predict_chunked(inputs, 256)
    }

    pub fn predict_chunked(&self, inputs: &Tensor, chunk: usize) -> Result<Tensor> {
        let s = inputs.shape();
        if s.len() != 3 || s[1] != self.dims.input_len || s[2] != self.dims.channels {
            return Err(usage_err!(
                "input shape {:?} does not match (batch, {}, {})",
                s,
                self.dims.input_len,
                self.dims.channels
            ));
        }
        let n = s[0];
        let mut out = Vec::with_capacity(n * self.dims.horizon * self.dims.channels);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut start = 0;
        while start < n {
            let len = chunk.max(1).min(n - start);
            let mut g = Graph::new();
            let p: Vec<Var> = self.params.iter().map(|t| g.constant(t.clone())).collect();
            let x = g.constant(inputs.slice_rows(start, len));
            let y = self.forward(&mut g, &p, x, false, &mut rng)?;
            out.extend_from_slice(g.value(y).data());
            start += len;
        }
        Tensor::new(vec![n, self.dims.horizon, self.dims.channels], out)
    }
}

#[cfg(test)]
mod tests;
