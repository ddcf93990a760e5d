// Forward passes of the searchable blocks. Every block maps (B, L, C) to
// (B, L, C); parameters are referenced by index into the bound variable list.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::search_space::{ActivationGene, MergeOp};
use crate::tensor::{Graph, Var};

/// Apply a one- or two-component activation elementwise.
pub fn apply_gene(g: &mut Graph, gene: &ActivationGene, x: Var) -> Result<Var> {
    let a = g.activation(gene.component_a, x);
    let Some(kb) = gene.component_b.filter(|_| gene.merge != MergeOp::None) else {
        return Ok(a);
    };
    let b = g.activation(kb, x);
    match gene.merge {
        MergeOp::Add => g.add(a, b),
        MergeOp::Average => {
            let s = g.add(a, b)?;
            Ok(g.scale(s, 0.5))
        }
        MergeOp::Multiply => g.mul(a, b),
        MergeOp::None => unreachable!(),
    }
}

/// Number of patches and right padding for a sequence of `len` points.
pub fn patch_tiling(len: usize, patch_len: usize, stride: usize) -> Result<(usize, usize)> {
    if patch_len > len {
        return Err(config_err!("patch length {patch_len} exceeds sequence length {len}"));
    }
    if stride == 0 || patch_len == 0 {
        return Err(config_err!("patch length and stride must be positive"));
    }
    let patches = (len - patch_len).div_ceil(stride) + 1;
    let pad = (patches - 1) * stride + patch_len - len;
    Ok((patches, pad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockModule {
    Patching {
        patch_len: usize,
        stride: usize,
        patches: usize,
        pad: usize,
        hidden: usize,
        act: ActivationGene,
        dropout: f64,
        /// patch_len -> hidden
        w_patch: usize,
        b_patch: usize,
        /// patches * hidden -> L
        w_out: usize,
        b_out: usize,
    },
    Decomposition {
        kernel: usize,
        /// Depthwise filter and bias for the convolutional trend, if any.
        conv: Option<(usize, usize)>,
        act_trend: ActivationGene,
        act_seasonal: ActivationGene,
        dropout: f64,
        w_trend: usize,
        b_trend: usize,
        w_seasonal: usize,
        b_seasonal: usize,
    },
    Mixer {
        /// Number of interleaved subsequences (1 for the unfactorized mixer).
        factor: usize,
        hidden: usize,
        bottleneck: usize,
        act_temporal: ActivationGene,
        act_channel: ActivationGene,
        dropout: f64,
        w_t1: usize,
        b_t1: usize,
        w_t2: usize,
        b_t2: usize,
        w_c1: usize,
        b_c1: usize,
        w_c2: usize,
        b_c2: usize,
    },
}

impl BlockModule {
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &[Var],
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        match self {
            BlockModule::Patching {
                patch_len,
                stride,
                patches,
                pad,
                hidden,
                act,
                dropout,
                w_patch,
                b_patch,
                w_out,
                b_out,
            } => {
                let shape = g.shape(x).to_vec();
                let (b, c) = (shape[0], shape[2]);
                let xt = g.permute(x, &[0, 2, 1])?;
                let xp = if *pad > 0 { g.replication_pad(xt, 2, 0, *pad)? } else { xt };
                let u = g.unfold(xp, *patch_len, *stride)?;
                let h = g.linear(u, p[*w_patch], Some(p[*b_patch]))?;
                let h = apply_gene(g, act, h)?;
                let h = g.dropout(h, *dropout, training, rng)?;
                let flat = g.reshape(h, &[b, c, patches * hidden])?;
                let y = g.linear(flat, p[*w_out], Some(p[*b_out]))?;
                g.permute(y, &[0, 2, 1])
            }
            BlockModule::Decomposition {
                kernel,
                conv,
                act_trend,
                act_seasonal,
                dropout,
                w_trend,
                b_trend,
                w_seasonal,
                b_seasonal,
            } => {
                let trend = match conv {
                    Some((w, bias)) => g.conv1d(x, p[*w], p[*bias], *kernel)?,
                    None => g.avg_pool1d(x, 1, *kernel)?,
                };
                let seasonal = g.sub(x, trend)?;
                let tt = g.permute(trend, &[0, 2, 1])?;
                let st = g.permute(seasonal, &[0, 2, 1])?;
                let t = g.linear(tt, p[*w_trend], Some(p[*b_trend]))?;
                let t = apply_gene(g, act_trend, t)?;
                let t = g.dropout(t, *dropout, training, rng)?;
                let s = g.linear(st, p[*w_seasonal], Some(p[*b_seasonal]))?;
                let s = apply_gene(g, act_seasonal, s)?;
                let s = g.dropout(s, *dropout, training, rng)?;
                let y = g.add(s, t)?;
                g.permute(y, &[0, 2, 1])
            }
            BlockModule::Mixer {
                factor,
                act_temporal,
                act_channel,
                dropout,
                w_t1,
                b_t1,
                w_t2,
                b_t2,
                w_c1,
                b_c1,
                w_c2,
                b_c2,
                ..
            } => {
                let temporal = mixer_temporal(g, x, *factor, p[*w_t1], p[*b_t1], p[*w_t2], p[*b_t2], act_temporal, *dropout, training, rng)?;
                let r = g.add(x, temporal)?;
                let h = g.linear(r, p[*w_c1], Some(p[*b_c1]))?;
                let h = apply_gene(g, act_channel, h)?;
                let h = g.dropout(h, *dropout, training, rng)?;
                let ch = g.linear(h, p[*w_c2], Some(p[*b_c2]))?;
                g.add(r, ch)
            }
        }
    }
}

/// Temporal mixing stage: split the sequence into `factor` interleaved
/// subsequences, project each with the shared MLP, and interleave back.
#[allow(clippy::too_many_arguments)]
pub fn mixer_temporal<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    factor: usize,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    act: &ActivationGene,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (b, l, c) = (shape[0], shape[1], shape[2]);
    if factor == 0 || l % factor != 0 {
        return Err(config_err!("sequence length {l} is not divisible by mixer factor {factor}"));
    }
    // (B, L, C) -> (B, L/f, f, C) -> (B, C, f, L/f)
    let r = g.reshape(x, &[b, l / factor, factor, c])?;
    let sub = g.permute(r, &[0, 3, 2, 1])?;
    let h = g.linear(sub, w1, Some(b1))?;
    let h = apply_gene(g, act, h)?;
    let h = g.dropout(h, dropout, training, rng)?;
    let y = g.linear(h, w2, Some(b2))?;
    // back to (B, L/f, f, C) -> (B, L, C)
    let y = g.permute(y, &[0, 3, 2, 1])?;
    g.reshape(y, &[b, l, c])
}
