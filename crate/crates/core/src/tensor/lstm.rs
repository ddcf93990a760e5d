// Fused LSTM layer over a whole sequence.
//
// Gate order inside the 4H-wide projections is (input, forget, cell, output).
// The op output is (S + 1) x H: rows 0..S are the hidden states h_1..h_S and
// row S is the final cell state c_S, so one graph node carries everything a
// stacked controller needs.

use super::activation::sigmoid;
use super::kernels::{gemm, MatRef};

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    pub seq: usize,
    pub input: usize,
    pub hidden: usize,
    /// Post-nonlinearity gate values, S x 4H.
    gates: Vec<f64>,
    /// Cell states c_0..c_S, (S + 1) x H.
    cells: Vec<f64>,
}

pub(crate) struct LstmForward {
    pub output: Vec<f64>,
    pub cache: LstmCache,
}

pub(crate) fn forward(
    x: &[f64],
    h0: &[f64],
    c0: &[f64],
    wx: &[f64],
    wh: &[f64],
    bias: &[f64],
    seq: usize,
    input: usize,
    hidden: usize,
) -> LstmForward {
    let width = 4 * hidden;
    let mut z = vec![0.0; seq * width];
    for row in z.chunks_mut(width) {
        row.copy_from_slice(bias);
    }
    gemm(
        MatRef::new(x, seq, input),
        MatRef::new(wx, input, width),
        &mut z,
        1.0,
    );

    let mut gates = vec![0.0; seq * width];
    let mut cells = vec![0.0; (seq + 1) * hidden];
    cells[..hidden].copy_from_slice(c0);
    let mut output = vec![0.0; (seq + 1) * hidden];
    let mut h_prev = h0.to_vec();
    let mut rec = vec![0.0; width];
    for t in 0..seq {
        gemm(
            MatRef::new(&h_prev, 1, hidden),
            MatRef::new(wh, hidden, width),
            &mut rec,
            0.0,
        );
        let zt = &z[t * width..(t + 1) * width];
        let gt = &mut gates[t * width..(t + 1) * width];
        for k in 0..width {
            let pre = zt[k] + rec[k];
            gt[k] = if (2 * hidden..3 * hidden).contains(&k) {
                pre.tanh()
            } else {
                sigmoid(pre)
            };
        }
        let (prev_cells, next_cells) = cells.split_at_mut((t + 1) * hidden);
        let c_prev = &prev_cells[t * hidden..];
        let c_next = &mut next_cells[..hidden];
        let h_out = &mut output[t * hidden..(t + 1) * hidden];
        for j in 0..hidden {
            let (i, f, g, o) = (
                gt[j],
                gt[hidden + j],
                gt[2 * hidden + j],
                gt[3 * hidden + j],
            );
            let c = f * c_prev[j] + i * g;
            c_next[j] = c;
            h_out[j] = o * c.tanh();
        }
        h_prev.copy_from_slice(h_out);
    }
    output[seq * hidden..].copy_from_slice(&cells[seq * hidden..]);
    LstmForward {
        output,
        cache: LstmCache {
            seq,
            input,
            hidden,
            gates,
            cells,
        },
    }
}

/// Gradients of an LSTM layer. Parameter gradients are accumulated into the
/// supplied buffers; `None` skips an input that needs no gradient.
pub(crate) struct LstmGrads<'a> {
    pub x: Option<&'a mut [f64]>,
    pub h0: Option<&'a mut [f64]>,
    pub c0: Option<&'a mut [f64]>,
    pub wx: Option<&'a mut [f64]>,
    pub wh: Option<&'a mut [f64]>,
    pub bias: Option<&'a mut [f64]>,
}

pub(crate) fn backward(
    cache: &LstmCache,
    grad_out: &[f64],
    x: &[f64],
    h0: &[f64],
    output: &[f64],
    wx: &[f64],
    wh: &[f64],
    grads: LstmGrads<'_>,
) {
    let LstmCache {
        seq,
        input,
        hidden,
        ..
    } = *cache;
    let width = 4 * hidden;
    let mut dz = vec![0.0; seq * width];
    let mut dh_rec = vec![0.0; hidden];
    let mut dc_next = grad_out[seq * hidden..].to_vec();
    for t in (0..seq).rev() {
        let gt = &cache.gates[t * width..(t + 1) * width];
        let c_prev = &cache.cells[t * hidden..(t + 1) * hidden];
        let c_cur = &cache.cells[(t + 1) * hidden..(t + 2) * hidden];
        let gh = &grad_out[t * hidden..(t + 1) * hidden];
        let dzt = &mut dz[t * width..(t + 1) * width];
        for j in 0..hidden {
            let (i, f, g, o) = (
                gt[j],
                gt[hidden + j],
                gt[2 * hidden + j],
                gt[3 * hidden + j],
            );
            let dh = gh[j] + dh_rec[j];
            let tc = c_cur[j].tanh();
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * c_prev[j];
            dc_next[j] = dc * f;
            dzt[j] = d_i * i * (1.0 - i);
            dzt[hidden + j] = d_f * f * (1.0 - f);
            dzt[2 * hidden + j] = d_g * (1.0 - g * g);
            dzt[3 * hidden + j] = d_o * o * (1.0 - o);
        }
        // dh_{t-1} = dz_t . Wh^T
        gemm(
            MatRef::new(dzt, 1, width),
            MatRef::new(wh, hidden, width).t(),
            &mut dh_rec,
            0.0,
        );
    }

    if let Some(gh0) = grads.h0 {
        gh0.iter_mut().zip(&dh_rec).for_each(|(a, b)| *a += b);
    }
    if let Some(gc0) = grads.c0 {
        gc0.iter_mut().zip(&dc_next).for_each(|(a, b)| *a += b);
    }
    if let Some(gx) = grads.x {
        gemm(
            MatRef::new(&dz, seq, width),
            MatRef::new(wx, input, width).t(),
            gx,
            1.0,
        );
    }
    if let Some(gwx) = grads.wx {
        gemm(
            MatRef::new(x, seq, input).t(),
            MatRef::new(&dz, seq, width),
            gwx,
            1.0,
        );
    }
    if let Some(gwh) = grads.wh {
        let mut h_prev = Vec::with_capacity(seq * hidden);
        h_prev.extend_from_slice(h0);
        h_prev.extend_from_slice(&output[..(seq - 1) * hidden]);
        gemm(
            MatRef::new(&h_prev, seq, hidden).t(),
            MatRef::new(&dz, seq, width),
            gwh,
            1.0,
        );
    }
    if let Some(gb) = grads.bias {
        for row in dz.chunks(width) {
            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
}
