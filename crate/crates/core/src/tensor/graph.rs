use rand::Rng;

use super::activation::ActivationKind;
use super::kernels::{for_each_broadcast, gemm, permute_map, split_axis, MatRef};
use super::lstm::{self, LstmCache, LstmGrads};
use super::Tensor;
use crate::error::{config_err, usage_err, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary),
    Scale(f64),
    AddScalar,
    Sqrt,
    Activation(ActivationKind),
    Linear { rows: usize, input: usize, output: usize },
    SumAll,
    MeanAll,
    SumAxis { axis: usize },
    Permute { map: Vec<usize> },
    Reshape,
    ReplicationPad { axis: usize, left: usize },
    AvgPool { axis: usize, kernel: usize },
    DepthwiseConv { kernel: usize },
    Unfold { size: usize, step: usize, patches: usize },
    Slice { axis: usize, start: usize },
    Concat { axis: usize },
    LogSoftmax,
    Pick(usize),
    Lstm(Box<LstmCache>),
}

/// A define-by-run differentiation tape.
///
/// Nodes are appended in creation order, so reverse creation order is a valid
/// reverse topological order and the graph is acyclic by construction. A graph
/// is confined to one thread; independent graphs share nothing.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    parents: Vec<Vec<Var>>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, op: Op) -> Var {
        let requires = parents.iter().any(|p| self.requires_grad[p.0]);
        self.push_with(value, parents, op, requires)
    }

    fn push_with(&mut self, value: Tensor, parents: Vec<Var>, op: Op, requires: bool) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.grads.push(None);
        self.parents.push(parents);
        self.ops.push(op);
        self.requires_grad.push(requires);
        Var(id)
    }

    /// Trainable leaf: gradients are collected for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_with(value, Vec::new(), Op::Leaf, true)
    }

    /// Constant leaf: data, masks and other inputs that need no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_with(value, Vec::new(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.values[v.0].data()[0]
    }

    /// Gradient collected by the last [`Graph::backward`] call, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.values[v.0].shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.parents[v.0]
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- elementwise -----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb)?;
        let (da, db) = (self.values[a.0].data(), self.values[b.0].data());
        let apply = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let out = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| apply(x, y)).collect()
        } else {
            let mut out = vec![0.0; out_shape.iter().product()];
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| out[o] = apply(da[ia], db[ib]));
            out
        };
        Ok(self.push(Tensor::new(out_shape, out)?, vec![a, b], Op::Binary(kind)))
    }

    /// Elementwise sum with same-rank broadcasting over unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = &self.values[x.0];
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * c).collect())
            .expect("same shape");
        self.push(out, vec![x], Op::Scale(c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = &self.values[x.0];
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a + c).collect())
            .expect("same shape");
        self.push(out, vec![x], Op::AddScalar)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = &self.values[x.0];
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a.sqrt()).collect())
            .expect("same shape");
        self.push(out, vec![x], Op::Sqrt)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.binary(x, x, Binary::Mul).expect("same shape")
    }

    pub fn activation(&mut self, kind: ActivationKind, x: Var) -> Var {
        let v = &self.values[x.0];
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&a| kind.forward(a)).collect(),
        )
        .expect("same shape");
        self.push(out, vec![x], Op::Activation(kind))
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
    /// The identity when `training` is false or the rate is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(config_err!("dropout rate {rate} outside [0, 1)"));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.values[x.0].len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    // ---- linear algebra --------------------------------------------------

    /// `x @ w + b` along the last axis of `x`; `w` is `in x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(usage_err!("linear: input {:?} incompatible with weight {:?}", xs, ws));
        }
        let (input, output) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [output] {
                return Err(usage_err!("linear: bias {:?} expected [{output}]", self.shape(b)));
            }
        }
        let rows = self.values[x.0].len() / input;
        let mut out = vec![0.0; rows * output];
        if let Some(b) = b {
            let bias = self.values[b.0].data();
            for row in out.chunks_mut(output) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            MatRef::new(self.values[x.0].data(), rows, input),
            MatRef::new(self.values[w.0].data(), input, output),
            &mut out,
            if b.is_some() { 1.0 } else { 0.0 },
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = output;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(Tensor::new(shape, out)?, parents, Op::Linear { rows, input, output }))
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values[x.0].data().iter().sum();
        self.push(Tensor::scalar(s), vec![x], Op::SumAll)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.values[x.0];
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), vec![x], Op::MeanAll)
    }

    /// Sum over `axis`, keeping it as a unit dimension.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(usage_err!("sum_axis: axis {axis} out of range for {:?}", shape));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let d = self.values[x.0].data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..n {
                let src = &d[(o * n + t) * inner..(o * n + t + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        Ok(self.push(Tensor::new(oshape, out)?, vec![x], Op::SumAxis { axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| usage_err!("mean_axis: axis {axis} out of range"))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(usage_err!(
                "mse: prediction {:?} vs target {:?}",
                self.shape(pred),
                self.shape(target)
            ));
        }
        let d = self.sub(pred, target)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    // ---- layout ----------------------------------------------------------

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(usage_err!("permute: {:?} is not a permutation of rank {}", perm, shape.len()));
        }
        let (out_shape, map) = permute_map(&shape, perm);
        let d = self.values[x.0].data();
        let out: Vec<f64> = map.iter().map(|&s| d[s]).collect();
        Ok(self.push(Tensor::new(out_shape, out)?, vec![x], Op::Permute { map }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.values[x.0].clone().reshape(shape)?;
        Ok(self.push(t, vec![x], Op::Reshape))
    }

    /// Repeat boundary values `left`/`right` times along `axis`.
    pub fn replication_pad(&mut self, x: Var, axis: usize, left: usize, right: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(usage_err!("replication_pad: bad axis {axis} for {:?}", shape));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let m = n + left + right;
        let d = self.values[x.0].data();
        let mut out = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for t in 0..m {
                let s = t.saturating_sub(left).min(n - 1);
                out[(o * m + t) * inner..(o * m + t + 1) * inner]
                    .copy_from_slice(&d[(o * n + s) * inner..(o * n + s + 1) * inner]);
            }
        }
        let mut oshape = shape;
        oshape[axis] = m;
        Ok(self.push(Tensor::new(oshape, out)?, vec![x], Op::ReplicationPad { axis, left }))
    }

    /// Same-length moving average along `axis` with replication padding.
    pub fn avg_pool1d(&mut self, x: Var, axis: usize, kernel: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(usage_err!("avg_pool1d: axis {axis} out of range for {:?}", shape));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        if kernel < 1 || kernel > n {
            return Err(config_err!("avg_pool1d: kernel {kernel} outside [1, {n}]"));
        }
        let left = (kernel - 1) / 2;
        let d = self.values[x.0].data();
        let inv = 1.0 / kernel as f64;
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for t in 0..n {
                let dst = (o * n + t) * inner;
                for j in 0..kernel {
                    let s = clamp_index(t + j, left, n);
                    let src = (o * n + s) * inner;
                    for i in 0..inner {
                        out[dst + i] += d[src + i] * inv;
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, vec![x], Op::AvgPool { axis, kernel }))
    }

    /// Depthwise temporal cross-correlation of `x: (B, T, C)` with one filter
    /// per channel, `weight: (C, kernel)`, plus `bias: (C)`. Same-length output
    /// via replication padding.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, kernel: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(usage_err!("conv1d expects (batch, time, channels), got {:?}", xs));
        }
        let (batch, n, ch) = (xs[0], xs[1], xs[2]);
        if kernel < 1 || kernel > n {
            return Err(config_err!("conv1d: kernel {kernel} outside [1, {n}]"));
        }
        if self.shape(weight) != [ch, kernel] || self.shape(bias) != [ch] {
            return Err(config_err!(
                "conv1d: weight {:?} / bias {:?} do not match {ch} channels and kernel {kernel}",
                self.shape(weight),
                self.shape(bias)
            ));
        }
        let left = (kernel - 1) / 2;
        let (d, w, b) = (
            self.values[x.0].data(),
            self.values[weight.0].data(),
            self.values[bias.0].data(),
        );
        let mut out = vec![0.0; d.len()];
        for bi in 0..batch {
            for t in 0..n {
                let dst = (bi * n + t) * ch;
                out[dst..dst + ch].copy_from_slice(b);
                for j in 0..kernel {
                    let src = (bi * n + clamp_index(t + j, left, n)) * ch;
                    for c in 0..ch {
                        out[dst + c] += w[c * kernel + j] * d[src + c];
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(xs, out)?, vec![x, weight, bias], Op::DepthwiseConv { kernel }))
    }

    /// Sliding windows of `size` with stride `step` along the last axis:
    /// `(..., n)` becomes `(..., patches, size)`.
    pub fn unfold(&mut self, x: Var, size: usize, step: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| usage_err!("unfold on a rank-0 tensor"))?;
        if size == 0 || step == 0 || size > n {
            return Err(config_err!("unfold: window {size} / step {step} invalid for length {n}"));
        }
        let patches = (n - size) / step + 1;
        let outer = self.values[x.0].len() / n;
        let d = self.values[x.0].data();
        let mut out = Vec::with_capacity(outer * patches * size);
        for o in 0..outer {
            for p in 0..patches {
                let s = o * n + p * step;
                out.extend_from_slice(&d[s..s + size]);
            }
        }
        let mut oshape = shape[..shape.len() - 1].to_vec();
        oshape.extend([patches, size]);
        Ok(self.push(Tensor::new(oshape, out)?, vec![x], Op::Unfold { size, step, patches }))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(usage_err!("slice [{start}, {}) on axis {axis} of {:?}", start + len, shape));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let d = self.values[x.0].data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        Ok(self.push(Tensor::new(oshape, out)?, vec![x], Op::Slice { axis, start }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| usage_err!("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(usage_err!("concat: axis {axis} out of range for {:?}", first));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(usage_err!("concat: {:?} incompatible with {:?}", s, first));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = self.shape(*p)[axis];
                let d = self.values[p.0].data();
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut oshape = first;
        oshape[axis] = total;
        Ok(self.push(Tensor::new(oshape, out)?, parts.to_vec(), Op::Concat { axis }))
    }

    // ---- heads -----------------------------------------------------------

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| usage_err!("log_softmax on rank-0 tensor"))?;
        let d = self.values[x.0].data();
        let mut out = vec![0.0; d.len()];
        for (row, dst) in d.chunks(n).zip(out.chunks_mut(n)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (o, v) in dst.iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, vec![x], Op::LogSoftmax))
    }

    /// Select one element (flat index) as a scalar node.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = *self.values[x.0]
            .data()
            .get(index)
            .ok_or_else(|| usage_err!("pick: index {index} out of range"))?;
        Ok(self.push(Tensor::scalar(v), vec![x], Op::Pick(index)))
    }

    /// Run an LSTM layer over `x: (S, in)` from state `h0, c0: (1, H)`.
    ///
    /// Returns a `(S + 1, H)` node: hidden states for every step followed by
    /// the final cell state.
    pub fn lstm(&mut self, x: Var, h0: Var, c0: Var, wx: Var, wh: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let whs = self.shape(wh).to_vec();
        if xs.len() != 2 || xs[0] == 0 || whs.len() != 2 {
            return Err(usage_err!("lstm: input {:?} / recurrent weight {:?}", xs, whs));
        }
        let (seq, input) = (xs[0], xs[1]);
        let hidden = whs[0];
        if whs[1] != 4 * hidden
            || self.shape(wx) != [input, 4 * hidden]
            || self.shape(bias) != [4 * hidden]
            || self.shape(h0) != [1, hidden]
            || self.shape(c0) != [1, hidden]
        {
            return Err(usage_err!("lstm: parameter shapes do not match hidden size {hidden}"));
        }
        let f = lstm::forward(
            self.values[x.0].data(),
            self.values[h0.0].data(),
            self.values[c0.0].data(),
            self.values[wx.0].data(),
            self.values[wh.0].data(),
            self.values[bias.0].data(),
            seq,
            input,
            hidden,
        );
        Ok(self.push(
            Tensor::new(vec![seq + 1, hidden], f.output)?,
            vec![x, h0, c0, wx, wh, bias],
            Op::Lstm(Box::new(f.cache)),
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar `root`. Gradients from earlier calls
    /// are discarded, so repeated calls give identical results.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.values[root.0].len() != 1 {
            return Err(usage_err!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            ));
        }
        self.zero_grad();
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        let parents = &self.parents[i];
        let values = &self.values;
        let grads = &mut self.grads;
        let req = &self.requires_grad;
        let wants = |p: Var| req[p.0];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Binary(kind) => {
                let (a, b) = (parents[0], parents[1]);
                let (sa, sb) = (values[a.0].shape(), values[b.0].shape());
                let (da, db) = (values[a.0].data(), values[b.0].data());
                let out_shape = values[i].shape();
                let same = sa == sb;
                for (target, other, is_a) in [(a, b, true), (b, a, false)] {
                    if !wants(target) {
                        continue;
                    }
                    let _ = other;
                    let gt = grad_buf(grads, values, target);
                    let mut acc = |o: usize, ia: usize, ib: usize| {
                        let up = g[o];
                        let (x, y) = (da[ia], db[ib]);
                        let contrib = match (kind, is_a) {
                            (Binary::Add, _) => up,
                            (Binary::Sub, true) => up,
                            (Binary::Sub, false) => -up,
                            (Binary::Mul, true) => up * y,
                            (Binary::Mul, false) => up * x,
                            (Binary::Div, true) => up / y,
                            (Binary::Div, false) => -up * x / (y * y),
                        };
                        gt[if is_a { ia } else { ib }] += contrib;
                    };
                    if same {
                        for o in 0..g.len() {
                            acc(o, o, o);
                        }
                    } else {
                        for_each_broadcast(out_shape, sa, sb, &mut acc);
                    }
                }
            }
            Op::Scale(c) => {
                let x = parents[0];
                if wants(x) {
                    let gx = grad_buf(grads, values, x);
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
            }
            Op::AddScalar | Op::Reshape => {
                let x = parents[0];
                if wants(x) {
                    let gx = grad_buf(grads, values, x);
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Sqrt => {
                let x = parents[0];
                if wants(x) {
                    let out = values[i].data();
                    let gx = grad_buf(grads, values, x);
                    for ((a, b), y) in gx.iter_mut().zip(g).zip(out) {
                        *a += b * 0.5 / y;
                    }
                }
            }
            Op::Activation(kind) => {
                let x = parents[0];
                if wants(x) {
                    let xd = values[x.0].data();
                    let gx = grad_buf(grads, values, x);
                    for ((a, b), xv) in gx.iter_mut().zip(g).zip(xd) {
                        *a += b * kind.derivative(*xv);
                    }
                }
            }
            Op::Linear { rows, input, output } => {
                let (rows, input, output) = (*rows, *input, *output);
                let (x, w) = (parents[0], parents[1]);
                let gm = MatRef::new(g, rows, output);
                if wants(x) {
                    let wd = values[w.0].data();
                    let gx = grad_buf(grads, values, x);
                    gemm(gm, MatRef::new(wd, input, output).t(), gx, 1.0);
                }
                if wants(w) {
                    let xd = values[x.0].data();
                    let gw = grad_buf(grads, values, w);
                    gemm(MatRef::new(xd, rows, input).t(), gm, gw, 1.0);
                }
                if let Some(&b) = parents.get(2) {
                    if wants(b) {
                        let gb = grad_buf(grads, values, b);
                        for row in g.chunks(output) {
                            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    }
                }
            }
            Op::SumAll => {
                let x = parents[0];
                if wants(x) {
                    let gx = grad_buf(grads, values, x);
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::MeanAll => {
                let x = parents[0];
                if wants(x) {
                    let gx = grad_buf(grads, values, x);
                    let c = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += c);
                }
            }
            Op::SumAxis { axis } => {
                let x = parents[0];
                if wants(x) {
                    let (outer, n, inner) = split_axis(values[x.0].shape(), *axis);
                    let gx = grad_buf(grads, values, x);
                    for o in 0..outer {
                        for t in 0..n {
                            let dst = &mut gx[(o * n + t) * inner..(o * n + t + 1) * inner];
                            dst.iter_mut()
                                .zip(&g[o * inner..(o + 1) * inner])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::Permute { map } => {
                let x = parents[0];
                if wants(x) {
                    let gx = grad_buf(grads, values, x);
                    for (o, &s) in map.iter().enumerate() {
                        gx[s] += g[o];
                    }
                }
            }
            Op::ReplicationPad { axis, left } => {
                let x = parents[0];
                if wants(x) {
                    let (outer, n, inner) = split_axis(values[x.0].shape(), *axis);
                    let m = values[i].shape()[*axis];
                    let gx = grad_buf(grads, values, x);
                    for o in 0..outer {
                        for t in 0..m {
                            let s = t.saturating_sub(*left).min(n - 1);
                            for k in 0..inner {
                                gx[(o * n + s) * inner + k] += g[(o * m + t) * inner + k];
                            }
                        }
                    }
                }
            }
            Op::AvgPool { axis, kernel } => {
                let x = parents[0];
                if wants(x) {
                    let (outer, n, inner) = split_axis(values[x.0].shape(), *axis);
                    let left = (kernel - 1) / 2;
                    let inv = 1.0 / *kernel as f64;
                    let gx = grad_buf(grads, values, x);
                    for o in 0..outer {
                        for t in 0..n {
                            let dst = (o * n + t) * inner;
                            for j in 0..*kernel {
                                let src = (o * n + clamp_index(t + j, left, n)) * inner;
                                for k in 0..inner {
                                    gx[src + k] += g[dst + k] * inv;
                                }
                            }
                        }
                    }
                }
            }
            Op::DepthwiseConv { kernel } => {
                let kernel = *kernel;
                let (x, w, b) = (parents[0], parents[1], parents[2]);
                let shape = values[x.0].shape();
                let (batch, n, ch) = (shape[0], shape[1], shape[2]);
                let left = (kernel - 1) / 2;
                if wants(x) {
                    let wd = values[w.0].data();
                    let gx = grad_buf(grads, values, x);
                    for bi in 0..batch {
                        for t in 0..n {
                            let dst = (bi * n + t) * ch;
                            for j in 0..kernel {
                                let src = (bi * n + clamp_index(t + j, left, n)) * ch;
                                for c in 0..ch {
                                    gx[src + c] += wd[c * kernel + j] * g[dst + c];
                                }
                            }
                        }
                    }
                }
                if wants(w) {
                    let xd = values[x.0].data();
                    let gw = grad_buf(grads, values, w);
                    for bi in 0..batch {
                        for t in 0..n {
                            let dst = (bi * n + t) * ch;
                            for j in 0..kernel {
                                let src = (bi * n + clamp_index(t + j, left, n)) * ch;
                                for c in 0..ch {
                                    gw[c * kernel + j] += xd[src + c] * g[dst + c];
                                }
                            }
                        }
                    }
                }
                if wants(b) {
                    let gb = grad_buf(grads, values, b);
                    for row in g.chunks(ch) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                }
            }
            Op::Unfold { size, step, patches } => {
                let x = parents[0];
                if wants(x) {
                    let n = *values[x.0].shape().last().unwrap();
                    let gx = grad_buf(grads, values, x);
                    let outer = gx.len() / n;
                    for o in 0..outer {
                        for p in 0..*patches {
                            let src = (o * patches + p) * size;
                            let dst = o * n + p * step;
                            for k in 0..*size {
                                gx[dst + k] += g[src + k];
                            }
                        }
                    }
                }
            }
            Op::Slice { axis, start } => {
                let x = parents[0];
                if wants(x) {
                    let (outer, n, inner) = split_axis(values[x.0].shape(), *axis);
                    let len = values[i].shape()[*axis];
                    let gx = grad_buf(grads, values, x);
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        dst.iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Concat { axis } => {
                let out_shape = values[i].shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &p in parents.iter() {
                    let n = values[p.0].shape()[*axis];
                    if wants(p) {
                        let gp = grad_buf(grads, values, p);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            gp[o * n * inner..(o + 1) * n * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += n;
                }
            }
            Op::LogSoftmax => {
                let x = parents[0];
                if wants(x) {
                    let out = values[i].data();
                    let n = *values[i].shape().last().unwrap();
                    let gx = grad_buf(grads, values, x);
                    for ((gr, yr), xr) in g.chunks(n).zip(out.chunks(n)).zip(gx.chunks_mut(n)) {
                        let s: f64 = gr.iter().sum();
                        for k in 0..n {
                            xr[k] += gr[k] - yr[k].exp() * s;
                        }
                    }
                }
            }
            Op::Pick(index) => {
                let x = parents[0];
                if wants(x) {
                    let gx = grad_buf(grads, values, x);
                    gx[*index] += g[0];
                }
            }
            Op::Lstm(cache) => {
                let [x, h0, c0, wx, wh, b] = [parents[0], parents[1], parents[2], parents[3], parents[4], parents[5]];
                // Pull the buffers out so several can be borrowed mutably at once.
                let mut take = |v: Var| -> Option<Vec<f64>> {
                    if wants(v) {
                        grad_buf(grads, values, v);
                        grads[v.0].take()
                    } else {
                        None
                    }
                };
                let mut bufs = [take(x), take(h0), take(c0), take(wx), take(wh), take(b)];
                {
                    let [gx, gh0, gc0, gwx, gwh, gb] = &mut bufs;
                    lstm::backward(
                        cache,
                        g,
                        values[x.0].data(),
                        values[h0.0].data(),
                        values[i].data(),
                        values[wx.0].data(),
                        values[wh.0].data(),
                        LstmGrads {
                            x: gx.as_deref_mut(),
                            h0: gh0.as_deref_mut(),
                            c0: gc0.as_deref_mut(),
                            wx: gwx.as_deref_mut(),
                            wh: gwh.as_deref_mut(),
                            bias: gb.as_deref_mut(),
                        },
                    );
                }
                // A variable may appear twice (e.g. shared h0/c0); merge in order.
                for (v, buf) in [x, h0, c0, wx, wh, b].into_iter().zip(bufs) {
                    if let Some(buf) = buf {
                        match &mut grads[v.0] {
                            Some(existing) => existing.iter_mut().zip(&buf).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(buf),
                        }
                    }
                }
            }
        }
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Vec<f64>>], values: &[Tensor], v: Var) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; values[v.0].len()])
}

/// Index into an axis of length `n` padded by `left` on the front, clamped
/// at both ends (replication padding).
fn clamp_index(padded: usize, left: usize, n: usize) -> usize {
    padded.saturating_sub(left).min(n - 1)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(usage_err!("broadcast needs equal ranks: {:?} vs {:?}", a, b));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(usage_err!("shapes {:?} and {:?} do not broadcast", a, b)),
        })
        .collect()
}
