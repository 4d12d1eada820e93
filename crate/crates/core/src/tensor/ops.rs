//! Operation builders (forward) and the backward dispatch.
//!
//! Layout conventions: activations are `[B, L, C]` row-major with the channel
//! axis fastest; conv weights are `[k, Cin, Cout]`; dense weights `[n, m]`.
//! Cross-batch reductions always fold per-sample partials in batch order, so
//! results are bit-identical for any rayon pool size.

use rayon::prelude::*;

use super::kernels::{add_assign, matmul_acc, matmul_acc_lda, matmul_set, matmul_tn_acc, transpose};
use super::{flow_slot, numel, BnMode, BnSaved, BnStats, Graph, Node, Op, TensorId};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

fn dims3(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::Shape(format!("expected 3-d tensor, got {shape:?}"))),
    }
}

fn dims2(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Shape(format!("expected 2-d tensor, got {shape:?}"))),
    }
}

/// Valid output range `[l0, l1)` and source start for kernel offset `dk` of a
/// same-padded stride-1 convolution. The extra pad sits on the right.
fn conv_range(l: usize, padl: usize, dk: usize) -> (usize, usize, usize) {
    let l0 = padl.saturating_sub(dk);
    let l1 = if dk > padl { l.saturating_sub(dk - padl) } else { l };
    let src0 = dk.saturating_sub(padl);
    (l0, l1, src0)
}

impl Graph {
    /// 1-d cross-correlation, stride 1, "same" zero padding:
    /// `x [B,L,Cin] * w [k,Cin,Cout] + b [Cout] -> [B,L,Cout]`.
    pub fn conv1d(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (bsz, l, cin) = dims3(self.shape(x))?;
        let (k, wcin, cout) = dims3(self.shape(w))?;
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv1d: input channels {cin} do not match kernel channels {wcin}"
            )));
        }
        if self.shape(b) != [cout] {
            return Err(Error::Shape(format!(
                "conv1d: bias shape {:?} does not match {cout} output channels",
                self.shape(b)
            )));
        }
        let padl = (k - 1) / 2;
        let xd = self.data(x);
        let wd = self.data(w);
        let bias = self.data(b);

        let mut out = vec![0.0; bsz * l * cout];
        out.par_chunks_mut(l * cout)
            .zip(xd.par_chunks(l * cin))
            .for_each(|(ob, xb)| {
                for row in ob.chunks_exact_mut(cout) {
                    row.copy_from_slice(bias);
                }
                for dk in 0..k {
                    let (l0, l1, src0) = conv_range(l, padl, dk);
                    if l1 > l0 {
                        let rows = l1 - l0;
                        matmul_acc(
                            &mut ob[l0 * cout..l1 * cout],
                            &xb[src0 * cin..(src0 + rows) * cin],
                            &wd[dk * cin * cout..(dk + 1) * cin * cout],
                            rows,
                            cin,
                            cout,
                        );
                    }
                }
            });

        let requires_grad = self.require_grad_any(&[x, w, b]);
        Ok(self.push(Node {
            shape: vec![bsz, l, cout],
            data: out,
            requires_grad,
            op: Op::Conv1d { x, w, b },
        }))
    }

    /// Elementwise max(x, 0).
    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let requires_grad = self.requires_grad(x);
        Ok(self.push(Node {
            shape: self.shape(x).to_vec(),
            data: out,
            requires_grad,
            op: Op::Relu { x },
        }))
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v.tanh()).collect();
        let requires_grad = self.requires_grad(x);
        Ok(self.push(Node {
            shape: self.shape(x).to_vec(),
            data: out,
            requires_grad,
            op: Op::Tanh { x },
        }))
    }

    /// Per-channel batch normalization over the `(B, L)` axes of `x [B,L,C]`.
    ///
    /// Train mode normalizes with batch statistics (eps 1e-5) and folds them
    /// into `running` by exponential moving average; eval mode normalizes with
    /// `running` as-is.
    pub fn batchnorm1d(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mode: BnMode,
        running: &mut BnStats,
        momentum: f64,
    ) -> Result<TensorId> {
        let (bsz, l, c) = dims3(self.shape(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "batchnorm1d: gamma {:?} / beta {:?} do not match {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(Error::Shape(format!(
                "batchnorm1d: running stats have {} channels, expected {c}",
                running.mean.len()
            )));
        }
        let n = bsz * l;
        if matches!(mode, BnMode::Train) && n <= 1 {
            return Err(Error::DegenerateBatch(format!(
                "batchnorm1d needs more than one position per channel in train mode, got B*L = {n}"
            )));
        }

        let xd = self.data(x);
        let g = self.data(gamma);
        let bt = self.data(beta);

        let (mean, invstd) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                for row in xd.chunks_exact(c) {
                    add_assign(&mut mean, row);
                }
                for m in &mut mean {
                    *m /= n as f64;
                }
                let mut var = vec![0.0; c];
                for row in xd.chunks_exact(c) {
                    for (vc, (&v, &m)) in var.iter_mut().zip(row.iter().zip(mean.iter())) {
                        let d = v - m;
                        *vc += d * d;
                    }
                }
                for v in &mut var {
                    *v /= n as f64;
                }
                let unbias = n as f64 / (n as f64 - 1.0);
                for ch in 0..c {
                    running.mean[ch] = (1.0 - momentum) * running.mean[ch] + momentum * mean[ch];
                    running.var[ch] =
                        (1.0 - momentum) * running.var[ch] + momentum * var[ch] * unbias;
                }
                let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (mean, invstd)
            }
            BnMode::Eval => {
                let invstd: Vec<f64> =
                    running.var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (running.mean.clone(), invstd)
            }
        };

        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (rowx, (rowh, rowo)) in xd
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)))
        {
            for ch in 0..c {
                let h = (rowx[ch] - mean[ch]) * invstd[ch];
                rowh[ch] = h;
                rowo[ch] = g[ch] * h + bt[ch];
            }
        }

        let requires_grad = self.require_grad_any(&[x, gamma, beta]);
        let saved = requires_grad.then_some(BnSaved {
            xhat,
            invstd,
            train: matches!(mode, BnMode::Train),
        });
        Ok(self.push(Node {
            shape: vec![bsz, l, c],
            data: out,
            requires_grad,
            op: Op::BatchNorm { x, gamma, beta, saved },
        }))
    }

    /// Fully connected layer: `x [B,n] * w [n,m] + b [m] -> [B,m]`.
    pub fn dense(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (bsz, n) = dims2(self.shape(x))?;
        let (wn, m) = dims2(self.shape(w))?;
        if wn != n {
            return Err(Error::Shape(format!("dense: input width {n} vs weight rows {wn}")));
        }
        if self.shape(b) != [m] {
            return Err(Error::Shape(format!(
                "dense: bias shape {:?} does not match {m} outputs",
                self.shape(b)
            )));
        }
        let xd = self.data(x);
        let wd = self.data(w);
        let bias = self.data(b);
        let mut out = vec![0.0; bsz * m];
        for row in out.chunks_exact_mut(m) {
            row.copy_from_slice(bias);
        }
        matmul_acc(&mut out, xd, wd, bsz, n, m);
        let requires_grad = self.require_grad_any(&[x, w, b]);
        Ok(self.push(Node {
            shape: vec![bsz, m],
            data: out,
            requires_grad,
            op: Op::Dense { x, w, b },
        }))
    }

    /// Batched matrix product contracting the last axis of `a` with the
    /// second-to-last of `b`. Leading dims must match, or `b` may be 2-d and
    /// is broadcast over `a`'s leading dims.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(Error::Shape(format!("matmul: need at least 2-d, got {ash:?} x {bsh:?}")));
        }
        let (p, q) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (q2, r) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if q != q2 {
            return Err(Error::Shape(format!("matmul: inner dims {q} vs {q2} ({ash:?} x {bsh:?})")));
        }
        let lead_a = &ash[..ash.len() - 2];
        let lead_b = &bsh[..bsh.len() - 2];
        let broadcast_b = lead_b.is_empty();
        if !broadcast_b && lead_a != lead_b {
            return Err(Error::Shape(format!("matmul: batch dims {lead_a:?} vs {lead_b:?}")));
        }
        let batch = numel(lead_a);

        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; batch * p * r];
        out.par_chunks_mut(p * r).enumerate().for_each(|(bi, ob)| {
            let am = &ad[bi * p * q..(bi + 1) * p * q];
            let bm = if broadcast_b { bd } else { &bd[bi * q * r..(bi + 1) * q * r] };
            matmul_set(ob, am, bm, p, q, r);
        });

        let mut shape = lead_a.to_vec();
        shape.push(p);
        shape.push(r);
        let requires_grad = self.require_grad_any(&[a, b]);
        Ok(self.push(Node { shape, data: out, requires_grad, op: Op::MatMul { a, b } }))
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&mut self, x: TensorId) -> Result<TensorId> {
        let sh = self.shape(x).to_vec();
        if sh.len() < 2 {
            return Err(Error::Shape(format!("transpose_last2: need at least 2-d, got {sh:?}")));
        }
        let (p, q) = (sh[sh.len() - 2], sh[sh.len() - 1]);
        let batch = numel(&sh[..sh.len() - 2]);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for (ob, xb) in out.chunks_exact_mut(p * q).zip(xd.chunks_exact(p * q)).take(batch) {
            transpose(xb, p, q, ob);
        }
        let mut shape = sh;
        let len = shape.len();
        shape.swap(len - 2, len - 1);
        let requires_grad = self.requires_grad(x);
        Ok(self.push(Node { shape, data: out, requires_grad, op: Op::TransposeLast2 { x } }))
    }

    /// Numerically stable softmax along `axis`; slices along that axis sum to 1.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let sh = self.shape(x).to_vec();
        if axis >= sh.len() {
            return Err(Error::Shape(format!("softmax: axis {axis} out of range for {sh:?}")));
        }
        let n = sh[axis];
        let inner: usize = sh[axis + 1..].iter().product();
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        if inner == 1 {
            out.par_chunks_mut(n).zip(xd.par_chunks(n)).for_each(|(orow, xrow)| {
                softmax_row(xrow, orow);
            });
        } else {
            let outer: usize = sh[..axis].iter().product();
            let mut buf = vec![0.0; n];
            let mut obuf = vec![0.0; n];
            for o in 0..outer {
                for ii in 0..inner {
                    for j in 0..n {
                        buf[j] = xd[(o * n + j) * inner + ii];
                    }
                    softmax_row(&buf, &mut obuf);
                    for j in 0..n {
                        out[(o * n + j) * inner + ii] = obuf[j];
                    }
                }
            }
        }
        let requires_grad = self.requires_grad(x);
        Ok(self.push(Node { shape: sh, data: out, requires_grad, op: Op::Softmax { x, axis } }))
    }

    /// Elementwise multiplication by a constant.
    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v * c).collect();
        let requires_grad = self.requires_grad(x);
        Ok(self.push(Node {
            shape: self.shape(x).to_vec(),
            data: out,
            requires_grad,
            op: Op::Scale { x, c },
        }))
    }

    /// Mean over all elements of `acosh(1 + (pred - target)^2)` -> scalar.
    ///
    /// Behaves like a smooth absolute error: ~ sqrt(2)|e| near zero, log-like
    /// in the tails. The backward pass takes the subgradient 0 at e = 0.
    pub fn acosh_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Shape(format!(
                "acosh_loss: pred {:?} vs target {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let pd = self.data(pred);
        let td = self.data(target);
        let n = pd.len() as f64;
        let sum: f64 = pd
            .iter()
            .zip(td.iter())
            .map(|(&p, &t)| {
                let e = p - t;
                (1.0 + e * e).acosh()
            })
            .sum();
        let requires_grad = self.require_grad_any(&[pred, target]);
        Ok(self.push(Node {
            shape: vec![1],
            data: vec![sum / n],
            requires_grad,
            op: Op::AcoshLoss { pred, target },
        }))
    }

    /// Mean over all elements of `ln cosh(pred - target)` -> scalar. Smooth
    /// everywhere with gradient tanh(e); quadratic near zero, linear in the
    /// tails.
    pub fn log_cosh_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Shape(format!(
                "log_cosh_loss: pred {:?} vs target {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let pd = self.data(pred);
        let td = self.data(target);
        let n = pd.len() as f64;
        // ln cosh(e) = |e| + ln(1 + exp(-2|e|)) - ln 2, stable for large |e|.
        let sum: f64 = pd
            .iter()
            .zip(td.iter())
            .map(|(&p, &t)| {
                let e = (p - t).abs();
                e + (-2.0 * e).exp().ln_1p() - std::f64::consts::LN_2
            })
            .sum();
        let requires_grad = self.require_grad_any(&[pred, target]);
        Ok(self.push(Node {
            shape: vec![1],
            data: vec![sum / n],
            requires_grad,
            op: Op::LogCoshLoss { pred, target },
        }))
    }

    /// Mean cross-entropy between rows of `logits [B,C]` and one-hot (or soft)
    /// targets, computed with a fused log-softmax.
    pub fn cross_entropy(&mut self, logits: TensorId, onehot: TensorId) -> Result<TensorId> {
        let (bsz, c) = dims2(self.shape(logits))?;
        if self.shape(onehot) != [bsz, c] {
            return Err(Error::Shape(format!(
                "cross_entropy: logits {:?} vs targets {:?}",
                self.shape(logits),
                self.shape(onehot)
            )));
        }
        let xd = self.data(logits);
        let yd = self.data(onehot);
        let requires_grad = self.require_grad_any(&[logits, onehot]);
        let mut probs = requires_grad.then(|| vec![0.0; xd.len()]);
        let mut total = 0.0;
        for bi in 0..bsz {
            let xrow = &xd[bi * c..(bi + 1) * c];
            let yrow = &yd[bi * c..(bi + 1) * c];
            let max = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = xrow.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            let dot: f64 = xrow.iter().zip(yrow.iter()).map(|(&x, &y)| x * y).sum();
            total += lse - dot;
            if let Some(p) = probs.as_mut() {
                for (pj, &xj) in p[bi * c..(bi + 1) * c].iter_mut().zip(xrow.iter()) {
                    *pj = (xj - lse).exp();
                }
            }
        }
        Ok(self.push(Node {
            shape: vec![1],
            data: vec![total / bsz as f64],
            requires_grad,
            op: Op::CrossEntropy { logits, onehot, probs },
        }))
    }

    /// Weighted sum of scalar losses: `sum_i weights[i] * terms[i]`.
    pub fn weighted_sum_loss(&mut self, terms: &[TensorId], weights: &[f64]) -> Result<TensorId> {
        if terms.len() != weights.len() {
            return Err(Error::Length {
                expected: terms.len(),
                got: weights.len(),
                what: "weighted_sum_loss weights".into(),
            });
        }
        let mut total = 0.0;
        for (&t, &w) in terms.iter().zip(weights.iter()) {
            total += w * self.value(t)?;
        }
        let requires_grad = self.require_grad_any(terms);
        Ok(self.push(Node {
            shape: vec![1],
            data: vec![total],
            requires_grad,
            op: Op::WeightedSum { terms: terms.to_vec(), weights: weights.to_vec() },
        }))
    }

    /// Sum of all elements -> scalar.
    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let s: f64 = self.data(x).iter().sum();
        let requires_grad = self.requires_grad(x);
        Ok(self.push(Node { shape: vec![1], data: vec![s], requires_grad, op: Op::SumAll { x } }))
    }

    /// Reinterpret the data with a new shape of equal element count.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(Error::Shape(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shape(x),
                shape
            )));
        }
        let data = self.data(x).to_vec();
        let requires_grad = self.requires_grad(x);
        Ok(self.push(Node { shape: shape.to_vec(), data, requires_grad, op: Op::Reshape { x } }))
    }
}

fn softmax_row(xrow: &[f64], orow: &mut [f64]) {
    let max = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in orow.iter_mut().zip(xrow.iter()) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in orow.iter_mut() {
        *o *= inv;
    }
}

pub(crate) fn backward_op(nodes: &[Node], i: usize, gout: &[f64], flow: &mut [Option<Vec<f64>>]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Conv1d { x, w, b } => conv1d_bwd(nodes, gout, flow, *x, *w, *b),
        Op::Relu { x } => {
            if let Some(dx) = flow_slot(nodes, flow, *x) {
                for (d, (&g, &xv)) in dx.iter_mut().zip(gout.iter().zip(nodes[x.0].data.iter())) {
                    if xv > 0.0 {
                        *d += g;
                    }
                }
            }
        }
        Op::Tanh { x } => {
            let y = &nodes[i].data;
            if let Some(dx) = flow_slot(nodes, flow, *x) {
                for (d, (&g, &yv)) in dx.iter_mut().zip(gout.iter().zip(y.iter())) {
                    *d += g * (1.0 - yv * yv);
                }
            }
        }
        Op::BatchNorm { x, gamma, beta, saved } => {
            let saved = saved.as_ref().expect("batchnorm backward without saved state");
            batchnorm_bwd(nodes, gout, flow, *x, *gamma, *beta, saved);
        }
        Op::Dense { x, w, b } => dense_bwd(nodes, gout, flow, *x, *w, *b),
        Op::MatMul { a, b } => matmul_bwd(nodes, gout, flow, *a, *b),
        Op::TransposeLast2 { x } => {
            let sh = &nodes[i].shape;
            let (p, q) = (sh[sh.len() - 2], sh[sh.len() - 1]);
            if let Some(dx) = flow_slot(nodes, flow, *x) {
                let mut buf = vec![0.0; p * q];
                for (gb, db) in gout.chunks_exact(p * q).zip(dx.chunks_exact_mut(p * q)) {
                    transpose(gb, p, q, &mut buf);
                    add_assign(db, &buf);
                }
            }
        }
        Op::Softmax { x, axis } => {
            let y = &nodes[i].data;
            let sh = &nodes[i].shape;
            let n = sh[*axis];
            let inner: usize = sh[*axis + 1..].iter().product();
            if let Some(dx) = flow_slot(nodes, flow, *x) {
                if inner == 1 {
                    dx.par_chunks_mut(n)
                        .zip(y.par_chunks(n).zip(gout.par_chunks(n)))
                        .for_each(|(drow, (yrow, grow))| {
                            let dot: f64 =
                                yrow.iter().zip(grow.iter()).map(|(&a, &b)| a * b).sum();
                            for (d, (&yv, &gv)) in
                                drow.iter_mut().zip(yrow.iter().zip(grow.iter()))
                            {
                                *d += yv * (gv - dot);
                            }
                        });
                } else {
                    let outer: usize = sh[..*axis].iter().product();
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + ii;
                            let mut dot = 0.0;
                            for j in 0..n {
                                dot += y[idx(j)] * gout[idx(j)];
                            }
                            for j in 0..n {
                                dx[idx(j)] += y[idx(j)] * (gout[idx(j)] - dot);
                            }
                        }
                    }
                }
            }
        }
        Op::Scale { x, c } => {
            if let Some(dx) = flow_slot(nodes, flow, *x) {
                for (d, &g) in dx.iter_mut().zip(gout.iter()) {
                    *d += g * c;
                }
            }
        }
        Op::LogCoshLoss { pred, target } => {
            let pd = &nodes[pred.0].data;
            let td = &nodes[target.0].data;
            let scale = gout[0] / pd.len() as f64;
            if let Some(dp) = flow_slot(nodes, flow, *pred) {
                for (d, (&p, &t)) in dp.iter_mut().zip(pd.iter().zip(td.iter())) {
                    *d += scale * (p - t).tanh();
                }
            }
            if let Some(dt) = flow_slot(nodes, flow, *target) {
                for (d, (&p, &t)) in dt.iter_mut().zip(pd.iter().zip(td.iter())) {
                    *d -= scale * (p - t).tanh();
                }
            }
        }
        Op::AcoshLoss { pred, target } => {
            let pd = &nodes[pred.0].data;
            let td = &nodes[target.0].data;
            let scale = gout[0] / pd.len() as f64;
            // d/de acosh(1 + e^2) = 2 sgn(e) / sqrt(e^2 + 2); 0 at e = 0.
            let deriv = |e: f64| {
                if e == 0.0 {
                    0.0
                } else {
                    2.0 * e.signum() / (e * e + 2.0).sqrt()
                }
            };
            if let Some(dp) = flow_slot(nodes, flow, *pred) {
                for (d, (&p, &t)) in dp.iter_mut().zip(pd.iter().zip(td.iter())) {
                    *d += scale * deriv(p - t);
                }
            }
            if let Some(dt) = flow_slot(nodes, flow, *target) {
                for (d, (&p, &t)) in dt.iter_mut().zip(pd.iter().zip(td.iter())) {
                    *d -= scale * deriv(p - t);
                }
            }
        }
        Op::CrossEntropy { logits, onehot, probs } => {
            let probs = probs.as_ref().expect("cross_entropy backward without saved probs");
            let yd = &nodes[onehot.0].data;
            let bsz = nodes[logits.0].shape[0] as f64;
            let scale = gout[0] / bsz;
            if let Some(dl) = flow_slot(nodes, flow, *logits) {
                for (d, (&p, &y)) in dl.iter_mut().zip(probs.iter().zip(yd.iter())) {
                    *d += scale * (p - y);
                }
            }
            if let Some(dy) = flow_slot(nodes, flow, *onehot) {
                let xd = &nodes[logits.0].data;
                for (d, &x) in dy.iter_mut().zip(xd.iter()) {
                    *d -= scale * x;
                }
            }
        }
        Op::WeightedSum { terms, weights } => {
            for (&t, &w) in terms.iter().zip(weights.iter()) {
                if let Some(dt) = flow_slot(nodes, flow, t) {
                    dt[0] += gout[0] * w;
                }
            }
        }
        Op::SumAll { x } => {
            if let Some(dx) = flow_slot(nodes, flow, *x) {
                for d in dx.iter_mut() {
                    *d += gout[0];
                }
            }
        }
        Op::Reshape { x } => {
            if let Some(dx) = flow_slot(nodes, flow, *x) {
                add_assign(dx, gout);
            }
        }
    }
}

fn conv1d_bwd(
    nodes: &[Node],
    gout: &[f64],
    flow: &mut [Option<Vec<f64>>],
    x: TensorId,
    w: TensorId,
    b: TensorId,
) {
    let [bsz, l, cin] = nodes[x.0].shape[..] else { unreachable!() };
    let [k, _, cout] = nodes[w.0].shape[..] else { unreachable!() };
    let padl = (k - 1) / 2;
    let xd = &nodes[x.0].data;
    let wd = &nodes[w.0].data;

    if let Some(dx) = flow_slot(nodes, flow, x) {
        // w transposed per kernel offset: [cout, cin]
        let mut wt = vec![0.0; k * cout * cin];
        for dk in 0..k {
            transpose(
                &wd[dk * cin * cout..(dk + 1) * cin * cout],
                cin,
                cout,
                &mut wt[dk * cout * cin..(dk + 1) * cout * cin],
            );
        }
        dx.par_chunks_mut(l * cin).zip(gout.par_chunks(l * cout)).for_each(|(dxb, gb)| {
            for dk in 0..k {
                let (l0, l1, src0) = conv_range(l, padl, dk);
                if l1 > l0 {
                    let rows = l1 - l0;
                    matmul_acc(
                        &mut dxb[src0 * cin..(src0 + rows) * cin],
                        &gb[l0 * cout..l1 * cout],
                        &wt[dk * cout * cin..(dk + 1) * cout * cin],
                        rows,
                        cout,
                        cin,
                    );
                }
            }
        });
    }

    let need_dw = nodes[w.0].requires_grad;
    let need_db = nodes[b.0].requires_grad;
    if need_dw || need_db {
        // Per-sample partials folded in batch order below.
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..bsz)
            .into_par_iter()
            .map(|bi| {
                let xb = &xd[bi * l * cin..(bi + 1) * l * cin];
                let gb = &gout[bi * l * cout..(bi + 1) * l * cout];
                let mut dwp = vec![0.0; k * cin * cout];
                let mut dbp = vec![0.0; cout];
                if need_dw {
                    // One x transpose serves every kernel offset.
                    let mut xt = vec![0.0; l * cin];
                    transpose(xb, l, cin, &mut xt);
                    for dk in 0..k {
                        let (l0, l1, src0) = conv_range(l, padl, dk);
                        if l1 > l0 {
                            let rows = l1 - l0;
                            matmul_acc_lda(
                                &mut dwp[dk * cin * cout..(dk + 1) * cin * cout],
                                &xt,
                                l,
                                src0,
                                &gb[l0 * cout..l1 * cout],
                                cin,
                                rows,
                                cout,
                            );
                        }
                    }
                }
                if need_db {
                    for row in gb.chunks_exact(cout) {
                        add_assign(&mut dbp, row);
                    }
                }
                (dwp, dbp)
            })
            .collect();
        if let Some(dw) = flow_slot(nodes, flow, w) {
            for (p, _) in &partials {
                add_assign(dw, p);
            }
        }
        if let Some(db) = flow_slot(nodes, flow, b) {
            for (_, p) in &partials {
                add_assign(db, p);
            }
        }
    }
}

fn batchnorm_bwd(
    nodes: &[Node],
    gout: &[f64],
    flow: &mut [Option<Vec<f64>>],
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    saved: &BnSaved,
) {
    let c = nodes[gamma.0].shape[0];
    let n = nodes[x.0].data.len() / c;
    let g = &nodes[gamma.0].data;

    // Per-channel sums of gout and gout * xhat.
    let mut s0 = vec![0.0; c];
    let mut s1 = vec![0.0; c];
    for (grow, hrow) in gout.chunks_exact(c).zip(saved.xhat.chunks_exact(c)) {
        for ch in 0..c {
            s0[ch] += grow[ch];
            s1[ch] += grow[ch] * hrow[ch];
        }
    }

    if let Some(dg) = flow_slot(nodes, flow, gamma) {
        add_assign(dg, &s1);
    }
    if let Some(db) = flow_slot(nodes, flow, beta) {
        add_assign(db, &s0);
    }
    if let Some(dx) = flow_slot(nodes, flow, x) {
        if saved.train {
            let nf = n as f64;
            for (drow, (grow, hrow)) in dx
                .chunks_exact_mut(c)
                .zip(gout.chunks_exact(c).zip(saved.xhat.chunks_exact(c)))
            {
                for ch in 0..c {
                    drow[ch] += g[ch]
                        * saved.invstd[ch]
                        * (grow[ch] - s0[ch] / nf - hrow[ch] * s1[ch] / nf);
                }
            }
        } else {
            for (drow, grow) in dx.chunks_exact_mut(c).zip(gout.chunks_exact(c)) {
                for ch in 0..c {
                    drow[ch] += g[ch] * saved.invstd[ch] * grow[ch];
                }
            }
        }
    }
}

fn dense_bwd(
    nodes: &[Node],
    gout: &[f64],
    flow: &mut [Option<Vec<f64>>],
    x: TensorId,
    w: TensorId,
    b: TensorId,
) {
    let [bsz, n] = nodes[x.0].shape[..] else { unreachable!() };
    let [_, m] = nodes[w.0].shape[..] else { unreachable!() };
    let xd = &nodes[x.0].data;
    let wd = &nodes[w.0].data;
    if let Some(dx) = flow_slot(nodes, flow, x) {
        let mut wt = vec![0.0; n * m];
        transpose(wd, n, m, &mut wt);
        matmul_acc(dx, gout, &wt, bsz, m, n);
    }
    if let Some(dw) = flow_slot(nodes, flow, w) {
        matmul_tn_acc(dw, xd, gout, bsz, n, m);
    }
    if let Some(db) = flow_slot(nodes, flow, b) {
        for row in gout.chunks_exact(m) {
            add_assign(db, row);
        }
    }
}

fn matmul_bwd(nodes: &[Node], gout: &[f64], flow: &mut [Option<Vec<f64>>], a: TensorId, b: TensorId) {
    let ash = &nodes[a.0].shape;
    let bsh = &nodes[b.0].shape;
    let (p, q) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let r = bsh[bsh.len() - 1];
    let broadcast_b = bsh.len() == 2 && ash.len() > 2;
    let batch = numel(&ash[..ash.len() - 2]);
    let ad = &nodes[a.0].data;
    let bd = &nodes[b.0].data;

    if let Some(da) = flow_slot(nodes, flow, a) {
        da.par_chunks_mut(p * q).enumerate().for_each(|(bi, dab)| {
            let gb = &gout[bi * p * r..(bi + 1) * p * r];
            let bm = if broadcast_b { bd } else { &bd[bi * q * r..(bi + 1) * q * r] };
            let mut bt = vec![0.0; q * r];
            transpose(bm, q, r, &mut bt);
            matmul_acc(dab, gb, &bt, p, r, q);
        });
    }
    if nodes[b.0].requires_grad {
        if broadcast_b {
            let db = flow_slot(nodes, flow, b).expect("requires_grad checked");
            for bi in 0..batch {
                let am = &ad[bi * p * q..(bi + 1) * p * q];
                let gb = &gout[bi * p * r..(bi + 1) * p * r];
                matmul_tn_acc(db, am, gb, p, q, r);
            }
        } else if let Some(db) = flow_slot(nodes, flow, b) {
            db.par_chunks_mut(q * r).enumerate().for_each(|(bi, dbb)| {
                let am = &ad[bi * p * q..(bi + 1) * p * q];
                let gb = &gout[bi * p * r..(bi + 1) * p * r];
                matmul_tn_acc(dbb, am, gb, p, q, r);
            });
        }
    }
}
