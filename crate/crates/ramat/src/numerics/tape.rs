use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddBias(Var, Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxLast(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f32,
    },
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    OverwriteRows {
        x: Var,
        row: Var,
        mask: Vec<bool>,
    },
    MeanRows(Var),
    MeanAll(Var),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert tape: records each executed operation during the forward pass and
/// replays the chain rule in reverse on [`Tape::backward`]. Single-shot: a
/// second backward on the same tape is a contract error.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a copy of `t` as a leaf, preserving its requires_grad flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t.clone(), Op::Leaf, rg)
    }

    /// Records `t` as a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass w.r.t. `v`, if `v` requires grad.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(Error::Shape(format!("expected 2-d tensor, got {s:?}"))),
        }
    }

    // ── Kernels ──────────────────────────────────────────────────────

    /// Matrix product a[m,k] @ b[k,n] -> [m,n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.dims2(a)?;
        let (kb, n) = self.dims2(b)?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dims disagree: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for p in 0..ka {
                let av = ad[i * ka + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul(a, b), rg))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    /// Hadamard product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    /// Scalar multiple c * a. The only broadcast-like operation.
    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Scale(a, c), rg))
    }

    /// a - b, composed from add and scale.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Adds bias[n] to every row of x[m,n]. Explicit row kernel, not silent
    /// broadcasting.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if self.value(bias).shape() != [n] {
            return Err(Error::Shape(format!(
                "add_bias: bias {:?} does not match row width {n}",
                self.value(bias).shape()
            )));
        }
        let xd = self.value(x).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = xd[i * n + j] + bd[j];
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddBias(x, bias), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Tanh(a), rg))
    }

    /// Exact-erf GELU: x * Phi(x).
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| gelu_f(x)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Gelu(a), rg))
    }

    /// Numerically stabilized softmax over the last dimension.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).last_dim();
        if n == 0 {
            return Err(Error::Shape("softmax over empty last dimension".into()));
        }
        let xd = self.value(a).data();
        let mut out = vec![0.0f32; xd.len()];
        for s in 0..xd.len() / n {
            let row = &xd[s * n..(s + 1) * n];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let orow = &mut out[s * n..(s + 1) * n];
            let mut sum = 0.0f32;
            for j in 0..n {
                orow[j] = (row[j] - max).exp();
                sum += orow[j];
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::SoftmaxLast(a), rg))
    }

    /// Layer normalization over the last dimension with affine gamma/beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let n = self.value(x).last_dim();
        if n < 2 {
            return Err(Error::Shape(format!(
                "layer_norm over degenerate last dimension {n}"
            )));
        }
        if self.value(gamma).shape() != [n] || self.value(beta).shape() != [n] {
            return Err(Error::Shape(format!(
                "layer_norm: gamma {:?} / beta {:?} do not match last dim {n}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut out = vec![0.0f32; xd.len()];
        for s in 0..xd.len() / n {
            let row = &xd[s * n..(s + 1) * n];
            let (mean, inv) = norm_stats(row, eps);
            let orow = &mut out[s * n..(s + 1) * n];
            for j in 0..n {
                orow[j] = (row[j] - mean) * inv * gd[j] + bd[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { x, gamma, beta, eps },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let ad = self.value(a).data();
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg))
    }

    /// Columns [start, start+len) of x[m,n] as [m,len].
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if start + len > n || len == 0 {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) out of width {n}",
                start + len
            )));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xd[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![m, len], out)?,
            Op::SliceCols { x, start, len },
            rg,
        ))
    }

    /// Horizontal concatenation of 2-d tensors with equal row counts.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat_cols of zero tensors".into()));
        }
        let (m, _) = self.dims2(xs[0])?;
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let (mv, nv) = self.dims2(v)?;
            if mv != m {
                return Err(Error::Shape(format!(
                    "concat_cols: row counts disagree ({m} vs {mv})"
                )));
            }
            widths.push(nv);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&v, &w) in xs.iter().zip(&widths) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[i * w..(i + 1) * w]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            Op::ConcatCols(xs.to_vec()),
            rg,
        ))
    }

    /// Selected rows of x in the given order.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if idx.is_empty() {
            return Err(Error::Contract("gather_rows with empty index set".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::Shape(format!("row index {bad} out of {m}")));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&xd[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], out)?,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Replaces rows of x[m,n] where mask[i] is true with `row`[n]. Gradient
    /// flows into x at unmasked rows and accumulates into `row` at masked ones.
    pub fn overwrite_rows(&mut self, x: Var, mask: &[bool], row: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if mask.len() != m {
            return Err(Error::Shape(format!(
                "overwrite_rows: mask length {} vs {m} rows",
                mask.len()
            )));
        }
        if self.value(row).shape() != [n] {
            return Err(Error::Shape(format!(
                "overwrite_rows: row {:?} vs width {n}",
                self.value(row).shape()
            )));
        }
        let xd = self.value(x).data();
        let rd = self.value(row).data();
        let mut out = xd.to_vec();
        for (i, &masked) in mask.iter().enumerate() {
            if masked {
                out[i * n..(i + 1) * n].copy_from_slice(rd);
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::OverwriteRows {
                x,
                row,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Column means of x[m,n] -> [1,n].
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += xd[i * n + j];
            }
        }
        for v in out.iter_mut() {
            *v /= m as f32;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1, n], out)?, Op::MeanRows(x), rg))
    }

    /// Mean over all elements -> scalar [1].
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xd = self.value(x).data();
        let mut sum = 0.0f32;
        for v in xd {
            sum += v;
        }
        let mean = sum / xd.len() as f32;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1], vec![mean])?, Op::MeanAll(x), rg))
    }

    /// Sum over all elements -> scalar [1].
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let xd = self.value(x).data();
        let mut sum = 0.0f32;
        for v in xd {
            sum += v;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1], vec![sum])?, Op::SumAll(x), rg))
    }

    /// Mean cross-entropy of logits[m,C] against integer targets -> scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.dims2(logits)?;
        if targets.len() != m {
            return Err(Error::Shape(format!(
                "cross_entropy: {} targets for {m} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Shape(format!("target class {bad} out of {c}")));
        }
        let xd = self.value(logits).data();
        let mut loss = 0.0f32;
        for (i, &t) in targets.iter().enumerate() {
            let row = &xd[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for &v in row {
                sum += (v - max).exp();
            }
            loss += sum.ln() + max - row[t];
        }
        loss /= m as f32;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::new(vec![1], vec![loss])?,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Populates grads on every
    /// requires_grad node reachable from the loss; unreachable nodes hold
    /// zero grad. Single-shot: calling twice is a contract error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.spent {
            return Err(Error::Contract(
                "backward already ran on this tape; record a fresh tape".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.spent = true;

        let mut grads: Vec<Vec<f32>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0f32; n.value.numel()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            // Detach this node's grad so inputs can be mutated.
            let g = std::mem::take(&mut grads[i]);
            self.accumulate(i, &g, &mut grads);
            grads[i] = g;
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.value.grad_mut().copy_from_slice(&g);
            }
        }
        Ok(())
    }

    /// Chain-rule contribution of node `i` into its inputs' grad buffers.
    fn accumulate(&self, i: usize, g: &[f32], grads: &mut [Vec<f32>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if self.rg(*a) {
                    let ga = &mut grads[a.0];
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0f32;
                            for j in 0..n {
                                s += g[r * n + j] * bd[p * n + j];
                            }
                            ga[r * k + p] += s;
                        }
                    }
                }
                if self.rg(*b) {
                    let gb = &mut grads[b.0];
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0f32;
                            for r in 0..m {
                                s += ad[r * k + p] * g[r * n + j];
                            }
                            gb[p * n + j] += s;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    for (dst, &src) in grads[a.0].iter_mut().zip(g) {
                        *dst += src;
                    }
                }
                if self.rg(*b) {
                    for (dst, &src) in grads[b.0].iter_mut().zip(g) {
                        *dst += src;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    for ((dst, &src), &bv) in grads[a.0].iter_mut().zip(g).zip(bd) {
                        *dst += src * bv;
                    }
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    for ((dst, &src), &av) in grads[b.0].iter_mut().zip(g).zip(ad) {
                        *dst += src * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    for (dst, &src) in grads[a.0].iter_mut().zip(g) {
                        *dst += src * c;
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let (m, n) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                if self.rg(*x) {
                    for (dst, &src) in grads[x.0].iter_mut().zip(g) {
                        *dst += src;
                    }
                }
                if self.rg(*bias) {
                    let gb = &mut grads[bias.0];
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if self.rg(*a) {
                    let yd = self.value(Var(i)).data();
                    for ((dst, &src), &y) in grads[a.0].iter_mut().zip(g).zip(yd) {
                        *dst += src * (1.0 - y * y);
                    }
                }
            }
            Op::Gelu(a) => {
                if self.rg(*a) {
                    let xd = self.value(*a).data();
                    for ((dst, &src), &x) in grads[a.0].iter_mut().zip(g).zip(xd) {
                        *dst += src * gelu_df(x);
                    }
                }
            }
            Op::SoftmaxLast(a) => {
                if self.rg(*a) {
                    let n = self.value(*a).last_dim();
                    let yd = self.value(Var(i)).data();
                    let ga = &mut grads[a.0];
                    for s in 0..yd.len() / n {
                        let y = &yd[s * n..(s + 1) * n];
                        let gs = &g[s * n..(s + 1) * n];
                        let mut dot = 0.0f32;
                        for j in 0..n {
                            dot += gs[j] * y[j];
                        }
                        for j in 0..n {
                            ga[s * n + j] += y[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let n = self.value(*x).last_dim();
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                let slices = xd.len() / n;
                if self.rg(*beta) {
                    let gb = &mut grads[beta.0];
                    for s in 0..slices {
                        for j in 0..n {
                            gb[j] += g[s * n + j];
                        }
                    }
                }
                if self.rg(*gamma) {
                    let gg = &mut grads[gamma.0];
                    for s in 0..slices {
                        let row = &xd[s * n..(s + 1) * n];
                        let (mean, inv) = norm_stats(row, *eps);
                        for j in 0..n {
                            gg[j] += g[s * n + j] * (row[j] - mean) * inv;
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = &mut grads[x.0];
                    for s in 0..slices {
                        let row = &xd[s * n..(s + 1) * n];
                        let gs = &g[s * n..(s + 1) * n];
                        let (mean, inv) = norm_stats(row, *eps);
                        let mut mean_dxh = 0.0f32;
                        let mut mean_dxh_xh = 0.0f32;
                        for j in 0..n {
                            let xh = (row[j] - mean) * inv;
                            let dxh = gs[j] * gd[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh;
                        }
                        mean_dxh /= n as f32;
                        mean_dxh_xh /= n as f32;
                        for j in 0..n {
                            let xh = (row[j] - mean) * inv;
                            let dxh = gs[j] * gd[j];
                            gx[s * n + j] += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    let (m, n) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                    let ga = &mut grads[a.0];
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.rg(*x) {
                    let (m, n) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                    let gx = &mut grads[x.0];
                    for r in 0..m {
                        for c in 0..*len {
                            gx[r * n + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let m = self.value(xs[0]).shape()[0];
                let total: usize = xs.iter().map(|&v| self.value(v).shape()[1]).sum();
                let mut offset = 0usize;
                for &v in xs {
                    let w = self.value(v).shape()[1];
                    if self.rg(v) {
                        let gv = &mut grads[v.0];
                        for r in 0..m {
                            for c in 0..w {
                                gv[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows { x, idx } => {
                if self.rg(*x) {
                    let n = self.value(*x).shape()[1];
                    let gx = &mut grads[x.0];
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..n {
                            gx[src * n + c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::OverwriteRows { x, row, mask } => {
                let n = self.value(*row).shape()[0];
                if self.rg(*x) {
                    let gx = &mut grads[x.0];
                    for (i, &masked) in mask.iter().enumerate() {
                        if !masked {
                            for c in 0..n {
                                gx[i * n + c] += g[i * n + c];
                            }
                        }
                    }
                }
                if self.rg(*row) {
                    let gr = &mut grads[row.0];
                    for (i, &masked) in mask.iter().enumerate() {
                        if masked {
                            for c in 0..n {
                                gr[c] += g[i * n + c];
                            }
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                if self.rg(*x) {
                    let (m, n) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                    let gx = &mut grads[x.0];
                    let inv = 1.0 / m as f32;
                    for r in 0..m {
                        for c in 0..n {
                            gx[r * n + c] += g[c] * inv;
                        }
                    }
                }
            }
            Op::MeanAll(x) => {
                if self.rg(*x) {
                    let inv = 1.0 / self.value(*x).numel() as f32;
                    for dst in grads[x.0].iter_mut() {
                        *dst += g[0] * inv;
                    }
                }
            }
            Op::SumAll(x) => {
                if self.rg(*x) {
                    for dst in grads[x.0].iter_mut() {
                        *dst += g[0];
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if self.rg(*logits) {
                    let (m, c) = (
                        self.value(*logits).shape()[0],
                        self.value(*logits).shape()[1],
                    );
                    let xd = self.value(*logits).data();
                    let gl = &mut grads[logits.0];
                    let inv = g[0] / m as f32;
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &xd[r * c..(r + 1) * c];
                        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                        let mut sum = 0.0f32;
                        for &v in row {
                            sum += (v - max).exp();
                        }
                        for j in 0..c {
                            let p = (row[j] - max).exp() / sum;
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * c + j] += inv * (p - onehot);
                        }
                    }
                }
            }
        }
    }
}

fn norm_stats(row: &[f32], eps: f32) -> (f32, f32) {
    let n = row.len() as f32;
    let mut mean = 0.0f32;
    for &v in row {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0f32;
    for &v in row {
        let d = v - mean;
        var += d * d;
    }
    var /= n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn gelu_f(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x / std::f32::consts::SQRT_2))
}

fn gelu_df(x: f32) -> f32 {
    let phi_cdf = 0.5 * (1.0 + libm::erff(x / std::f32::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f32::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}
