//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Ops are recorded as enum entries; `backward` replays them in reverse with
//! a central match. The tape order is fixed by construction order, so
//! gradient accumulation is bit-for-bit repeatable.

use super::kernels as k;
use super::tensor::{Tensor, TensorError};

pub type VarId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: VarId, b: VarId, m: usize, k: usize, n: usize },
    Transpose { x: VarId, rows: usize, cols: usize },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    Scale { x: VarId, c: f32 },
    /// x + constant tensor (no gradient to the constant).
    AddConst { x: VarId },
    AddBiasRow { x: VarId, bias: VarId, cols: usize },
    AddBiasChan { x: VarId, bias: VarId, hw: usize },
    Silu { x: VarId },
    SoftmaxRows { x: VarId, cols: usize },
    LayerNorm { x: VarId, gamma: VarId, beta: VarId, cols: usize, means: Vec<f32>, inv_stds: Vec<f32> },
    EmbedGather { table: VarId, ids: Vec<usize>, dim: usize },
    Conv2d { x: VarId, w: VarId, c_in: usize, c_out: usize, h: usize, w_px: usize },
    AvgPool2 { x: VarId, c: usize, h: usize, w: usize },
    Upsample2 { x: VarId, c: usize, h: usize, w: usize },
    SumAll { x: VarId },
    MseLoss { pred: VarId, target: Tensor },
    CrossEntropyRows { logits: VarId, targets: Vec<usize>, weights: Vec<f32>, probs: Vec<f32>, cols: usize },
    SliceCols { x: VarId, start: usize, len: usize, cols: usize },
    ConcatCols { parts: Vec<(VarId, usize)> },
    Reshape { x: VarId },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients keyed by `VarId`; only vars reachable from `requires_grad`
/// leaves have entries.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, id: VarId) -> Option<&[f32]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> VarId {
        self.nodes.push(Node { op, value, needs_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Registers a leaf tensor. Gradient flows to it iff `requires_grad` is
    /// set on the tensor.
    pub fn input(&mut self, t: Tensor) -> VarId {
        let needs = t.requires_grad();
        self.push(Op::Leaf, t, needs)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        assert_eq!(sa.len(), 2, "matmul lhs must be 2-d, got {sa:?}");
        assert_eq!(sb.len(), 2, "matmul rhs must be 2-d, got {sb:?}");
        assert_eq!(sa[1], sb[0], "matmul inner dims {sa:?} x {sb:?}");
        let (m, kk, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        k::matmul_nn(self.nodes[a].value.data(), self.nodes[b].value.data(), m, kk, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Matmul { a, b, m, k: kk, n }, Tensor::from_op(vec![m, n], out), needs)
    }

    pub fn transpose(&mut self, x: VarId) -> VarId {
        let s = self.nodes[x].value.shape();
        assert_eq!(s.len(), 2, "transpose needs 2-d, got {s:?}");
        let (r, c) = (s[0], s[1]);
        let mut out = vec![0.0; r * c];
        k::transpose(self.nodes[x].value.data(), r, c, &mut out);
        let needs = self.needs(x);
        self.push(Op::Transpose { x, rows: r, cols: c }, Tensor::from_op(vec![c, r], out), needs)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape(), "add shapes");
        let out: Vec<f32> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Add { a, b }, Tensor::from_op(shape, out), needs)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape(), "sub shapes");
        let out: Vec<f32> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Sub { a, b }, Tensor::from_op(shape, out), needs)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape(), "mul shapes");
        let out: Vec<f32> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Mul { a, b }, Tensor::from_op(shape, out), needs)
    }

    pub fn scale(&mut self, x: VarId, c: f32) -> VarId {
        let out: Vec<f32> = self.nodes[x].value.data().iter().map(|v| v * c).collect();
        let shape = self.nodes[x].value.shape().to_vec();
        let needs = self.needs(x);
        self.push(Op::Scale { x, c }, Tensor::from_op(shape, out), needs)
    }

    /// Adds a constant tensor (e.g. an attention mask); no gradient flows to it.
    pub fn add_const(&mut self, x: VarId, c: &Tensor) -> VarId {
        assert_eq!(self.nodes[x].value.shape(), c.shape(), "add_const shapes");
        let out: Vec<f32> =
            self.nodes[x].value.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let shape = c.shape().to_vec();
        let needs = self.needs(x);
        self.push(Op::AddConst { x }, Tensor::from_op(shape, out), needs)
    }

    pub fn add_bias_row(&mut self, x: VarId, bias: VarId) -> VarId {
        let cols = *self.nodes[x].value.shape().last().expect("bias over empty shape");
        assert_eq!(self.nodes[bias].value.shape(), [cols], "bias length");
        let bd = self.nodes[bias].value.data().to_vec();
        let out: Vec<f32> = self.nodes[x]
            .value
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(&bd).map(|(v, b)| v + b).collect::<Vec<_>>())
            .collect();
        let shape = self.nodes[x].value.shape().to_vec();
        let needs = self.needs(x) || self.needs(bias);
        self.push(Op::AddBiasRow { x, bias, cols }, Tensor::from_op(shape, out), needs)
    }

    /// x: [C,H,W] plus per-channel bias [C].
    pub fn add_bias_chan(&mut self, x: VarId, bias: VarId) -> VarId {
        let s = self.nodes[x].value.shape().to_vec();
        assert_eq!(s.len(), 3, "add_bias_chan needs [C,H,W]");
        let (c, hw) = (s[0], s[1] * s[2]);
        assert_eq!(self.nodes[bias].value.shape(), [c], "bias length");
        let bd = self.nodes[bias].value.data().to_vec();
        let xd = self.nodes[x].value.data();
        let mut out = vec![0.0; xd.len()];
        for ch in 0..c {
            let b = bd[ch];
            for i in 0..hw {
                out[ch * hw + i] = xd[ch * hw + i] + b;
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        self.push(Op::AddBiasChan { x, bias, hw }, Tensor::from_op(s, out), needs)
    }

    pub fn silu(&mut self, x: VarId) -> VarId {
        let xd = self.nodes[x].value.data();
        let mut out = vec![0.0; xd.len()];
        k::silu(xd, &mut out);
        let shape = self.nodes[x].value.shape().to_vec();
        let needs = self.needs(x);
        self.push(Op::Silu { x }, Tensor::from_op(shape, out), needs)
    }

    pub fn softmax_rows(&mut self, x: VarId) -> VarId {
        let shape = self.nodes[x].value.shape().to_vec();
        let cols = *shape.last().expect("softmax over empty shape");
        let mut out = self.nodes[x].value.data().to_vec();
        k::softmax_rows(&mut out, cols);
        let needs = self.needs(x);
        self.push(Op::SoftmaxRows { x, cols }, Tensor::from_op(shape, out), needs)
    }

    pub fn layer_norm(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: f32) -> VarId {
        let shape = self.nodes[x].value.shape().to_vec();
        let cols = *shape.last().expect("layer_norm over empty shape");
        assert!(eps > 0.0, "layer_norm eps must be positive");
        assert_eq!(self.nodes[gamma].value.shape(), [cols]);
        assert_eq!(self.nodes[beta].value.shape(), [cols]);
        let mut out = vec![0.0; self.nodes[x].value.numel()];
        let (means, inv_stds) = k::layer_norm_rows(
            self.nodes[x].value.data(),
            self.nodes[gamma].value.data(),
            self.nodes[beta].value.data(),
            eps,
            cols,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            Op::LayerNorm { x, gamma, beta, cols, means, inv_stds },
            Tensor::from_op(shape, out),
            needs,
        )
    }

    /// Gathers rows of `table` ([V,d]) at `ids`, producing [len(ids), d].
    pub fn embed_gather(&mut self, table: VarId, ids: &[usize]) -> VarId {
        let s = self.nodes[table].value.shape();
        assert_eq!(s.len(), 2, "embedding table must be [V,d]");
        let (v, d) = (s[0], s[1]);
        let td = self.nodes[table].value.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "token id {id} out of vocab {v}");
            out.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        let needs = self.needs(table);
        self.push(
            Op::EmbedGather { table, ids: ids.to_vec(), dim: d },
            Tensor::from_op(vec![ids.len(), d], out),
            needs,
        )
    }

    /// 3x3 convolution, stride 1, zero padding 1. x: [C,H,W], w: [C',C,3,3].
    pub fn conv2d(&mut self, x: VarId, w: VarId) -> VarId {
        let sx = self.nodes[x].value.shape().to_vec();
        let sw = self.nodes[w].value.shape().to_vec();
        assert_eq!(sx.len(), 3, "conv input must be [C,H,W]");
        assert_eq!(sw.len(), 4, "conv weight must be [C',C,3,3]");
        assert_eq!(sw[1], sx[0], "conv channel mismatch: input {} vs weight {}", sx[0], sw[1]);
        assert_eq!((sw[2], sw[3]), (3, 3), "only 3x3 kernels");
        let (c_in, h, w_px) = (sx[0], sx[1], sx[2]);
        let c_out = sw[0];
        let hw = h * w_px;
        let mut cols = vec![0.0; c_in * 9 * hw];
        k::im2col_3x3(self.nodes[x].value.data(), c_in, h, w_px, &mut cols);
        let mut out = vec![0.0; c_out * hw];
        k::matmul_nn(self.nodes[w].value.data(), &cols, c_out, c_in * 9, hw, &mut out);
        let needs = self.needs(x) || self.needs(w);
        self.push(
            Op::Conv2d { x, w, c_in, c_out, h, w_px },
            Tensor::from_op(vec![c_out, h, w_px], out),
            needs,
        )
    }

    pub fn avg_pool2(&mut self, x: VarId) -> VarId {
        let s = self.nodes[x].value.shape().to_vec();
        assert_eq!(s.len(), 3);
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; c * (h / 2) * (w / 2)];
        k::avg_pool2(self.nodes[x].value.data(), c, h, w, &mut out);
        let needs = self.needs(x);
        self.push(Op::AvgPool2 { x, c, h, w }, Tensor::from_op(vec![c, h / 2, w / 2], out), needs)
    }

    pub fn upsample2(&mut self, x: VarId) -> VarId {
        let s = self.nodes[x].value.shape().to_vec();
        assert_eq!(s.len(), 3);
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; c * h * 2 * w * 2];
        k::upsample2(self.nodes[x].value.data(), c, h, w, &mut out);
        let needs = self.needs(x);
        self.push(Op::Upsample2 { x, c, h, w }, Tensor::from_op(vec![c, h * 2, w * 2], out), needs)
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        // Sequential row-major reduction; the documented deterministic order.
        let s: f32 = self.nodes[x].value.data().iter().sum();
        let needs = self.needs(x);
        self.push(Op::SumAll { x }, Tensor::from_op(vec![], vec![s]), needs)
    }

    pub fn mean_all(&mut self, x: VarId) -> VarId {
        let n = self.nodes[x].value.numel() as f32;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: VarId, target: &Tensor) -> VarId {
        assert_eq!(self.nodes[pred].value.shape(), target.shape(), "mse shapes");
        let n = target.numel() as f32;
        let s: f32 = self.nodes[pred]
            .value
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f32>()
            / n;
        let needs = self.needs(pred);
        self.push(Op::MseLoss { pred, target: target.clone() }, Tensor::from_op(vec![], vec![s]), needs)
    }

    /// Weighted mean cross-entropy over rows of logits [T,V].
    /// Rows with weight 0 contribute nothing.
    pub fn cross_entropy_rows(&mut self, logits: VarId, targets: &[usize], weights: &[f32]) -> VarId {
        let s = self.nodes[logits].value.shape().to_vec();
        assert_eq!(s.len(), 2);
        let (rows, cols) = (s[0], s[1]);
        assert_eq!(targets.len(), rows);
        assert_eq!(weights.len(), rows);
        let wsum: f32 = weights.iter().sum();
        assert!(wsum > 0.0, "cross entropy needs at least one weighted row");
        let mut probs = self.nodes[logits].value.data().to_vec();
        k::softmax_rows(&mut probs, cols);
        let mut loss = 0.0f32;
        for r in 0..rows {
            if weights[r] == 0.0 {
                continue;
            }
            assert!(targets[r] < cols, "target out of range");
            loss -= weights[r] * probs[r * cols + targets[r]].max(1e-12).ln();
        }
        loss /= wsum;
        let needs = self.needs(logits);
        self.push(
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                cols,
            },
            Tensor::from_op(vec![], vec![loss]),
            needs,
        )
    }

    pub fn slice_cols(&mut self, x: VarId, start: usize, len: usize) -> VarId {
        let s = self.nodes[x].value.shape().to_vec();
        assert_eq!(s.len(), 2);
        let (rows, cols) = (s[0], s[1]);
        assert!(start + len <= cols, "slice out of range");
        let xd = self.nodes[x].value.data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xd[r * cols + start..r * cols + start + len]);
        }
        let needs = self.needs(x);
        self.push(Op::SliceCols { x, start, len, cols }, Tensor::from_op(vec![rows, len], out), needs)
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.nodes[p].value.shape();
            assert_eq!(s.len(), 2);
            assert_eq!(s[0], rows, "concat_cols row mismatch");
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let pd = self.nodes[p].value.data();
                out.extend_from_slice(&pd[r * w..(r + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let parts_meta: Vec<(VarId, usize)> = parts.iter().copied().zip(widths).collect();
        self.push(Op::ConcatCols { parts: parts_meta }, Tensor::from_op(vec![rows, total], out), needs)
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> VarId {
        let t = self.nodes[x].value.reshaped(shape).expect("reshape numel mismatch");
        let needs = self.needs(x);
        self.push(Op::Reshape { x }, t, needs)
    }

    /// Single-head scaled dot-product attention from primitives.
    /// q,k,v: [T,d_h]; mask: [T,T] of 0 / -inf entries added to the scores.
    pub fn attention(&mut self, q: VarId, kk: VarId, v: VarId, mask: Option<&Tensor>) -> VarId {
        let d_h = self.nodes[q].value.shape()[1];
        let kt = self.transpose(kk);
        let scores = self.matmul(q, kt);
        let scaled = self.scale(scores, 1.0 / (d_h as f32).sqrt());
        let masked = match mask {
            Some(m) => self.add_const(scaled, m),
            None => scaled,
        };
        let attn = self.softmax_rows(masked);
        self.matmul(attn, v)
    }

    /// Reverse-mode gradients from a scalar loss.
    pub fn backward(&self, loss: VarId) -> Result<Gradients, TensorError> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = (0..n).map(|_| None).collect();
        grads[loss] = Some(vec![1.0]);

        // Helper macro: lazily allocate and return the grad buffer for id.
        macro_rules! grad_buf {
            ($grads:expr, $self:expr, $id:expr) => {
                $grads[$id].get_or_insert_with(|| vec![0.0; $self.nodes[$id].value.numel()])
            };
        }

        for id in (0..n).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g_out) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g_out);
                    continue;
                }
                Op::Matmul { a, b, m, k: kk, n: nn } => {
                    let (a, b, m, kk, nn) = (*a, *b, *m, *kk, *nn);
                    if self.needs(a) {
                        let mut da = vec![0.0; m * kk];
                        k::matmul_nt(&g_out, self.nodes[b].value.data(), m, nn, kk, &mut da);
                        accumulate(grad_buf!(grads, self, a), &da);
                    }
                    if self.needs(b) {
                        let mut db = vec![0.0; kk * nn];
                        k::matmul_tn(self.nodes[a].value.data(), &g_out, kk, m, nn, &mut db);
                        accumulate(grad_buf!(grads, self, b), &db);
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    let (x, rows, cols) = (*x, *rows, *cols);
                    if self.needs(x) {
                        // g_out is [cols, rows]; transpose back.
                        let mut dx = vec![0.0; rows * cols];
                        k::transpose(&g_out, cols, rows, &mut dx);
                        accumulate(grad_buf!(grads, self, x), &dx);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        accumulate(grad_buf!(grads, self, a), &g_out);
                    }
                    if self.needs(b) {
                        accumulate(grad_buf!(grads, self, b), &g_out);
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        accumulate(grad_buf!(grads, self, a), &g_out);
                    }
                    if self.needs(b) {
                        let buf = grad_buf!(grads, self, b);
                        for (o, g) in buf.iter_mut().zip(&g_out) {
                            *o -= g;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let bd = self.nodes[b].value.data().to_vec();
                        let buf = grad_buf!(grads, self, a);
                        for i in 0..buf.len() {
                            buf[i] += g_out[i] * bd[i];
                        }
                    }
                    if self.needs(b) {
                        let ad = self.nodes[a].value.data().to_vec();
                        let buf = grad_buf!(grads, self, b);
                        for i in 0..buf.len() {
                            buf[i] += g_out[i] * ad[i];
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    if self.needs(x) {
                        let buf = grad_buf!(grads, self, x);
                        for (o, g) in buf.iter_mut().zip(&g_out) {
                            *o += g * c;
                        }
                    }
                }
                Op::AddConst { x } => {
                    let x = *x;
                    if self.needs(x) {
                        accumulate(grad_buf!(grads, self, x), &g_out);
                    }
                }
                Op::AddBiasRow { x, bias, cols } => {
                    let (x, bias, cols) = (*x, *bias, *cols);
                    if self.needs(x) {
                        accumulate(grad_buf!(grads, self, x), &g_out);
                    }
                    if self.needs(bias) {
                        let buf = grad_buf!(grads, self, bias);
                        for row in g_out.chunks(cols) {
                            for (o, g) in buf.iter_mut().zip(row) {
                                *o += g;
                            }
                        }
                    }
                }
                Op::AddBiasChan { x, bias, hw } => {
                    let (x, bias, hw) = (*x, *bias, *hw);
                    if self.needs(x) {
                        accumulate(grad_buf!(grads, self, x), &g_out);
                    }
                    if self.needs(bias) {
                        let buf = grad_buf!(grads, self, bias);
                        for (ch, o) in buf.iter_mut().enumerate() {
                            let mut s = 0.0f32;
                            for i in 0..hw {
                                s += g_out[ch * hw + i];
                            }
                            *o += s;
                        }
                    }
                }
                Op::Silu { x } => {
                    let x = *x;
                    if self.needs(x) {
                        let xd = self.nodes[x].value.data().to_vec();
                        let buf = grad_buf!(grads, self, x);
                        for i in 0..buf.len() {
                            let s = k::sigmoid(xd[i]);
                            buf[i] += g_out[i] * s * (1.0 + xd[i] * (1.0 - s));
                        }
                    }
                }
                Op::SoftmaxRows { x, cols } => {
                    let (x, cols) = (*x, *cols);
                    if self.needs(x) {
                        let y = self.nodes[id].value.data().to_vec();
                        let buf = grad_buf!(grads, self, x);
                        for (r, (g_row, y_row)) in g_out.chunks(cols).zip(y.chunks(cols)).enumerate() {
                            let dot: f32 = g_row.iter().zip(y_row).map(|(g, yv)| g * yv).sum();
                            let dst = &mut buf[r * cols..(r + 1) * cols];
                            for i in 0..cols {
                                dst[i] += y_row[i] * (g_row[i] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, cols, means, inv_stds } => {
                    let (x, gamma, beta, cols) = (*x, *gamma, *beta, *cols);
                    let means = means.clone();
                    let inv_stds = inv_stds.clone();
                    let xd = self.nodes[x].value.data().to_vec();
                    let gd = self.nodes[gamma].value.data().to_vec();
                    let cf = cols as f32;
                    if self.needs(gamma) {
                        let buf = grad_buf!(grads, self, gamma);
                        for (r, g_row) in g_out.chunks(cols).enumerate() {
                            for i in 0..cols {
                                let xhat = (xd[r * cols + i] - means[r]) * inv_stds[r];
                                buf[i] += g_row[i] * xhat;
                            }
                        }
                    }
                    if self.needs(beta) {
                        let buf = grad_buf!(grads, self, beta);
                        for g_row in g_out.chunks(cols) {
                            for (o, g) in buf.iter_mut().zip(g_row) {
                                *o += g;
                            }
                        }
                    }
                    if self.needs(x) {
                        let buf = grad_buf!(grads, self, x);
                        for (r, g_row) in g_out.chunks(cols).enumerate() {
                            // dy_hat = g * gamma; dx = inv_std*(dy_hat - mean(dy_hat) - xhat*mean(dy_hat*xhat))
                            let mut mean_dyh = 0.0f32;
                            let mut mean_dyh_xhat = 0.0f32;
                            for i in 0..cols {
                                let dyh = g_row[i] * gd[i];
                                let xhat = (xd[r * cols + i] - means[r]) * inv_stds[r];
                                mean_dyh += dyh;
                                mean_dyh_xhat += dyh * xhat;
                            }
                            mean_dyh /= cf;
                            mean_dyh_xhat /= cf;
                            let dst = &mut buf[r * cols..(r + 1) * cols];
                            for i in 0..cols {
                                let dyh = g_row[i] * gd[i];
                                let xhat = (xd[r * cols + i] - means[r]) * inv_stds[r];
                                dst[i] += inv_stds[r] * (dyh - mean_dyh - xhat * mean_dyh_xhat);
                            }
                        }
                    }
                }
                Op::EmbedGather { table, ids, dim } => {
                    let (table, dim) = (*table, *dim);
                    let ids = ids.clone();
                    if self.needs(table) {
                        let buf = grad_buf!(grads, self, table);
                        for (row, &id) in ids.iter().enumerate() {
                            let src = &g_out[row * dim..(row + 1) * dim];
                            let dst = &mut buf[id * dim..(id + 1) * dim];
                            for (o, g) in dst.iter_mut().zip(src) {
                                *o += g;
                            }
                        }
                    }
                }
                Op::Conv2d { x, w, c_in, c_out, h, w_px } => {
                    let (x, w, c_in, c_out, h, w_px) = (*x, *w, *c_in, *c_out, *h, *w_px);
                    let hw = h * w_px;
                    // Recompute im2col rather than caching it in the node.
                    let mut cols = vec![0.0; c_in * 9 * hw];
                    k::im2col_3x3(self.nodes[x].value.data(), c_in, h, w_px, &mut cols);
                    if self.needs(w) {
                        let mut dw = vec![0.0; c_out * c_in * 9];
                        k::matmul_nt(&g_out, &cols, c_out, hw, c_in * 9, &mut dw);
                        accumulate(grad_buf!(grads, self, w), &dw);
                    }
                    if self.needs(x) {
                        let mut dcols = vec![0.0; c_in * 9 * hw];
                        k::matmul_tn(self.nodes[w].value.data(), &g_out, c_in * 9, c_out, hw, &mut dcols);
                        let mut dx = vec![0.0; c_in * hw];
                        k::col2im_3x3(&dcols, c_in, h, w_px, &mut dx);
                        accumulate(grad_buf!(grads, self, x), &dx);
                    }
                }
                Op::AvgPool2 { x, c, h, w } => {
                    let (x, c, h, w) = (*x, *c, *h, *w);
                    if self.needs(x) {
                        let (oh, ow) = (h / 2, w / 2);
                        let buf = grad_buf!(grads, self, x);
                        for ch in 0..c {
                            for y in 0..oh {
                                for xw in 0..ow {
                                    let g = 0.25 * g_out[ch * oh * ow + y * ow + xw];
                                    let i = ch * h * w + 2 * y * w + 2 * xw;
                                    buf[i] += g;
                                    buf[i + 1] += g;
                                    buf[i + w] += g;
                                    buf[i + w + 1] += g;
                                }
                            }
                        }
                    }
                }
                Op::Upsample2 { x, c, h, w } => {
                    let (x, c, h, w) = (*x, *c, *h, *w);
                    if self.needs(x) {
                        let (oh, ow) = (h * 2, w * 2);
                        let buf = grad_buf!(grads, self, x);
                        for ch in 0..c {
                            for y in 0..oh {
                                for xw in 0..ow {
                                    buf[ch * h * w + (y / 2) * w + xw / 2] +=
                                        g_out[ch * oh * ow + y * ow + xw];
                                }
                            }
                        }
                    }
                }
                Op::SumAll { x } => {
                    let x = *x;
                    if self.needs(x) {
                        let g = g_out[0];
                        let buf = grad_buf!(grads, self, x);
                        for o in buf.iter_mut() {
                            *o += g;
                        }
                    }
                }
                Op::MseLoss { pred, target } => {
                    let pred = *pred;
                    let target = target.clone();
                    if self.needs(pred) {
                        let g = g_out[0];
                        let n = target.numel() as f32;
                        let pd = self.nodes[pred].value.data().to_vec();
                        let buf = grad_buf!(grads, self, pred);
                        for i in 0..buf.len() {
                            buf[i] += g * 2.0 * (pd[i] - target.data()[i]) / n;
                        }
                    }
                }
                Op::CrossEntropyRows { logits, targets, weights, probs, cols } => {
                    let (logits, cols) = (*logits, *cols);
                    let targets = targets.clone();
                    let weights = weights.clone();
                    let probs = probs.clone();
                    if self.needs(logits) {
                        let g = g_out[0];
                        let wsum: f32 = weights.iter().sum();
                        let buf = grad_buf!(grads, self, logits);
                        for r in 0..targets.len() {
                            if weights[r] == 0.0 {
                                continue;
                            }
                            let scale = g * weights[r] / wsum;
                            let dst = &mut buf[r * cols..(r + 1) * cols];
                            let p = &probs[r * cols..(r + 1) * cols];
                            for i in 0..cols {
                                let onehot = if i == targets[r] { 1.0 } else { 0.0 };
                                dst[i] += scale * (p[i] - onehot);
                            }
                        }
                    }
                }
                Op::SliceCols { x, start, len, cols } => {
                    let (x, start, len, cols) = (*x, *start, *len, *cols);
                    if self.needs(x) {
                        let rows = g_out.len() / len;
                        let buf = grad_buf!(grads, self, x);
                        for r in 0..rows {
                            for i in 0..len {
                                buf[r * cols + start + i] += g_out[r * len + i];
                            }
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let total: usize = parts.iter().map(|(_, w)| w).sum();
                    let rows = g_out.len() / total;
                    let mut offset = 0;
                    for (p, w) in parts {
                        if self.needs(p) {
                            let buf = grad_buf!(grads, self, p);
                            for r in 0..rows {
                                for i in 0..w {
                                    buf[r * w + i] += g_out[r * total + offset + i];
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    if self.needs(x) {
                        accumulate(grad_buf!(grads, self, x), &g_out);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(buf: &mut [f32], g: &[f32]) {
    debug_assert_eq!(buf.len(), g.len());
    for (o, v) in buf.iter_mut().zip(g) {
        *o += v;
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::check_elementwise;
    use super::super::rng::Rng;
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap().with_grad());
        let loss = g.sum_all(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_quadratic_is_2x() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap().with_grad());
        let sq = g.mul(x, x);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn leaf_used_twice_accumulates() {
        // loss = sum(x) + sum(x*x) => grad = 1 + 2x
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap().with_grad());
        let s1 = g.sum_all(x);
        let sq = g.mul(x, x);
        let s2 = g.sum_all(sq);
        let loss = g.add(s1, s2);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[7.0, -1.0]);
    }

    #[test]
    fn backward_is_bit_repeatable() {
        let mut rng = Rng::new(9, 0);
        let x = Tensor::randn(vec![4, 6], 1.0, &mut rng).with_grad();
        let w = Tensor::randn(vec![6, 3], 1.0, &mut rng).with_grad();
        let run = || {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let wi = g.input(w.clone());
            let y = g.matmul(xi, wi);
            let act = g.silu(y);
            let loss = g.sum_all(act);
            let grads = g.backward(loss).unwrap();
            (grads.get(xi).unwrap().to_vec(), grads.get(wi).unwrap().to_vec())
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn attention_single_token_returns_v() {
        let mut g = Graph::new();
        let q = g.input(Tensor::new(vec![1, 4], vec![0.3, -0.2, 0.9, 0.0]).unwrap());
        let kk = g.input(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let v = g.input(Tensor::new(vec![1, 4], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let out = g.attention(q, kk, v, None);
        assert_eq!(g.value(out).data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn attention_uniform_weights_average_v() {
        // Identical q rows and identical k rows give uniform attention.
        let mut g = Graph::new();
        let q = g.input(Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap());
        let kk = g.input(Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.1, 0.2]).unwrap());
        let v = g.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = g.attention(q, kk, v, None);
        for (got, want) in g.value(out).data().iter().zip(&[2.0, 3.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn masked_attention_ignores_masked_keys() {
        let mut g = Graph::new();
        let q = g.input(Tensor::new(vec![2, 2], vec![0.3, 0.1, -0.4, 0.9]).unwrap());
        let kk = g.input(Tensor::new(vec![2, 2], vec![0.2, -0.1, 0.7, 0.5]).unwrap());
        let v = g.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mask =
            Tensor::attn_mask(vec![2, 2], vec![0.0, f32::NEG_INFINITY, 0.0, f32::NEG_INFINITY])
                .unwrap();
        let out = g.attention(q, kk, v, Some(&mask));
        // Only the first key is attendable; output rows equal v[0].
        let d = g.value(out).data();
        assert!((d[0] - 1.0).abs() < 1e-6 && (d[1] - 2.0).abs() < 1e-6);
        assert!((d[2] - 1.0).abs() < 1e-6 && (d[3] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn elementwise_ops_match_reference() {
        check_elementwise();
    }
}
