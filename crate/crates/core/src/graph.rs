//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records one forward pass; `backward` replays the tape in
//! reverse and accumulates gradients additively into every reachable node
//! that requires them. Parameters are leased from a [`ParamStore`] as leaf
//! nodes and flushed back with [`Graph::accumulate_param_grads`].
//!
//! Graph construction and backward are single-threaded; the matrix kernels
//! underneath parallelise over independent output rows only, so results are
//! bitwise reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a` is (..., k) with leading dims flattened to rows; `b` is (k, n).
    Matmul { a: NodeId, b: NodeId },
    /// Batched matmul: `a` is (g, m, k); `b` is (g, k, n), or (g, n, k)
    /// when `transpose_b` is set.
    Bmm { a: NodeId, b: NodeId, transpose_b: bool },
    /// Elementwise add; `b` may be a trailing-shape broadcast of `a`.
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f32 },
    Concat { parts: Vec<NodeId> },
    Embedding { table: NodeId, ids: Vec<usize> },
    SoftmaxLastDim { x: NodeId },
    Silu { x: NodeId },
    RmsNorm { x: NodeId, gain: NodeId },
    /// Mask holds 0 or 1/(1-rate) per element.
    Dropout { x: NodeId, mask: Vec<f32> },
    Reshape { x: NodeId },
    SliceLast { x: NodeId, start: usize, len: usize },
    Mean { x: NodeId },
    Sum { x: NodeId },
    Square { x: NodeId },
    Log { x: NodeId },
    Rope { x: NodeId },
    /// Fused softmax + negative log-likelihood, averaged over the `Some`
    /// targets. `None` marks padding rows that contribute nothing.
    SoftmaxCrossEntropy { logits: NodeId, targets: Vec<Option<usize>> },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
    param: Option<ParamId>,
}

const RMSNORM_EPS: f32 = 1e-6;
const LOG_FLOOR: f32 = 1e-9;
const ROPE_BASE: f32 = 10000.0;

/// One forward/backward tape.
pub struct Graph {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
}

impl Graph {
    /// Training-mode graph: dropout is active, driven by `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Inference-mode graph: dropout is the identity.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    fn push(&mut self, tensor: Tensor, op: Op, param: Option<ParamId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { tensor, op, param });
        id
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn data(&self, id: NodeId) -> &[f32] {
        self.node(id).tensor.data()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.node(id).tensor.shape()
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.node(id).tensor.grad()
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f32 {
        debug_assert_eq!(self.node(id).tensor.numel(), 1);
        self.node(id).tensor.data()[0]
    }

    /// Add an arbitrary tensor as a leaf.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(tensor, Op::Leaf, None)
    }

    /// Add a non-differentiable constant leaf.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Result<NodeId> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    /// Lease a parameter as a differentiable leaf; gradients flow back to the
    /// store via [`Graph::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let t = Tensor::new(
            store.tensor(id).shape().to_vec(),
            store.tensor(id).data().to_vec(),
        )
        .expect("store tensor is consistent")
        .with_grad();
        self.push(t, Op::Leaf, Some(id))
    }

    /// Lease a parameter without gradient tracking (inference path).
    pub fn param_frozen(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let t = Tensor::new(
            store.tensor(id).shape().to_vec(),
            store.tensor(id).data().to_vec(),
        )
        .expect("store tensor is consistent");
        self.push(t, Op::Leaf, None)
    }

    fn unary_out(&mut self, shape: Vec<usize>, data: Vec<f32>, op: Op, rg: bool) -> NodeId {
        let mut t = Tensor::new(shape, data).expect("op produced consistent shape");
        if rg {
            t = t.with_grad();
        }
        self.push(t, op, None)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.node(id).tensor.requires_grad()
    }

    // ── Forward ops ──────────────────────────────────────────────────

    /// `a (..., k) x b (k, n)`; leading dims of `a` are treated as rows.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if bshape.len() != 2 || ashape.is_empty() || *ashape.last().unwrap() != bshape[0] {
            return Err(Error::shape(
                "matmul",
                format!("lhs {ashape:?} x rhs {bshape:?}"),
            ));
        }
        let k = bshape[0];
        let n = bshape[1];
        let rows = self.node(a).tensor.numel() / k;
        let data = linalg::matmul(self.data(a), self.data(b), rows, k, n);
        let mut out_shape = ashape;
        *out_shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.unary_out(out_shape, data, Op::Matmul { a, b }, rg))
    }

    /// Batched matmul over the leading dimension.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ashape.len() != 3 || bshape.len() != 3 || ashape[0] != bshape[0] {
            return Err(Error::shape("bmm", format!("lhs {ashape:?} x rhs {bshape:?}")));
        }
        let (g, m, k) = (ashape[0], ashape[1], ashape[2]);
        let (kk, n) = if transpose_b {
            (bshape[2], bshape[1])
        } else {
            (bshape[1], bshape[2])
        };
        if k != kk {
            return Err(Error::shape(
                "bmm",
                format!("inner dims differ: lhs {ashape:?} rhs {bshape:?} (transpose_b={transpose_b})"),
            ));
        }
        let mut data = vec![0.0f32; g * m * n];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for gi in 0..g {
                let as_ = &ad[gi * m * k..(gi + 1) * m * k];
                let bs = &bd[gi * k * n..(gi + 1) * k * n];
                let c = if transpose_b {
                    linalg::matmul_bt(as_, bs, m, k, n)
                } else {
                    linalg::matmul(as_, bs, m, k, n)
                };
                data[gi * m * n..(gi + 1) * m * n].copy_from_slice(&c);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.unary_out(vec![g, m, n], data, Op::Bmm { a, b, transpose_b }, rg))
    }

    /// Elementwise add. `b` may have a shape that is a suffix of `a`'s, in
    /// which case it is broadcast over the leading dims (bias rows, masks).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !ashape.ends_with(&bshape) {
            return Err(Error::shape("add", format!("lhs {ashape:?} + rhs {bshape:?}")));
        }
        let bn = self.node(b).tensor.numel();
        let data: Vec<f32> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + self.data(b)[i % bn])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.unary_out(ashape, data, Op::Add { a, b }, rg))
    }

    /// Elementwise subtract (same shapes).
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ashape != bshape {
            return Err(Error::shape("sub", format!("lhs {ashape:?} - rhs {bshape:?}")));
        }
        let data: Vec<f32> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.unary_out(ashape, data, Op::Sub { a, b }, rg))
    }

    /// Elementwise multiply (same shapes).
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ashape != bshape {
            return Err(Error::shape("multiply", format!("lhs {ashape:?} * rhs {bshape:?}")));
        }
        let data: Vec<f32> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.unary_out(ashape, data, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f32) -> NodeId {
        let shape = self.shape(x).to_vec();
        let data: Vec<f32> = self.data(x).iter().map(|v| v * c).collect();
        let rg = self.rg(x);
        self.unary_out(shape, data, Op::Scale { x, c }, rg)
    }

    /// Concatenate along the last dimension; leading dims must match.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs".to_string()));
        }
        let lead = self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        let mut last = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat",
                    format!("leading dims differ: {:?} vs {:?}", self.shape(parts[0]), s),
                ));
            }
            last += *s.last().unwrap();
        }
        let rows: usize = lead.iter().product();
        let mut data = vec![0.0f32; rows * last];
        let mut off = 0usize;
        for &p in parts {
            let w = *self.shape(p).last().unwrap();
            let src = self.data(p);
            for r in 0..rows {
                data[r * last + off..r * last + off + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(last);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.unary_out(shape, data, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Row lookup: `table (v, d)` gathered by `ids` into `(ids.len(), d)`.
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tshape = self.shape(table).to_vec();
        if tshape.len() != 2 {
            return Err(Error::shape("embedding_lookup", format!("table {tshape:?}")));
        }
        let (v, d) = (tshape[0], tshape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(
                "embedding_lookup",
                format!("id {bad} out of range for table with {v} rows"),
            ));
        }
        let src = self.data(table);
        let mut data = vec![0.0f32; ids.len() * d];
        for (r, &id) in ids.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.unary_out(
            vec![ids.len(), d],
            data,
            Op::Embedding { table, ids: ids.to_vec() },
            rg,
        ))
    }

    /// Softmax over the last dimension. `-inf` entries get weight exactly 0.
    pub fn softmax_lastdim(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| {
            Error::shape("softmax_lastdim", "rank-0 input".to_string())
        })?;
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.rg(x);
        Ok(self.unary_out(shape, data, Op::SoftmaxLastDim { x }, rg))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let data: Vec<f32> = self
            .data(x)
            .iter()
            .map(|&v| v * sigmoid(v))
            .collect();
        let rg = self.rg(x);
        self.unary_out(shape, data, Op::Silu { x }, rg)
    }

    /// Root-mean-square normalization over the last dim with learned gains.
    pub fn rmsnorm(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if self.shape(gain) != [d] {
            return Err(Error::shape(
                "rmsnorm",
                format!("input {:?} with gain {:?}", shape, self.shape(gain)),
            ));
        }
        let g = self.data(gain).to_vec();
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(d) {
            let ms: f32 = row.iter().map(|v| v * v).sum::<f32>() / d as f32;
            let inv = 1.0 / (ms + RMSNORM_EPS).sqrt();
            for (v, gi) in row.iter_mut().zip(&g) {
                *v = gi * *v * inv;
            }
        }
        let rg = self.rg(x) || self.rg(gain);
        Ok(self.unary_out(shape, data, Op::RmsNorm { x, gain }, rg))
    }

    /// Inverted dropout: identity when `rate == 0` or in inference mode.
    pub fn dropout(&mut self, x: NodeId, rate: f32) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 || !self.train {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..self.node(x).tensor.numel())
            .map(|_| {
                if self.rng.random::<f32>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let data: Vec<f32> = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.rg(x);
        Ok(self.unary_out(shape, data, Op::Dropout { x, mask }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.node(x).tensor.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), shape),
            ));
        }
        let data = self.data(x).to_vec();
        let rg = self.rg(x);
        Ok(self.unary_out(shape, data, Op::Reshape { x }, rg))
    }

    /// Slice `[start, start+len)` of the last dimension.
    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("slice", "rank-0"))?;
        if start + len > d {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) out of last dim {d}", start + len),
            ));
        }
        let rows = self.node(x).tensor.numel() / d;
        let src = self.data(x);
        let mut data = vec![0.0f32; rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len].copy_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.unary_out(out_shape, data, Op::SliceLast { x, start, len }, rg))
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x).tensor.numel().max(1);
        let v = self.data(x).iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let rg = self.rg(x);
        self.unary_out(vec![1], vec![v as f32], Op::Mean { x }, rg)
    }

    /// Sum over all elements, producing a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.data(x).iter().map(|&v| v as f64).sum::<f64>();
        let rg = self.rg(x);
        self.unary_out(vec![1], vec![v as f32], Op::Sum { x }, rg)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let data: Vec<f32> = self.data(x).iter().map(|v| v * v).collect();
        let rg = self.rg(x);
        self.unary_out(shape, data, Op::Square { x }, rg)
    }

    /// Natural log with a 1e-9 floor.
    pub fn log(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let data: Vec<f32> = self.data(x).iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
        let rg = self.rg(x);
        self.unary_out(shape, data, Op::Log { x }, rg)
    }

    /// Rotary positional encoding over `(..., seq, head_dim)`; row `t` of
    /// each leading group is rotated with position `t`.
    pub fn rope(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("rope", format!("need rank >= 2, got {shape:?}")));
        }
        let dh = shape[shape.len() - 1];
        let seq = shape[shape.len() - 2];
        if dh % 2 != 0 {
            return Err(Error::shape("rope", format!("head dim {dh} is odd")));
        }
        let mut data = self.data(x).to_vec();
        for group in data.chunks_mut(seq * dh) {
            for (t, row) in group.chunks_mut(dh).enumerate() {
                rope_rotate(row, t, false);
            }
        }
        let rg = self.rg(x);
        Ok(self.unary_out(shape, data, Op::Rope { x }, rg))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`,
    /// averaged over the non-`None` targets.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: Vec<Option<usize>>,
    ) -> Result<NodeId> {
        let shape = self.shape(logits).to_vec();
        let v = *shape.last().ok_or_else(|| Error::shape("cross_entropy", "rank-0"))?;
        let rows = self.node(logits).tensor.numel() / v;
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} logit rows vs {} targets", rows, targets.len()),
            ));
        }
        if let Some(&Some(bad)) = targets.iter().find(|t| matches!(t, Some(i) if *i >= v)) {
            return Err(Error::shape(
                "cross_entropy",
                format!("target id {bad} out of range for {v} classes"),
            ));
        }
        let m = targets.iter().filter(|t| t.is_some()).count();
        if m == 0 {
            return Err(Error::EmptyInput("cross entropy needs at least one unmasked target"));
        }
        let data = self.data(logits);
        let mut total = 0.0f64;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                let row = &data[r * v..(r + 1) * v];
                let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let lse: f32 = row.iter().map(|&x| (x - max).exp()).sum::<f32>().ln() + max;
                total += (lse - row[*t]) as f64;
            }
        }
        let loss = (total / m as f64) as f32;
        let rg = self.rg(logits);
        Ok(self.unary_out(
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy { logits, targets },
            rg,
        ))
    }

    /// Constant `(seq, seq)` causal mask: 0 on and below the diagonal,
    /// `-inf` strictly above.
    pub fn causal_mask(&mut self, seq: usize) -> NodeId {
        let mut data = vec![0.0f32; seq * seq];
        for t in 0..seq {
            for j in t + 1..seq {
                data[t * seq + j] = f32::NEG_INFINITY;
            }
        }
        self.leaf(Tensor::new(vec![seq, seq], data).expect("mask shape"))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Populate gradients of every reachable `requires_grad` node with
    /// d(loss)/d(node). Gradients accumulate additively across uses.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.node(loss).tensor.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].tensor.accumulate_grad(&[1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tensor.requires_grad() {
                continue;
            }
            let Some(gy) = self.nodes[i].tensor.take_grad() else {
                continue;
            };
            let contribs = self.backward_step(i, &gy);
            self.nodes[i].tensor.set_grad(Some(gy));
            for (pid, delta) in contribs {
                self.nodes[pid.0].tensor.accumulate_grad(&delta);
            }
        }
        Ok(())
    }

    /// Flush gradients of leased parameter nodes back into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Some(pid), Some(grad)) = (node.param, node.tensor.grad()) {
                store.tensor_mut(pid).accumulate_grad(grad);
            }
        }
    }

    fn backward_step(&self, i: usize, gy: &[f32]) -> Vec<(NodeId, Vec<f32>)> {
        let mut out: Vec<(NodeId, Vec<f32>)> = Vec::new();
        let mut emit = |id: NodeId, v: Vec<f32>| out.push((id, v));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let k = self.shape(*b)[0];
                let n = self.shape(*b)[1];
                let rows = self.node(*a).tensor.numel() / k;
                if self.rg(*a) {
                    emit(*a, linalg::matmul_bt(gy, self.data(*b), rows, n, k));
                }
                if self.rg(*b) {
                    emit(*b, linalg::matmul_at(self.data(*a), gy, rows, k, n));
                }
            }
            Op::Bmm { a, b, transpose_b } => {
                let (g, m, k) = {
                    let s = self.shape(*a);
                    (s[0], s[1], s[2])
                };
                let n = self.shape(i_id(i)).last().copied().unwrap();
                let ad = self.data(*a);
                let bd = self.data(*b);
                if self.rg(*a) {
                    let mut da = vec![0.0f32; g * m * k];
                    for gi in 0..g {
                        let gys = &gy[gi * m * n..(gi + 1) * m * n];
                        let bs = &bd[gi * k * n..(gi + 1) * k * n];
                        let slice = if *transpose_b {
                            // c = a * b^T with b stored (n, k): da = gy * b
                            linalg::matmul(gys, bs, m, n, k)
                        } else {
                            linalg::matmul_bt(gys, bs, m, n, k)
                        };
                        da[gi * m * k..(gi + 1) * m * k].copy_from_slice(&slice);
                    }
                    emit(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0f32; g * k * n];
                    for gi in 0..g {
                        let gys = &gy[gi * m * n..(gi + 1) * m * n];
                        let as_ = &ad[gi * m * k..(gi + 1) * m * k];
                        let slice = if *transpose_b {
                            // db (n, k) = gy^T * a summed over m
                            linalg::matmul_at(gys, as_, m, n, k)
                        } else {
                            linalg::matmul_at(as_, gys, m, k, n)
                        };
                        db[gi * k * n..(gi + 1) * k * n].copy_from_slice(&slice);
                    }
                    emit(*b, db);
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    emit(*a, gy.to_vec());
                }
                if self.rg(*b) {
                    let bn = self.node(*b).tensor.numel();
                    let mut db = vec![0.0f32; bn];
                    for (j, &v) in gy.iter().enumerate() {
                        db[j % bn] += v;
                    }
                    emit(*b, db);
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    emit(*a, gy.to_vec());
                }
                if self.rg(*b) {
                    emit(*b, gy.iter().map(|v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    emit(*a, gy.iter().zip(self.data(*b)).map(|(g, v)| g * v).collect());
                }
                if self.rg(*b) {
                    emit(*b, gy.iter().zip(self.data(*a)).map(|(g, v)| g * v).collect());
                }
            }
            Op::Scale { x, c } => {
                if self.rg(*x) {
                    emit(*x, gy.iter().map(|v| v * c).collect());
                }
            }
            Op::Concat { parts } => {
                let out_last = *self.shape(i_id(i)).last().unwrap();
                let rows = self.node(i_id(i)).tensor.numel() / out_last;
                let mut off = 0usize;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if self.rg(p) {
                        let mut dp = vec![0.0f32; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&gy[r * out_last + off..r * out_last + off + w]);
                        }
                        emit(p, dp);
                    }
                    off += w;
                }
            }
            Op::Embedding { table, ids } => {
                if self.rg(*table) {
                    let d = self.shape(*table)[1];
                    let mut dt = vec![0.0f32; self.node(*table).tensor.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += gy[r * d + j];
                        }
                    }
                    emit(*table, dt);
                }
            }
            Op::SoftmaxLastDim { x } => {
                if self.rg(*x) {
                    let d = *self.shape(i_id(i)).last().unwrap();
                    let w = self.data(i_id(i));
                    let mut dx = vec![0.0f32; w.len()];
                    for r in 0..w.len() / d {
                        let wr = &w[r * d..(r + 1) * d];
                        let gr = &gy[r * d..(r + 1) * d];
                        let dot: f32 = wr.iter().zip(gr).map(|(w, g)| w * g).sum();
                        for j in 0..d {
                            dx[r * d + j] = wr[j] * (gr[j] - dot);
                        }
                    }
                    emit(*x, dx);
                }
            }
            Op::Silu { x } => {
                if self.rg(*x) {
                    emit(
                        *x,
                        gy.iter()
                            .zip(self.data(*x))
                            .map(|(g, &v)| {
                                let s = sigmoid(v);
                                g * (s + v * s * (1.0 - s))
                            })
                            .collect(),
                    );
                }
            }
            Op::RmsNorm { x, gain } => {
                let d = *self.shape(*x).last().unwrap();
                let xd = self.data(*x);
                let gd = self.data(*gain);
                let rows = xd.len() / d;
                let want_x = self.rg(*x);
                let want_g = self.rg(*gain);
                let mut dx = if want_x { vec![0.0f32; xd.len()] } else { Vec::new() };
                let mut dg = if want_g { vec![0.0f32; d] } else { Vec::new() };
                for r in 0..rows {
                    let xr = &xd[r * d..(r + 1) * d];
                    let gr = &gy[r * d..(r + 1) * d];
                    let ms: f32 = xr.iter().map(|v| v * v).sum::<f32>() / d as f32;
                    let rms = (ms + RMSNORM_EPS).sqrt();
                    if want_g {
                        for j in 0..d {
                            dg[j] += gr[j] * xr[j] / rms;
                        }
                    }
                    if want_x {
                        let dot: f32 = (0..d).map(|j| gr[j] * gd[j] * xr[j]).sum();
                        let inv3 = 1.0 / (rms * rms * rms);
                        for j in 0..d {
                            dx[r * d + j] =
                                gr[j] * gd[j] / rms - xr[j] * dot * inv3 / d as f32;
                        }
                    }
                }
                if want_x {
                    emit(*x, dx);
                }
                if want_g {
                    emit(*gain, dg);
                }
            }
            Op::Dropout { x, mask } => {
                if self.rg(*x) {
                    emit(*x, gy.iter().zip(mask).map(|(g, m)| g * m).collect());
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    emit(*x, gy.to_vec());
                }
            }
            Op::SliceLast { x, start, len } => {
                if self.rg(*x) {
                    let d = *self.shape(*x).last().unwrap();
                    let rows = self.node(*x).tensor.numel() / d;
                    let mut dx = vec![0.0f32; self.node(*x).tensor.numel()];
                    for r in 0..rows {
                        dx[r * d + start..r * d + start + len]
                            .copy_from_slice(&gy[r * len..(r + 1) * len]);
                    }
                    emit(*x, dx);
                }
            }
            Op::Mean { x } => {
                if self.rg(*x) {
                    let n = self.node(*x).tensor.numel();
                    let g = gy[0] / n as f32;
                    emit(*x, vec![g; n]);
                }
            }
            Op::Sum { x } => {
                if self.rg(*x) {
                    emit(*x, vec![gy[0]; self.node(*x).tensor.numel()]);
                }
            }
            Op::Square { x } => {
                if self.rg(*x) {
                    emit(
                        *x,
                        gy.iter().zip(self.data(*x)).map(|(g, v)| g * 2.0 * v).collect(),
                    );
                }
            }
            Op::Log { x } => {
                if self.rg(*x) {
                    emit(
                        *x,
                        gy.iter()
                            .zip(self.data(*x))
                            .map(|(g, &v)| if v <= LOG_FLOOR { 0.0 } else { g / v })
                            .collect(),
                    );
                }
            }
            Op::Rope { x } => {
                if self.rg(*x) {
                    let shape = self.shape(*x);
                    let dh = shape[shape.len() - 1];
                    let seq = shape[shape.len() - 2];
                    let mut dx = gy.to_vec();
                    for group in dx.chunks_mut(seq * dh) {
                        for (t, row) in group.chunks_mut(dh).enumerate() {
                            rope_rotate(row, t, true);
                        }
                    }
                    emit(*x, dx);
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                if self.rg(*logits) {
                    let v = *self.shape(*logits).last().unwrap();
                    let ld = self.data(*logits);
                    let m = targets.iter().filter(|t| t.is_some()).count().max(1);
                    let scale = gy[0] / m as f32;
                    let mut dl = vec![0.0f32; ld.len()];
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let row = &ld[r * v..(r + 1) * v];
                            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                            let sum: f32 = row.iter().map(|&x| (x - max).exp()).sum();
                            for j in 0..v {
                                let p = (row[j] - max).exp() / sum;
                                let onehot = if j == *t { 1.0 } else { 0.0 };
                                dl[r * v + j] = scale * (p - onehot);
                            }
                        }
                    }
                    emit(*logits, dl);
                }
            }
        }
        out
    }
}

fn i_id(i: usize) -> NodeId {
    NodeId(i)
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place rotary rotation of one row at `position`; `inverse` applies the
/// transpose (used by the backward pass).
pub(crate) fn rope_rotate(row: &mut [f32], position: usize, inverse: bool) {
    let dh = row.len();
    let half = dh / 2;
    for i in 0..half {
        let theta = position as f32 * ROPE_BASE.powf(-2.0 * i as f32 / dh as f32);
        let (sin, cos) = theta.sin_cos();
        let sin = if inverse { -sin } else { sin };
        let a = row[2 * i];
        let b = row[2 * i + 1];
        row[2 * i] = a * cos - b * sin;
        row[2 * i + 1] = a * sin + b * cos;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_grad(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(shape, data).unwrap().with_grad()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::inference();
        let a = g.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = g.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = g.matmul(a, eye).unwrap();
        assert_eq!(g.data(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut g = Graph::inference();
        let a = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn silu_values() {
        let mut g = Graph::inference();
        let x = g.constant(vec![2], vec![0.0, 1.0]).unwrap();
        let y = g.silu(x);
        assert_eq!(g.data(y)[0], 0.0);
        assert!((g.data(y)[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn softmax_singleton_is_one() {
        let mut g = Graph::inference();
        let x = g.constant(vec![1], vec![5.0]).unwrap();
        let y = g.softmax_lastdim(x).unwrap();
        assert_eq!(g.data(y), &[1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // loss = sum(x * x), grad = 2x
        let mut g = Graph::inference();
        let x = g.leaf(leaf_grad(vec![3], vec![1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::inference();
        let x = g.leaf(leaf_grad(vec![4], vec![0.5, -1.0, 2.0, 7.0]));
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::inference();
        let x = g.leaf(leaf_grad(vec![2], vec![1.0, 2.0]));
        assert!(matches!(
            g.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn add_distributes_gradients_unchanged() {
        let mut g = Graph::inference();
        let a = g.leaf(leaf_grad(vec![3], vec![1.0, 2.0, 3.0]));
        let b = g.leaf(leaf_grad(vec![3], vec![4.0, 5.0, 6.0]));
        let s = g.add(a, b).unwrap();
        let x2 = g.scale(s, 3.0);
        let loss = g.sum(x2);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[3.0; 3]);
        assert_eq!(g.grad(b).unwrap(), &[3.0; 3]);
    }

    #[test]
    fn concat_splits_gradients_by_segment() {
        let mut g = Graph::inference();
        let a = g.leaf(leaf_grad(vec![1, 2], vec![1.0, 2.0]));
        let b = g.leaf(leaf_grad(vec![1, 3], vec![3.0, 4.0, 5.0]));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[1, 5]);
        let w = g.constant(vec![1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let p = g.mul(c, w).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 2.0]);
        assert_eq!(g.grad(b).unwrap(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn gradient_accumulates_across_uses() {
        // loss = sum(x) + sum(x): grad = 2
        let mut g = Graph::inference();
        let x = g.leaf(leaf_grad(vec![2], vec![1.0, 1.0]));
        let s1 = g.sum(x);
        let s2 = g.sum(x);
        let loss = g.add(s1, s2).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut g = Graph::training(1);
        let x = g.constant(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = g.dropout(x, 0.0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_inference_is_identity_at_any_rate() {
        let mut g = Graph::inference();
        let x = g.constant(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = g.dropout(x, 0.9).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_scales_kept_values() {
        let mut g = Graph::training(3);
        let x = g.constant(vec![1000], vec![1.0; 1000]).unwrap();
        let y = g.dropout(x, 0.5).unwrap();
        let data = g.data(y);
        assert!(data.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = data.iter().filter(|&&v| v != 0.0).count();
        assert!(kept > 350 && kept < 650, "kept {kept} of 1000");
    }

    #[test]
    fn rope_position_zero_is_identity_and_preserves_norm() {
        let mut g = Graph::inference();
        let x = g
            .constant(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 0.0])
            .unwrap();
        let y = g.rope(x).unwrap();
        assert_eq!(&g.data(y)[..4], &[1.0, 2.0, 3.0, 4.0]);
        let norm_in: f32 = g.data(x)[4..].iter().map(|v| v * v).sum();
        let norm_out: f32 = g.data(y)[4..].iter().map(|v| v * v).sum();
        assert!((norm_in - norm_out).abs() < 1e-5);
    }

    #[test]
    fn rope_two_dim_rotation() {
        let mut g = Graph::inference();
        let x = g.constant(vec![2, 2], vec![9.0, 9.0, 1.0, 0.0]).unwrap();
        let y = g.rope(x).unwrap();
        let row1 = &g.data(y)[2..];
        assert!((row1[0] - 1f32.cos()).abs() < 1e-6);
        assert!((row1[1] - 1f32.sin()).abs() < 1e-6);
    }

    #[test]
    fn rope_rejects_odd_head_dim() {
        let mut g = Graph::inference();
        let x = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(g.rope(x).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let mut g = Graph::inference();
        let logits = g.constant(vec![3, 7], vec![0.0; 21]).unwrap();
        let loss = g
            .softmax_cross_entropy(logits, vec![Some(0), Some(3), Some(6)])
            .unwrap();
        assert!((g.scalar_value(loss) - (7.0f32).ln()).abs() < 1e-6);
    }

    #[test]
    fn causal_mask_zeroes_upper_weights() {
        let mut g = Graph::inference();
        let scores = g.constant(vec![1, 3, 3], vec![0.3; 9]).unwrap();
        let mask = g.causal_mask(3);
        let masked = g.add(scores, mask).unwrap();
        let w = g.softmax_lastdim(masked).unwrap();
        let d = g.data(w);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
        assert_eq!(d[5], 0.0);
        assert_eq!(d[0], 1.0);
        assert!((d[3] - 0.5).abs() < 1e-6);
    }
}
