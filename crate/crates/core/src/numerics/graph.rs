//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking the tape backwards is a valid reverse
//! topological order.

use rand::Rng;

use super::kernels::bgemm_acc;
use super::tensor::numel;
use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Param(usize),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        n: usize,
        k: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Softmax {
        x: Var,
        axis: usize,
    },
    AttnSoftmax(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<T>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    GatherCols {
        table: Var,
        idx: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<T>,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation over `T`-valued tensors.
#[derive(Debug, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Grads<T: Real> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub const NORM_EPS: f64 = 1e-6;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copies the node's value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is valid")
    }

    /// Inserts an input tensor. Gradients flow to it iff `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!("constant {shape:?} with {} values", data.len())));
        }
        Ok(self.push(data, shape, Op::Leaf, false))
    }

    /// Inserts parameter `id` of `store`; its gradient is routed back to the
    /// store by [`Graph::backward_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: usize) -> Var {
        let t = store.tensor(id);
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Param(id), t.requires_grad)
    }

    /// 2-D matrix product `a[m×k] · b[k×n]`, or `a · bᵀ` for `b[n×k]`
    /// when `trans_b` is set.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(format!("matmul needs 2-D operands, got {sa:?} and {sb:?}")));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape(format!("matmul inner dimensions {sa:?} x {sb:?}")));
        }
        self.matmul_impl(a, b, 1, m, n, k, trans_b, vec![m, n])
    }

    /// Batched product over the leading axis of two 3-D tensors.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape(format!("bmm operands {sa:?} and {sb:?}")));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(Error::shape(format!("bmm inner dimensions {sa:?} x {sb:?}")));
        }
        self.matmul_impl(a, b, batch, m, n, k, trans_b, vec![batch, m, n])
    }

    #[allow(clippy::too_many_arguments)]
    fn matmul_impl(
        &mut self,
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        n: usize,
        k: usize,
        trans_b: bool,
        shape: Vec<usize>,
    ) -> Result<Var> {
        let mut out = vec![T::ZERO; batch * m * n];
        bgemm_acc(batch, m, n, k, self.value(a), false, self.value(b), trans_b, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            out,
            shape,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                n,
                k,
                trans_b,
            },
            ng,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, self.shape(a).to_vec(), Op::Add(a, b), ng))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s; `b` repeats over the
    /// leading axes.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(format!("cannot broadcast {sb:?} onto {sa:?}")));
        }
        let bv = self.value(b);
        let nb = bv.len();
        let out = self
            .value(a)
            .chunks(nb)
            .flat_map(|chunk| chunk.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, sa.to_vec(), Op::AddBroadcast(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!("mul {:?} * {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, self.shape(a).to_vec(), Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let ng = self.ng(a);
        self.push(out, self.shape(a).to_vec(), Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| if x > T::ZERO { x } else { T::ZERO }).collect();
        let ng = self.ng(a);
        self.push(out, self.shape(a).to_vec(), Op::Relu(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(a).len() {
            return Err(Error::shape(format!("reshape {:?} into {shape:?}", self.shape(a))));
        }
        let out = self.value(a).to_vec();
        let ng = self.ng(a);
        Ok(self.push(out, shape, Op::Reshape(a), ng))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!("invalid permutation {perm:?} for {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = permute_data(self.value(a), &shape, perm);
        let ng = self.ng(a);
        Ok(self.push(out, out_shape, Op::Permute(a, perm.to_vec()), ng))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!("softmax axis {axis} for rank {}", shape.len())));
        }
        let out = softmax_axis(self.value(x), &shape, axis)?;
        let ng = self.ng(x);
        Ok(self.push(out, shape, Op::Softmax { x, axis }, ng))
    }

    /// Softmax over the last axis of attention scores `[B, H, Q, K]`.
    /// `mask[b, q, k]` marks allowed positions; disallowed ones get exactly
    /// zero weight, as if their logit were −∞.
    pub fn attn_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || mask.len() != shape[0] * shape[2] * shape[3] {
            return Err(Error::shape(format!(
                "attention mask of length {} for scores {shape:?}",
                mask.len()
            )));
        }
        let (b, h, q, k) = (shape[0], shape[1], shape[2], shape[3]);
        let xv = self.value(x);
        let mut out = vec![T::ZERO; xv.len()];
        for bi in 0..b {
            for hi in 0..h {
                for qi in 0..q {
                    let row = ((bi * h + hi) * q + qi) * k;
                    let m = &mask[(bi * q + qi) * k..(bi * q + qi + 1) * k];
                    softmax_row_masked(&xv[row..row + k], m, &mut out[row..row + k])?;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, shape, Op::AttnSoftmax(x), ng))
    }

    /// `y = gain ⊙ x / sqrt(mean(x²) + ε)` over the last axis.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("non-empty shape");
        if self.shape(gain) != [d] {
            return Err(Error::shape(format!("rms_norm gain {:?} for input {shape:?}", self.shape(gain))));
        }
        let (xv, gv) = (self.value(x), self.value(gain));
        let eps = T::from_f64(NORM_EPS);
        let dn = T::from_f64(d as f64);
        let rows = xv.len() / d;
        let mut out = Vec::with_capacity(xv.len());
        let mut inv_rms = Vec::with_capacity(rows);
        for row in xv.chunks(d) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
            let inv = T::ONE / (ms + eps).sqrt();
            inv_rms.push(inv);
            out.extend(row.iter().zip(gv).map(|(&v, &g)| g * v * inv));
        }
        let ng = self.ng(x) || self.ng(gain);
        Ok(self.push(out, shape, Op::RmsNorm { x, gain, inv_rms }, ng))
    }

    /// Selects rows of a 2-D table: output `[ids.len(), cols]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::shape(format!("gather_rows on {shape:?}")));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("row index {bad} out of range for {rows} rows")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&tv[i * cols..(i + 1) * cols]);
        }
        let ng = self.ng(table);
        Ok(self.push(out, vec![ids.len(), cols], Op::GatherRows { table, ids: ids.to_vec() }, ng))
    }

    /// Selects columns of a 2-D table: output `[rows, idx.len()]`.
    pub fn gather_cols(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::shape(format!("gather_cols on {shape:?}")));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::invalid(format!("column index {bad} out of range for {cols} columns")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            out.extend(idx.iter().map(|&c| tv[r * cols + c]));
        }
        let ng = self.ng(table);
        Ok(self.push(out, vec![rows, idx.len()], Op::GatherCols { table, idx: idx.to_vec() }, ng))
    }

    /// Inverted dropout. A zero rate returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::ZERO } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let ng = self.ng(x);
        self.push(out, self.shape(x).to_vec(), Op::Dropout { x, mask }, ng)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[n×V]`, skipping positions whose target equals `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::shape(format!(
                "cross_entropy logits {shape:?} for {} targets",
                targets.len()
            )));
        }
        let v = shape[1];
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore && t >= v) {
            return Err(Error::invalid(format!("target id {bad} outside vocabulary of {v}")));
        }
        let count = targets.iter().filter(|&&t| t != ignore).count();
        if count == 0 {
            return Err(Error::invalid("cross_entropy: every position is ignored"));
        }
        let lv = self.value(logits);
        let mut probs = vec![T::ZERO; lv.len()];
        let mut total = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            let row = &lv[i * v..(i + 1) * v];
            let mx = row.iter().copied().fold(T::NEG_INFINITY, T::max);
            let mut z = T::ZERO;
            for (p, &x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (x - mx).exp();
                z += *p;
            }
            for p in &mut probs[i * v..(i + 1) * v] {
                *p = *p / z;
            }
            total += (mx + z.ln() - row[t]).to_f64();
        }
        let loss = T::from_f64(total / count as f64);
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross_entropy".into()));
        }
        let ng = self.ng(logits);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(vec![s], vec![1], Op::Sum(a), ng)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Runs [`Graph::backward`] and accumulates parameter gradients into
    /// `store`. Repeated calls keep accumulating until the store is zeroed.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Grads<T>> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.tensor_mut(*id).accumulate_grad(g)?;
            }
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let send = |v: Var, grads: &mut [Option<Vec<T>>], f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::ZERO; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                n,
                k,
                trans_b,
            } => {
                let (av, bv) = (self.value(a), self.value(b));
                // dA = dC · op(B)ᵀ
                send(a, grads, &mut |ga| bgemm_acc(batch, m, k, n, g, false, bv, !trans_b, ga));
                if trans_b {
                    // B is n×k: dB = dCᵀ · A
                    send(b, grads, &mut |gb| bgemm_acc(batch, n, k, m, g, true, av, false, gb));
                } else {
                    // dB = Aᵀ · dC
                    send(b, grads, &mut |gb| bgemm_acc(batch, k, n, m, av, true, g, false, gb));
                }
            }
            &Op::Add(a, b) => {
                send(a, grads, &mut |ga| add_into(ga, g));
                send(b, grads, &mut |gb| add_into(gb, g));
            }
            &Op::AddBroadcast(a, b) => {
                send(a, grads, &mut |ga| add_into(ga, g));
                send(b, grads, &mut |gb| {
                    for chunk in g.chunks(gb.len()) {
                        add_into(gb, chunk);
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                send(a, grads, &mut |ga| {
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                });
                send(b, grads, &mut |gb| {
                    for ((d, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                });
            }
            &Op::Scale(a, c) => send(a, grads, &mut |ga| {
                for (d, &gi) in ga.iter_mut().zip(g) {
                    *d += gi * c;
                }
            }),
            &Op::Relu(a) => {
                let av = self.value(a);
                send(a, grads, &mut |ga| {
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(av) {
                        if x > T::ZERO {
                            *d += gi;
                        }
                    }
                });
            }
            &Op::Reshape(a) => send(a, grads, &mut |ga| add_into(ga, g)),
            Op::Permute(a, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let back = permute_data(g, &node.shape, &inverse);
                send(*a, grads, &mut |ga| add_into(ga, &back));
            }
            &Op::Softmax { x, axis } => {
                let y = &node.value;
                let shape = &node.shape;
                let n = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                send(x, grads, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dotp: T = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - dotp);
                            }
                        }
                    }
                });
            }
            &Op::AttnSoftmax(x) => {
                let y = &node.value;
                let k = *node.shape.last().expect("rank 4");
                send(x, grads, &mut |gx| {
                    for ((gxr, gr), yr) in gx.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let dotp: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((d, &gi), &yi) in gxr.iter_mut().zip(gr).zip(yr) {
                            *d += yi * (gi - dotp);
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                let d = gv.len();
                let dn = T::from_f64(d as f64);
                send(*gain, grads, &mut |gg| {
                    for ((xr, gr), &inv) in xv.chunks(d).zip(g.chunks(d)).zip(inv_rms) {
                        for j in 0..d {
                            gg[j] += gr[j] * xr[j] * inv;
                        }
                    }
                });
                send(*x, grads, &mut |gx| {
                    for (((gxr, xr), gr), &inv) in gx.chunks_mut(d).zip(xv.chunks(d)).zip(g.chunks(d)).zip(inv_rms) {
                        // dy/dx = inv·(diag(gain) − x (gain⊙x)ᵀ inv² / d)
                        let s: T = (0..d).map(|j| gr[j] * gv[j] * xr[j]).sum();
                        let c = s * inv * inv * inv / dn;
                        for j in 0..d {
                            gxr[j] += gr[j] * gv[j] * inv - xr[j] * c;
                        }
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let cols = self.shape(*table)[1];
                send(*table, grads, &mut |gt| {
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut gt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::GatherCols { table, idx } => {
                let cols = self.shape(*table)[1];
                let n = idx.len();
                send(*table, grads, &mut |gt| {
                    for (r, gr) in g.chunks(n).enumerate() {
                        for (&c, &gi) in idx.iter().zip(gr) {
                            gt[r * cols + c] += gi;
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => send(*x, grads, &mut |gx| {
                for ((d, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                    *d += gi * m;
                }
            }),
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                let v = self.shape(*logits)[1];
                let scale = g[0] / T::from_f64(*count as f64);
                send(*logits, grads, &mut |gl| {
                    for (i, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        for j in 0..v {
                            gl[i * v + j] += probs[i * v + j] * scale;
                        }
                        gl[i * v + t] -= scale;
                    }
                });
            }
            &Op::Sum(a) => send(a, grads, &mut |ga| {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }),
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn permute_data<T: Real>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

fn softmax_row_masked<T: Real>(x: &[T], allowed: &[bool], out: &mut [T]) -> Result<()> {
    let mx = x
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v)
        .fold(T::NEG_INFINITY, T::max);
    if !mx.is_finite() {
        return Err(Error::invalid("softmax over a fully masked row"));
    }
    let mut z = T::ZERO;
    for ((o, &v), &a) in out.iter_mut().zip(x).zip(allowed) {
        if a {
            *o = (v - mx).exp();
            z += *o;
        }
    }
    for (o, &a) in out.iter_mut().zip(allowed) {
        if a {
            *o = *o / z;
        }
    }
    Ok(())
}

/// Numerically stable softmax along `axis` of a row-major array.
pub fn softmax_axis<T: Real>(x: &[T], shape: &[usize], axis: usize) -> Result<Vec<T>> {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::ZERO; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let mx = (0..n).map(|j| x[at(j)]).fold(T::NEG_INFINITY, T::max);
            if !mx.is_finite() {
                return Err(Error::invalid("softmax over a row with no finite logit"));
            }
            let mut z = T::ZERO;
            for j in 0..n {
                let e = (x[at(j)] - mx).exp();
                out[at(j)] = e;
                z += e;
            }
            for j in 0..n {
                out[at(j)] = out[at(j)] / z;
            }
        }
    }
    Ok(out)
}

/// Log-softmax of one row, in `f64`.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}
