//! Computation record and reverse-mode gradient pass.
//!
//! A [`Graph`] appends one node per primitive application, so node order is
//! a topological order by construction. [`Graph::backward`] walks the nodes
//! in reverse and accumulates vector-Jacobian products; a node consumed
//! several times receives the sum of its consumers' contributions.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Probability floor applied inside [`Graph::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// How the right operand of an elementwise op is expanded to the left shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    /// `1 × n` operand repeated over rows.
    Row,
    /// `m × 1` operand repeated over columns.
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    Concat(Vec<usize>),
    Slice {
        input: usize,
        start: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    CrossEntropy {
        probs: usize,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients keyed by parameter name, one tensor per registered parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap(BTreeMap<String, Tensor>);

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale every gradient so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for t in self.0.values_mut() {
                t.scale_assign(factor);
            }
        }
    }
}

/// The computation record of one forward pass.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        debug_assert!(value.is_finite(), "non-finite result from {op:?}");
        self.nodes.push(Node { op, value });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::usage("variable does not belong to this graph"));
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "variable does not belong to this graph");
        &self.nodes[v.index].value
    }

    /// A constant input; it receives no entry in the gradient map.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// A named parameter; `backward` reports its gradient under `name`.
    pub fn param(&mut self, name: impl Into<String>, t: Tensor) -> Var {
        let v = self.push(Op::Leaf, t);
        self.params.push((name.into(), v.index));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ia).matmul(self.val(ib))?;
        Ok(self.push(Op::MatMul(ia, ib), out))
    }

    fn broadcast_kind(&self, op: &'static str, ia: usize, ib: usize) -> Result<Broadcast> {
        let (a, b) = (self.val(ia).shape(), self.val(ib).shape());
        if a == b {
            Ok(Broadcast::None)
        } else if b[0] == 1 && b[1] == a[1] {
            Ok(Broadcast::Row)
        } else if b[1] == 1 && b[0] == a[0] {
            Ok(Broadcast::Col)
        } else {
            Err(Error::Dimension { op, lhs: a, rhs: b })
        }
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let kind = self.broadcast_kind(op, ia, ib)?;
        let (lhs, rhs) = (self.val(ia), self.val(ib));
        let cols = lhs.cols();
        let data = lhs
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let y = match kind {
                    Broadcast::None => rhs.data()[k],
                    Broadcast::Row => rhs.data()[k % cols],
                    Broadcast::Col => rhs.data()[k / cols],
                };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(lhs.rows(), cols, data)?;
        Ok(self.push(make(ia, ib, kind), out))
    }

    /// `a + b`; `b` may be a `1 × n` row or `m × 1` column broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product, same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x * factor);
        Ok(self.push(Op::Scale(ia, factor), out))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(f64::tanh);
        Ok(self.push(Op::Tanh(ia), out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| 1.0 / (1.0 + (-x).exp()));
        Ok(self.push(Op::Sigmoid(ia), out))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_inner(a, None)
    }

    /// Row-wise softmax over the positions where `mask` is true; masked
    /// positions come out as exact zeros. Every row needs one true entry.
    pub fn masked_softmax(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        self.softmax_inner(a, Some(mask))
    }

    fn softmax_inner(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let (rows, cols) = (x.rows(), x.cols());
        if let Some(m) = &mask {
            if m.len() != x.len() {
                return Err(Error::Dimension {
                    op: "masked_softmax",
                    lhs: x.shape(),
                    rhs: [m.len(), 1],
                });
            }
        }
        let keep = |r: usize, c: usize| mask.as_ref().map_or(true, |m| m[r * cols + c]);
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = x.row(r);
            let max = (0..cols)
                .filter(|&c| keep(r, c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::usage(format!("softmax row {r} is fully masked")));
            }
            let out_row = out.row_mut(r);
            let mut total = 0.0;
            for c in 0..cols {
                if keep(r, c) {
                    out_row[c] = (row[c] - max).exp();
                    total += out_row[c];
                }
            }
            for v in out_row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(Op::Softmax(ia), out))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let first = *idx
            .first()
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let rows = self.val(first).rows();
        for &i in &idx {
            if self.val(i).rows() != rows {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: self.val(first).shape(),
                    rhs: self.val(i).shape(),
                });
            }
        }
        let cols: usize = idx.iter().map(|&i| self.val(i).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.val(i).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(Op::Concat(idx), out))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        if len == 0 || start + len > x.cols() {
            return Err(Error::Index {
                what: "column slice end",
                index: start + len,
                size: x.cols(),
            });
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let out = Tensor::new(x.rows(), len, data)?;
        Ok(self.push(Op::Slice { input: ia, start }, out))
    }

    /// Gathers one table row per id into a `ids.len() × d` tensor.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.idx(table)?;
        let t = self.val(it);
        if ids.is_empty() {
            return Err(Error::usage("embedding lookup with no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    size: t.rows(),
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(ids.len(), t.cols(), data)?;
        Ok(self.push(
            Op::Embedding {
                table: it,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    /// `Σ_r weights[r] · −ln max(probs[r, targets[r]], 1e-12)` as a scalar.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let ip = self.idx(probs)?;
        let p = self.val(ip);
        if targets.len() != p.rows() || weights.len() != p.rows() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: p.shape(),
                rhs: [targets.len(), weights.len()],
            });
        }
        let mut loss = 0.0;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if t >= p.cols() {
                return Err(Error::Index {
                    what: "target distribution",
                    index: t,
                    size: p.cols(),
                });
            }
            if w != 0.0 {
                loss -= w * p.get(r, t).max(PROB_FLOOR).ln();
            }
        }
        Ok(self.push(
            Op::CrossEntropy {
                probs: ip,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.val(ia).sum();
        Ok(self.push(Op::Sum(ia), Tensor::scalar(s)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let m = x.sum() / x.len() as f64;
        Ok(self.push(Op::Mean(ia), Tensor::scalar(m)))
    }

    /// Reverse pass from a scalar `loss`. Every registered parameter gets an
    /// entry; parameters the loss never reaches map to zero tensors.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let il = self
            .idx(loss)
            .map_err(|_| Error::usage("loss is not part of this computation record"))?;
        if self.val(il).shape() != [1, 1] {
            return Err(Error::usage(format!(
                "loss must be a scalar, got {:?}",
                self.val(il).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(il + 1);
        grads.resize_with(il + 1, || None);
        grads[il] = Some(Tensor::scalar(1.0));

        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let mut map = BTreeMap::new();
        for (name, i) in &self.params {
            let g = grads
                .get(*i)
                .and_then(Option::as_ref)
                .cloned()
                .unwrap_or_else(|| {
                    let s = self.val(*i).shape();
                    Tensor::zeros(s[0], s[1])
                });
            match map.get_mut(name) {
                None => {
                    map.insert(name.clone(), g);
                }
                Some(acc) => Tensor::add_assign(acc, &g),
            }
        }
        Ok(GradientMap(map))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                matmul_nt_into(g, vb, slot(grads, *a, va));
                matmul_tn_into(va, g, slot(grads, *b, vb));
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                slot(grads, *a, self.val(*a)).add_assign(g);
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                reduce_into(g, *kind, sign, slot(grads, *b, self.val(*b)));
            }
            Op::Mul(a, b, kind) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let cols = va.cols();
                {
                    let ga = slot(grads, *a, va);
                    for (k, (o, &gk)) in ga.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let bk = match kind {
                            Broadcast::None => vb.data()[k],
                            Broadcast::Row => vb.data()[k % cols],
                            Broadcast::Col => vb.data()[k / cols],
                        };
                        *o += gk * bk;
                    }
                }
                let prod: Vec<f64> = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                let prod = Tensor::new(g.rows(), g.cols(), prod).expect("shape preserved");
                reduce_into(&prod, *kind, 1.0, slot(grads, *b, vb));
            }
            Op::Scale(a, factor) => {
                let ga = slot(grads, *a, self.val(*a));
                for (o, &gk) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o += factor * gk;
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, self.val(*a));
                for ((o, &gk), &yk) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gk * (1.0 - yk * yk);
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, self.val(*a));
                for ((o, &gk), &yk) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gk * yk * (1.0 - yk);
                }
            }
            Op::Softmax(input) => {
                let ga = slot(grads, *input, self.val(*input));
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yk), &gk) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += yk * (gk - dot);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vp = self.val(p);
                    let width = vp.cols();
                    let gp = slot(grads, p, vp);
                    for r in 0..g.rows() {
                        let src = &g.row(r)[offset..offset + width];
                        for (o, s) in gp.row_mut(r).iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                    offset += width;
                }
            }
            Op::Slice { input, start } => {
                let ga = slot(grads, *input, self.val(*input));
                for r in 0..g.rows() {
                    let dst = &mut ga.row_mut(r)[*start..*start + g.cols()];
                    for (o, s) in dst.iter_mut().zip(g.row(r)) {
                        *o += s;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let gt = slot(grads, *table, self.val(*table));
                for (r, &id) in ids.iter().enumerate() {
                    for (o, s) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += s;
                    }
                }
            }
            Op::CrossEntropy {
                probs,
                targets,
                weights,
            } => {
                let vp = self.val(*probs);
                let upstream = g.item();
                let gp = slot(grads, *probs, vp);
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let p = vp.get(r, t);
                    if w != 0.0 && p > PROB_FLOOR {
                        let cur = gp.get(r, t);
                        gp.set(r, t, cur - upstream * w / p);
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let va = self.val(*a);
                let mut d = g.item();
                if matches!(node.op, Op::Mean(_)) {
                    d /= va.len() as f64;
                }
                for o in slot(grads, *a, va).data_mut() {
                    *o += d;
                }
            }
        }
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], i: usize, like: &Tensor) -> &'g mut Tensor {
    grads[i].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
}

/// Adds `sign · g`, summed down to the broadcast operand's shape, into `out`.
fn reduce_into(g: &Tensor, kind: Broadcast, sign: f64, out: &mut Tensor) {
    match kind {
        Broadcast::None => {
            for (o, &v) in out.data_mut().iter_mut().zip(g.data()) {
                *o += sign * v;
            }
        }
        Broadcast::Row => {
            for r in 0..g.rows() {
                for (o, &v) in out.data_mut().iter_mut().zip(g.row(r)) {
                    *o += sign * v;
                }
            }
        }
        Broadcast::Col => {
            for r in 0..g.rows() {
                let s: f64 = g.row(r).iter().sum();
                out.data_mut()[r] += sign * s;
            }
        }
    }
}
