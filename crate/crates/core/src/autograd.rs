//! A small reverse-mode automatic differentiation tape.
//!
//! Every op works on the row-major matrix view of its operands (`[rows,
//! cols]` where `cols` is the trailing dimension). Batching is expressed by
//! stacking samples along the row axis; ops that need per-sample structure
//! (attention, modulation, group pooling) take an explicit group count.
//!
//! The tape is generic over [`Scalar`] so the exact same model code runs in
//! f32 for training and in f64 for finite-difference gradient checks.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        bias: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    Silu(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<F>,
    },
    Modulate {
        x: Var,
        scale: Var,
        shift: Var,
        group_rows: usize,
    },
    Gather {
        srcs: Vec<Var>,
        index: Vec<(u32, u32)>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
        probs: Vec<F>,
    },
    SoftmaxRows(Var),
    GroupMeanRows {
        x: Var,
        group_rows: usize,
    },
    ScaleByVar {
        x: Var,
        s: Var,
    },
    Mse {
        pred: Var,
        target: Vec<F>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
    MeanAll(Var),
    Reshape(Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Result of a backward pass: one optional gradient buffer per node.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss w.r.t. `v`, or `None` if no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// The tape. Nodes are appended in topological order as ops are recorded.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<F: Scalar>(x: F) -> (F, F) {
    let c = F::from_f64(0.797_884_560_802_865_4);
    let a = F::from_f64(0.044_715);
    let half = F::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    let th = inner.tanh();
    let y = half * x * (F::ONE + th);
    let dinner = c * (F::ONE + F::from_f64(3.0) * a * x * x);
    let dy = half * (F::ONE + th) + half * x * (F::ONE - th * th) * dinner;
    (y, dy)
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::ONE / (F::ONE + (-x).exp())
}

fn softmax_row_in_place<F: Scalar>(row: &mut [F]) {
    let mut m = row[0];
    for &x in row.iter() {
        m = m.max(x);
    }
    let mut sum = F::ZERO;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    let inv = F::ONE / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, len: usize, f: impl FnOnce(&mut [F])) {
    let buf = grads[v.0].get_or_insert_with(|| vec![F::ZERO; len]);
    f(buf);
}

fn add_into<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, delta: &[F]) {
    accumulate(grads, v, delta.len(), |buf| {
        for (b, &d) in buf.iter_mut().zip(delta) {
            *b += d;
        }
    });
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Attention probabilities recorded by an [`Graph::attention`] node,
    /// laid out as `[groups, heads, tq, tk]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[F]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Probabilities of every attention node recorded so far, each split
    /// into rows over its keys.
    pub fn all_attention_rows(&self) -> Vec<Vec<&[F]>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Attention { k, groups, probs, .. } => {
                    let keys = self.nodes[k.0].value.rows() / groups;
                    Some(probs.chunks(keys.max(1)).collect())
                }
                _ => None,
            })
            .collect()
    }

    /// `a @ b` with `a` viewed as `[m, k]` and `b` as `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(Error::Shape(format!(
                "matmul: lhs has {k} columns, rhs shape {bs:?}"
            )));
        }
        let n = bs[1];
        let mut out = vec![F::ZERO; m * n];
        F::gemm(
            m,
            k,
            n,
            F::ONE,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            F::ZERO,
            &mut out,
            n as isize,
            1,
        );
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, &[a, b]))
    }

    /// Adds a `[cols]` bias to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims(x);
        if self.value(bias).len() != c {
            return Err(Error::Shape(format!(
                "add_row: {c} columns vs bias of {}",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddRow { x, bias }, &[x, bias]))
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::Shape(format!("{what}: {la} vs {lb} elements")));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| gelu_parts(v).0);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x), &[x])
    }

    /// Layer normalization over the trailing dimension, without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let (rows, c) = self.dims(x);
        let mut out = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(rows);
        let inv_c = F::from_f64(1.0 / c as f64);
        for row in out.data_mut().chunks_mut(c) {
            let mut mean = F::ZERO;
            for &v in row.iter() {
                mean += v;
            }
            mean *= inv_c;
            let mut var = F::ZERO;
            for &v in row.iter() {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_c;
            let is = F::ONE / (var + F::from_f64(eps)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { x, inv_std }, &[x])
    }

    /// `x * (1 + scale[g]) + shift[g]` where row `r` of `x` belongs to group
    /// `r / group_rows` and `scale`/`shift` hold one row per group.
    pub fn modulate(&mut self, x: Var, scale: Var, shift: Var, group_rows: usize) -> Result<Var> {
        let (rows, c) = self.dims(x);
        let (gs, cs) = self.dims(scale);
        let (gh, ch) = self.dims(shift);
        if group_rows == 0 || rows != gs * group_rows || cs != c || gh != gs || ch != c {
            return Err(Error::Shape(format!(
                "modulate: x [{rows}, {c}], scale [{gs}, {cs}], shift [{gh}, {ch}], group_rows {group_rows}"
            )));
        }
        let mut out = self.value(x).clone();
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        for (r, row) in out.data_mut().chunks_mut(c).enumerate() {
            let g = r / group_rows;
            let s = &sc[g * c..(g + 1) * c];
            let b = &sh[g * c..(g + 1) * c];
            for j in 0..c {
                row[j] = row[j] * (F::ONE + s[j]) + b[j];
            }
        }
        Ok(self.push(
            out,
            Op::Modulate {
                x,
                scale,
                shift,
                group_rows,
            },
            &[x, scale, shift],
        ))
    }

    /// General element gather: `out[i] = srcs[index[i].0][index[i].1]`.
    pub fn gather(&mut self, srcs: &[Var], index: Vec<(u32, u32)>, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(Error::Shape(format!(
                "gather: shape {shape:?} vs {} indices",
                index.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for &(s, j) in &index {
            let src = srcs
                .get(s as usize)
                .ok_or_else(|| Error::Shape("gather: source out of range".into()))?;
            let v = self
                .value(*src)
                .data()
                .get(j as usize)
                .ok_or_else(|| Error::Shape("gather: element out of range".into()))?;
            out.push(*v);
        }
        let t = Tensor::new(shape, out)?;
        let srcs = srcs.to_vec();
        let inputs = srcs.clone();
        Ok(self.push(t, Op::Gather { srcs, index }, &inputs))
    }

    /// Concatenates `[rows, c_i]` operands along the trailing dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        let cols: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let total: usize = cols.iter().sum();
        let mut index = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (s, &c) in cols.iter().enumerate() {
                for j in 0..c {
                    index.push((s as u32, (r * c + j) as u32));
                }
            }
        }
        self.gather(parts, index, vec![rows, total])
    }

    /// Stacks per-group row blocks: for each group, the rows of every part
    /// belonging to that group are emitted in part order.
    pub fn concat_rows_grouped(&mut self, parts: &[Var], groups: usize) -> Result<Var> {
        let c = self.dims(parts[0]).1;
        let mut per_group = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c || groups == 0 || r % groups != 0 {
                return Err(Error::Shape("concat_rows_grouped: incompatible parts".into()));
            }
            per_group.push(r / groups);
        }
        let total_rows: usize = per_group.iter().sum::<usize>() * groups;
        let mut index = Vec::with_capacity(total_rows * c);
        for g in 0..groups {
            for (s, &pr) in per_group.iter().enumerate() {
                for r in 0..pr {
                    let base = (g * pr + r) * c;
                    for j in 0..c {
                        index.push((s as u32, (base + j) as u32));
                    }
                }
            }
        }
        self.gather(parts, index, vec![total_rows, c])
    }

    /// Repeats each row of `x` `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (rows, c) = self.dims(x);
        let mut index = Vec::with_capacity(rows * times * c);
        for r in 0..rows {
            for _ in 0..times {
                for j in 0..c {
                    index.push((0, (r * c + j) as u32));
                }
            }
        }
        self.gather(&[x], index, vec![rows * times, c])
    }

    /// Row lookup (embedding table gather).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, c) = self.dims(x);
        if rows.iter().any(|&r| r >= n) {
            return Err(Error::Shape(format!("select_rows: index beyond {n} rows")));
        }
        let mut index = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            for j in 0..c {
                index.push((0, (r * c + j) as u32));
            }
        }
        self.gather(&[x], index, vec![rows.len(), c])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `[groups * tq, d]`, `k` and `v` are `[groups * tk, d]`; each
    /// group attends only within itself. Heads split `d` into contiguous
    /// `d / heads` slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize) -> Result<Var> {
        let (rq, d) = self.dims(q);
        let (rk, dk_) = self.dims(k);
        let (rv, dv) = self.dims(v);
        if groups == 0
            || heads == 0
            || d % heads != 0
            || rq % groups != 0
            || rk % groups != 0
            || rk != rv
            || dk_ != d
            || dv != d
        {
            return Err(Error::Shape(format!(
                "attention: q [{rq}, {d}], k [{rk}, {dk_}], v [{rv}, {dv}], groups {groups}, heads {heads}"
            )));
        }
        let tq = rq / groups;
        let tk = rk / groups;
        let hd = d / heads;
        let scale = F::from_f64(1.0 / (hd as f64).sqrt());
        let mut probs = vec![F::ZERO; groups * heads * tq * tk];
        let mut out = vec![F::ZERO; rq * d];
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        for g in 0..groups {
            for h in 0..heads {
                let qo = g * tq * d + h * hd;
                let ko = g * tk * d + h * hd;
                let po = (g * heads + h) * tq * tk;
                let p = &mut probs[po..po + tq * tk];
                F::gemm(
                    tq,
                    hd,
                    tk,
                    scale,
                    &qd[qo..],
                    d as isize,
                    1,
                    &kd[ko..],
                    1,
                    d as isize,
                    F::ZERO,
                    p,
                    tk as isize,
                    1,
                );
                for row in p.chunks_mut(tk) {
                    softmax_row_in_place(row);
                }
                F::gemm(
                    tq,
                    tk,
                    hd,
                    F::ONE,
                    p,
                    tk as isize,
                    1,
                    &vd[ko..],
                    d as isize,
                    1,
                    F::ZERO,
                    &mut out[qo..],
                    d as isize,
                    1,
                );
            }
        }
        let shape = self.shape(q).to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let c = self.dims(x).1;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            softmax_row_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    /// Mean over each block of `group_rows` consecutive rows.
    pub fn group_mean_rows(&mut self, x: Var, group_rows: usize) -> Result<Var> {
        let (rows, c) = self.dims(x);
        if group_rows == 0 || rows % group_rows != 0 {
            return Err(Error::Shape("group_mean_rows: rows not divisible".into()));
        }
        let groups = rows / group_rows;
        let inv = F::from_f64(1.0 / group_rows as f64);
        let xd = self.value(x).data();
        let mut out = vec![F::ZERO; groups * c];
        for r in 0..rows {
            let g = r / group_rows;
            for j in 0..c {
                out[g * c + j] += xd[r * c + j] * inv;
            }
        }
        Ok(self.push(
            Tensor::new(vec![groups, c], out)?,
            Op::GroupMeanRows { x, group_rows },
            &[x],
        ))
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape("scale_by: scale must have one element".into()));
        }
        let sv = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push(out, Op::ScaleByVar { x, s }, &[x, s]))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[F]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::Shape(format!(
                "mse: prediction has {} elements, target {}",
                p.len(),
                target.len()
            )));
        }
        let mut acc = 0.0f64;
        for (&a, &b) in p.iter().zip(target) {
            let d = (a - b).to_f64();
            acc += d * d;
        }
        let loss = F::from_f64(acc / p.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            &[pred],
        ))
    }

    /// Mean softmax cross-entropy of `[n, k]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.dims(logits);
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::Shape("cross_entropy: label count or range".into()));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut acc = 0.0f64;
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            softmax_row_in_place(row);
            acc -= row[l].to_f64().max(1e-300).ln();
        }
        let loss = F::from_f64(acc / n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let mut acc = F::ZERO;
        for &v in d {
            acc += v;
        }
        let m = acc / F::from_f64(d.len() as f64);
        self.push(Tensor::scalar(m), Op::MeanAll(x), &[x])
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward: loss must be a scalar".into()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::ONE]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.dims(*a);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let bd = self.value(*b).data();
                    accumulate(grads, *a, m * k, |da| {
                        F::gemm(m, n, k, F::ONE, g, n as isize, 1, bd, 1, n as isize, F::ONE, da, k as isize, 1)
                    });
                }
                if self.wants(*b) {
                    let ad = self.value(*a).data();
                    accumulate(grads, *b, k * n, |db| {
                        F::gemm(k, m, n, F::ONE, ad, 1, k as isize, g, n as isize, 1, F::ONE, db, n as isize, 1)
                    });
                }
            }
            Op::AddRow { x, bias } => {
                if self.wants(*x) {
                    add_into(grads, *x, g);
                }
                if self.wants(*bias) {
                    let c = self.value(*bias).len();
                    accumulate(grads, *bias, c, |db| {
                        for row in g.chunks(c) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(grads, *a, g);
                }
                if self.wants(*b) {
                    add_into(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(grads, *a, g);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.len(), |db| {
                        for (d, &v) in db.iter_mut().zip(g) {
                            *d -= v;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    accumulate(grads, *a, g.len(), |da| {
                        for i in 0..g.len() {
                            da[i] += g[i] * bd[i];
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.len(), |db| {
                        for i in 0..g.len() {
                            db[i] += g[i] * ad[i];
                        }
                    });
                }
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, g.len(), |dx| {
                    for (d, &v) in dx.iter_mut().zip(g) {
                        *d += v * *c;
                    }
                });
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                accumulate(grads, *x, g.len(), |dx| {
                    for i in 0..g.len() {
                        dx[i] += g[i] * gelu_parts(xd[i]).1;
                    }
                });
            }
            Op::Silu(x) => {
                let xd = self.value(*x).data();
                accumulate(grads, *x, g.len(), |dx| {
                    for i in 0..g.len() {
                        let s = sigmoid(xd[i]);
                        dx[i] += g[i] * s * (F::ONE + xd[i] * (F::ONE - s));
                    }
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let c = node.value.cols();
                let inv_c = F::from_f64(1.0 / c as f64);
                accumulate(grads, *x, g.len(), |dx| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let yr = &y[r * c..(r + 1) * c];
                        let mut mg = F::ZERO;
                        let mut mgy = F::ZERO;
                        for j in 0..c {
                            mg += gr[j];
                            mgy += gr[j] * yr[j];
                        }
                        mg *= inv_c;
                        mgy *= inv_c;
                        for j in 0..c {
                            dx[r * c + j] += is * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                });
            }
            Op::Modulate {
                x,
                scale,
                shift,
                group_rows,
            } => {
                let c = node.value.cols();
                let xd = self.value(*x).data();
                let sd = self.value(*scale).data();
                if self.wants(*x) {
                    accumulate(grads, *x, g.len(), |dx| {
                        for (i, d) in dx.iter_mut().enumerate() {
                            let grp = i / c / group_rows;
                            *d += g[i] * (F::ONE + sd[grp * c + i % c]);
                        }
                    });
                }
                if self.wants(*scale) {
                    accumulate(grads, *scale, sd.len(), |ds| {
                        for i in 0..g.len() {
                            let grp = i / c / group_rows;
                            ds[grp * c + i % c] += g[i] * xd[i];
                        }
                    });
                }
                if self.wants(*shift) {
                    accumulate(grads, *shift, sd.len(), |db| {
                        for i in 0..g.len() {
                            let grp = i / c / group_rows;
                            db[grp * c + i % c] += g[i];
                        }
                    });
                }
            }
            Op::Gather { srcs, index } => {
                let mut bufs: Vec<Option<Vec<F>>> = srcs
                    .iter()
                    .map(|&s| {
                        if self.wants(s) {
                            Some(vec![F::ZERO; self.value(s).len()])
                        } else {
                            None
                        }
                    })
                    .collect();
                for (&(s, j), &gv) in index.iter().zip(g) {
                    if let Some(b) = bufs[s as usize].as_mut() {
                        b[j as usize] += gv;
                    }
                }
                for (&s, b) in srcs.iter().zip(bufs) {
                    if let Some(b) = b {
                        add_into(grads, s, &b);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            } => {
                let (rq, d) = self.dims(*q);
                let rk = self.dims(*k).0;
                let tq = rq / groups;
                let tk = rk / groups;
                let hd = d / heads;
                let scale = F::from_f64(1.0 / (hd as f64).sqrt());
                let (qd, kd, vd) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut dq = vec![F::ZERO; rq * d];
                let mut dkv = vec![F::ZERO; rk * d];
                let mut dvv = vec![F::ZERO; rk * d];
                let mut dp = vec![F::ZERO; tq * tk];
                for gi in 0..*groups {
                    for h in 0..*heads {
                        let qo = gi * tq * d + h * hd;
                        let ko = gi * tk * d + h * hd;
                        let po = (gi * heads + h) * tq * tk;
                        let p = &probs[po..po + tq * tk];
                        F::gemm(tk, tq, hd, F::ONE, p, 1, tk as isize, &g[qo..], d as isize, 1, F::ONE, &mut dvv[ko..], d as isize, 1);
                        F::gemm(tq, hd, tk, F::ONE, &g[qo..], d as isize, 1, &vd[ko..], 1, d as isize, F::ZERO, &mut dp, tk as isize, 1);
                        for (dpr, pr) in dp.chunks_mut(tk).zip(p.chunks(tk)) {
                            let mut dot = F::ZERO;
                            for j in 0..tk {
                                dot += dpr[j] * pr[j];
                            }
                            for j in 0..tk {
                                dpr[j] = pr[j] * (dpr[j] - dot);
                            }
                        }
                        F::gemm(tq, tk, hd, scale, &dp, tk as isize, 1, &kd[ko..], d as isize, 1, F::ONE, &mut dq[qo..], d as isize, 1);
                        F::gemm(tk, tq, hd, scale, &dp, 1, tk as isize, &qd[qo..], d as isize, 1, F::ONE, &mut dkv[ko..], d as isize, 1);
                    }
                }
                if self.wants(*q) {
                    add_into(grads, *q, &dq);
                }
                if self.wants(*k) {
                    add_into(grads, *k, &dkv);
                }
                if self.wants(*v) {
                    add_into(grads, *v, &dvv);
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let c = node.value.cols();
                accumulate(grads, *x, g.len(), |dx| {
                    for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let mut dot = F::ZERO;
                        for j in 0..c {
                            dot += gr[j] * yr[j];
                        }
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::GroupMeanRows { x, group_rows } => {
                let c = node.value.cols();
                let n = self.value(*x).len();
                let inv = F::from_f64(1.0 / *group_rows as f64);
                accumulate(grads, *x, n, |dx| {
                    for (i, d) in dx.iter_mut().enumerate() {
                        let grp = i / c / group_rows;
                        *d += g[grp * c + i % c] * inv;
                    }
                });
            }
            Op::ScaleByVar { x, s } => {
                let sv = self.value(*s).data()[0];
                if self.wants(*x) {
                    accumulate(grads, *x, g.len(), |dx| {
                        for (d, &v) in dx.iter_mut().zip(g) {
                            *d += v * sv;
                        }
                    });
                }
                if self.wants(*s) {
                    let xd = self.value(*x).data();
                    let mut acc = F::ZERO;
                    for (&a, &b) in g.iter().zip(xd) {
                        acc += a * b;
                    }
                    accumulate(grads, *s, 1, |ds| ds[0] += acc);
                }
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let c = g[0] * F::from_f64(2.0 / p.len() as f64);
                accumulate(grads, *pred, p.len(), |dp| {
                    for i in 0..p.len() {
                        dp[i] += c * (p[i] - target[i]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.value(*logits).cols();
                let n = labels.len();
                let c = g[0] * F::from_f64(1.0 / n as f64);
                accumulate(grads, *logits, probs.len(), |dl| {
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { F::ONE } else { F::ZERO };
                            dl[r * k + j] += c * (probs[r * k + j] - onehot);
                        }
                    }
                });
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len();
                let c = g[0] * F::from_f64(1.0 / n as f64);
                accumulate(grads, *x, n, |dx| {
                    for d in dx.iter_mut() {
                        *d += c;
                    }
                });
            }
            Op::Reshape(x) => add_into(grads, *x, g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Central-difference check of d(loss)/d(leaf) for a graph builder.
    fn check(leaves: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|l| g.param(l.clone())).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss).unwrap();
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(vars[li]).map(|s| s.to_vec()).unwrap_or(vec![0.0; leaf.len()]);
            for e in 0..leaf.len() {
                let eval = |delta: f64| {
                    let mut g = Graph::new();
                    let vs: Vec<Var> = leaves
                        .iter()
                        .enumerate()
                        .map(|(j, l)| {
                            let mut l = l.clone();
                            if j == li {
                                l.data_mut()[e] += delta;
                            }
                            g.param(l)
                        })
                        .collect();
                    let out = build(&mut g, &vs);
                    g.value(out).data()[0]
                };
                let h = 1e-5;
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[e];
                let err = (a - fd).abs() / (a.abs().max(fd.abs()).max(1e-8));
                assert!(err < 1e-5, "leaf {li} elem {e}: analytic {a} vs fd {fd}");
            }
        }
    }

    fn seq(n: usize, scale: f64, offset: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 * 0.7318 + offset).sin()) * scale).collect()
    }

    #[test]
    fn matmul_linear_gelu_mse() {
        let x = t(&[3, 4], &seq(12, 1.0, 0.1));
        let w = t(&[4, 2], &seq(8, 0.5, 0.3));
        let b = t(&[2], &[0.1, -0.2]);
        check(vec![x, w, b], |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
            let y = g.gelu(y);
            g.mse(y, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap()
        });
    }

    #[test]
    fn layernorm_modulate_silu() {
        let x = t(&[4, 3], &seq(12, 2.0, 0.4));
        let s = t(&[2, 3], &seq(6, 0.3, 1.0));
        let b = t(&[2, 3], &seq(6, 0.3, 2.0));
        check(vec![x, s, b], |g, v| {
            let n = g.layer_norm(v[0], 1e-6);
            let m = g.modulate(n, v[1], v[2], 2).unwrap();
            let m = g.silu(m);
            let w = g.constant(t(&[12], &seq(12, 1.0, 3.0)).reshape(&[4, 3]).unwrap());
            let p = g.mul(m, w).unwrap();
            g.mean_all(p)
        });
    }

    #[test]
    fn attention_gradients() {
        let q = t(&[4, 4], &seq(16, 1.0, 0.2));
        let k = t(&[6, 4], &seq(24, 1.0, 0.9));
        let v = t(&[6, 4], &seq(24, 1.0, 1.7));
        check(vec![q, k, v], |g, vs| {
            let o = g.attention(vs[0], vs[1], vs[2], 2, 2).unwrap();
            let w = g.constant(t(&[4, 4], &seq(16, 1.0, 0.5)));
            let p = g.mul(o, w).unwrap();
            g.mean_all(p)
        });
    }

    #[test]
    fn gather_softmax_pool_ce_scale() {
        let a = t(&[4, 3], &seq(12, 1.5, 0.0));
        let b = t(&[2, 3], &seq(6, 1.5, 5.0));
        let s = t(&[1], &[0.7]);
        check(vec![a, b, s], |g, v| {
            let cat = g.concat_rows_grouped(&[v[0], v[1]], 2).unwrap();
            let sm = g.softmax_rows(cat);
            let pooled = g.group_mean_rows(sm, 3).unwrap();
            let rep = g.repeat_rows(pooled, 2).unwrap();
            let sc = g.scale_by(rep, v[2]).unwrap();
            let cols = g.concat_cols(&[sc, sc]).unwrap();
            let ce = g.cross_entropy(cols, &[0, 5, 2, 1]).unwrap();
            let sel = g.select_rows(v[0], &[3, 0]).unwrap();
            let m = g.mean_all(sel);
            let m = g.scale(m, 0.5);
            g.add(ce, m).unwrap()
        });
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut g = Graph::<f32>::new();
        let q = g.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0]).unwrap());
        let k = g.constant(Tensor::new(vec![4, 2], vec![0.3, 1.0, 2.0, -1.0, 0.0, 0.0, 5.0, 5.0]).unwrap());
        let o = g.attention(q, k, k, 1, 1).unwrap();
        let p = g.attention_probs(o).unwrap();
        for row in p.chunks(4) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
