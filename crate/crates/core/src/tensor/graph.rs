//! Reverse-mode tape over a fixed operator set.
//!
//! A [`Graph`] records every intermediate value of one forward evaluation.
//! Nodes know whether any trainable leaf feeds them, so frozen subgraphs
//! (target critics, stop-gradient inputs) cost nothing in the backward sweep.

use std::collections::{BTreeMap, HashMap};

use super::params::ParamStore;
use super::{shape_err, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
pub(crate) struct ConvCache<S> {
    pub geom: super::ConvGeometry,
    pub batch: usize,
    /// im2col buffer laid out `[batch·out_h·out_w, channels·k·k]`.
    pub cols: Vec<S>,
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        cache: ConvCache<S>,
    },
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalarVar(Var, Var),
    Scale(Var, S),
    AddConst(Var),
    Square(Var),
    Sum(Var),
    SumCols(Var),
    Mean(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Minimum(Var, Var),
    Clamp(Var, S, S),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// A recorded forward computation.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
    frozen: HashMap<String, Var>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err(
            op,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ))
    }
}

fn as_matrix<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(shape_err(op, "2-D tensor", format!("{:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            frozen: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Designated input whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a trainable parameter. Repeated binds of one name share a node.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Binds a parameter as a constant: used for target networks and for
    /// critics inside the policy objective.
    pub fn frozen_param(&mut self, store: &ParamStore<S>, name: &str) -> Result<Var> {
        let key = format!("{:p}/{name}", store as *const _);
        if let Some(&v) = self.frozen.get(&key) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf, false);
        self.frozen.insert(key, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix("matmul", self.value(a))?;
        let (k2, n) = as_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dimension {k}"),
                format!("{k2}"),
            ));
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            S::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            S::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `x[m,n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = as_matrix("add_row_bias", self.value(x))?;
        if self.value(bias).len() != n {
            return Err(shape_err(
                "add_row_bias",
                format!("bias of {n}"),
                format!("{}", self.value(bias).len()),
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..m {
            for (o, &bv) in out[r * n..(r + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRowBias(x, bias), rg))
    }

    /// Valid convolution of `[N,C,H,W]` input with `[O,C,k,k]` filters.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        geom: super::ConvGeometry,
    ) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape();
        if shape.len() != 4
            || shape[1] != geom.in_channels
            || shape[2] != geom.in_h
            || shape[3] != geom.in_w
        {
            return Err(shape_err(
                "conv2d",
                format!("[N,{},{},{}]", geom.in_channels, geom.in_h, geom.in_w),
                format!("{shape:?}"),
            ));
        }
        let w = self.value(weight);
        if w.shape()
            != [
                geom.out_channels,
                geom.in_channels,
                geom.kernel,
                geom.kernel,
            ]
        {
            return Err(shape_err(
                "conv2d weight",
                format!("{:?}", geom.weight_shape()),
                format!("{:?}", w.shape()),
            ));
        }
        if self.value(bias).len() != geom.out_channels {
            return Err(shape_err(
                "conv2d bias",
                format!("{}", geom.out_channels),
                format!("{}", self.value(bias).len()),
            ));
        }
        let n = shape[0];
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let p = oh * ow;
        let ckk = geom.in_channels * geom.kernel * geom.kernel;
        let k = geom.kernel;
        let s = geom.stride;
        let xd = x.data();
        let mut cols = vec![S::zero(); n * p * ckk];
        for img in 0..n {
            let xbase = img * geom.in_channels * geom.in_h * geom.in_w;
            for yo in 0..oh {
                for xo in 0..ow {
                    let row = (img * p + yo * ow + xo) * ckk;
                    for c in 0..geom.in_channels {
                        for kh in 0..k {
                            let src = xbase + (c * geom.in_h + yo * s + kh) * geom.in_w + xo * s;
                            let dst = row + (c * k + kh) * k;
                            cols[dst..dst + k].copy_from_slice(&xd[src..src + k]);
                        }
                    }
                }
            }
        }
        // tmp[n·p, O] = cols[n·p, ckk] · Wᵀ[ckk, O]
        let o = geom.out_channels;
        let mut tmp = vec![S::zero(); n * p * o];
        S::gemm(
            n * p,
            ckk,
            o,
            S::one(),
            &cols,
            ckk as isize,
            1,
            w.data(),
            1,
            ckk as isize,
            S::zero(),
            &mut tmp,
            o as isize,
            1,
        );
        let b = self.value(bias).data();
        let mut out = vec![S::zero(); n * o * p];
        for img in 0..n {
            for pos in 0..p {
                let t = &tmp[(img * p + pos) * o..(img * p + pos + 1) * o];
                for (ch, (&tv, &bv)) in t.iter().zip(b).enumerate() {
                    out[(img * o + ch) * p + pos] = tv + bv;
                }
            }
        }
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        let value = Tensor::new(vec![n, o, oh, ow], out)?;
        let cache = ConvCache {
            geom,
            batch: n,
            cols,
        };
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                cache,
            },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |v| if v > S::zero() { v } else { S::zero() },
            Op::Relu(a),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.ln(), Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.unary(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: S) -> Var {
        self.unary(a, |v| v + c, Op::AddConst(a))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        self.unary(a, |v| v.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "minimum",
            a,
            b,
            |x, y| if x <= y { x } else { y },
            Op::Minimum(a, b),
        )
    }

    /// Tensor times a one-element tensor.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err(
                "mul_scalar_var",
                "one-element scalar",
                format!("{:?}", self.value(s).shape()),
            ));
        }
        let c = self.value(s).item();
        let value = self.value(a).map(|v| v * c);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(value, Op::MulScalarVar(a, s), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let total: S = t.data().iter().copied().sum();
        let value = total / S::from_usize(t.len()).unwrap();
        let rg = self.rg(a);
        self.push(Tensor::scalar(value), Op::Mean(a), rg)
    }

    /// Row sums of a matrix: `[m,n] -> [m,1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (m, n) = as_matrix("sum_cols", self.value(a))?;
        let d = self.value(a).data();
        let out = (0..m)
            .map(|r| d[r * n..(r + 1) * n].iter().copied().sum())
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![m, 1], out)?, Op::SumCols(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Flattens every axis after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let rows = t.rows();
        let cols = t.row_len();
        self.reshape(a, &[rows, cols])
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Usage("concat of zero tensors".into()))?;
        let (m, _) = as_matrix("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = as_matrix("concat_cols", self.value(p))?;
            if r != m {
                return Err(shape_err(
                    "concat_cols",
                    format!("{m} rows"),
                    format!("{r} rows"),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = as_matrix("slice_cols", self.value(a))?;
        if start >= end || end > n {
            return Err(shape_err(
                "slice_cols",
                format!("range within 0..{n}"),
                format!("{start}..{end}"),
            ));
        }
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&d[r * n + start..r * n + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![m, end - start], out)?,
            Op::SliceCols(a, start, end),
            rg,
        ))
    }

    /// Selects rows (leading-axis slices) by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let w = t.row_len();
        let nrows = t.rows();
        if rows.is_empty() {
            return Err(TensorError::Usage("gather of zero rows".into()));
        }
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            if r >= nrows {
                return Err(shape_err(
                    "gather_rows",
                    format!("row < {nrows}"),
                    format!("{r}"),
                ));
            }
            out.extend_from_slice(t.row(r));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::GatherRows(a, rows.to_vec()),
            rg,
        ))
    }

    /// Reverse sweep from a one-element root with unit seed.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        if self.value(root).len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.backward_with_seed(root, Tensor::scalar(S::one()))
    }

    /// Reverse sweep with an explicit seed gradient shaped like `root`.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor<S>) -> Result<Gradients<S>> {
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err(
                "backward seed",
                format!("{:?}", self.value(root).shape()),
                format!("{:?}", seed.shape()),
            ));
        }
        if !self.rg(root) {
            return Err(TensorError::Usage(
                "root does not depend on any differentiable leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed.into_data());
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.and_then(|d| {
                    if self.nodes[i].requires_grad {
                        Tensor::new(self.nodes[i].value.shape().to_vec(), d).ok()
                    } else {
                        None
                    }
                })
            })
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, contrib: Vec<S>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        if !self.rg(v) {
            return;
        }
        let len = self.value(v).len();
        let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); len]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // dA = G·Bᵀ, dB = Aᵀ·G
                self.accumulate_with(grads, *a, |da| {
                    S::gemm(
                        m,
                        n,
                        k,
                        S::one(),
                        g,
                        n as isize,
                        1,
                        bd,
                        1,
                        n as isize,
                        S::one(),
                        da,
                        k as isize,
                        1,
                    );
                });
                self.accumulate_with(grads, *b, |db| {
                    S::gemm(
                        k,
                        m,
                        n,
                        S::one(),
                        ad,
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        S::one(),
                        db,
                        n as isize,
                        1,
                    );
                });
            }
            Op::AddRowBias(x, bias) => {
                let n = self.value(*bias).len();
                self.accumulate(grads, *x, g.to_vec());
                self.accumulate_with(grads, *bias, |db| {
                    for row in g.chunks_exact(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                cache,
            } => self.conv_backward(*input, *weight, *bias, cache, g, grads),
            Op::Relu(a) => {
                let src = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(src)
                    .map(|(&gv, &x)| if x > S::zero() { gv } else { S::zero() })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(&gv, &y)| gv * (S::one() - y * y))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(out).map(|(&gv, &y)| gv * y).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Ln(a) => {
                let src = self.value(*a).data();
                let d = g.iter().zip(src).map(|(&gv, &x)| gv / x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let two = S::one() + S::one();
                let src = self.value(*a).data();
                let d = g.iter().zip(src).map(|(&gv, &x)| two * gv * x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Scale(a, c) => {
                let d = g.iter().map(|&gv| gv * *c).collect();
                self.accumulate(grads, *a, d);
            }
            Op::AddConst(a) | Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Clamp(a, lo, hi) => {
                let src = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(src)
                    .map(|(&gv, &x)| if x >= *lo && x <= *hi { gv } else { S::zero() })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(
                    grads,
                    *a,
                    g.iter().zip(bd).map(|(&gv, &y)| gv * y).collect(),
                );
                self.accumulate(
                    grads,
                    *b,
                    g.iter().zip(ad).map(|(&gv, &x)| gv * x).collect(),
                );
            }
            Op::Minimum(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let pick_a: Vec<bool> = ad.iter().zip(bd).map(|(x, y)| x <= y).collect();
                self.accumulate(
                    grads,
                    *a,
                    g.iter()
                        .zip(&pick_a)
                        .map(|(&gv, &p)| if p { gv } else { S::zero() })
                        .collect(),
                );
                self.accumulate(
                    grads,
                    *b,
                    g.iter()
                        .zip(&pick_a)
                        .map(|(&gv, &p)| if p { S::zero() } else { gv })
                        .collect(),
                );
            }
            Op::MulScalarVar(a, s) => {
                let c = self.value(*s).item();
                let ad = self.value(*a).data();
                self.accumulate(grads, *a, g.iter().map(|&gv| gv * c).collect());
                let ds: S = g.iter().zip(ad).map(|(&gv, &x)| gv * x).sum();
                self.accumulate(grads, *s, vec![ds]);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let v = g[0] / S::from_usize(n).unwrap();
                self.accumulate(grads, *a, vec![v; n]);
            }
            Op::SumCols(a) => {
                let (m, n) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let mut d = Vec::with_capacity(m * n);
                for &gv in g.iter().take(m) {
                    d.extend(std::iter::repeat(gv).take(n));
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let m = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for r in 0..m {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let n = self.value(*a).shape()[1];
                let w = end - start;
                let (start, _) = (*start, *end);
                self.accumulate_with(grads, *a, |da| {
                    for (r, row) in g.chunks_exact(w).enumerate() {
                        for (j, &v) in row.iter().enumerate() {
                            da[r * n + start + j] += v;
                        }
                    }
                });
            }
            Op::GatherRows(a, rows) => {
                let w = self.value(*a).row_len();
                self.accumulate_with(grads, *a, |da| {
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, &v) in da[r * w..(r + 1) * w]
                            .iter_mut()
                            .zip(&g[i * w..(i + 1) * w])
                        {
                            *d += v;
                        }
                    }
                });
            }
        }
    }

    fn conv_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        cache: &ConvCache<S>,
        g: &[S],
        grads: &mut [Option<Vec<S>>],
    ) {
        let geom = &cache.geom;
        let n = cache.batch;
        let o = geom.out_channels;
        let p = geom.out_h() * geom.out_w();
        let k = geom.kernel;
        let ckk = geom.in_channels * k * k;
        // gt[n·p, O] mirrors the forward tmp layout
        let mut gt = vec![S::zero(); n * p * o];
        for img in 0..n {
            for ch in 0..o {
                let src = &g[(img * o + ch) * p..(img * o + ch + 1) * p];
                for (pos, &v) in src.iter().enumerate() {
                    gt[(img * p + pos) * o + ch] = v;
                }
            }
        }
        self.accumulate_with(grads, bias, |db| {
            for row in gt.chunks_exact(o) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
        });
        // dW[O, ckk] = gtᵀ[O, n·p] · cols[n·p, ckk]
        self.accumulate_with(grads, weight, |dw| {
            S::gemm(
                o,
                n * p,
                ckk,
                S::one(),
                &gt,
                1,
                o as isize,
                &cache.cols,
                ckk as isize,
                1,
                S::one(),
                dw,
                ckk as isize,
                1,
            );
        });
        if self.rg(input) {
            // dcols[n·p, ckk] = gt[n·p, O] · W[O, ckk]
            let w = self.value(weight).data();
            let mut dcols = vec![S::zero(); n * p * ckk];
            S::gemm(
                n * p,
                o,
                ckk,
                S::one(),
                &gt,
                o as isize,
                1,
                w,
                ckk as isize,
                1,
                S::zero(),
                &mut dcols,
                ckk as isize,
                1,
            );
            let ow = geom.out_w();
            let s = geom.stride;
            self.accumulate_with(grads, input, |dx| {
                for img in 0..n {
                    let xbase = img * geom.in_channels * geom.in_h * geom.in_w;
                    for yo in 0..geom.out_h() {
                        for xo in 0..ow {
                            let row = (img * p + yo * ow + xo) * ckk;
                            for c in 0..geom.in_channels {
                                for kh in 0..k {
                                    let dst =
                                        xbase + (c * geom.in_h + yo * s + kh) * geom.in_w + xo * s;
                                    let srci = row + (c * k + kh) * k;
                                    for kw in 0..k {
                                        dx[dst + kw] += dcols[srci + kw];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: Vec<(String, Var)>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the root with respect to `v`, if `v` is differentiable and
    /// the root depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter bound with [`Graph::param`]; parameters
    /// the root does not depend on get zeros.
    pub fn params(&self, store: &ParamStore<S>) -> BTreeMap<String, Tensor<S>> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.params {
            let g = match self.get(*v) {
                Some(g) => g.clone(),
                None => match store.value(name) {
                    Ok(t) => Tensor::zeros(t.shape()),
                    Err(_) => continue,
                },
            };
            out.insert(name.clone(), g);
        }
        out
    }

    /// Parameter gradients keyed by name, restricted to the names in `store`
    /// and zero-filled for any it holds that were not bound.
    pub fn for_store(&self, store: &ParamStore<S>) -> BTreeMap<String, Tensor<S>> {
        let bound = self.params(store);
        store
            .names()
            .map(|name| {
                let g = bound.get(name).cloned().unwrap_or_else(|| {
                    Tensor::zeros(store.value(name).expect("name from store").shape())
                });
                (name.to_string(), g)
            })
            .collect()
    }
}
