//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation computes its value eagerly when it is added to the
//! [`Graph`]; [`Graph::backward`] then walks the tape in reverse. Parameters
//! are borrowed rather than copied, so a graph lives no longer than the model
//! it reads from. Gradients are reported only for named parameters.

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::tensor::{sigmoid, softmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Tensor,
        inv_std: Vec<f64>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    MaxRows(Var, Vec<usize>),
    LogClamp(Var, f64),
    OneMinus(Var),
    WeightedSum(Var, Tensor),
    Combine(Vec<(Var, f64)>),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    named: Vec<(String, Var)>,
}

/// Gradients of a scalar with respect to named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_name.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Adds `other` into `self`, name by name.
    pub fn accumulate(&mut self, other: Gradients) {
        for (name, grad) in other.by_name {
            match self.by_name.get_mut(&name) {
                Some(existing) => existing.add_assign(&grad),
                None => {
                    self.by_name.insert(name, grad);
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.by_name.values().all(Tensor::is_finite)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
const LAYER_NORM_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// Registers a trainable tensor under `name`.
    pub fn param(&mut self, name: impl Into<String>, tensor: &'p Tensor) -> Var {
        let var = self.push(Cow::Borrowed(tensor), Op::Leaf, true);
        self.named.push((name.into(), var));
        var
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.shape(), (1, 1));
        t.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.derived(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.derived(out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.derived(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let bias = self.value(row);
        assert_eq!(bias.rows(), 1, "add_row expects a row vector");
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), bias.cols(), "add_row width");
        let bias = bias.data().to_vec();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        self.derived(out, Op::AddRow(a, row), &[a, row])
    }

    /// `x · w + b`
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.derived(out, Op::Scale(a, factor), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.derived(out, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.derived(out, Op::Sigmoid(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&softmax(x.row(r)));
        }
        self.derived(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        let mut normed = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = input.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in normed.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = normed.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        self.derived(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let x = self.value(a);
        assert!(start + width <= x.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(x.rows(), width);
        for r in 0..x.rows() {
            out.row_mut(r)
                .copy_from_slice(&x.row(r)[start..start + width]);
        }
        self.derived(out, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.rows(), rows, "concat_cols row count");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        self.derived(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Selects rows of `table` by index, repeats allowed.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let out = self.value(table).select_rows(indices);
        self.derived(out, Op::Gather(table, indices.to_vec()), &[table])
    }

    /// Column-wise max over rows; the gradient routes to the first maximal row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.rows() > 0, "max_rows over zero rows");
        let mut argmax = vec![0usize; x.cols()];
        for r in 1..x.rows() {
            for (c, best) in argmax.iter_mut().enumerate() {
                if x.get(r, c) > x.get(*best, c) {
                    *best = r;
                }
            }
        }
        let out = x.max_rows();
        self.derived(out, Op::MaxRows(a, argmax), &[a])
    }

    /// `ln(max(x, eps))` elementwise.
    pub fn log_clamp(&mut self, a: Var, eps: f64) -> Var {
        let out = self.value(a).map(|v| v.max(eps).ln());
        self.derived(out, Op::LogClamp(a, eps), &[a])
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 - v);
        self.derived(out, Op::OneMinus(a), &[a])
    }

    /// Scalar `Σ weights ∘ a`.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor) -> Var {
        assert_eq!(self.value(a).shape(), weights.shape(), "weighted_sum shape");
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(x, w)| x * w)
            .sum();
        self.derived(
            Tensor::filled(1, 1, total),
            Op::WeightedSum(a, weights),
            &[a],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        self.weighted_sum(a, Tensor::filled(r, c, 1.0))
    }

    /// `Σ coefficient · term` over same-shaped terms.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "combine of nothing");
        let (r, c) = self.value(terms[0].0).shape();
        let mut out = Tensor::zeros(r, c);
        for (v, coef) in terms {
            out.add_scaled(self.value(*v), *coef);
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.derived(out, Op::Combine(terms.to_vec()), &inputs)
    }

    /// Reverse pass from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, var) in &self.named {
            let grad = grads[var.0]
                .clone()
                .unwrap_or_else(|| {
                    let (r, c) = self.value(*var).shape();
                    Tensor::zeros(r, c)
                });
            match by_name.get_mut(name) {
                Some(existing) => existing.add_assign(&grad),
                None => {
                    by_name.insert(name.clone(), grad);
                }
            }
        }
        Gradients { by_name }
    }

    fn propagate(&self, node: &Node<'p>, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let send = |grads: &mut [Option<Tensor>], v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    send(grads, *a, dy.matmul_nt(self.value(*b)));
                }
                if needs(b) {
                    send(grads, *b, self.value(*a).matmul_tn(dy));
                }
            }
            Op::MatMulNt(a, b) => {
                // y = a bᵀ: da = dy b, db = dyᵀ a
                if needs(a) {
                    send(grads, *a, dy.matmul(self.value(*b)));
                }
                if needs(b) {
                    send(grads, *b, dy.matmul_tn(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    send(grads, *a, dy.clone());
                }
                if needs(b) {
                    send(grads, *b, dy.clone());
                }
            }
            Op::AddRow(a, row) => {
                if needs(a) {
                    send(grads, *a, dy.clone());
                }
                if needs(row) {
                    let mut g = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, v) in g.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += v;
                        }
                    }
                    send(grads, *row, g);
                }
            }
            Op::Scale(a, factor) => send(grads, *a, dy.map(|v| v * factor)),
            Op::Gelu(a) => {
                let x = self.value(*a);
                let mut g = dy.clone();
                for (o, xv) in g.data_mut().iter_mut().zip(x.data()) {
                    *o *= gelu_grad(*xv);
                }
                send(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let mut g = dy.clone();
                for (o, y) in g.data_mut().iter_mut().zip(node.value.data()) {
                    *o *= y * (1.0 - y);
                }
                send(grads, *a, g);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut g = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dr = dy.row(r);
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for ((o, yv), dv) in g.row_mut(r).iter_mut().zip(yr).zip(dr) {
                        *o = yv * (dv - dot);
                    }
                }
                send(grads, *a, g);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let (rows, cols) = normed.shape();
                let g = self.value(*gain).data();
                if needs(gain) {
                    let mut dg = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for ((o, d), n) in dg.data_mut().iter_mut().zip(dy.row(r)).zip(normed.row(r)) {
                            *o += d * n;
                        }
                    }
                    send(grads, *gain, dg);
                }
                if needs(bias) {
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for (o, d) in db.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                    send(grads, *bias, db);
                }
                if needs(x) {
                    let mut dx = Tensor::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let dn: Vec<f64> = dy.row(r).iter().zip(g).map(|(d, gi)| d * gi).collect();
                        let sum_dn: f64 = dn.iter().sum();
                        let sum_dn_n: f64 = dn.iter().zip(normed.row(r)).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for ((o, d), nv) in dx.row_mut(r).iter_mut().zip(&dn).zip(normed.row(r)) {
                            *o = inv / n * (n * d - sum_dn - nv * sum_dn_n);
                        }
                    }
                    send(grads, *x, dx);
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.value(*a).shape();
                let mut g = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    g.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                }
                send(grads, *a, g);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).cols();
                    if needs(p) {
                        let mut g = Tensor::zeros(dy.rows(), width);
                        for r in 0..dy.rows() {
                            g.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + width]);
                        }
                        send(grads, *p, g);
                    }
                    offset += width;
                }
            }
            Op::Gather(table, indices) => {
                let (rows, cols) = self.value(*table).shape();
                let mut g = Tensor::zeros(rows, cols);
                for (i, &src) in indices.iter().enumerate() {
                    for (o, d) in g.row_mut(src).iter_mut().zip(dy.row(i)) {
                        *o += d;
                    }
                }
                send(grads, *table, g);
            }
            Op::MaxRows(a, argmax) => {
                let (rows, cols) = self.value(*a).shape();
                let mut g = Tensor::zeros(rows, cols);
                for (c, &r) in argmax.iter().enumerate() {
                    g.set(r, c, dy.get(0, c));
                }
                send(grads, *a, g);
            }
            Op::LogClamp(a, eps) => {
                let x = self.value(*a);
                let mut g = dy.clone();
                for (o, xv) in g.data_mut().iter_mut().zip(x.data()) {
                    *o = if *xv > *eps { *o / xv } else { 0.0 };
                }
                send(grads, *a, g);
            }
            Op::OneMinus(a) => send(grads, *a, dy.map(|v| -v)),
            Op::WeightedSum(a, weights) => {
                let d = dy.get(0, 0);
                send(grads, *a, weights.map(|w| w * d));
            }
            Op::Combine(terms) => {
                for (v, coef) in terms {
                    if needs(v) {
                        send(grads, *v, dy.map(|d| d * coef));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` at each entry of `x`.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Tensor, b: &Tensor) {
        for (x, y) in a.data().iter().zip(b.data()) {
            let scale = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / scale < 1e-5, "{x} vs {y}");
        }
    }

    fn check(x: Tensor, build: impl for<'a> Fn(&mut Graph<'a>, Var) -> Var) {
        let analytic = {
            let mut g = Graph::new();
            let v = g.param("x", &x);
            let out = build(&mut g, v);
            g.backward(out).get("x").unwrap().clone()
        };
        let numeric = numeric_grad(&x, |t| {
            let mut g = Graph::new();
            let v = g.param("x", t);
            let out = build(&mut g, v);
            g.scalar(out)
        });
        assert_close(&analytic, &numeric);
    }

    fn sample() -> Tensor {
        Tensor::from_rows(&[
            vec![0.3, -1.2, 0.7],
            vec![1.5, 0.1, -0.4],
            vec![-0.6, 0.9, 0.2],
        ])
        .unwrap()
    }

    fn probe(g: &mut Graph<'_>, v: Var) -> Var {
        let (r, c) = g.value(v).shape();
        let w = Tensor::from_vec(r, c, (0..r * c).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        g.weighted_sum(v, w)
    }

    #[test]
    fn softmax_gradient() {
        check(sample(), |g, x| {
            let y = g.softmax_rows(x);
            probe(g, y)
        });
    }

    #[test]
    fn layer_norm_gradient() {
        check(sample(), |g, x| {
            let gain = g.constant(Tensor::row_vector(vec![1.2, 0.5, -0.3]));
            let bias = g.constant(Tensor::row_vector(vec![0.1, 0.0, 0.2]));
            let y = g.layer_norm(x, gain, bias);
            probe(g, y)
        });
    }

    #[test]
    fn matmul_and_attention_shapes_gradient() {
        check(sample(), |g, x| {
            let s = g.matmul_nt(x, x);
            let p = g.softmax_rows(s);
            let y = g.matmul(p, x);
            let z = g.gelu(y);
            probe(g, z)
        });
    }

    #[test]
    fn slicing_gather_and_pooling_gradient() {
        check(sample(), |g, x| {
            let a = g.slice_cols(x, 1, 2);
            let b = g.slice_cols(x, 0, 1);
            let c = g.concat_cols(&[a, b]);
            let d = g.gather(c, &[2, 0, 2]);
            let m = g.max_rows(d);
            let s = g.sigmoid(m);
            let l = g.log_clamp(s, 1e-12);
            let o = g.one_minus(s);
            let lo = g.log_clamp(o, 1e-12);
            let t = g.combine(&[(l, 0.5), (lo, -2.0)]);
            probe(g, t)
        });
    }

    #[test]
    fn shared_name_accumulates() {
        let x = Tensor::row_vector(vec![2.0]);
        let mut g = Graph::new();
        let a = g.param("x", &x);
        let b = g.param("x", &x);
        let s = g.add(a, b);
        let out = g.sum(s);
        assert_eq!(g.backward(out).get("x").unwrap().data(), &[2.0]);
    }
}
