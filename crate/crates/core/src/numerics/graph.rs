//! Reverse-mode tape over rank-2 tensors.
//!
//! Forward ops evaluate eagerly and push a node that remembers its parents
//! plus whatever context the backward rule needs. [`Graph::backward`] walks
//! the tape in reverse and returns gradients for every parameter slot and
//! every node.

use rand::Rng;

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{NumericsError, Result, Tensor};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Dropout { x: Var, mask: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Transpose(Var),
    MeanRows(Var),
    Sum(Var),
    Square(Var),
    Pick { x: Var, index: usize },
    LstmCell(Box<LstmContext>),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct LstmContext {
    x: Var,
    h: Var,
    c: Var,
    w_ih: Var,
    w_hh: Var,
    b: Var,
    /// Activated gates in i, f, g, o order.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// A tape bound to a read-only parameter snapshot.
pub struct Graph<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    non_finite: Option<&'static str>,
}

/// Result of a backward pass.
pub struct Backward {
    pub params: Gradients,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Backward {
    /// Gradient of the loss with respect to any node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; store.len()],
            non_finite: None,
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// Fails with `NonFinite` if any forward op produced NaN or infinity.
    pub fn check(&self) -> Result<()> {
        match self.non_finite {
            Some(op) => Err(NumericsError::NonFinite(op)),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, "input")
    }

    pub fn row(&mut self, data: Vec<f64>) -> Var {
        self.input(Tensor::row(data))
    }

    /// Parameter leaf; repeated calls for the same slot share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Tensor::zeros(&[0]),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", &[k, n], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_vec(&[m, n], out)?, "matmul"))
    }

    /// `x W + b`, with `b` a `[1, n]` row broadcast over the rows of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(x);
        let (k2, n) = self.dims(w);
        if k != k2 {
            return Err(shape_err("linear", &[k, n], &[k2, n]));
        }
        let bt = self.value(b);
        if bt.rows() != 1 || bt.cols() != n {
            return Err(shape_err("linear.bias", &[1, n], bt.shape()));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bt.data());
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        Ok(self.push(Op::Linear { x, w, b }, Tensor::from_vec(&[m, n], out)?, "linear"))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Add(a, b), Tensor::from_vec(&shape, data)?, "add"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Mul(a, b), Tensor::from_vec(&shape, data)?, "mul"))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.shape(), t.data().iter().map(|v| v * s).collect()).unwrap();
        self.push(Op::Scale(a, s), out, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.shape(), t.data().iter().map(|v| v + s).collect()).unwrap();
        self.push(Op::AddScalar(a), out, "add_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.shape(), t.data().iter().map(|v| v.max(0.0)).collect()).unwrap();
        self.push(Op::Relu(a), out, "relu")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let out = Tensor::from_vec(t.shape(), out).unwrap();
        self.push(Op::SoftmaxRows(a), out, "softmax")
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::from_vec(t.shape(), out).unwrap();
        self.push(Op::LogSoftmaxRows(a), out, "log_softmax")
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        let t = self.value(a);
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = Tensor::from_vec(
            t.shape(),
            t.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )
        .unwrap();
        self.push(Op::Dropout { x: a, mask }, out, "dropout")
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(shape_err("concat", &[rows, c], &[r, c]));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_vec(&[rows, total], out)?,
            "concat",
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if start + len > cols {
            return Err(shape_err("slice_cols", &[rows, start + len], &[rows, cols]));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        Ok(self.push(
            Op::SliceCols { x: a, start },
            Tensor::from_vec(&[rows, len], out)?,
            "slice_cols",
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (rows, cols) = self.dims(a);
        let t = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = t[r * cols + c];
            }
        }
        self.push(
            Op::Transpose(a),
            Tensor::from_vec(&[cols, rows], out).unwrap(),
            "transpose",
        )
    }

    /// Column-wise mean over rows: `[n, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (rows, cols) = self.dims(a);
        let t = self.value(a);
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= rows as f64);
        self.push(Op::MeanRows(a), Tensor::row(out), "mean_rows")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.shape(), t.data().iter().map(|v| v * v).collect()).unwrap();
        self.push(Op::Square(a), out, "square")
    }

    /// Selects one element (flat row-major index) as a `[1, 1]` tensor.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if index >= t.len() {
            return Err(shape_err("pick", &[index + 1], t.shape()));
        }
        let v = t.data()[index];
        Ok(self.push(Op::Pick { x: a, index }, Tensor::scalar(v), "pick"))
    }

    /// One step of a long short-term memory cell. Returns `[1, 2H]` holding
    /// the new hidden state followed by the new cell state.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<Var> {
        let (_, in_dim) = self.dims(x);
        let (_, hid) = self.dims(h);
        if self.dims(c) != (1, hid) || self.dims(x).0 != 1 || self.dims(h).0 != 1 {
            return Err(shape_err("lstm.state", &[1, hid], self.value(c).shape()));
        }
        if self.dims(w_ih) != (in_dim, 4 * hid) {
            return Err(shape_err("lstm.w_ih", &[in_dim, 4 * hid], self.value(w_ih).shape()));
        }
        if self.dims(w_hh) != (hid, 4 * hid) {
            return Err(shape_err("lstm.w_hh", &[hid, 4 * hid], self.value(w_hh).shape()));
        }
        if self.dims(b) != (1, 4 * hid) {
            return Err(shape_err("lstm.b", &[1, 4 * hid], self.value(b).shape()));
        }
        let mut pre = self.value(b).data().to_vec();
        matmul_acc(self.value(x).data(), self.value(w_ih).data(), &mut pre, 1, in_dim, 4 * hid);
        matmul_acc(self.value(h).data(), self.value(w_hh).data(), &mut pre, 1, hid, 4 * hid);
        let mut gates = pre;
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if (2 * hid..3 * hid).contains(&k) {
                g.tanh()
            } else {
                sigmoid(*g)
            };
        }
        let c_prev = self.value(c).data();
        let mut out = vec![0.0; 2 * hid];
        let mut tanh_c = vec![0.0; hid];
        for j in 0..hid {
            let (i, f, g, o) = (gates[j], gates[hid + j], gates[2 * hid + j], gates[3 * hid + j]);
            let cn = f * c_prev[j] + i * g;
            tanh_c[j] = cn.tanh();
            out[j] = o * tanh_c[j];
            out[hid + j] = cn;
        }
        let ctx = LstmContext {
            x,
            h,
            c,
            w_ih,
            w_hh,
            b,
            gates,
            tanh_c,
        };
        Ok(self.push(
            Op::LstmCell(Box::new(ctx)),
            Tensor::from_vec(&[1, 2 * hid], out)?,
            "lstm_cell",
        ))
    }

    /// Negative log-likelihood of `label` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rows() != 1 || label >= t.cols() {
            return Err(shape_err("cross_entropy", &[1, label + 1], t.shape()));
        }
        let mut probs = t.data().to_vec();
        softmax_in_place(&mut probs);
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            Tensor::scalar(loss),
            "cross_entropy",
        ))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Backward> {
        self.check()?;
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", &[1, 1], self.value(loss).shape()));
        }
        self.backward_with_seed(loss, vec![1.0])
    }

    /// Backpropagates an arbitrary upstream gradient for `root`.
    pub fn backward_with_seed(&self, root: Var, seed: Vec<f64>) -> Result<Backward> {
        self.check()?;
        if seed.len() != self.value(root).len() {
            return Err(shape_err("backward.seed", self.value(root).shape(), &[seed.len()]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        let mut params = Gradients::zeros_like(self.store);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        let out = Backward {
            params,
            nodes: grads,
        };
        if !out.params.is_finite() {
            return Err(NumericsError::NonFinite("backward"));
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut Gradients,
    ) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                for (p, v) in params.slots[id.0].data_mut().iter_mut().zip(g) {
                    *p += v;
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let bd = self.value(*b).data();
                let ad = self.value(*a).data();
                matmul_bt_acc(g, bd, self.acc(grads, *a), m, k, n);
                matmul_at_acc(ad, g, self.acc(grads, *b), m, k, n);
            }
            Op::Linear { x, w, b } => {
                let (m, k) = self.dims(*x);
                let n = self.dims(*w).1;
                let wd = self.value(*w).data();
                let xd = self.value(*x).data();
                matmul_bt_acc(g, wd, self.acc(grads, *x), m, k, n);
                matmul_at_acc(xd, g, self.acc(grads, *w), m, k, n);
                let gb = self.acc(grads, *b);
                for row in g.chunks(n) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(self.acc(grads, *a), g);
                add_into(self.acc(grads, *b), g);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let ga = self.acc(grads, *a);
                for ((o, gv), bv) in ga.iter_mut().zip(g).zip(bd) {
                    *o += gv * bv;
                }
                let gb = self.acc(grads, *b);
                for ((o, gv), av) in gb.iter_mut().zip(g).zip(ad) {
                    *o += gv * av;
                }
            }
            Op::Scale(a, s) => {
                let ga = self.acc(grads, *a);
                for (o, gv) in ga.iter_mut().zip(g) {
                    *o += gv * s;
                }
            }
            Op::AddScalar(a) => add_into(self.acc(grads, *a), g),
            Op::Relu(a) => {
                let ga = self.acc(grads, *a);
                for ((o, gv), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                let ga = self.acc(grads, *a);
                for ((orow, grow), yrow) in ga
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(out.data().chunks(cols))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                    for ((o, gv), y) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += y * (gv - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let cols = out.cols();
                let ga = self.acc(grads, *a);
                for ((orow, grow), yrow) in ga
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(out.data().chunks(cols))
                {
                    let total: f64 = grow.iter().sum();
                    for ((o, gv), y) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += gv - y.exp() * total;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let ga = self.acc(grads, *x);
                for ((o, gv), m) in ga.iter_mut().zip(g).zip(mask) {
                    *o += gv * m;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    let gp = self.acc(grads, p);
                    for r in 0..rows {
                        add_into(
                            &mut gp[r * w..(r + 1) * w],
                            &g[r * total + offset..r * total + offset + w],
                        );
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.dims(*x);
                let len = out.cols();
                let gx = self.acc(grads, *x);
                for r in 0..rows {
                    add_into(
                        &mut gx[r * cols + start..r * cols + start + len],
                        &g[r * len..(r + 1) * len],
                    );
                }
            }
            Op::Transpose(a) => {
                let (rows, cols) = self.dims(*a);
                let ga = self.acc(grads, *a);
                for r in 0..rows {
                    for c in 0..cols {
                        ga[r * cols + c] += g[c * rows + r];
                    }
                }
            }
            Op::MeanRows(a) => {
                let (rows, cols) = self.dims(*a);
                let ga = self.acc(grads, *a);
                for r in 0..rows {
                    for c in 0..cols {
                        ga[r * cols + c] += g[c] / rows as f64;
                    }
                }
            }
            Op::Sum(a) => {
                let ga = self.acc(grads, *a);
                ga.iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Square(a) => {
                let ad = self.value(*a).data();
                let ga = self.acc(grads, *a);
                for ((o, gv), x) in ga.iter_mut().zip(g).zip(ad) {
                    *o += 2.0 * x * gv;
                }
            }
            Op::Pick { x, index } => {
                self.acc(grads, *x)[*index] += g[0];
            }
            Op::LstmCell(ctx) => self.backward_lstm(ctx, g, grads),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gl = self.acc(grads, *logits);
                for (k, (o, p)) in gl.iter_mut().zip(probs).enumerate() {
                    let target = if k == *label { 1.0 } else { 0.0 };
                    *o += (p - target) * g[0];
                }
            }
        }
    }

    fn backward_lstm(&self, ctx: &LstmContext, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let hid = ctx.tanh_c.len();
        let in_dim = self.dims(ctx.x).1;
        let gates = &ctx.gates;
        let c_prev = self.value(ctx.c).data();
        let (dh, dc_out) = g.split_at(hid);
        let mut dpre = vec![0.0; 4 * hid];
        let mut dc_prev = vec![0.0; hid];
        for j in 0..hid {
            let (i, f, gg, o) = (gates[j], gates[hid + j], gates[2 * hid + j], gates[3 * hid + j]);
            let tc = ctx.tanh_c[j];
            let d_o = dh[j] * tc;
            let dc = dc_out[j] + dh[j] * o * (1.0 - tc * tc);
            let d_i = dc * gg;
            let d_g = dc * i;
            let d_f = dc * c_prev[j];
            dc_prev[j] = dc * f;
            dpre[j] = d_i * i * (1.0 - i);
            dpre[hid + j] = d_f * f * (1.0 - f);
            dpre[2 * hid + j] = d_g * (1.0 - gg * gg);
            dpre[3 * hid + j] = d_o * o * (1.0 - o);
        }
        let w_ih = self.value(ctx.w_ih).data();
        let w_hh = self.value(ctx.w_hh).data();
        let xd = self.value(ctx.x).data();
        let hd = self.value(ctx.h).data();
        matmul_bt_acc(&dpre, w_ih, self.acc(grads, ctx.x), 1, in_dim, 4 * hid);
        matmul_bt_acc(&dpre, w_hh, self.acc(grads, ctx.h), 1, hid, 4 * hid);
        add_into(self.acc(grads, ctx.c), &dc_prev);
        matmul_at_acc(xd, &dpre, self.acc(grads, ctx.w_ih), 1, in_dim, 4 * hid);
        matmul_at_acc(hd, &dpre, self.acc(grads, ctx.w_hh), 1, hid, 4 * hid);
        add_into(self.acc(grads, ctx.b), &dpre);
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let len = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
