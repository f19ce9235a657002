//! Tape of tensor operations and reverse-mode differentiation over it.
//!
//! Nodes are appended in evaluation order, so the tape is a topological
//! order by construction and backward is a single reverse sweep.

use std::collections::BTreeMap;

use super::linalg::{gemm, sigmoid};
use super::lstm_kernel::{self, LstmCache, LstmDims, LstmWants};
use super::tensor::{check_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Numeric precision of forward values.
///
/// `F32` rounds every node output to single precision; arithmetic inside a
/// node still runs in `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f64" | "64" => Ok(Precision::F64),
            "f32" | "32" => Ok(Precision::F32),
            other => Err(Error::InvalidArgument(format!("unknown precision `{other}`"))),
        }
    }
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }

    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
        }
    }
}

/// Identifies a parameter leaf: owning store label and parameter name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamKey {
    pub store: String,
    pub name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// rhs is repeated over the leading extent of lhs.
    Rows,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    SliceRows(Var, usize),
    ReverseRows(Var),
    RepeatRows(Var),
    ScaleRows(Var, Var),
    Reshape(Var),
    Lstm(Box<LstmNode>),
}

struct LstmNode {
    input: Var,
    w_in: Var,
    w_rec: Var,
    bias: Var,
    h0: Option<Var>,
    c0: Option<Var>,
    dims: LstmDims,
    cache: LstmCache,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamKey>,
}

/// Dense-tensor computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    /// Trainable parameter leaves: key, node index, element count.
    params: Vec<(ParamKey, usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` if `v` does not
    /// require grad or is unreachable from the root.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every trainable parameter leaf, keyed by store and
    /// name. Leaves the root does not depend on get zeros; a leaf bound more
    /// than once has its contributions summed.
    pub fn params(&self) -> BTreeMap<ParamKey, Vec<f64>> {
        let mut out: BTreeMap<ParamKey, Vec<f64>> = BTreeMap::new();
        for (key, idx, numel) in &self.params {
            let acc = out.entry(key.clone()).or_insert_with(|| vec![0.0; *numel]);
            if let Some(g) = self.grads[*idx].as_ref() {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        out
    }
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Bcast> {
    if a == b {
        Ok(Bcast::Same)
    } else if a.len() >= 2 && &a[1..] == b {
        Ok(Bcast::Rows)
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match grads[v.0].as_mut() {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        None => grads[v.0] = Some(delta),
    }
}

/// Sums `g` (shaped like lhs) over its leading extent to the rhs shape.
fn reduce_rows(g: &[f64], row_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; row_len];
    for row in g.chunks_exact(row_len) {
        out.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            let p = self.precision;
            value.data_mut().iter_mut().for_each(|v| *v = p.round(*v));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives gradients.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter leaf tagged with its owning store and name.
    pub fn param(&mut self, store: &str, name: &str, t: Tensor, trainable: bool) -> Var {
        let v = self.push(t, Op::Leaf, trainable);
        self.nodes[v.0].param = Some(ParamKey {
            store: store.to_string(),
            name: name.to_string(),
        });
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[a.0].value;
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data).expect("shape preserved"), op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let bc = broadcast(name, self.shape(a), self.shape(b))?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bd = tb.data();
        let data: Vec<f64> = match bc {
            Bcast::Same => ta.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Rows => ta
                .data()
                .chunks_exact(bd.len())
                .flat_map(|row| row.iter().zip(bd).map(|(&x, &y)| f(x, y)))
                .collect(),
        };
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, mk(a, b, bc), rg))
    }

    /// Matrix product of `m x k` and `k x n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(&z) = self.data(b).iter().find(|v| **v == 0.0) {
            return Err(Error::Domain { op: "div", value: z });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&z) = self.data(a).iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain { op: "log", value: z });
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&z) = self.data(a).iter().find(|v| **v < 0.0) {
            return Err(Error::Domain { op: "sqrt", value: z });
        }
        Ok(self.unary(a, Op::Sqrt(a), f64::sqrt))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("no axis {axis}"),
            });
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let base = (o * ext + e) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::SumAxis(a, axis), rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ext = *self.shape(a).get(axis).unwrap_or(&1);
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / ext as f64))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidShape {
                shape: base,
                reason: format!("no axis {axis}"),
            });
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let ext = self.shape(*p)[axis];
                let d = self.data(*p);
                out.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Rows `start..end` along the leading (time) axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if start >= end || end > shape[0] {
            return Err(Error::InvalidArgument(format!(
                "row slice {start}..{end} out of range for shape {shape:?}"
            )));
        }
        let row = self.nodes[a.0].value.row_len();
        let data = self.data(a)[start * row..end * row].to_vec();
        let mut new_shape = shape;
        new_shape[0] = end - start;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(new_shape, data)?, Op::SliceRows(a, start), rg))
    }

    /// Reverses the leading (time) axis.
    pub fn reverse_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let row = t.row_len();
        let data: Vec<f64> = t.data().chunks_exact(row).rev().flatten().copied().collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data).expect("shape preserved"), Op::ReverseRows(a), rg)
    }

    /// Stacks `k` copies of `a` along a new leading axis.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::InvalidArgument("repeat count must be positive".into()));
        }
        let t = &self.nodes[a.0].value;
        let data: Vec<f64> = (0..k).flat_map(|_| t.data().iter().copied()).collect();
        let mut shape = vec![k];
        shape.extend_from_slice(t.shape());
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::RepeatRows(a), rg))
    }

    /// Scales row `t` of `a` by `w[t]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a).to_vec(), self.shape(w).to_vec());
        if sw.len() != 1 || sw[0] != sa[0] {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: sa,
                rhs: sw,
            });
        }
        let row = self.nodes[a.0].value.row_len();
        let wd = self.data(w);
        let data: Vec<f64> = self
            .data(a)
            .chunks_exact(row)
            .zip(wd)
            .flat_map(|(r, &s)| r.iter().map(move |x| x * s))
            .collect();
        let rg = self.rg(a) || self.rg(w);
        Ok(self.push(Tensor::new(sa, data)?, Op::ScaleRows(a, w), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        let t = self.nodes[a.0].value.clone();
        let t = t.reshape(shape.to_vec())?;
        let rg = self.rg(a);
        let t = Tensor::new(t.shape().to_vec(), t.into_data())?;
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Runs one LSTM layer over `input` (`k x d_in`).
    ///
    /// Returns a `(k + 1) x h` node: hidden states in time order, then the
    /// final cell state. With `reverse` the recurrence consumes the sequence
    /// from the last frame to the first while outputs stay in time order.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm(
        &mut self,
        input: Var,
        w_in: Var,
        w_rec: Var,
        bias: Var,
        h0: Option<Var>,
        c0: Option<Var>,
        reverse: bool,
    ) -> Result<Var> {
        let sx = self.shape(input).to_vec();
        let sw = self.shape(w_in).to_vec();
        let su = self.shape(w_rec).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 2 {
            return Err(Error::InvalidShape {
                shape: sx,
                reason: "lstm input must be k x d".into(),
            });
        }
        if sw.len() != 2 || sw[0] != sx[1] {
            return Err(Error::ShapeMismatch {
                op: "lstm input weights",
                lhs: sx,
                rhs: sw,
            });
        }
        let g4 = sw[1];
        let h = g4 / 4;
        if g4 % 4 != 0 || su != [h, g4] || sb != [g4] {
            return Err(Error::ShapeMismatch {
                op: "lstm gate weights",
                lhs: sw,
                rhs: if su != [h, g4] { su } else { sb },
            });
        }
        for s in [h0, c0].into_iter().flatten() {
            if self.shape(s) != [h] {
                return Err(Error::ShapeMismatch {
                    op: "lstm initial state",
                    lhs: vec![h],
                    rhs: self.shape(s).to_vec(),
                });
            }
        }
        let dims = LstmDims {
            steps: sx[0],
            input: sx[1],
            hidden: h,
            reverse,
        };
        let (out, cache) = lstm_kernel::forward(
            &dims,
            self.data(input),
            self.data(w_in),
            self.data(w_rec),
            self.data(bias),
            h0.map(|v| self.data(v)),
            c0.map(|v| self.data(v)),
        );
        let rg = [Some(input), Some(w_in), Some(w_rec), Some(bias), h0, c0]
            .into_iter()
            .flatten()
            .any(|v| self.rg(v));
        let node = LstmNode {
            input,
            w_in,
            w_rec,
            bias,
            h0,
            c0,
            dims,
            cache,
        };
        Ok(self.push(Tensor::new(vec![sx[0] + 1, h], out)?, Op::Lstm(Box::new(node)), rg))
    }

    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.rg(root) {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(root.0 + 1)
            .filter(|(_, n)| n.requires_grad)
            .filter_map(|(i, n)| n.param.clone().map(|k| (k, i, n.value.numel())))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut send = |v: Var, delta: Vec<f64>| {
            if self.rg(v) {
                add_into(grads, v, delta);
            }
        };
        let map1 = |a: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            self.data(a)
                .iter()
                .zip(out)
                .zip(g)
                .map(|((&x, &y), &gy)| f(x, y, gy))
                .collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.data(*b), true, 0.0, &mut da);
                    send(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.data(*a), true, g, false, 0.0, &mut db);
                    send(*b, db);
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.rg(*a) {
                    send(*a, g.to_vec());
                }
                if self.rg(*b) {
                    let mut db = match bc {
                        Bcast::Same => g.to_vec(),
                        Bcast::Rows => reduce_rows(g, self.data(*b).len()),
                    };
                    if sign < 0.0 {
                        db.iter_mut().for_each(|v| *v = -*v);
                    }
                    send(*b, db);
                }
            }
            Op::Mul(a, b, bc) | Op::Div(a, b, bc) => {
                let is_div = matches!(node.op, Op::Div(..));
                let (ad, bd) = (self.data(*a), self.data(*b));
                let bl = bd.len();
                let bat = |j: usize| match bc {
                    Bcast::Same => bd[j],
                    Bcast::Rows => bd[j % bl],
                };
                if self.rg(*a) {
                    let da = g
                        .iter()
                        .enumerate()
                        .map(|(j, gy)| if is_div { gy / bat(j) } else { gy * bat(j) })
                        .collect();
                    send(*a, da);
                }
                if self.rg(*b) {
                    let full: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(j, gy)| {
                            let bv = bat(j);
                            if is_div {
                                -gy * ad[j] / (bv * bv)
                            } else {
                                gy * ad[j]
                            }
                        })
                        .collect();
                    let db = match bc {
                        Bcast::Same => full,
                        Bcast::Rows => reduce_rows(&full, bl),
                    };
                    send(*b, db);
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Sigmoid(a) => send(*a, map1(*a, &|_, y, gy| gy * y * (1.0 - y))),
            Op::Tanh(a) => send(*a, map1(*a, &|_, y, gy| gy * (1.0 - y * y))),
            Op::Exp(a) => send(*a, map1(*a, &|_, y, gy| gy * y)),
            Op::Log(a) => send(*a, map1(*a, &|x, _, gy| gy / x)),
            Op::Abs(a) => send(*a, map1(*a, &|x, _, gy| gy * x.signum() * f64::from(x != 0.0))),
            Op::Square(a) => send(*a, map1(*a, &|x, _, gy| 2.0 * x * gy)),
            Op::Sqrt(a) => send(
                *a,
                map1(*a, &|_, y, gy| if y > 0.0 { gy * 0.5 / y } else { 0.0 }),
            ),
            Op::Clamp(a, lo, hi) => send(
                *a,
                map1(*a, &|x, _, gy| if x >= *lo && x <= *hi { gy } else { 0.0 }),
            ),
            Op::Sum(a) => send(*a, vec![g[0]; self.data(*a).len()]),
            Op::Mean(a) => {
                let n = self.data(*a).len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::SumAxis(a, axis) => {
                let (outer, ext, inner) = split_axis(self.shape(*a), *axis);
                let mut da = vec![0.0; outer * ext * inner];
                for o in 0..outer {
                    for e in 0..ext {
                        let base = (o * ext + e) * inner;
                        da[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                send(*a, da);
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for p in parts {
                    let ext = self.shape(*p)[*axis];
                    if self.rg(*p) {
                        let mut dp = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            dp.extend_from_slice(&g[s..s + ext * inner]);
                        }
                        send(*p, dp);
                    }
                    offset += ext;
                }
            }
            Op::SliceRows(a, start) => {
                let src = &self.nodes[a.0].value;
                let row = src.row_len();
                let mut da = vec![0.0; src.numel()];
                da[start * row..start * row + g.len()].copy_from_slice(g);
                send(*a, da);
            }
            Op::ReverseRows(a) => {
                let row = node.value.row_len();
                send(*a, g.chunks_exact(row).rev().flatten().copied().collect());
            }
            Op::RepeatRows(a) => {
                let n = self.data(*a).len();
                send(*a, reduce_rows(g, n));
            }
            Op::ScaleRows(a, w) => {
                let row = node.value.row_len();
                if self.rg(*a) {
                    let wd = self.data(*w);
                    let da = g
                        .chunks_exact(row)
                        .zip(wd)
                        .flat_map(|(r, &s)| r.iter().map(move |x| x * s))
                        .collect();
                    send(*a, da);
                }
                if self.rg(*w) {
                    let dw = g
                        .chunks_exact(row)
                        .zip(self.data(*a).chunks_exact(row))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect();
                    send(*w, dw);
                }
            }
            Op::Lstm(n) => {
                let wants = LstmWants {
                    x: self.rg(n.input),
                    w_in: self.rg(n.w_in),
                    w_rec: self.rg(n.w_rec),
                    bias: self.rg(n.bias),
                    h0: n.h0.is_some_and(|v| self.rg(v)),
                    c0: n.c0.is_some_and(|v| self.rg(v)),
                };
                let lg = lstm_kernel::backward(
                    &n.dims,
                    &n.cache,
                    out,
                    g,
                    self.data(n.input),
                    self.data(n.w_in),
                    self.data(n.w_rec),
                    n.h0.map(|v| self.data(v)),
                    n.c0.map(|v| self.data(v)),
                    &wants,
                );
                let pairs = [
                    (Some(n.input), lg.x),
                    (Some(n.w_in), lg.w_in),
                    (Some(n.w_rec), lg.w_rec),
                    (Some(n.bias), lg.bias),
                    (n.h0, lg.h0),
                    (n.c0, lg.c0),
                ];
                for (v, d) in pairs {
                    if let (Some(v), Some(d)) = (v, d) {
                        send(v, d);
                    }
                }
            }
        }
    }
}
