//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation in evaluation order. Values are kept on
//! the tape, and [`Tape::backward`] walks it in reverse and returns one
//! gradient buffer per node that influenced the root.

use std::borrow::Cow;

use super::linalg::{self, gemm, Transpose};
use super::param::{ParamId, ParamStore};
use super::{NumericsError, Tensor};

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis collapsed by a reduction or normalised by a softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along the row index (result has one row).
    Rows,
    /// Along the column index (result has one column).
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    EluPlusOne,
    Exp,
    Square,
    Scale(f64),
    Offset(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Sum(Var, Axis),
    Mean(Var, Axis),
    Max {
        x: Var,
        arg: Vec<usize>,
    },
    SumAll(Var),
    Softmax(Var, Axis),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Transpose(Var),
    Reshape(Var),
    ContextNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    BceWithLogits {
        x: Var,
        labels: Vec<f64>,
    },
    NullVector {
        rows: Var,
        w: Var,
        eig: linalg::GramEigen,
        sign: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Parameter gradients detached from the tape so the store can be mutated.
pub struct ParamGrads(pub Vec<(ParamId, Vec<f64>)>);

pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
    grad_enabled: bool,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonFinite(name.to_string()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies `f` elementwise after broadcasting unit dimensions of `a` and `b`
/// to `out`.
fn broadcast_map<F: Fn(f64, f64) -> f64>(
    av: &[f64],
    (ra, ca): (usize, usize),
    bv: &[f64],
    (rb, cb): (usize, usize),
    (r, c): (usize, usize),
    f: F,
) -> Vec<f64> {
    if (ra, ca) == (r, c) && (rb, cb) == (r, c) {
        return zip_map(av, bv, f);
    }
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let arow = &av[if ra == 1 { 0 } else { i * ca }..][..ca];
        let brow = &bv[if rb == 1 { 0 } else { i * cb }..][..cb];
        match (ca == c, cb == c) {
            (true, true) => out.extend(arow.iter().zip(brow).map(|(&x, &y)| f(x, y))),
            (true, false) => out.extend(arow.iter().map(|&x| f(x, brow[0]))),
            (false, true) => out.extend(brow.iter().map(|&y| f(arow[0], y))),
            (false, false) => out.extend(std::iter::repeat(f(arow[0], brow[0])).take(c)),
        }
    }
    out
}

fn zip_map<F: Fn(f64, f64) -> f64>(a: &[f64], b: &[f64], f: F) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn expand(v: &[f64], shape: (usize, usize), to: (usize, usize)) -> Cow<'_, [f64]> {
    if shape == to {
        Cow::Borrowed(v)
    } else {
        Cow::Owned(broadcast_map(v, shape, &[0.0], (1, 1), to, |x, _| x))
    }
}

/// Adds a full-size `[r, c]` gradient into a possibly broadcast operand.
fn reduce_into(dst: &mut [f64], (rd, cd): (usize, usize), d: &[f64], (r, c): (usize, usize)) {
    if (rd, cd) == (r, c) {
        dst.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        return;
    }
    for (i, src) in d.chunks(c).enumerate().take(r) {
        let row = &mut dst[if rd == 1 { 0 } else { i * cd }..][..cd];
        if cd == c {
            row.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        } else {
            row[0] += src.iter().sum::<f64>();
        }
    }
}

fn unary_grad<F: Fn(f64, f64) -> f64>(gx: &mut [f64], g: &[f64], xv: &[f64], yv: &[f64], f: F) {
    for (((d, g), x), y) in gx.iter_mut().zip(g).zip(xv).zip(yv) {
        *d += g * f(*x, *y);
    }
}

impl<'p> Tape<'p> {
    /// Tape that can read parameters from `params`.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Tape without any parameters, for free-standing computations.
    pub fn detached() -> Tape<'static> {
        Tape {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Forward-only tape: parameters are not tracked for gradients.
    pub fn inference(params: &'p ParamStore) -> Self {
        let mut t = Self::new(params);
        t.grad_enabled = false;
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        check_finite(name, &value)?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input tensor. It takes part in differentiation when
    /// `requires_grad` is set on it.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        let needs = t.requires_grad && self.grad_enabled;
        let mut t = t;
        t.grad = None;
        self.push("leaf", t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.param_vars.get(id.index()).copied().flatten() {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| NumericsError::Shape("tape has no parameter store".into()))?;
        let mut value = store.get(id).tensor.clone();
        value.grad = None;
        let v = self.push("param", value, Op::Param, self.grad_enabled)?;
        self.param_vars[id.index()] = Some(v);
        Ok(v)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let (r, c) = match (broadcast_dim(ra, rb), broadcast_dim(ca, cb)) {
            (Some(r), Some(c)) => (r, c),
            _ => {
                return Err(NumericsError::Shape(format!(
                    "{kind:?}: cannot broadcast [{ra}x{ca}] with [{rb}x{cb}]"
                )))
            }
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let (sa, sb, so) = ((ra, ca), (rb, cb), (r, c));
        let out = match kind {
            Binary::Add => broadcast_map(av, sa, bv, sb, so, |x, y| x + y),
            Binary::Sub => broadcast_map(av, sa, bv, sb, so, |x, y| x - y),
            Binary::Mul => broadcast_map(av, sa, bv, sb, so, |x, y| x * y),
            Binary::Div => broadcast_map(av, sa, bv, sb, so, |x, y| x / y),
        };
        let needs = self.needs(a) || self.needs(b);
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        self.push(
            name,
            Tensor::new(&[r, c], out)?,
            Op::Binary(kind, a, b),
            needs,
        )
    }

    /// Elementwise sum with broadcasting of unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let out: Vec<f64> = xv
            .data()
            .iter()
            .map(|&v| match kind {
                Unary::Relu => v.max(0.0),
                Unary::Sigmoid => sigmoid(v),
                Unary::Tanh => v.tanh(),
                Unary::EluPlusOne => {
                    if v > 0.0 {
                        v + 1.0
                    } else {
                        v.exp()
                    }
                }
                Unary::Exp => v.exp(),
                Unary::Square => v * v,
                Unary::Scale(s) => v * s,
                Unary::Offset(s) => v + s,
            })
            .collect();
        let needs = self.needs(x);
        self.push(
            "unary",
            Tensor::new(&shape, out)?,
            Op::Unary(kind, x),
            needs,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    /// `elu(x) + 1`, a smooth strictly positive feature map.
    pub fn elu_plus_one(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::EluPlusOne, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(Unary::Scale(s), x)
    }

    pub fn offset(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(Unary::Offset(s), x)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let (m, ka) = if ta { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if tb { (cb, rb) } else { (rb, cb) };
        if ka != kb {
            return Err(NumericsError::Shape(format!(
                "matmul: [{m}x{ka}] · [{kb}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            ka,
            n,
            self.value(a).data(),
            Transpose::from(ta),
            ca,
            self.value(b).data(),
            Transpose::from(tb),
            cb,
            &mut out,
            false,
        );
        let needs = self.needs(a) || self.needs(b);
        self.push(
            "matmul",
            Tensor::new(&[m, n], out)?,
            Op::MatMul { a, b, ta, tb },
            needs,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `x · w + b` with `w` of shape `[in, out]` and `b` of shape `[1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.shape(x);
        let (kw, n) = self.shape(w);
        if k != kw {
            return Err(NumericsError::Shape(format!(
                "linear: input [{m}x{k}] with weight [{kw}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != n {
                return Err(NumericsError::Shape(format!(
                    "linear: bias of {} values for {n} outputs",
                    bv.len()
                )));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            m,
            k,
            n,
            self.value(x).data(),
            Transpose::No,
            k,
            self.value(w).data(),
            Transpose::No,
            n,
            &mut out,
            b.is_some(),
        );
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(
            "linear",
            Tensor::new(&[m, n], out)?,
            Op::Linear { x, w, b },
            needs,
        )
    }

    fn reduce(&mut self, x: Var, axis: Axis, mean: bool) -> Result<Var> {
        let (r, c) = self.shape(x);
        let xv = self.value(x).data();
        let (shape, out) = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for row in xv.chunks(c.max(1)) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                if mean {
                    out.iter_mut().for_each(|o| *o /= r as f64);
                }
                ([1, c], out)
            }
            Axis::Cols => {
                let out = xv
                    .chunks(c.max(1))
                    .map(|row| {
                        let s: f64 = row.iter().sum();
                        if mean {
                            s / c as f64
                        } else {
                            s
                        }
                    })
                    .collect();
                ([r, 1], out)
            }
        };
        let needs = self.needs(x);
        let op = if mean {
            Op::Mean(x, axis)
        } else {
            Op::Sum(x, axis)
        };
        self.push("reduce", Tensor::new(&shape, out)?, op, needs)
    }

    pub fn sum(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    /// Maximum along `axis`; the gradient goes to the first maximal entry.
    pub fn max(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let (r, c) = self.shape(x);
        let xv = self.value(x).data();
        let (shape, out, arg) = match axis {
            Axis::Rows => {
                let mut out = vec![f64::NEG_INFINITY; c];
                let mut arg = vec![0; c];
                for i in 0..r {
                    for j in 0..c {
                        let v = xv[i * c + j];
                        if v > out[j] {
                            out[j] = v;
                            arg[j] = i * c + j;
                        }
                    }
                }
                ([1, c], out, arg)
            }
            Axis::Cols => {
                let mut out = Vec::with_capacity(r);
                let mut arg = Vec::with_capacity(r);
                for i in 0..r {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = i * c;
                    for j in 0..c {
                        let v = xv[i * c + j];
                        if v > best {
                            best = v;
                            at = i * c + j;
                        }
                    }
                    out.push(best);
                    arg.push(at);
                }
                ([r, 1], out, arg)
            }
        };
        let needs = self.needs(x);
        self.push("max", Tensor::new(&shape, out)?, Op::Max { x, arg }, needs)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), needs)
    }

    /// Numerically stable softmax normalising along `axis`.
    pub fn softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let (r, c) = self.shape(x);
        let xv = self.value(x).data();
        let mut out = xv.to_vec();
        match axis {
            Axis::Cols => {
                for row in out.chunks_mut(c.max(1)) {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= s);
                }
            }
            Axis::Rows => {
                for j in 0..c {
                    let m = (0..r)
                        .map(|i| xv[i * c + j])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for i in 0..r {
                        let e = (xv[i * c + j] - m).exp();
                        out[i * c + j] = e;
                        s += e;
                    }
                    for i in 0..r {
                        out[i * c + j] /= s;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(
            "softmax",
            Tensor::new(&[r, c], out)?,
            Op::Softmax(x, axis),
            needs,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| NumericsError::Shape("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.shape(p).0 != r) {
            return Err(NumericsError::Shape("concat: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            "concat",
            Tensor::new(&[r, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            needs,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(NumericsError::Shape(format!(
                "slice [{start}, {}) of {c} columns",
                start + len
            )));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let needs = self.needs(x);
        self.push(
            "slice",
            Tensor::new(&[r, len], out)?,
            Op::SliceCols { x, start },
            needs,
        )
    }

    /// Row `i` of the result is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(NumericsError::Index { index: bad, len: r });
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(xv.row(i));
        }
        let needs = self.needs(x);
        self.push(
            "gather",
            Tensor::new(&[idx.len(), c], out)?,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            needs,
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let needs = self.needs(x);
        self.push(
            "transpose",
            Tensor::new(&[c, r], out)?,
            Op::Transpose(x),
            needs,
        )
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x).clone().reshaped(&[rows, cols])?;
        let needs = self.needs(x);
        self.push("reshape", t, Op::Reshape(x), needs)
    }

    /// Normalises each column to zero mean and unit variance over the rows.
    pub fn context_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r < 2 {
            return Err(NumericsError::Shape(format!(
                "context norm needs at least 2 rows, got {r}"
            )));
        }
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        for row in xv.chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= r as f64);
        let mut var = vec![0.0; c];
        for row in xv.chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / r as f64 + eps).sqrt())
            .collect();
        let mut out = Vec::with_capacity(r * c);
        for row in xv.chunks(c) {
            for j in 0..c {
                out.push((row[j] - mean[j]) * inv_std[j]);
            }
        }
        let needs = self.needs(x);
        self.push(
            "context_norm",
            Tensor::new(&[r, c], out)?,
            Op::ContextNorm { x, inv_std },
            needs,
        )
    }

    /// Mean binary cross-entropy between `sigmoid(x)` and `labels`.
    pub fn bce_with_logits(&mut self, x: Var, labels: &[f64]) -> Result<Var> {
        let xv = self.value(x).data();
        if xv.len() != labels.len() {
            return Err(NumericsError::Shape(format!(
                "bce: {} logits for {} labels",
                xv.len(),
                labels.len()
            )));
        }
        // max(x,0) - x*y + log(1 + exp(-|x|))
        let total: f64 = xv
            .iter()
            .zip(labels)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let n = labels.len().max(1) as f64;
        let needs = self.needs(x);
        self.push(
            "bce",
            Tensor::scalar(total / n),
            Op::BceWithLogits {
                x,
                labels: labels.to_vec(),
            },
            needs,
        )
    }

    /// Unit eigenvector of the smallest eigenvalue of `Σ w_i r_i r_iᵀ`, where
    /// `r_i` are the rows of `rows` and `w` holds one weight per row.
    ///
    /// The sign is fixed so that the largest-magnitude entry is positive.
    /// Returns a `[1, cols]` row.
    pub fn weighted_null_vector(&mut self, rows: Var, w: Var) -> Result<Var> {
        let (n, c) = self.shape(rows);
        if self.value(w).len() != n {
            return Err(NumericsError::Shape(format!(
                "null vector: {} weights for {n} rows",
                self.value(w).len()
            )));
        }
        let eig = linalg::weighted_gram_eigen(self.value(rows).data(), c, self.value(w).data())?;
        let v = eig.vector(0);
        let sign = linalg::canonical_sign(&v);
        let out: Vec<f64> = v.iter().map(|x| x * sign).collect();
        let needs = self.needs(rows) || self.needs(w);
        self.push(
            "null_vector",
            Tensor::new(&[1, c], out)?,
            Op::NullVector { rows, w, eig, sign },
            needs,
        )
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(NumericsError::Shape(format!(
                "backward from non-scalar of shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of every parameter read on this tape.
    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        ParamGrads(
            self.param_vars
                .iter()
                .enumerate()
                .filter_map(|(id, v)| {
                    let v = (*v)?;
                    let g = grads.get(v)?;
                    Some((ParamId::from_index(id), g.to_vec()))
                })
                .collect(),
        )
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.needs(v) {
                return;
            }
            let len = self.value(v).len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        let (r, c) = dims(&node.value);
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Binary(kind, a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let av = expand(self.value(*a).data(), sa, (r, c));
                let bv = expand(self.value(*b).data(), sb, (r, c));
                let (av, bv) = (&av[..], &bv[..]);
                acc(*a, &mut |ga| {
                    let d: Cow<[f64]> = match kind {
                        Binary::Add | Binary::Sub => Cow::Borrowed(g),
                        Binary::Mul => Cow::Owned(zip_map(g, bv, |g, y| g * y)),
                        Binary::Div => Cow::Owned(zip_map(g, bv, |g, y| g / y)),
                    };
                    reduce_into(ga, sa, &d, (r, c));
                });
                acc(*b, &mut |gb| {
                    let d: Cow<[f64]> = match kind {
                        Binary::Add => Cow::Borrowed(g),
                        Binary::Sub => Cow::Owned(g.iter().map(|g| -g).collect()),
                        Binary::Mul => Cow::Owned(zip_map(g, av, |g, x| g * x)),
                        Binary::Div => Cow::Owned(
                            g.iter()
                                .zip(av)
                                .zip(bv)
                                .map(|((g, x), y)| -g * x / (y * y))
                                .collect(),
                        ),
                    };
                    reduce_into(gb, sb, &d, (r, c));
                });
            }
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                acc(*x, &mut |gx| match *kind {
                    Unary::Relu => {
                        unary_grad(gx, g, xv, yv, |x, _| if x > 0.0 { 1.0 } else { 0.0 })
                    }
                    Unary::Sigmoid => unary_grad(gx, g, xv, yv, |_, y| y * (1.0 - y)),
                    Unary::Tanh => unary_grad(gx, g, xv, yv, |_, y| 1.0 - y * y),
                    Unary::EluPlusOne => {
                        unary_grad(gx, g, xv, yv, |x, y| if x > 0.0 { 1.0 } else { y })
                    }
                    Unary::Exp => unary_grad(gx, g, xv, yv, |_, y| y),
                    Unary::Square => unary_grad(gx, g, xv, yv, |x, _| 2.0 * x),
                    Unary::Scale(s) => unary_grad(gx, g, xv, yv, |_, _| s),
                    Unary::Offset(_) => unary_grad(gx, g, xv, yv, |_, _| 1.0),
                });
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ra, ca) = self.shape(*a);
                let (rb, cb) = self.shape(*b);
                let k = if *ta { ra } else { ca };
                // C = op(A) op(B), dC is [r x c]
                acc(*a, &mut |ga| {
                    if *ta {
                        // dA = op(B) dCᵀ : [k x r]
                        gemm(
                            k,
                            c,
                            r,
                            self.value(*b).data(),
                            Transpose::from(*tb),
                            cb,
                            g,
                            Transpose::Yes,
                            c,
                            ga,
                            true,
                        );
                    } else {
                        // dA = dC op(B)ᵀ : [r x k]
                        gemm(
                            r,
                            c,
                            k,
                            g,
                            Transpose::No,
                            c,
                            self.value(*b).data(),
                            Transpose::from(!*tb),
                            cb,
                            ga,
                            true,
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    if *tb {
                        // dB = dCᵀ op(A) : [c x k]
                        gemm(
                            c,
                            r,
                            k,
                            g,
                            Transpose::Yes,
                            c,
                            self.value(*a).data(),
                            Transpose::from(*ta),
                            ca,
                            gb,
                            true,
                        );
                    } else {
                        // dB = op(A)ᵀ dC : [k x c]
                        gemm(
                            k,
                            r,
                            c,
                            self.value(*a).data(),
                            Transpose::from(!*ta),
                            ca,
                            g,
                            Transpose::No,
                            c,
                            gb,
                            true,
                        );
                    }
                });
                let _ = rb;
            }
            Op::Linear { x, w, b } => {
                let (_, k) = self.shape(*x);
                acc(*x, &mut |gx| {
                    gemm(
                        r,
                        c,
                        k,
                        g,
                        Transpose::No,
                        c,
                        self.value(*w).data(),
                        Transpose::Yes,
                        c,
                        gx,
                        true,
                    );
                });
                acc(*w, &mut |gw| {
                    gemm(
                        k,
                        r,
                        c,
                        self.value(*x).data(),
                        Transpose::Yes,
                        k,
                        g,
                        Transpose::No,
                        c,
                        gw,
                        true,
                    );
                });
                if let Some(b) = b {
                    acc(*b, &mut |gb| {
                        for row in g.chunks(c) {
                            for (gb, v) in gb.iter_mut().zip(row) {
                                *gb += v;
                            }
                        }
                    });
                }
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let (rx, cx) = self.shape(*x);
                let scale = match (&node.op, axis) {
                    (Op::Mean(..), Axis::Rows) => 1.0 / rx as f64,
                    (Op::Mean(..), Axis::Cols) => 1.0 / cx as f64,
                    _ => 1.0,
                };
                acc(*x, &mut |gx| {
                    for (i, row) in gx.chunks_mut(cx).enumerate().take(rx) {
                        match axis {
                            Axis::Rows => {
                                for (d, v) in row.iter_mut().zip(g) {
                                    *d += v * scale;
                                }
                            }
                            Axis::Cols => row.iter_mut().for_each(|d| *d += g[i] * scale),
                        }
                    }
                });
            }
            Op::Max { x, arg, .. } => {
                acc(*x, &mut |gx| {
                    for (k, &at) in arg.iter().enumerate() {
                        gx[at] += g[k];
                    }
                });
            }
            Op::SumAll(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                acc(*x, &mut |gx| match axis {
                    Axis::Cols => {
                        for i in 0..r {
                            let row = i * c..(i + 1) * c;
                            let dot: f64 = g[row.clone()]
                                .iter()
                                .zip(&y[row.clone()])
                                .map(|(a, b)| a * b)
                                .sum();
                            for k in row {
                                gx[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                    Axis::Rows => {
                        for j in 0..c {
                            let dot: f64 = (0..r).map(|i| g[i * c + j] * y[i * c + j]).sum();
                            for i in 0..r {
                                let k = i * c + j;
                                gx[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    acc(p, &mut |gp| {
                        for i in 0..r {
                            for j in 0..pc {
                                gp[i * pc + j] += g[i * c + offset + j];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceCols { x, start } => {
                let cx = self.shape(*x).1;
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * cx + start + j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                acc(*x, &mut |gx| {
                    for (k, &src) in idx.iter().enumerate() {
                        let dst = &mut gx[src * c..(src + 1) * c];
                        for (d, v) in dst.iter_mut().zip(&g[k * c..(k + 1) * c]) {
                            *d += v;
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                acc(*x, &mut |gx| {
                    // output is [r x c], input [c x r]
                    for i in 0..r {
                        for j in 0..c {
                            gx[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |gx| {
                    for (a, b) in gx.iter_mut().zip(g) {
                        *a += b;
                    }
                });
            }
            Op::ContextNorm { x, inv_std } => {
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    let mut mean_g = vec![0.0; c];
                    let mut mean_gy = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            let k = i * c + j;
                            mean_g[j] += g[k];
                            mean_gy[j] += g[k] * y[k];
                        }
                    }
                    let n = r as f64;
                    for j in 0..c {
                        mean_g[j] /= n;
                        mean_gy[j] /= n;
                    }
                    for i in 0..r {
                        for j in 0..c {
                            let k = i * c + j;
                            gx[k] += inv_std[j] * (g[k] - mean_g[j] - y[k] * mean_gy[j]);
                        }
                    }
                });
            }
            Op::BceWithLogits { x, labels } => {
                let xv = self.value(*x).data();
                let n = labels.len().max(1) as f64;
                acc(*x, &mut |gx| {
                    for k in 0..gx.len() {
                        gx[k] += g[0] * (sigmoid(xv[k]) - labels[k]) / n;
                    }
                });
            }
            Op::NullVector { rows, w, eig, sign } => {
                let (n, dim) = self.shape(*rows);
                let gv: Vec<f64> = g.iter().map(|x| x * sign).collect();
                // dL/dA for A = Σ w_i r_i r_iᵀ, symmetrised.
                let m = eig.null_vector_gradient(&gv);
                let rv = self.value(*rows).data();
                let wv = self.value(*w).data();
                let mut mr = vec![0.0; dim];
                acc(*w, &mut |gw| {
                    for i in 0..n {
                        let ri = &rv[i * dim..(i + 1) * dim];
                        linalg::sym_matvec(&m, ri, &mut mr);
                        gw[i] += ri.iter().zip(&mr).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                acc(*rows, &mut |gr| {
                    for i in 0..n {
                        let ri = &rv[i * dim..(i + 1) * dim];
                        linalg::sym_matvec(&m, ri, &mut mr);
                        for j in 0..dim {
                            gr[i * dim + j] += 2.0 * wv[i] * mr[j];
                        }
                    }
                });
            }
        }
        Ok(())
    }
}
