//! Forward kernels and vector-Jacobian products for every recorded op.

use std::rc::Rc;

use nalgebra::DMatrix;

use super::tape::Node;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    pub fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Exp,
    Log,
    Neg,
    Softplus,
    Relu,
    Square,
    Sqrt,
    Sigmoid,
}

impl UnaryKind {
    pub fn name(self) -> &'static str {
        match self {
            UnaryKind::Tanh => "tanh",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Neg => "neg",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Relu => "relu",
            UnaryKind::Square => "square",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    SumOfSquares,
}

impl ReduceKind {
    pub fn name(self) -> &'static str {
        match self {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::SumOfSquares => "sum_of_squares",
        }
    }
}

pub(crate) type CustomBackward = Rc<dyn Fn(&Tensor) -> Result<Vec<Tensor>>>;

pub(crate) enum Op {
    Leaf,
    Binary { kind: BinaryKind, a: usize, b: usize },
    MatMul { a: usize, b: usize },
    Unary { kind: UnaryKind, a: usize },
    Affine { a: usize, scale: f64 },
    Clamp { a: usize, lo: f64, hi: f64 },
    Reduce { kind: ReduceKind, a: usize, axis: Option<usize> },
    AddRow { a: usize, b: usize },
    Transpose { a: usize },
    SliceCols { a: usize, start: usize, end: usize },
    ConcatCols { parts: Vec<usize> },
    ResidualJacobian { w2: usize, act: usize, w1: usize },
    LogAbsDet { a: usize, inv_t: Rc<Tensor> },
    PairwiseSqDist { a: usize, b: usize },
    Custom { parents: Vec<usize>, backward: CustomBackward },
}

impl Op {
    pub fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } | Op::AddRow { a, b } => vec![*a, *b],
            Op::PairwiseSqDist { a, b } => vec![*a, *b],
            Op::Unary { a, .. }
            | Op::Affine { a, .. }
            | Op::Clamp { a, .. }
            | Op::Reduce { a, .. }
            | Op::Transpose { a }
            | Op::SliceCols { a, .. }
            | Op::LogAbsDet { a, .. } => vec![*a],
            Op::ConcatCols { parts } => parts.clone(),
            Op::ResidualJacobian { w2, act, w1 } => vec![*w2, *act, *w1],
            Op::Custom { parents, .. } => parents.clone(),
        }
    }
}

pub(crate) fn binary_forward(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let f = |x: f64, y: f64| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    };
    if kind == BinaryKind::Div && b.data().iter().any(|&v| v == 0.0) {
        return Err(Error::domain("div", "division by a zero entry"));
    }
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    if b.is_scalar() {
        let s = b.data()[0];
        return Ok(a.map(|x| f(x, s)));
    }
    if a.is_scalar() {
        let s = a.data()[0];
        return Ok(b.map(|y| f(s, y)));
    }
    Err(Error::shape(kind.name(), a.shape(), b.shape()))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn unary_forward(kind: UnaryKind, a: &Tensor) -> Result<Tensor> {
    match kind {
        UnaryKind::Log if a.data().iter().any(|&v| v <= 0.0) => {
            return Err(Error::domain("log", "argument must be strictly positive"))
        }
        UnaryKind::Sqrt if a.data().iter().any(|&v| v < 0.0) => {
            return Err(Error::domain("sqrt", "argument must be nonnegative"))
        }
        _ => {}
    }
    Ok(a.map(|x| match kind {
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Neg => -x,
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Square => x * x,
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Sigmoid => sigmoid(x),
    }))
}

/// Split a shape around `axis` into `(outer, len, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn reduce_forward(kind: ReduceKind, a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    if a.is_empty() {
        return Err(Error::Empty { op: kind.name() });
    }
    let term = |v: f64| match kind {
        ReduceKind::SumOfSquares => v * v,
        _ => v,
    };
    match axis {
        None => {
            let s: f64 = a.data().iter().map(|&v| term(v)).sum();
            let s = if kind == ReduceKind::Mean {
                s / a.len() as f64
            } else {
                s
            };
            Ok(Tensor::scalar(s))
        }
        Some(ax) => {
            if ax >= a.rank() {
                return Err(Error::domain(
                    kind.name(),
                    format!("axis {ax} out of range for rank {}", a.rank()),
                ));
            }
            let (outer, len, inner) = axis_split(a.shape(), ax);
            let mut out = vec![0.0; outer * inner];
            let d = a.data();
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += term(d[base + i]);
                    }
                }
            }
            if kind == ReduceKind::Mean {
                out.iter_mut().for_each(|v| *v /= len as f64);
            }
            let mut shape = a.shape().to_vec();
            shape.remove(ax);
            Ok(Tensor::from_parts(shape, out))
        }
    }
}

pub(crate) fn residual_jacobian_forward(w2: &Tensor, act: &Tensor, w1: &Tensor) -> Result<Tensor> {
    let (d, h) = w2.dims2()?;
    let (n, h2) = act.dims2()?;
    let (h3, d2) = w1.dims2()?;
    if h != h2 || h != h3 || d != d2 {
        return Err(Error::shape("residual_jacobian", w2.shape(), w1.shape()));
    }
    let mut out = Vec::with_capacity(n * d * d);
    let mut scaled = vec![0.0; d * h];
    for i in 0..n {
        let a = act.row(i);
        for p in 0..d {
            for k in 0..h {
                scaled[p * h + k] = w2.data()[p * h + k] * a[k];
            }
        }
        let mut j = gemm(&scaled, w1.data(), d, h, d, false, false);
        for p in 0..d {
            j[p * d + p] += 1.0;
        }
        out.extend(j);
    }
    Ok(Tensor::from_parts(vec![n, d, d], out))
}

fn square_stack_dims(a: &Tensor) -> Result<(usize, usize)> {
    match a.shape() {
        [n, d, e] if d == e => Ok((*n, *d)),
        [d, e] if d == e => Ok((1, *d)),
        s => Err(Error::domain(
            "log_abs_det",
            format!("expected a stack of square matrices, got {s:?}"),
        )),
    }
}

/// Returns the log-determinants and the stacked inverse transposes.
pub(crate) fn log_abs_det_forward(a: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, d) = square_stack_dims(a)?;
    let mut out = Vec::with_capacity(n);
    let mut inv_t = Vec::with_capacity(n * d * d);
    for i in 0..n {
        let m = DMatrix::from_row_slice(d, d, &a.data()[i * d * d..(i + 1) * d * d]);
        let lu = m.lu();
        let u = lu.u();
        let mut logdet = 0.0;
        for k in 0..d {
            let ukk = u[(k, k)];
            if ukk == 0.0 {
                return Err(Error::domain("log_abs_det", "singular matrix"));
            }
            logdet += ukk.abs().ln();
        }
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::domain("log_abs_det", "singular matrix"))?;
        out.push(logdet);
        // Row-major of inv^T is column-major of inv.
        inv_t.extend(inv.as_slice().iter().copied());
    }
    let out_shape = if a.rank() == 2 { vec![] } else { vec![n] };
    Ok((
        Tensor::from_parts(out_shape, out),
        Tensor::from_parts(a.shape().to_vec(), inv_t),
    ))
}

pub(crate) fn pairwise_sq_dist_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, d) = a.dims2()?;
    let (m, d2) = b.dims2()?;
    if d != d2 {
        return Err(Error::shape("pairwise_sq_dist", a.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let x = a.row(i);
        for j in 0..m {
            let y = b.row(j);
            out.push(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum());
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Sum a broadcast gradient back down to a scalar when the operand was scalar.
fn unbroadcast(g: Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::from_parts(target.shape().to_vec(), vec![g.sum()])
    }
}

fn broadcast_get(t: &Tensor, i: usize) -> f64 {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

pub(crate) fn backward(op: &Op, nodes: &[Node], out: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    Ok(match op {
        Op::Leaf => vec![],
        Op::Binary { kind, a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let n = g.len();
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for i in 0..n {
                let (x, y, gi) = (broadcast_get(av, i), broadcast_get(bv, i), g.data()[i]);
                let (da, db) = match kind {
                    BinaryKind::Add => (gi, gi),
                    BinaryKind::Sub => (gi, -gi),
                    BinaryKind::Mul => (gi * y, gi * x),
                    BinaryKind::Div => (gi / y, -gi * x / (y * y)),
                };
                ga[i] = da;
                gb[i] = db;
            }
            let shape = g.shape().to_vec();
            vec![
                unbroadcast(Tensor::from_parts(shape.clone(), ga), av),
                unbroadcast(Tensor::from_parts(shape, gb), bv),
            ]
        }
        Op::MatMul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = av.dims2()?;
            let n = bv.dims2()?.1;
            // dA = G·Bᵀ, dB = Aᵀ·G
            let ga = gemm(g.data(), bv.data(), m, n, k, false, true);
            let gb = gemm(av.data(), g.data(), k, m, n, true, false);
            vec![
                Tensor::from_parts(vec![m, k], ga),
                Tensor::from_parts(vec![k, n], gb),
            ]
        }
        Op::Unary { kind, a } => {
            let x = val(*a);
            let data = x
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&x, &y), &gi)| {
                    gi * match kind {
                        UnaryKind::Tanh => 1.0 - y * y,
                        UnaryKind::Exp => y,
                        UnaryKind::Log => 1.0 / x,
                        UnaryKind::Neg => -1.0,
                        UnaryKind::Softplus => sigmoid(x),
                        UnaryKind::Relu => {
                            if x > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Square => 2.0 * x,
                        UnaryKind::Sqrt => 0.5 / y,
                        UnaryKind::Sigmoid => y * (1.0 - y),
                    }
                })
                .collect();
            vec![Tensor::from_parts(x.shape().to_vec(), data)]
        }
        Op::Affine { scale, .. } => vec![g.map(|v| v * scale)],
        Op::Clamp { a, lo, hi } => {
            let x = val(*a);
            let data = x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&x, &gi)| if x < *lo || x > *hi { 0.0 } else { gi })
                .collect();
            vec![Tensor::from_parts(x.shape().to_vec(), data)]
        }
        Op::Reduce { kind, a, axis } => {
            let x = val(*a);
            let local = |v: f64| match kind {
                ReduceKind::SumOfSquares => 2.0 * v,
                _ => 1.0,
            };
            match axis {
                None => {
                    let gv = g.data()[0];
                    let gv = if *kind == ReduceKind::Mean {
                        gv / x.len() as f64
                    } else {
                        gv
                    };
                    vec![x.map(|v| gv * local(v))]
                }
                Some(ax) => {
                    let (outer, len, inner) = axis_split(x.shape(), *ax);
                    let norm = if *kind == ReduceKind::Mean {
                        1.0 / len as f64
                    } else {
                        1.0
                    };
                    let mut data = vec![0.0; x.len()];
                    for o in 0..outer {
                        for k in 0..len {
                            let base = (o * len + k) * inner;
                            for i in 0..inner {
                                data[base + i] =
                                    g.data()[o * inner + i] * norm * local(x.data()[base + i]);
                            }
                        }
                    }
                    vec![Tensor::from_parts(x.shape().to_vec(), data)]
                }
            }
        }
        Op::AddRow { b, .. } => {
            let bv = val(*b);
            let (r, c) = g.dims2()?;
            let mut gb = vec![0.0; c];
            for i in 0..r {
                for (acc, gi) in gb.iter_mut().zip(&g.data()[i * c..(i + 1) * c]) {
                    *acc += gi;
                }
            }
            vec![g.clone(), Tensor::from_parts(bv.shape().to_vec(), gb)]
        }
        Op::Transpose { .. } => vec![g.transpose()?],
        Op::SliceCols { a, start, end } => {
            let x = val(*a);
            let (r, c) = x.dims2()?;
            let w = end - start;
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                data[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            vec![Tensor::from_parts(vec![r, c], data)]
        }
        Op::ConcatCols { parts } => {
            let mut start = 0;
            let mut grads = Vec::with_capacity(parts.len());
            for &p in parts {
                let w = val(p).dims2()?.1;
                grads.push(g.slice_cols(start, start + w)?);
                start += w;
            }
            grads
        }
        Op::ResidualJacobian { w2, act, w1 } => {
            let (w2v, actv, w1v) = (val(*w2), val(*act), val(*w1));
            let (d, h) = w2v.dims2()?;
            let n = actv.dims2()?.0;
            let mut gw2 = vec![0.0; d * h];
            let mut gw1 = vec![0.0; h * d];
            let mut gact = vec![0.0; n * h];
            for i in 0..n {
                let gi = &g.data()[i * d * d..(i + 1) * d * d];
                let a = actv.row(i);
                // P = G_i · W1ᵀ  (d × h), Q = W2ᵀ · G_i  (h × d)
                let p = gemm(gi, w1v.data(), d, d, h, false, true);
                let q = gemm(w2v.data(), gi, h, d, d, true, false);
                for r in 0..d {
                    for k in 0..h {
                        gw2[r * h + k] += p[r * h + k] * a[k];
                        gact[i * h + k] += w2v.data()[r * h + k] * p[r * h + k];
                    }
                }
                for k in 0..h {
                    for c in 0..d {
                        gw1[k * d + c] += a[k] * q[k * d + c];
                    }
                }
            }
            vec![
                Tensor::from_parts(vec![d, h], gw2),
                Tensor::from_parts(vec![n, h], gact),
                Tensor::from_parts(vec![h, d], gw1),
            ]
        }
        Op::LogAbsDet { inv_t, .. } => {
            let (n, d) = square_stack_dims(inv_t)?;
            let mut data = inv_t.data().to_vec();
            for i in 0..n {
                let gi = g.data()[i];
                data[i * d * d..(i + 1) * d * d]
                    .iter_mut()
                    .for_each(|v| *v *= gi);
            }
            vec![Tensor::from_parts(inv_t.shape().to_vec(), data)]
        }
        Op::PairwiseSqDist { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let (n, d) = av.dims2()?;
            let m = bv.dims2()?.0;
            let gd = g.data();
            let gx = gemm(gd, bv.data(), n, m, d, false, false);
            let gy = gemm(gd, av.data(), m, n, d, true, false);
            let mut da = vec![0.0; n * d];
            let mut db = vec![0.0; m * d];
            for i in 0..n {
                let rs: f64 = gd[i * m..(i + 1) * m].iter().sum();
                for k in 0..d {
                    da[i * d + k] = 2.0 * (rs * av.data()[i * d + k] - gx[i * d + k]);
                }
            }
            for j in 0..m {
                let cs: f64 = (0..n).map(|i| gd[i * m + j]).sum();
                for k in 0..d {
                    db[j * d + k] = 2.0 * (cs * bv.data()[j * d + k] - gy[j * d + k]);
                }
            }
            vec![
                Tensor::from_parts(vec![n, d], da),
                Tensor::from_parts(vec![m, d], db),
            ]
        }
        Op::Custom { backward, .. } => backward(g)?,
    })
}
