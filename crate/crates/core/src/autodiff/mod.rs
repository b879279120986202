//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Every forward pass records onto a fresh [`Tape`]; [`Var::backward`] walks
//! the record in reverse. Broadcasting is limited to scalar-vs-tensor, plus
//! the dedicated row-bias op [`Var::add_row`].

mod ops;
mod tape;
mod tensor;

pub use ops::{BinaryKind, ReduceKind, UnaryKind};
pub use tape::{Gradients, Param, ParamId, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Anything that owns trainable parameters.
pub trait Parameters {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

pub fn apply_binary<'t>(kind: BinaryKind, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    match kind {
        BinaryKind::Add => a.add(b),
        BinaryKind::Sub => a.sub(b),
        BinaryKind::Mul => a.mul(b),
        BinaryKind::Div => a.div(b),
    }
}

pub fn apply_unary(kind: UnaryKind, a: Var<'_>) -> Result<Var<'_>> {
    match kind {
        UnaryKind::Tanh => a.tanh(),
        UnaryKind::Exp => a.exp(),
        UnaryKind::Log => a.log(),
        UnaryKind::Neg => a.neg(),
        UnaryKind::Softplus => a.softplus(),
        UnaryKind::Relu => a.relu(),
        UnaryKind::Square => a.square(),
        UnaryKind::Sqrt => a.sqrt(),
        UnaryKind::Sigmoid => a.sigmoid(),
    }
}

pub fn reduce(kind: ReduceKind, a: Var<'_>, axis: Option<usize>) -> Result<Var<'_>> {
    match (kind, axis) {
        (ReduceKind::Sum, None) => a.sum(),
        (ReduceKind::Mean, None) => a.mean(),
        (ReduceKind::SumOfSquares, None) => a.sum_of_squares(),
        (ReduceKind::Sum, Some(ax)) => a.sum_axis(ax),
        (ReduceKind::Mean, Some(ax)) => a.mean_axis(ax),
        (ReduceKind::SumOfSquares, Some(ax)) => a.sum_of_squares_axis(ax),
    }
}

fn rel_err(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / (central.abs() + 1e-12)
}

fn eval_no_grad<F>(f: &F, theta: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::no_grad();
    let v = f(&tape, tape.constant(theta.clone()))?.item();
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Compare the tape gradient of a scalar function against central
/// differences. Returns `max_i |analytic_i − central_i| / (|central_i| + 1e-12)`.
pub fn grad_check<F>(f: F, theta: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::domain("grad_check", "step must be positive"));
    }
    let tape = Tape::new();
    let x = tape.var(theta.clone());
    let y = f(&tape, x)?;
    let analytic = if y.is_tracked() {
        y.backward()?.wrt(x)
    } else {
        Tensor::zeros(theta.shape())
    };
    let mut worst = 0.0f64;
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval_no_grad(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval_no_grad(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let central = (fp - fm) / (2.0 * h);
        worst = worst.max(rel_err(analytic.data()[i], central));
    }
    Ok(worst)
}

/// [`grad_check`] over every parameter entry of a module.
pub fn grad_check_module<M, F>(module: &mut M, f: F, h: f64) -> Result<f64>
where
    M: Parameters,
    F: for<'t> Fn(&M, &'t Tape) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::domain("grad_check", "step must be positive"));
    }
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let y = f(module, &tape)?;
        let grads = y.backward()?;
        module
            .params()
            .iter()
            .map(|p| grads.param(p).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    };
    let eval = |m: &M| -> Result<f64> {
        let tape = Tape::no_grad();
        let v = f(m, &tape)?.item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "grad_check" })
        }
    };
    let mut worst = 0.0f64;
    for (pi, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = module.params()[pi].value.data()[i];
            module.params_mut()[pi].value.data_mut()[i] = orig + h;
            let fp = eval(module)?;
            module.params_mut()[pi].value.data_mut()[i] = orig - h;
            let fm = eval(module)?;
            module.params_mut()[pi].value.data_mut()[i] = orig;
            let central = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(g.data()[i], central));
        }
    }
    Ok(worst)
}
