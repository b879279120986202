use super::critic::CriticNet;
use super::fdiv::FDivergenceSpec;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::flows::FlowModel;

/// Mean over rows of the squared row norm.
pub fn mean_sq_norm(v: Var<'_>) -> Result<Var<'_>> {
    let n = v.shape()[0];
    if n == 0 {
        return Err(Error::Empty { op: "mean_sq_norm" });
    }
    v.sum_of_squares()?.scale(1.0 / n as f64)
}

/// `mean g_f(V(p)) − mean f*(g_f(V(q)))`, a lower bound on `D_f(P‖Q)` for any
/// critic `V`.
pub fn variational_gap<'t>(
    tape: &'t Tape,
    spec: FDivergenceSpec,
    critic: &CriticNet,
    p: Var<'t>,
    q: Var<'t>,
) -> Result<Var<'t>> {
    let (ps, qs) = (p.shape(), q.shape());
    if ps.len() != 2 || qs.len() != 2 || ps[1] != qs[1] {
        return Err(Error::shape("variational_gap", &ps, &qs));
    }
    if ps[0] == 0 || qs[0] == 0 {
        return Err(Error::Empty { op: "variational_gap" });
    }
    let on_p = spec.gf(critic.forward(tape, p)?)?.mean()?;
    let on_q = spec.fstar_of_gf(critic.forward(tape, q)?)?.mean()?;
    let gap = on_p.sub(on_q)?;
    if !gap.item().is_finite() {
        return Err(Error::NonFinite { op: "variational_gap" });
    }
    Ok(gap)
}

fn check_batch(model: &FlowModel, x: Var<'_>, y: Var<'_>, z: Var<'_>) -> Result<usize> {
    let (xs, ys, zs) = (x.shape(), y.shape(), z.shape());
    let n = xs[0];
    let ok = xs.len() == 2
        && ys.len() == 2
        && zs.len() == 2
        && xs[1] == model.dim()
        && ys[1] == model.d_y
        && zs[1] == model.d_z
        && ys[0] == n
        && zs[0] == n;
    if !ok {
        return Err(Error::shape("inn loss", &xs, &[ys, zs].concat()));
    }
    Ok(n)
}

fn joint<'t>(y: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
    match (y.shape()[1], z.shape()[1]) {
        (0, _) => Ok(z),
        (_, 0) => Ok(y),
        _ => Var::concat_cols(&[y, z]),
    }
}

/// Input-space loss: the critic compares `T⁻¹(Y, Z)` with `X`, plus the mean
/// squared reconstruction error `‖T⁻¹(Y, Z) − X‖²`.
pub fn inn_backward_loss<'t>(
    tape: &'t Tape,
    model: &FlowModel,
    critic: &CriticNet,
    spec: FDivergenceSpec,
    x: Var<'t>,
    y: Var<'t>,
    z: Var<'t>,
) -> Result<Var<'t>> {
    check_batch(model, x, y, z)?;
    let x_gen = model.inverse(tape, y, z)?;
    let gap = variational_gap(tape, spec, critic, x_gen, x)?;
    gap.add(mean_sq_norm(x_gen.sub(x)?)?)
}

/// Output-space loss: the critic compares `(Y, Z)` with `T(X)`, plus
/// `‖T(X) − (Y, Z)‖²`.
pub fn inn_forward_loss<'t>(
    tape: &'t Tape,
    model: &FlowModel,
    critic: &CriticNet,
    spec: FDivergenceSpec,
    x: Var<'t>,
    y: Var<'t>,
    z: Var<'t>,
) -> Result<Var<'t>> {
    check_batch(model, x, y, z)?;
    let out = model.forward(tape, x)?.out;
    let target = joint(y, z)?;
    let gap = variational_gap(tape, spec, critic, target, out)?;
    gap.add(mean_sq_norm(out.sub(target)?)?)
}

/// Which pair stands in for the model side of the unsupervised loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Pairing {
    /// `(Y_i, T_z(X_i))`.
    #[default]
    Observed,
    /// `(T_y(X_i), T_z(X_i))`.
    Predicted,
}

impl Pairing {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "observed" => Some(Pairing::Observed),
            "predicted" => Some(Pairing::Predicted),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pairing::Observed => "observed",
            Pairing::Predicted => "predicted",
        }
    }
}

/// Empirical unsupervised loss on the joint `(y, z)` space: `(Y, Z)` against
/// the model's latent paired per [`Pairing`].
#[allow(clippy::too_many_arguments)]
pub fn inn_unsup_loss_lz<'t>(
    tape: &'t Tape,
    model: &FlowModel,
    critic: &CriticNet,
    spec: FDivergenceSpec,
    x: Var<'t>,
    y: Var<'t>,
    z: Var<'t>,
    pairing: Pairing,
) -> Result<Var<'t>> {
    check_batch(model, x, y, z)?;
    let out = model.forward(tape, x)?;
    let first = match pairing {
        Pairing::Observed => y,
        Pairing::Predicted => out.y,
    };
    variational_gap(tape, spec, critic, joint(y, z)?, joint(first, out.z)?)
}

/// `mean [½‖T_y(X) − y‖²/σ² + ½‖T_z(X)‖² − log|det J_T(X)|]`. With `d_y = 0`
/// pass `y = None`.
pub fn nll_loss<'t>(tape: &'t Tape, model: &FlowModel, x: Var<'t>, y: Option<Var<'t>>, sigma: f64) -> Result<Var<'t>> {
    if !(sigma > 0.0) {
        return Err(Error::domain("nll_loss", format!("sigma must be positive, got {sigma}")));
    }
    let out = model.forward(tape, x)?;
    let n = x.shape()[0];
    if n == 0 {
        return Err(Error::Empty { op: "nll_loss" });
    }
    let mut total = mean_sq_norm(out.z)?.scale(0.5)?.sub(out.logdet.mean()?)?;
    if model.d_y > 0 {
        let y = y.ok_or_else(|| Error::domain("nll_loss", "targets required when d_y > 0"))?;
        if y.shape() != out.y.shape() {
            return Err(Error::shape("nll_loss", &y.shape(), &out.y.shape()));
        }
        let fit = mean_sq_norm(out.y.sub(y)?)?.scale(0.5 / (sigma * sigma))?;
        total = total.add(fit)?;
    }
    Ok(total)
}

/// `mean ‖T_y(X) − Y‖²`.
pub fn supervised_mse<'t>(tape: &'t Tape, model: &FlowModel, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    let out = model.forward(tape, x)?;
    if y.shape() != out.y.shape() {
        return Err(Error::shape("supervised_mse", &y.shape(), &out.y.shape()));
    }
    mean_sq_norm(out.y.sub(y)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prior {
    /// Paired squared distance to the true inputs.
    Gaussian,
    /// Hinge penalty outside `[a, b]` in every coordinate.
    Uniform { a: f64, b: f64 },
}

impl Prior {
    pub fn name(&self) -> &'static str {
        match self {
            Prior::Gaussian => "gaussian",
            Prior::Uniform { .. } => "uniform",
        }
    }
}

pub fn prior_loss<'t>(prior: Prior, x_rec: Var<'t>, x_true: Option<Var<'t>>) -> Result<Var<'t>> {
    match prior {
        Prior::Gaussian => {
            let x_true = x_true.ok_or_else(|| Error::domain("prior_loss", "gaussian prior needs paired inputs"))?;
            if x_true.shape() != x_rec.shape() {
                return Err(Error::shape("prior_loss", &x_rec.shape(), &x_true.shape()));
            }
            mean_sq_norm(x_rec.sub(x_true)?)
        }
        Prior::Uniform { a, b } => {
            if !(a < b) {
                return Err(Error::domain("prior_loss", format!("need a < b, got [{a}, {b}]")));
            }
            let above = x_rec.shift(-b)?.relu()?;
            let below = x_rec.affine(-1.0, a)?.relu()?;
            let n = x_rec.shape()[0];
            if n == 0 {
                return Err(Error::Empty { op: "prior_loss" });
            }
            above.add(below)?.sum()?.scale(1.0 / n as f64)
        }
    }
}

/// Mean squared magnitude of the padding coordinates.
pub fn reconstruction_loss(z_pad: Var<'_>) -> Result<Var<'_>> {
    if z_pad.value().is_empty() {
        return Err(Error::Empty {
            op: "reconstruction_loss",
        });
    }
    z_pad.square()?.mean()
}
