use rand::seq::index::sample;
use rand::Rng;

use super::adam::AdamState;
use crate::autodiff::{Parameters, Tape, Tensor};
use crate::divergences::{variational_gap, CriticNet, FDivergenceSpec, CRITIC_WIDTH};
use crate::error::{Error, Result};

/// Settings for fitting a neural critic to two fixed samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticFit {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub width: usize,
}

impl Default for CriticFit {
    fn default() -> Self {
        CriticFit {
            steps: 1500,
            batch: 512,
            lr: 2e-3,
            width: CRITIC_WIDTH,
        }
    }
}

/// Variational objective of a fixed critic, evaluated without a tape.
pub fn gap_value(spec: FDivergenceSpec, critic: &CriticNet, p: &Tensor, q: &Tensor) -> Result<f64> {
    let tape = Tape::no_grad();
    Ok(variational_gap(&tape, spec, critic, tape.constant(p.clone()), tape.constant(q.clone()))?.item())
}

/// Ascend the variational objective on mini-batches drawn from `p` and `q`.
pub fn fit_critic<R: Rng + ?Sized>(
    spec: FDivergenceSpec,
    p: &Tensor,
    q: &Tensor,
    opts: CriticFit,
    rng: &mut R,
) -> Result<CriticNet> {
    let (np, d) = p.dims2()?;
    let (nq, dq) = q.dims2()?;
    if d != dq {
        return Err(Error::shape("fit_critic", p.shape(), q.shape()));
    }
    if np == 0 || nq == 0 || opts.batch == 0 {
        return Err(Error::Empty { op: "fit_critic" });
    }
    let mut critic = CriticNet::with_width(d, opts.width, rng);
    let mut adam = AdamState::new(opts.lr, (0.9, 0.999), 1e-8, 0.0)?;
    for _ in 0..opts.steps {
        let pb = p.select_rows(&sample(rng, np, opts.batch.min(np)).into_vec());
        let qb = q.select_rows(&sample(rng, nq, opts.batch.min(nq)).into_vec());
        let tape = Tape::new();
        let gap = variational_gap(&tape, spec, &critic, tape.constant(pb), tape.constant(qb))?;
        let grads = gap.neg()?.backward()?;
        adam.step(critic.params_mut(), &grads)?;
    }
    Ok(critic)
}

/// Lower-bound divergence estimate: fit on the training pair, report the
/// objective on the held-out pair.
pub fn mlp_divergence_estimate<R: Rng + ?Sized>(
    spec: FDivergenceSpec,
    train: (&Tensor, &Tensor),
    held_out: (&Tensor, &Tensor),
    opts: CriticFit,
    rng: &mut R,
) -> Result<(f64, CriticNet)> {
    let critic = fit_critic(spec, train.0, train.1, opts, rng)?;
    let value = gap_value(spec, &critic, held_out.0, held_out.1)?;
    Ok((value, critic))
}
