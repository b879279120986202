use std::collections::HashMap;

use crate::autodiff::{Gradients, Param, ParamId, Tensor};
use crate::error::{Error, Result};

/// Adam with decoupled weight decay. Moments are keyed by parameter id, so
/// one state can serve any subset of a model's parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<ParamId, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Result<Self> {
        let ok = lr >= 0.0
            && (0.0..1.0).contains(&betas.0)
            && (0.0..1.0).contains(&betas.1)
            && eps > 0.0
            && weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "invalid Adam settings: lr={lr}, betas={betas:?}, eps={eps}, weight_decay={weight_decay}"
            )));
        }
        Ok(AdamState {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            step: 0,
            moments: HashMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient on `grads`.
    /// Parameters the tape never saw are left alone.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>, grads: &Gradients) -> Result<()> {
        let mut work = Vec::new();
        for p in params {
            if let Some(g) = grads.param(p) {
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: "adam_step" });
                }
                work.push((p, g));
            }
        }
        self.apply(work)
    }

    /// Update from explicit `(parameter, gradient)` pairs.
    pub fn step_with(&mut self, pairs: Vec<(&mut Param, Tensor)>) -> Result<()> {
        for (p, g) in &pairs {
            if g.shape() != p.value.shape() {
                return Err(Error::shape("adam_step", g.shape(), p.value.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        self.apply(pairs)
    }

    fn apply(&mut self, pairs: Vec<(&mut Param, Tensor)>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        for (p, g) in pairs {
            let (m, v) = self
                .moments
                .entry(p.id())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let theta = p.value.data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = b1 * *mk + (1.0 - b1) * gk;
                let mhat = *mk / c1;
                let vk = &mut v.data_mut()[k];
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let vhat = *vk / c2;
                theta[k] -= lr * mhat / (vhat.sqrt() + eps) + lr * wd * theta[k];
            }
        }
        Ok(())
    }
}
