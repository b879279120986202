use rand::Rng;

use super::subnet::{Activation, InitMode, Subnet};
use crate::autodiff::{Param, Parameters, Tape, Var};
use crate::error::{Error, Result};

/// Default bound `c` on the soft-clamped log-scales.
pub const DEFAULT_CLAMP: f64 = 2.0;

/// Two complementary affine coupling layers.
///
/// With `u = (u1, u2)` split at `d1`:
/// `v1 = u1 ⊙ exp(ŝ1(u2)) + t1(u2)`, then `o2 = u2 ⊙ exp(ŝ2(v1)) + t2(v1)`,
/// `o = (v1, o2)`, where every log-scale is soft-clamped as `ŝ = c·tanh(s/c)`.
#[derive(Clone, Debug)]
pub struct CouplingBlock {
    pub dim: usize,
    pub split: usize,
    pub s1: Subnet,
    pub t1: Subnet,
    pub s2: Subnet,
    pub t2: Subnet,
    pub clamp: f64,
}

impl CouplingBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        split: usize,
        hidden: usize,
        activation: Activation,
        clamp: f64,
        init: InitMode,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 2 || split < 1 || split >= dim {
            return Err(Error::Config(format!(
                "coupling split {split} invalid for dimension {dim}"
            )));
        }
        if !(clamp > 0.0) {
            return Err(Error::Config("coupling clamp must be positive".into()));
        }
        let d2 = dim - split;
        Ok(CouplingBlock {
            dim,
            split,
            s1: Subnet::new(d2, hidden, split, activation, init, rng),
            t1: Subnet::new(d2, hidden, split, activation, init, rng),
            s2: Subnet::new(split, hidden, d2, activation, init, rng),
            t2: Subnet::new(split, hidden, d2, activation, init, rng),
            clamp,
        })
    }

    fn scale<'t>(&self, tape: &'t Tape, net: &Subnet, x: Var<'t>) -> Result<Var<'t>> {
        let c = self.clamp;
        net.forward(tape, x)?.scale(1.0 / c)?.tanh()?.scale(c)
    }

    fn check_width(&self, x: Var<'_>) -> Result<()> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape("coupling", &shape, &[0, self.dim]));
        }
        Ok(())
    }

    /// Returns the block output and the per-row log-determinant.
    pub fn forward<'t>(&self, tape: &'t Tape, u: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check_width(u)?;
        let u1 = u.slice_cols(0, self.split)?;
        let u2 = u.slice_cols(self.split, self.dim)?;
        let s1 = self.scale(tape, &self.s1, u2)?;
        let v1 = u1.mul(s1.exp()?)?.add(self.t1.forward(tape, u2)?)?;
        let s2 = self.scale(tape, &self.s2, v1)?;
        let o2 = u2.mul(s2.exp()?)?.add(self.t2.forward(tape, v1)?)?;
        let out = Var::concat_cols(&[v1, o2])?;
        let logdet = s1.sum_axis(1)?.add(s2.sum_axis(1)?)?;
        Ok((out, logdet))
    }

    /// Exact algebraic inverse; the subnets are only evaluated forward.
    pub fn inverse<'t>(&self, tape: &'t Tape, o: Var<'t>) -> Result<Var<'t>> {
        self.check_width(o)?;
        let o1 = o.slice_cols(0, self.split)?;
        let o2 = o.slice_cols(self.split, self.dim)?;
        let s2 = self.scale(tape, &self.s2, o1)?;
        let u2 = o2
            .sub(self.t2.forward(tape, o1)?)?
            .mul(s2.neg()?.exp()?)?;
        let s1 = self.scale(tape, &self.s1, u2)?;
        let u1 = o1
            .sub(self.t1.forward(tape, u2)?)?
            .mul(s1.neg()?.exp()?)?;
        Var::concat_cols(&[u1, u2])
    }
}

impl Parameters for CouplingBlock {
    fn params(&self) -> Vec<&Param> {
        [&self.s1, &self.t1, &self.s2, &self.t2]
            .into_iter()
            .flat_map(|n| n.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let CouplingBlock { s1, t1, s2, t2, .. } = self;
        [s1, t1, s2, t2]
            .into_iter()
            .flat_map(|n| n.params_mut())
            .collect()
    }
}
