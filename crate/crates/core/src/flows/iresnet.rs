use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Param, Parameters, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Largest width for which the dense log-determinant is attempted.
pub const MAX_DENSE_LOGDET_DIM: usize = 64;

const POWER_ITER_MIN_STEPS: usize = 30;
const POWER_ITER_MAX_STEPS: usize = 2000;
const POWER_ITER_SEED: u64 = 0x5eed;

/// Largest singular value of a matrix by power iteration on `WᵀW`.
///
/// Runs at least 30 steps from a fixed-seed start vector and keeps going
/// until the estimate stalls to relative 1e-12.
pub fn spectral_norm(w: &Tensor) -> Result<f64> {
    let (r, c) = w.dims2()?;
    if w.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITER_SEED);
    let mut v: Vec<f64> = (0..c).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut sigma = 0.0;
    for step in 0..POWER_ITER_MAX_STEPS {
        let n = norm(&v);
        if n == 0.0 {
            // Start vector hit the null space; restart along a coordinate axis.
            v = vec![0.0; c];
            v[step % c] = 1.0;
            continue;
        }
        v.iter_mut().for_each(|a| *a /= n);
        let wv: Vec<f64> = (0..r)
            .map(|i| w.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let next = norm(&wv);
        let mut wtwv = vec![0.0; c];
        for i in 0..r {
            for (j, acc) in wtwv.iter_mut().enumerate() {
                *acc += w.at(i, j) * wv[i];
            }
        }
        v = wtwv;
        let converged = (next - sigma).abs() <= 1e-12 * next;
        sigma = next;
        if step + 1 >= POWER_ITER_MIN_STEPS && converged {
            break;
        }
    }
    Ok(sigma)
}

/// Rescale `w` so its spectral norm is at most `bound`.
pub fn spectral_project(w: &Tensor, bound: f64) -> Result<Tensor> {
    if !(bound > 0.0 && bound < 1.0) {
        return Err(Error::domain("spectral_project", "bound must lie in (0, 1)"));
    }
    let sigma = spectral_norm(w)?;
    if sigma > bound {
        let f = bound / sigma;
        Ok(w.map(|v| v * f))
    } else {
        Ok(w.clone())
    }
}

/// Convergence record of a fixed-point inversion.
#[derive(Clone, Debug, Default)]
pub struct InverseTrace {
    /// Max-abs size of each update, in order.
    pub updates: Vec<f64>,
}

impl InverseTrace {
    pub fn iterations(&self) -> usize {
        self.updates.len()
    }
}

/// Residual block `x ↦ x + W2·tanh(W1·x + b1) + b2` with `‖W1‖, ‖W2‖ ≤ s`.
#[derive(Clone, Debug)]
pub struct IResNetBlock {
    /// `hidden × dim`
    pub w1: Param,
    pub b1: Param,
    /// `dim × hidden`
    pub w2: Param,
    pub b2: Param,
    pub bound: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl IResNetBlock {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, bound: f64, rng: &mut R) -> Result<Self> {
        if dim > MAX_DENSE_LOGDET_DIM {
            return Err(Error::TooLarge {
                what: "iresnet log-determinant",
                dim,
                cap: MAX_DENSE_LOGDET_DIM,
            });
        }
        let mut block = IResNetBlock {
            w1: Param::new(Tensor::randn([hidden, dim], (1.0 / dim as f64).sqrt(), rng)),
            b1: Param::new(Tensor::zeros([hidden])),
            w2: Param::new(Tensor::randn([dim, hidden], (1.0 / hidden as f64).sqrt(), rng)),
            b2: Param::new(Tensor::zeros([dim])),
            bound,
            tol: 1e-10,
            max_iter: 200,
        };
        block.project()?;
        Ok(block)
    }

    pub fn dim(&self) -> usize {
        self.w1.value.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w1.value.shape()[0]
    }

    /// Enforce the spectral bound on both weight matrices.
    pub fn project(&mut self) -> Result<()> {
        self.w1.value = spectral_project(&self.w1.value, self.bound)?;
        self.w2.value = spectral_project(&self.w2.value, self.bound)?;
        Ok(())
    }

    fn check_width(&self, x: Var<'_>) -> Result<()> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::shape("iresnet", &shape, &[0, self.dim()]));
        }
        Ok(())
    }

    /// Residual branch; also returns `tanh(W1·x + b1)` for the Jacobian.
    fn residual<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let w1 = tape.param(&self.w1);
        let w2 = tape.param(&self.w2);
        let act = x
            .matmul(w1.transpose()?)?
            .add_row(tape.param(&self.b1))?
            .tanh()?;
        let f = act.matmul(w2.transpose()?)?.add_row(tape.param(&self.b2))?;
        Ok((f, act))
    }

    /// Output `x + F(x)` and exact per-row `log|det(I + J_F(x))|`.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check_width(x)?;
        if self.dim() > MAX_DENSE_LOGDET_DIM {
            return Err(Error::TooLarge {
                what: "iresnet log-determinant",
                dim: self.dim(),
                cap: MAX_DENSE_LOGDET_DIM,
            });
        }
        let (f, act) = self.residual(tape, x)?;
        let out = x.add(f)?;
        let dact = act.square()?.affine(-1.0, 1.0)?;
        let jac = tape
            .param(&self.w2)
            .residual_jacobian(dact, tape.param(&self.w1))?;
        Ok((out, jac.log_abs_det()?))
    }

    /// Banach fixed-point inversion `x ← o − F(x)` starting from `x = o`.
    pub fn inverse<'t>(&self, tape: &'t Tape, o: Var<'t>) -> Result<Var<'t>> {
        self.inverse_traced(tape, o).map(|(x, _)| x)
    }

    pub fn inverse_traced<'t>(&self, tape: &'t Tape, o: Var<'t>) -> Result<(Var<'t>, InverseTrace)> {
        self.check_width(o)?;
        let mut trace = InverseTrace::default();
        let mut x = o;
        for _ in 0..self.max_iter {
            let (f, _) = self.residual(tape, x)?;
            let next = o.sub(f)?;
            let update = next.value().max_abs_diff(&x.value());
            trace.updates.push(update);
            x = next;
            if update < self.tol {
                return Ok((x, trace));
            }
        }
        Err(Error::NonConvergence {
            what: "iresnet inverse",
            iterations: self.max_iter,
            residual: trace.updates.last().copied().unwrap_or(f64::NAN),
        })
    }
}

impl Parameters for IResNetBlock {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}
