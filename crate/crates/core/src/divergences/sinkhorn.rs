//! Entropic optimal transport between uniform empirical measures.
//!
//! The plan is found by log-domain Sinkhorn iteration on the squared
//! Euclidean cost. The reported cost is the transport cost `⟨π*, C⟩` of the
//! entropic plan (no entropy term). Its gradient is exact: the dependence of
//! `π*` on `C` is differentiated implicitly through the marginal constraints.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            max_iter: 500,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    /// `n × m` coupling.
    pub plan: Tensor,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Sweeps after which a stalled iteration switches on Newton steps.
const NEWTON_AFTER: usize = 20;

struct Problem<'a> {
    c: &'a [f64],
    n: usize,
    m: usize,
    epsilon: f64,
    log_a: f64,
    log_b: f64,
}

impl Problem<'_> {
    /// One Sinkhorn sweep; returns the largest potential change.
    fn sweep(&self, f: &mut [f64], g: &mut [f64]) -> f64 {
        let (n, m, eps, c) = (self.n, self.m, self.epsilon, self.c);
        let mut residual = 0.0f64;
        for i in 0..n {
            let row = &c[i * m..(i + 1) * m];
            let lse = log_sum_exp(row.iter().zip(g.iter()).map(|(cij, gj)| self.log_b + (gj - cij) / eps));
            let fi = -eps * lse;
            residual = residual.max((fi - f[i]).abs());
            f[i] = fi;
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| self.log_a + (f[i] - c[i * m + j]) / eps));
            let gj = -eps * lse;
            residual = residual.max((gj - g[j]).abs());
            g[j] = gj;
        }
        residual
    }

    fn plan(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut p = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                p.push(((f[i] + g[j] - self.c[i * m + j]) / self.epsilon + self.log_a + self.log_b).exp());
            }
        }
        p
    }

    fn marginal_error(&self, p: &[f64]) -> f64 {
        let (n, m) = (self.n, self.m);
        let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
        let rows: f64 = (0..n).map(|i| (p[i * m..(i + 1) * m].iter().sum::<f64>() - a).abs()).sum();
        let cols: f64 = (0..m).map(|j| ((0..n).map(|i| p[i * m + j]).sum::<f64>() - b).abs()).sum();
        rows + cols
    }

    /// Newton step on the dual, damped until the marginal error drops.
    fn newton(&self, f: &mut [f64], g: &mut [f64]) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let p = self.plan(f, g);
        let err0 = self.marginal_error(&p);
        let eps = self.epsilon;
        let row_gap: Vec<f64> = (0..n)
            .map(|i| eps * (1.0 / n as f64 - p[i * m..(i + 1) * m].iter().sum::<f64>()))
            .collect();
        let col_gap: Vec<f64> = (0..m)
            .map(|j| eps * (1.0 / m as f64 - (0..n).map(|i| p[i * m + j]).sum::<f64>()))
            .collect();
        let (df, dg) = coupling_solve(&p, n, m, &row_gap, &col_gap)?;
        let mut step = 1.0;
        for _ in 0..12 {
            let fa: Vec<f64> = f.iter().zip(&df).map(|(x, d)| x + step * d).collect();
            let ga: Vec<f64> = g.iter().zip(&dg).map(|(x, d)| x + step * d).collect();
            let pa = self.plan(&fa, &ga);
            if self.marginal_error(&pa) < err0 {
                f.copy_from_slice(&fa);
                g.copy_from_slice(&ga);
                return Ok(());
            }
            step *= 0.5;
        }
        Ok(())
    }
}

/// Solve `[[diag(π1), π], [πᵀ, diag(πᵀ1)]] (u, v) = (p, q)` for a
/// compatible right-hand side (`Σp = Σq`), picking the solution with
/// `Σv = 0`.
///
/// Eliminating `u` leaves a graph Laplacian in `v` with edge weights
/// `W_jk = Σ_i π_ij π_ik / (π1)_i`; its diagonal is formed from the edge
/// weights, which avoids cancellation when `π` is close to a permutation.
fn coupling_solve(pi: &[f64], n: usize, m: usize, p: &[f64], q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let a: Vec<f64> = (0..n).map(|i| pi[i * m..(i + 1) * m].iter().sum()).collect();
    let pm = DMatrix::from_row_slice(n, m, pi);
    let scaled = DMatrix::from_fn(n, m, |i, j| pm[(i, j)] / a[i]);
    let mut lap = -(pm.transpose() * &scaled);
    for j in 0..m {
        lap[(j, j)] = 0.0;
        let off: f64 = lap.column(j).iter().sum();
        lap[(j, j)] = -off;
    }
    let shift = (0..m).map(|j| lap[(j, j)]).sum::<f64>() / m as f64;
    lap.add_scalar_mut(if shift > 0.0 { shift } else { 1.0 });
    let p_over = DVector::from_iterator(n, p.iter().zip(&a).map(|(pi, ai)| pi / ai));
    let rhs = DVector::from_column_slice(q) - pm.transpose() * &p_over;
    let v = solve_spd(lap, rhs)?;
    let pv = &pm * &v;
    let u = (0..n).map(|i| (p[i] - pv[i]) / a[i]).collect();
    Ok((u, v.iter().copied().collect()))
}

/// Solve the entropic problem for an explicit `n × m` cost matrix.
///
/// Log-domain Sinkhorn sweeps run until the largest potential update falls
/// below `tol`. When the sweeps stall, each sweep is preceded by a damped
/// Newton step on the dual.
pub fn sinkhorn_plan(cost: &Tensor, epsilon: f64, opts: SinkhornOptions) -> Result<SinkhornSolution> {
    let (n, m) = cost.dims2()?;
    if n == 0 || m == 0 {
        return Err(Error::Empty { op: "sinkhorn" });
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain("sinkhorn", format!("epsilon must be positive, got {epsilon}")));
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite { op: "sinkhorn" });
    }
    let prob = Problem {
        c: cost.data(),
        n,
        m,
        epsilon,
        log_a: -(n as f64).ln(),
        log_b: -(m as f64).ln(),
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if iterations >= NEWTON_AFTER {
            prob.newton(&mut f, &mut g)?;
        }
        iterations += 1;
        residual = prob.sweep(&mut f, &mut g);
        if !residual.is_finite() {
            return Err(Error::NonFinite { op: "sinkhorn" });
        }
        if residual < opts.tol {
            break;
        }
    }
    if residual >= opts.tol {
        return Err(Error::NonConvergence {
            what: "sinkhorn",
            iterations,
            residual,
        });
    }
    let plan = prob.plan(&f, &g);
    let total = plan.iter().zip(prob.c).map(|(p, c)| p * c).sum();
    Ok(SinkhornSolution {
        plan: Tensor::new([n, m], plan)?,
        f,
        g,
        cost: total,
        iterations,
    })
}

/// `∂⟨π*, C⟩ / ∂C`.
///
/// Perturbing `C` moves the potentials along the solution of
/// `[[diag(a), π], [πᵀ, diag(b)]] (df, dg) = ((π∘dC)1, (π∘dC)ᵀ1)`. Pairing that
/// with the adjoint `(u, v)` for the right-hand side `(r, c)/ε`, where
/// `r = (π∘C)1` and `c = (π∘C)ᵀ1`, gives `π_ij (1 − C_ij/ε + u_i + v_j)`.
fn cost_gradient(sol: &SinkhornSolution, cost: &Tensor, epsilon: f64) -> Result<Tensor> {
    let (n, m) = cost.dims2()?;
    let p = sol.plan.data();
    let c = cost.data();
    let mut r = vec![0.0; n];
    let mut cc = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let w = p[i * m + j] * c[i * m + j] / epsilon;
            r[i] += w;
            cc[j] += w;
        }
    }
    let (u, v) = coupling_solve(p, n, m, &r, &cc)?;
    let mut grad = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let cij = c[i * m + j];
            grad.push(p[i * m + j] * (1.0 - cij / epsilon + u[i] + v[j]));
        }
    }
    Tensor::new([n, m], grad)
}

/// Cholesky with growing diagonal jitter for nearly singular systems.
fn solve_spd(s: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let scale = s.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut t = s.clone();
        for k in 0..t.nrows() {
            t[(k, k)] += jitter;
        }
        if let Some(ch) = t.cholesky() {
            return Ok(ch.solve(&rhs));
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    Err(Error::NonFinite {
        op: "sinkhorn adjoint",
    })
}

fn cmp_clouds(x: &Tensor, y: &Tensor) -> Ordering {
    x.shape().cmp(y.shape()).then_with(|| {
        x.data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// `⟨π*, C⟩` for `C_ij = ‖x_i − y_j‖²` and uniform weights.
///
/// The pair is always solved in one canonical orientation, so swapping the
/// arguments gives the identical number.
pub fn sinkhorn_cost<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    y: Var<'t>,
    epsilon: f64,
    opts: SinkhornOptions,
) -> Result<Var<'t>> {
    if cmp_clouds(&x.value(), &y.value()) == Ordering::Greater {
        return sinkhorn_cost(tape, y, x, epsilon, opts);
    }
    let c = x.pairwise_sq_dist(y)?;
    let cost = c.value();
    let sol = sinkhorn_plan(&cost, epsilon, opts)?;
    let total = sol.cost;
    if !c.is_tracked() {
        return Ok(tape.constant(Tensor::scalar(total)));
    }
    let grad = cost_gradient(&sol, &cost, epsilon)?;
    tape.custom("sinkhorn_cost", &[c], Tensor::scalar(total), move |up| {
        Ok(vec![grad.map(|v| v * up.item())])
    })
}

/// Debiased divergence `S(X,Y) − ½S(X,X) − ½S(Y,Y)`.
pub fn sinkhorn_divergence<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    y: Var<'t>,
    epsilon: f64,
    opts: SinkhornOptions,
) -> Result<Var<'t>> {
    let xy = sinkhorn_cost(tape, x, y, epsilon, opts)?;
    let xx = sinkhorn_cost(tape, x, x, epsilon, opts)?;
    let yy = sinkhorn_cost(tape, y, y, epsilon, opts)?;
    xy.sub(xx.add(yy)?.scale(0.5)?)
}

/// Untracked convenience wrapper.
pub fn sinkhorn_cost_values(x: &Tensor, y: &Tensor, epsilon: f64, opts: SinkhornOptions) -> Result<f64> {
    let tape = Tape::no_grad();
    Ok(sinkhorn_cost(&tape, tape.constant(x.clone()), tape.constant(y.clone()), epsilon, opts)?.item())
}

pub fn sinkhorn_divergence_values(x: &Tensor, y: &Tensor, epsilon: f64, opts: SinkhornOptions) -> Result<f64> {
    let tape = Tape::no_grad();
    Ok(sinkhorn_divergence(&tape, tape.constant(x.clone()), tape.constant(y.clone()), epsilon, opts)?.item())
}
