//! Critics from a Gaussian-kernel RKHS ball, truncated to a cube, and a
//! Donsker-Varadhan-type KL estimator built on them.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `G_ij = exp(−γ‖c_i − c_j‖²)`.
pub fn gram(centers: &Tensor, gamma: f64) -> Result<Tensor> {
    kernel_matrix(centers, centers, gamma)
}

fn kernel_matrix(a: &Tensor, b: &Tensor, gamma: f64) -> Result<Tensor> {
    if !(gamma > 0.0) {
        return Err(Error::domain("gram", format!("kernel scale must be positive, got {gamma}")));
    }
    let (n, d) = a.dims2()?;
    let (m, d2) = b.dims2()?;
    if d != d2 {
        return Err(Error::shape("gram", a.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let x = a.row(i);
        for j in 0..m {
            let s: f64 = x.iter().zip(b.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
            out.push((-gamma * s).exp());
        }
    }
    Tensor::new([n, m], out)
}

fn matvec(g: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..g.rows()).map(|i| g.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// `sqrt(αᵀGα)`, with negative rounding clipped to zero.
pub fn rkhs_norm(alpha: &[f64], gram: &Tensor) -> f64 {
    let ga = matvec(gram, alpha);
    alpha.iter().zip(&ga).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
}

/// Shape parameters of the critic ball: kernel scale `γ`, norm bound `b`,
/// cube half-width `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticBall {
    pub gamma: f64,
    pub b: f64,
    pub k_half: f64,
}

impl CriticBall {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.b > 0.0 && self.k_half > 0.0) {
            return Err(Error::domain("CriticBall", format!("{self:?} must be positive")));
        }
        Ok(())
    }
}

/// `h = Σ α_i k(c_i, ·)`, evaluated as zero outside `[−K, K]^d`.
#[derive(Clone, Debug)]
pub struct RkhsCritic {
    pub centers: Tensor,
    pub alpha: Vec<f64>,
    pub ball: CriticBall,
    gram: Tensor,
}

fn in_cube(x: &[f64], k: f64) -> bool {
    x.iter().all(|v| v.abs() <= k)
}

impl RkhsCritic {
    /// Critic with all coefficients zero.
    pub fn new(centers: Tensor, ball: CriticBall) -> Result<Self> {
        ball.validate()?;
        let gram = gram(&centers, ball.gamma)?;
        let alpha = vec![0.0; centers.rows()];
        Ok(RkhsCritic {
            centers,
            alpha,
            ball,
            gram,
        })
    }

    pub fn with_alpha(centers: Tensor, alpha: Vec<f64>, ball: CriticBall) -> Result<Self> {
        let mut c = Self::new(centers, ball)?;
        if alpha.len() != c.alpha.len() {
            return Err(Error::shape("RkhsCritic", &[alpha.len()], &[c.alpha.len()]));
        }
        c.alpha = alpha;
        Ok(c)
    }

    pub fn gram(&self) -> &Tensor {
        &self.gram
    }

    pub fn norm(&self) -> f64 {
        rkhs_norm(&self.alpha, &self.gram)
    }

    pub fn eval(&self, x: &Tensor) -> Result<Vec<f64>> {
        let k = kernel_matrix(x, &self.centers, self.ball.gamma)?;
        Ok((0..x.rows())
            .map(|i| {
                if in_cube(x.row(i), self.ball.k_half) {
                    k.row(i).iter().zip(&self.alpha).map(|(a, b)| a * b).sum()
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Radial projection onto `‖h‖ ≤ b`.
    pub fn project_ball(&mut self) {
        let norm = self.norm();
        if norm > self.ball.b {
            let s = self.ball.b / norm;
            self.alpha.iter_mut().for_each(|a| *a *= s);
        }
    }
}

/// Critic-ball parameters as a function of the sample size `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallSchedule {
    /// Bound on the network weights.
    pub m: f64,
    /// Spectral bound of each residual block.
    pub s: f64,
    /// Number of residual blocks.
    pub h: f64,
    /// Bias bound.
    pub b: f64,
    pub d: usize,
    pub epsilon: f64,
    pub c_b: f64,
}

impl BallSchedule {
    pub fn at(&self, n: f64) -> Result<CriticBall> {
        let (k_half, gamma, b) = schedule_params(n, self.m, self.s, self.h, self.b, self.d, self.epsilon, self.c_b)?;
        Ok(CriticBall { gamma, b, k_half })
    }
}

/// `K = M(s√H + B) + √d + √(2 log n)`, `γ = K^{2+ε}`,
/// `b = C_b γ^{d/4} K^{2+d/2}`.
#[allow(clippy::too_many_arguments)]
pub fn schedule_params(n: f64, m: f64, s: f64, h: f64, b: f64, d: usize, epsilon: f64, c_b: f64) -> Result<(f64, f64, f64)> {
    if !(n >= 2.0) {
        return Err(Error::domain("schedule_params", format!("need n ≥ 2, got {n}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::domain("schedule_params", format!("need s in (0, 1), got {s}")));
    }
    if !(epsilon > 0.0) || !(m >= 0.0) || !(h >= 0.0) || !(b >= 0.0) || !(c_b > 0.0) || d == 0 {
        return Err(Error::domain("schedule_params", "constants out of range"));
    }
    let d = d as f64;
    let k = m * (s * h.sqrt() + b) + d.sqrt() + (2.0 * n.ln()).sqrt();
    let gamma = k.powf(2.0 + epsilon);
    let bound = c_b * gamma.powf(d / 4.0) * k.powf(2.0 + d / 2.0);
    Ok((k, gamma, bound))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DvOptions {
    pub steps: usize,
    pub lr: f64,
    /// `h` is clipped to `[−clip, clip]` before exponentiation.
    pub clip: f64,
}

impl Default for DvOptions {
    fn default() -> Self {
        DvOptions {
            steps: 300,
            lr: 0.05,
            clip: 30.0,
        }
    }
}

fn weights(w: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match w {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n {
                return Err(Error::shape("dv_kl_estimate", &[w.len()], &[n]));
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|&v| !(v >= 0.0)) || !(total > 0.0) {
                return Err(Error::domain("dv_kl_estimate", "sample weights must be nonnegative with positive sum"));
            }
            Ok(w.iter().map(|v| v / total).collect())
        }
    }
}

/// Maximise `Σ w_i h(p_i) − Σ v_j e^{h(q_j)} + 1` over the critic ball by
/// projected functional-gradient ascent, with centres at the pooled samples.
/// Returns the final objective and the fitted critic.
pub fn dv_kl_estimate(
    p: &Tensor,
    p_weights: Option<&[f64]>,
    q: &Tensor,
    q_weights: Option<&[f64]>,
    ball: CriticBall,
    opts: DvOptions,
) -> Result<(f64, RkhsCritic)> {
    dv_kl_estimate_with_centers(p, p_weights, q, q_weights, None, ball, opts)
}

/// [`dv_kl_estimate`] with additional kernel centres appended after the
/// pooled samples.
pub fn dv_kl_estimate_with_centers(
    p: &Tensor,
    p_weights: Option<&[f64]>,
    q: &Tensor,
    q_weights: Option<&[f64]>,
    extra_centers: Option<&Tensor>,
    ball: CriticBall,
    opts: DvOptions,
) -> Result<(f64, RkhsCritic)> {
    let (n, d) = p.dims2()?;
    let (m, d2) = q.dims2()?;
    if d != d2 {
        return Err(Error::shape("dv_kl_estimate", p.shape(), q.shape()));
    }
    if n == 0 || m == 0 {
        return Err(Error::Empty { op: "dv_kl_estimate" });
    }
    let wp = weights(p_weights, n)?;
    let wq = weights(q_weights, m)?;
    let mut columns = vec![p.transpose()?, q.transpose()?];
    if let Some(extra) = extra_centers {
        columns.push(extra.transpose()?);
    }
    let refs: Vec<&Tensor> = columns.iter().collect();
    let centers = Tensor::concat_cols(&refs)?.transpose()?;
    let mut critic = RkhsCritic::new(centers, ball)?;
    let g = critic.gram.clone();
    let total = critic.centers.rows();
    let mask: Vec<bool> = (0..total).map(|i| in_cube(critic.centers.row(i), ball.k_half)).collect();
    let mut raw = vec![0.0; total];
    let h_of = |raw: &[f64], i: usize| {
        if mask[i] {
            raw[i].clamp(-opts.clip, opts.clip)
        } else {
            0.0
        }
    };
    let objective = |raw: &[f64]| -> f64 {
        let on_p: f64 = (0..n).map(|i| wp[i] * h_of(raw, i)).sum();
        let on_q: f64 = (0..m).map(|j| wq[j] * h_of(raw, n + j).exp()).sum();
        on_p - on_q + 1.0
    };
    let mut coef = vec![0.0; total];
    for step in 0..opts.steps {
        for i in 0..n {
            coef[i] = if mask[i] { wp[i] } else { 0.0 };
        }
        for j in 0..m {
            coef[n + j] = if mask[n + j] { -wq[j] * h_of(&raw, n + j).exp() } else { 0.0 };
        }
        for (a, c) in critic.alpha.iter_mut().zip(&coef) {
            *a += opts.lr * c;
        }
        if step % 50 == 49 {
            raw = matvec(&g, &critic.alpha);
        } else {
            let delta = matvec(&g, &coef);
            raw.iter_mut().zip(&delta).for_each(|(r, d)| *r += opts.lr * d);
        }
        let norm = critic.alpha.iter().zip(&raw).map(|(a, r)| a * r).sum::<f64>().max(0.0).sqrt();
        if norm > ball.b {
            let s = ball.b / norm;
            critic.alpha.iter_mut().for_each(|a| *a *= s);
            raw.iter_mut().for_each(|r| *r *= s);
        }
        if !objective(&raw).is_finite() {
            return Err(Error::NonFinite { op: "dv_kl_estimate" });
        }
    }
    Ok((objective(&raw), critic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn ball(gamma: f64, b: f64, k: f64) -> CriticBall {
        CriticBall { gamma, b, k_half: k }
    }

    #[test]
    fn norm_examples() {
        let one = Tensor::from_rows(&[[0.3, 0.1]]).unwrap();
        assert_eq!(rkhs_norm(&[2.0], &gram(&one, 1.0).unwrap()), 2.0);
        let same = Tensor::from_rows(&[[0.3], [0.3]]).unwrap();
        assert!((rkhs_norm(&[1.0, 1.0], &gram(&same, 1.0).unwrap()) - 2.0).abs() < 1e-15);
        let far = Tensor::from_rows(&[[0.0], [100.0]]).unwrap();
        assert!((rkhs_norm(&[1.0, 1.0], &gram(&far, 1.0).unwrap()) - 2f64.sqrt()).abs() < 1e-15);
        assert!(gram(&far, 0.0).is_err());
    }

    #[test]
    fn eval_examples() {
        let c = Tensor::from_rows(&[[0.5, -0.5]]).unwrap();
        let critic = RkhsCritic::with_alpha(c.clone(), vec![1.0], ball(2.0, 5.0, 1.0)).unwrap();
        assert_eq!(critic.eval(&c).unwrap(), vec![1.0]);
        let outside = Tensor::from_rows(&[[1.5, 0.0]]).unwrap();
        assert_eq!(critic.eval(&outside).unwrap(), vec![0.0]);
    }

    #[test]
    fn eval_bounded_by_norm() {
        let mut rng = crate::rng::Rng::seed_from_u64(3);
        let centers = Tensor::randn([12, 2], 1.0, &mut rng);
        let alpha: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let critic = RkhsCritic::with_alpha(centers, alpha, ball(0.7, 100.0, 3.0)).unwrap();
        let norm = critic.norm();
        let x = Tensor::randn([1000, 2], 2.0, &mut rng);
        assert!(critic.eval(&x).unwrap().iter().all(|v| v.abs() <= norm + 1e-12));
    }

    #[test]
    fn projection() {
        let c = Tensor::from_rows(&[[0.0]]).unwrap();
        let mut critic = RkhsCritic::with_alpha(c.clone(), vec![2.0], ball(1.0, 1.0, 1.0)).unwrap();
        critic.project_ball();
        assert_eq!(critic.alpha, vec![1.0]);
        let mut small = RkhsCritic::with_alpha(c, vec![0.5], ball(1.0, 1.0, 1.0)).unwrap();
        small.project_ball();
        assert_eq!(small.alpha, vec![0.5]);

        let mut rng = crate::rng::Rng::seed_from_u64(5);
        let centers = Tensor::randn([8, 3], 1.0, &mut rng);
        let alpha: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut critic = RkhsCritic::with_alpha(centers, alpha, ball(0.5, 0.8, 2.0)).unwrap();
        let before = critic.norm();
        critic.project_ball();
        assert!((critic.norm() - before.min(0.8)).abs() < 1e-10);
    }

    #[test]
    fn schedule_examples() {
        let (k, gamma, b) = schedule_params(2f64.exp(), 1.0, 0.5, 4.0, 1.0, 2, 1.0, 1.0).unwrap();
        assert!((k - (4.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!((k - 5.414214).abs() < 1e-6);
        assert!((gamma - k.powi(3)).abs() < 1e-9 * gamma);
        assert!((b - k.powf(4.5)).abs() < 1e-9 * b);
        let ks: Vec<f64> = [10.0, 100.0, 1e3, 1e4]
            .iter()
            .map(|&n| schedule_params(n, 1.0, 0.5, 4.0, 1.0, 2, 1.0, 1.0).unwrap().0)
            .collect();
        assert!(ks.windows(2).all(|w| w[1] > w[0]));
        assert!(schedule_params(1.0, 1.0, 0.5, 4.0, 1.0, 2, 1.0, 1.0).is_err());
        assert!(schedule_params(10.0, 1.0, 1.0, 4.0, 1.0, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn identical_samples_estimate_zero() {
        let mut rng = crate::rng::Rng::seed_from_u64(6);
        let x = Tensor::randn([200, 1], 1.0, &mut rng);
        let (est, _) = dv_kl_estimate(&x, None, &x, None, ball(0.5, 8.0, 5.0), DvOptions::default()).unwrap();
        assert!(est.abs() < 0.05, "{est}");
    }

    #[test]
    fn two_atom_discrete_case() {
        let p = Tensor::from_rows(&[[0.0], [1.0]]).unwrap();
        let exact = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let (est, critic) = dv_kl_estimate(
            &p,
            Some(&[0.5, 0.5]),
            &p,
            Some(&[0.25, 0.75]),
            ball(2.0, 10.0, 2.0),
            DvOptions::default(),
        )
        .unwrap();
        assert!((est - exact).abs() < 0.03, "{est} vs {exact}");
        assert!(critic.norm() <= 10.0 + 1e-9);
    }

    #[test]
    fn out_of_cube_centers_leave_the_estimate_unchanged() {
        let mut rng = crate::rng::Rng::seed_from_u64(8);
        let p = Tensor::randn([100, 1], 1.0, &mut rng);
        let q = Tensor::randn([100, 1], 1.0, &mut rng).map(|v| v + 1.0);
        let b = ball(0.5, 4.0, 2.5);
        let extra = Tensor::from_rows(&[[3.0], [-4.0], [7.5]]).unwrap();
        let (plain, _) = dv_kl_estimate(&p, None, &q, None, b, DvOptions::default()).unwrap();
        let (padded, critic) =
            dv_kl_estimate_with_centers(&p, None, &q, None, Some(&extra), b, DvOptions::default()).unwrap();
        assert_eq!(plain, padded);
        assert!(critic.alpha[200..].iter().all(|&a| a == 0.0));
    }
}
