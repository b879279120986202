//! Evaluation oracles that do not depend on any trained model.

mod assignment;

pub use assignment::hungarian;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Largest cloud accepted by [`w1_exact_small`].
pub const MAX_EXACT_W1: usize = 64;
/// Mass resolution used to split discrete atoms into equal units.
pub const SPLIT_RESOLUTION: usize = 120;

/// Exact W1 between the empirical measures of two 1-D samples, as the
/// integral of the absolute difference of their quantile functions. For
/// equal sizes this is the mean absolute difference of sorted samples.
pub fn w1_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty { op: "w1_1d" });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "w1_1d" });
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    if xs.len() == ys.len() {
        let s: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum();
        return Ok(s / xs.len() as f64);
    }
    // Merge the two quantile step functions on the common grid of breakpoints.
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut t = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_x = (i + 1) as f64 / n as f64;
        let next_y = (j + 1) as f64 / m as f64;
        let next = next_x.min(next_y);
        total += (next - t) * (xs[i] - ys[j]).abs();
        t = next;
        if next_x <= next {
            i += 1;
        }
        if next_y <= next {
            j += 1;
        }
    }
    Ok(total)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Exact W1 between two equal-size point clouds with Euclidean ground
/// metric, via optimal assignment. At most [`MAX_EXACT_W1`] points.
pub fn w1_exact_small(x: &Tensor, y: &Tensor) -> Result<f64> {
    let (n, d) = x.dims2()?;
    let (m, d2) = y.dims2()?;
    if n != m || d != d2 {
        return Err(Error::shape("w1_exact_small", x.shape(), y.shape()));
    }
    if n == 0 {
        return Err(Error::Empty { op: "w1_exact_small" });
    }
    if n > MAX_EXACT_W1 {
        return Err(Error::TooLarge {
            what: "w1_exact_small",
            dim: n,
            cap: MAX_EXACT_W1,
        });
    }
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cost.push(euclid(x.row(i), y.row(j)));
        }
    }
    let (_, total) = hungarian(&cost, n)?;
    Ok(total / n as f64)
}

/// `KL(N(μ₁, s₁²) ‖ N(μ₂, s₂²))`.
pub fn kl_gaussian(mu1: f64, s1: f64, mu2: f64, s2: f64) -> Result<f64> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::domain("kl_gaussian", format!("standard deviations must be positive, got {s1}, {s2}")));
    }
    Ok((s2 / s1).ln() + (s1 * s1 + (mu1 - mu2).powi(2)) / (2.0 * s2 * s2) - 0.5)
}

/// Finitely supported probability measure on `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(atoms: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Empty { op: "DiscreteDist" });
        }
        if atoms.len() != probs.len() {
            return Err(Error::shape("DiscreteDist", &[atoms.len()], &[probs.len()]));
        }
        let d = atoms[0].len();
        if atoms.iter().any(|a| a.len() != d) {
            return Err(Error::domain("DiscreteDist", "atoms must share one dimension"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::domain("DiscreteDist", "probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain("DiscreteDist", format!("probabilities sum to {total}")));
        }
        Ok(DiscreteDist { atoms, probs })
    }

    /// Probabilities on the points `0, 1, …, k−1` of the real line.
    pub fn on_line(probs: Vec<f64>) -> Result<Self> {
        let atoms = (0..probs.len()).map(|i| vec![i as f64]).collect();
        Self::new(atoms, probs)
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    /// `E‖U‖^p`.
    pub fn abs_moment(&self, p: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.probs)
            .map(|(a, w)| w * a.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
            .sum()
    }
}

/// Total variation `½ Σ |μ(x) − ν(x)|` over the union of both supports.
pub fn total_variation(mu: &DiscreteDist, nu: &DiscreteDist) -> f64 {
    let mut diffs: Vec<(&[f64], f64)> = mu.atoms.iter().map(|a| a.as_slice()).zip(mu.probs.iter().copied()).collect();
    for (a, &w) in nu.atoms.iter().zip(&nu.probs) {
        match diffs.iter_mut().find(|(b, _)| *b == a.as_slice()) {
            Some(entry) => entry.1 -= w,
            None => diffs.push((a, -w)),
        }
    }
    0.5 * diffs.iter().map(|(_, w)| w.abs()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteDivergences {
    pub kl: f64,
    pub js: f64,
    pub tv: f64,
}

/// KL, JS (natural log) and TV between two distributions on the same atoms.
pub fn discrete_divergences(p: &DiscreteDist, q: &DiscreteDist) -> Result<DiscreteDivergences> {
    if p.atoms != q.atoms {
        return Err(Error::domain("discrete_divergences", "distributions must share their atom list"));
    }
    let mut kl = 0.0;
    let mut js = 0.0;
    let mut tv = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        tv += 0.5 * (pi - qi).abs();
        if pi > 0.0 {
            if qi == 0.0 {
                return Err(Error::domain("discrete_divergences", "p is not absolutely continuous with respect to q"));
            }
            kl += pi * (pi / qi).ln();
        }
        let mid = 0.5 * (pi + qi);
        if pi > 0.0 {
            js += 0.5 * pi * (pi / mid).ln();
        }
        if qi > 0.0 {
            js += 0.5 * qi * (qi / mid).ln();
        }
    }
    Ok(DiscreteDivergences { kl, js, tv })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `TV ≤ √(KL/2)`.
pub fn check_pinsker(p: &DiscreteDist, q: &DiscreteDist) -> Result<InequalityCheck> {
    let div = discrete_divergences(p, q)?;
    let rhs = (div.kl / 2.0).sqrt();
    Ok(InequalityCheck {
        lhs: div.tv,
        rhs,
        holds: div.tv <= rhs + 1e-12,
    })
}

fn split_units(dist: &DiscreteDist) -> Result<Vec<usize>> {
    let mut units = Vec::with_capacity(SPLIT_RESOLUTION);
    for (k, &p) in dist.probs.iter().enumerate() {
        let scaled = p * SPLIT_RESOLUTION as f64;
        let count = scaled.round();
        if (scaled - count).abs() > 1e-9 {
            return Err(Error::domain(
                "discrete_w1",
                format!("weight {p} is not a multiple of 1/{SPLIT_RESOLUTION}"),
            ));
        }
        units.extend(std::iter::repeat_n(k, count as usize));
    }
    if units.len() != SPLIT_RESOLUTION {
        return Err(Error::domain("discrete_w1", "weights do not split into whole units"));
    }
    Ok(units)
}

/// Exact W1 between discrete measures whose weights are multiples of
/// `1/SPLIT_RESOLUTION`: every atom is split into equal-mass units and the
/// units are matched optimally.
pub fn discrete_w1(mu: &DiscreteDist, nu: &DiscreteDist) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::shape("discrete_w1", &[mu.dim()], &[nu.dim()]));
    }
    let (us, vs) = (split_units(mu)?, split_units(nu)?);
    let n = SPLIT_RESOLUTION;
    let mut cost = Vec::with_capacity(n * n);
    for &i in &us {
        for &j in &vs {
            cost.push(euclid(&mu.atoms[i], &nu.atoms[j]));
        }
    }
    let (_, total) = hungarian(&cost, n)?;
    Ok(total / n as f64)
}

/// `C_a = 2(a^{1/(1+a)} + a^{−a/(1+a)})`.
pub fn truncation_constant(a: f64) -> f64 {
    2.0 * (a.powf(1.0 / (1.0 + a)) + a.powf(-a / (1.0 + a)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationCheck {
    pub w1: f64,
    pub tv: f64,
    /// Larger of the two `(1+a)`-th absolute moments.
    pub moment: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `W1(μ, ν) ≤ C_a · R^{1/(1+a)} · Δ^{a/(1+a)}` with `Δ = TV(μ, ν)` and
/// `R = max(E‖U‖^{1+a}, E‖V‖^{1+a})`.
pub fn check_truncation_lemma(mu: &DiscreteDist, nu: &DiscreteDist, a: f64) -> Result<TruncationCheck> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain("check_truncation_lemma", format!("moment exponent must be positive, got {a}")));
    }
    let w1 = discrete_w1(mu, nu)?;
    let tv = total_variation(mu, nu);
    let moment = mu.abs_moment(1.0 + a).max(nu.abs_moment(1.0 + a));
    let bound = truncation_constant(a) * moment.powf(1.0 / (1.0 + a)) * tv.powf(a / (1.0 + a));
    Ok(TruncationCheck {
        w1,
        tv,
        moment,
        bound,
        holds: w1 <= bound + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn w1_1d_examples() {
        assert_eq!(w1_1d(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(w1_1d(&[0.0], &[5.0]).unwrap(), 5.0);
        assert_eq!(w1_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert!(w1_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_1d_unequal_sizes() {
        // {0, 1} vs {0, 0.5, 1}: quantiles differ by 0.5 on [1/3, 1/2) and [1/2, 2/3).
        let w = w1_1d(&[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert!((w - 0.5 / 3.0).abs() < 1e-15);
        // Duplicating every sample leaves the measure unchanged.
        let x = [0.3, -1.0, 2.0];
        let y = [1.0, 0.0, 0.5, 4.0];
        let x2 = [0.3, -1.0, 2.0, 0.3, -1.0, 2.0];
        assert!((w1_1d(&x, &y).unwrap() - w1_1d(&x2, &y).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn exact_w1_examples() {
        let a = Tensor::from_rows(&[[0.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(w1_exact_small(&a, &b).unwrap(), 5.0);
        assert_eq!(w1_exact_small(&a, &a).unwrap(), 0.0);
        let big = Tensor::zeros([65, 1]);
        assert!(matches!(w1_exact_small(&big, &big), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn gaussian_kl_examples() {
        assert_eq!(kl_gaussian(0.3, 1.2, 0.3, 1.2).unwrap(), 0.0);
        assert!((kl_gaussian(0.0, 1.0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((kl_gaussian(0.0, 2.0, 0.0, 1.0).unwrap() - 0.806853).abs() < 1e-6);
        assert!(kl_gaussian(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn discrete_examples() {
        let p = DiscreteDist::on_line(vec![0.5, 0.5]).unwrap();
        let q = DiscreteDist::on_line(vec![0.25, 0.75]).unwrap();
        let d = discrete_divergences(&p, &q).unwrap();
        assert!((d.kl - 0.143841).abs() < 1e-6);
        assert!((d.tv - 0.25).abs() < 1e-15);
        let same = discrete_divergences(&p, &p).unwrap();
        assert_eq!((same.kl, same.js, same.tv), (0.0, 0.0, 0.0));

        let a = DiscreteDist::on_line(vec![1.0, 0.0]).unwrap();
        let b = DiscreteDist::on_line(vec![0.0, 1.0]).unwrap();
        assert!(discrete_divergences(&a, &b).is_err());
        assert_eq!(total_variation(&a, &b), 1.0);

        let pin = check_pinsker(&p, &q).unwrap();
        assert!(pin.holds && (pin.rhs - 0.268).abs() < 1e-3);
        assert!(DiscreteDist::on_line(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn pinsker_on_random_simplex_pairs() {
        let mut rng = crate::rng::Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = rng.random_range(2..=6);
            let mut draw = || {
                let w: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
                let s: f64 = w.iter().sum();
                let mut p: Vec<f64> = w.iter().map(|v| v / s).collect();
                let last: f64 = p[..k - 1].iter().sum();
                p[k - 1] = 1.0 - last;
                p
            };
            let p = DiscreteDist::on_line(draw()).unwrap();
            let q = DiscreteDist::on_line(draw()).unwrap();
            assert!(check_pinsker(&p, &q).unwrap().holds);
        }
    }

    #[test]
    fn truncation_hand_case() {
        let mu = DiscreteDist::new(vec![vec![0.0]], vec![1.0]).unwrap();
        let nu = DiscreteDist::new(vec![vec![1.0]], vec![1.0]).unwrap();
        let c = check_truncation_lemma(&mu, &nu, 1.0).unwrap();
        assert_eq!((c.w1, c.tv, c.moment), (1.0, 1.0, 1.0));
        assert!((c.bound - 4.0).abs() < 1e-12);
        assert!(c.holds);
        let same = check_truncation_lemma(&mu, &mu, 1.0).unwrap();
        assert_eq!((same.w1, same.bound), (0.0, 0.0));
        assert!(check_truncation_lemma(&mu, &nu, 0.0).is_err());
        let off_grid = DiscreteDist::on_line(vec![0.3333, 0.6667]).unwrap();
        assert!(discrete_w1(&off_grid, &off_grid).is_err());
    }
}
