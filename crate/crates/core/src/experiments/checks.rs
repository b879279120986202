//! Numerical invariant suite: invertibility, log-determinants, gradients,
//! optimal transport oracles and the discrete inequality witnesses.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

use crate::autodiff::{grad_check_module, Parameters, Tape, Tensor, Var};
use crate::divergences::{
    inn_backward_loss, inn_forward_loss, inn_unsup_loss_lz, mmd2, nll_loss, prior_loss, reconstruction_loss,
    sinkhorn_cost_values, sinkhorn_divergence, sinkhorn_divergence_values, supervised_mse, CriticNet, FDivergence,
    FDivergenceSpec, MmdEstimator, Pairing, Prior, SinkhornOptions,
};
use crate::error::Result;
use crate::flows::{Activation, ArchKind, ArchSpec, Block, CouplingBlock, FlowModel, IResNetBlock, InitMode};
use crate::metrics::{check_pinsker, check_truncation_lemma, w1_1d, w1_exact_small, DiscreteDist};
use crate::rkhs::{dv_kl_estimate, CriticBall, DvOptions};
use crate::rng::Rng as ChaCha;

/// Outcome of one invariant: the worst statistic seen and the bound it
/// had to respect.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn below(name: &'static str, value: f64, threshold: f64, detail: String) -> Self {
        CheckOutcome {
            name,
            value,
            threshold,
            passed: value < threshold,
            detail,
        }
    }
}

fn rng(seed: u64) -> ChaCha {
    ChaCha::seed_from_u64(seed)
}

fn randomize<P: Parameters>(m: &mut P, std: f64, r: &mut ChaCha) {
    for p in m.params_mut() {
        p.value = Tensor::randn(p.value.shape(), std, r);
    }
}

fn random_coupling(d: usize, r: &mut ChaCha) -> Result<CouplingBlock> {
    let hidden = r.random_range(4..=16);
    let mut b = CouplingBlock::new(d, d / 2, hidden, Activation::Tanh, 2.0, InitMode::Random, r)?;
    randomize(&mut b, 0.5, r);
    Ok(b)
}

fn random_iresnet(d: usize, s: f64, r: &mut ChaCha) -> Result<IResNetBlock> {
    let hidden = r.random_range(4..=16);
    let mut b = IResNetBlock::new(d, hidden, s, r)?;
    randomize(&mut b, 1.0, r);
    b.project()?;
    Ok(b)
}

fn reconstruct<'t>(m: &FlowModel, t: &'t Tape, y: &Tensor, z: &Tensor) -> Result<Var<'t>> {
    m.inverse(t, t.constant(y.clone()), t.constant(z.clone()))
}

fn triple<'t>(t: &'t Tape, x: &Tensor, y: &Tensor, z: &Tensor) -> (Var<'t>, Var<'t>, Var<'t>) {
    (t.constant(x.clone()), t.constant(y.clone()), t.constant(z.clone()))
}

fn round_trip_error(model: &FlowModel, x: &Tensor) -> Result<f64> {
    let (y, z, _) = model.forward_values(x)?;
    Ok(model.inverse_values(&y, &z)?.max_abs_diff(x))
}

/// Random coupling flows (d ≤ 16, ≤ 6 blocks): worst `‖T⁻¹(T(x)) − x‖∞`.
pub fn coupling_invertibility(models: usize, seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..models {
        let d = r.random_range(2..=16);
        let count = r.random_range(1..=6);
        let mut blocks = Vec::new();
        for k in 0..count {
            if k > 0 {
                blocks.push(Block::Reverse { dim: d });
            }
            blocks.push(Block::Coupling(random_coupling(d, &mut r)?));
        }
        let model = FlowModel::from_blocks(d / 2, d - d / 2, blocks)?;
        let x = Tensor::randn([8, d], 1.5, &mut r);
        worst = worst.max(round_trip_error(&model, &x)?);
    }
    Ok(CheckOutcome::below("coupling_round_trip", worst, 1e-10, format!("{models} models")))
}

/// Random iResNet flows with spectral bound `s ≤ 0.7` and fixed-point
/// tolerance 1e-10: worst round-trip error.
pub fn iresnet_invertibility(models: usize, seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..models {
        let d = r.random_range(2..=16);
        let count = r.random_range(1..=6);
        let s = r.random_range(0.1..=0.7);
        let mut blocks = Vec::new();
        for _ in 0..count {
            let mut b = random_iresnet(d, s, &mut r)?;
            b.tol = 1e-10;
            blocks.push(Block::IResNet(b));
        }
        let model = FlowModel::from_blocks(d / 2, d - d / 2, blocks)?;
        let x = Tensor::randn([8, d], 1.5, &mut r);
        worst = worst.max(round_trip_error(&model, &x)?);
    }
    Ok(CheckOutcome::below("iresnet_round_trip", worst, 1e-7, format!("{models} models")))
}

/// `log|det J|` of the central-difference Jacobian of the full flow output.
fn fd_logdet(model: &FlowModel, x: &[f64]) -> Result<f64> {
    let d = x.len();
    let h = 1e-6;
    let out = |v: &[f64]| -> Result<Vec<f64>> {
        let (y, z, _) = model.forward_values(&Tensor::new([1, d], v.to_vec())?)?;
        Ok(y.data().iter().chain(z.data()).copied().collect())
    };
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + h;
        let fp = out(&xp)?;
        xp[j] = x[j] - h;
        let fm = out(&xp)?;
        xp[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac.determinant().abs().ln())
}

/// Random mixed coupling/iResNet flows at d ∈ {2, 4, 8}: worst
/// `|analytic − fd| / max(1, |fd|)` of the log-determinant.
pub fn logdet_oracle(models: usize, seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..models {
        let d = [2, 4, 8][k % 3];
        let count = r.random_range(2..=4);
        let mut blocks = Vec::new();
        for _ in 0..count {
            if r.random_bool(0.5) {
                blocks.push(Block::Coupling(random_coupling(d, &mut r)?));
            } else {
                blocks.push(Block::IResNet(random_iresnet(d, 0.6, &mut r)?));
            }
            blocks.push(Block::Reverse { dim: d });
        }
        let model = FlowModel::from_blocks(d / 2, d - d / 2, blocks)?;
        let x = Tensor::randn([1, d], 1.0, &mut r);
        let (_, _, ld) = model.forward_values(&x)?;
        let fd = fd_logdet(&model, x.data())?;
        worst = worst.max((ld.item() - fd).abs() / fd.abs().max(1.0));
    }
    Ok(CheckOutcome::below("logdet_vs_jacobian", worst, 1e-4, format!("{models} models")))
}

/// Every training loss against central differences on a random 2-block,
/// d = 4 flow, for both block families.
pub fn loss_gradients(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for kind in [ArchKind::Coupling, ArchKind::IResNet] {
        let mut r = rng(seed + kind as u64);
        let spec = ArchSpec {
            kind,
            blocks: 2,
            hidden: 6,
            ..ArchSpec::default()
        };
        let mut model = FlowModel::build(&spec, 2, 2, &mut r)?;
        randomize(&mut model, 0.3, &mut r);
        model.project()?;
        let critic = CriticNet::new(4, &mut r);
        let xt = Tensor::randn([5, 4], 1.0, &mut r);
        let yt = Tensor::randn([5, 2], 1.0, &mut r);
        let zt = Tensor::randn([5, 2], 1.0, &mut r);
        let tight = SinkhornOptions {
            max_iter: 5000,
            tol: 1e-13,
        };
        let h = 1e-5;
        let mut worst: Vec<(&'static str, f64)> = Vec::new();
        let mut record = |name: &'static str, e: f64| worst.push((name, e));
        record(
            "nll",
            grad_check_module(&mut model, |m, t| { let (x, y, _) = triple(t, &xt, &yt, &zt); nll_loss(t, m, x, Some(y), 0.7) }, h)?,
        );
        record(
            "mse",
            grad_check_module(&mut model, |m, t| { let (x, y, _) = triple(t, &xt, &yt, &zt); supervised_mse(t, m, x, y) }, h)?,
        );
        for f in FDivergence::ALL {
            let s = FDivergenceSpec::from(f);
            let e = grad_check_module(
                &mut model,
                |m, t| { let (x, y, z) = triple(t, &xt, &yt, &zt); inn_backward_loss(t, m, &critic, s, x, y, z) },
                h,
            )?;
            let e2 = grad_check_module(
                &mut model,
                |m, t| { let (x, y, z) = triple(t, &xt, &yt, &zt); inn_forward_loss(t, m, &critic, s, x, y, z) },
                h,
            )?;
            let e3 = grad_check_module(
                &mut model,
                |m, t| { let (x, y, z) = triple(t, &xt, &yt, &zt); inn_unsup_loss_lz(t, m, &critic, s, x, y, z, Pairing::Predicted) },
                h,
            )?;
            record("fdiv_backward", e);
            record("fdiv_forward", e2);
            record("fdiv_latent", e3);
        }
        record(
            "mmd",
            grad_check_module(
                &mut model,
                |m, t| mmd2(reconstruct(m, t, &yt, &zt)?, t.constant(xt.clone()), 0.4, MmdEstimator::Biased),
                h,
            )?,
        );
        record(
            "sinkhorn",
            grad_check_module(
                &mut model,
                |m, t| sinkhorn_divergence(t, reconstruct(m, t, &yt, &zt)?, t.constant(xt.clone()), 0.5, tight),
                h,
            )?,
        );
        record(
            "prior_gaussian",
            grad_check_module(&mut model, |m, t| prior_loss(Prior::Gaussian, reconstruct(m, t, &yt, &zt)?, Some(t.constant(xt.clone()))), h)?,
        );
        record(
            "prior_uniform",
            grad_check_module(&mut model, |m, t| prior_loss(Prior::Uniform { a: -0.5, b: 0.5 }, reconstruct(m, t, &yt, &zt)?, None), h)?,
        );
        record(
            "reconstruction",
            grad_check_module(&mut model, |m, t| reconstruction_loss(reconstruct(m, t, &yt, &zt)?.slice_cols(2, 4)?), h)?,
        );
        let (name, value) = worst.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
        out.push(CheckOutcome::below(
            match kind {
                ArchKind::Coupling => "loss_gradients_coupling",
                ArchKind::IResNet => "loss_gradients_iresnet",
            },
            value,
            1e-4,
            format!("{} losses, worst {name}", worst.len()),
        ));
    }
    Ok(out)
}

fn exact_w2_sq_1d(x: &[f64], y: &[f64]) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / xs.len() as f64
}

/// Fixed 1-D clouds of 64 points: the entropic cost approaches the exact
/// W2² as ε shrinks, and the debiased divergence of a cloud with itself
/// vanishes.
pub fn sinkhorn_consistency(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut r = rng(seed);
    let x = Tensor::randn([64, 1], 1.0, &mut r);
    let y = Tensor::randn([64, 1], 0.5, &mut r).map(|v| v + 1.0);
    let w2 = exact_w2_sq_1d(x.data(), y.data());
    let eps = [1.0, 0.1, 0.01];
    let mut gaps = Vec::new();
    let mut self_div = 0.0f64;
    for &e in &eps {
        gaps.push((sinkhorn_cost_values(&x, &y, e, SinkhornOptions::default())? - w2).abs());
        self_div = self_div.max(sinkhorn_divergence_values(&x, &x, e, SinkhornOptions::default())?.abs());
    }
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    Ok(vec![
        CheckOutcome {
            name: "sinkhorn_bias_shrinks",
            value: gaps[2],
            threshold: gaps[1],
            passed: decreasing,
            detail: format!("|cost − W2²| at ε = 1, 0.1, 0.01: {gaps:?}"),
        },
        CheckOutcome::below("sinkhorn_self_divergence", self_div, 1e-8, "max over ε".into()),
    ])
}

/// Assignment-based W1 against the sorted 1-D formula, and the metric
/// axioms of the assignment W1 on random 2-D triples.
pub fn w1_oracle(clouds: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..clouds {
        let n = r.random_range(1..=40);
        let x = Tensor::randn([n, 1], 2.0, &mut r);
        let y = Tensor::randn([n, 1], 1.0, &mut r).map(|v| v + 0.5);
        worst = worst.max((w1_exact_small(&x, &y)? - w1_1d(x.data(), y.data())?).abs());
    }
    let mut axioms = 0.0f64;
    for _ in 0..clouds {
        let n = r.random_range(2..=12);
        let [a, b, c] = [0.0, 1.0, -1.0].map(|shift| Tensor::randn([n, 2], 1.0, &mut r).map(|v| v + shift));
        let (ab, ba, bc, ac, aa) = (
            w1_exact_small(&a, &b)?,
            w1_exact_small(&b, &a)?,
            w1_exact_small(&b, &c)?,
            w1_exact_small(&a, &c)?,
            w1_exact_small(&a, &a)?,
        );
        axioms = axioms
            .max(aa.abs())
            .max((ab - ba).abs())
            .max(ac - (ab + bc))
            .max(-ab.min(bc).min(ac));
    }
    Ok(vec![
        CheckOutcome::below("w1_exact_vs_sorted", worst, 1e-12, format!("{clouds} clouds")),
        CheckOutcome::below("w1_metric_axioms", axioms, 1e-9, format!("{clouds} triples")),
    ])
}

fn random_simplex(k: usize, r: &mut ChaCha) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|v| v / s).collect();
    let head: f64 = p[..k - 1].iter().sum();
    p[k - 1] = 1.0 - head;
    p
}

/// Weights in whole units of 1/120 with every atom charged at least once.
fn random_units(k: usize, r: &mut ChaCha) -> Vec<f64> {
    let total = crate::metrics::SPLIT_RESOLUTION;
    let mut counts = vec![1usize; k];
    for _ in k..total {
        counts[r.random_range(0..k)] += 1;
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

fn random_atoms(k: usize, d: usize, r: &mut ChaCha) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..d).map(|_| 2.0 * r.random::<f64>() - 1.0).map(|v| 2.0 * v).collect()).collect()
}

/// Pinsker on random simplex pairs and the truncation lemma on random
/// discrete pairs for a ∈ {0.5, 1, 2}, plus the one-atom hand case.
pub fn inequality_witnesses(pinsker_pairs: usize, truncation_pairs: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut r = rng(seed);
    let mut pinsker_fail = 0usize;
    let mut pinsker_slack = f64::INFINITY;
    for _ in 0..pinsker_pairs {
        let k = r.random_range(2..=6);
        let p = DiscreteDist::on_line(random_simplex(k, &mut r))?;
        let q = DiscreteDist::on_line(random_simplex(k, &mut r))?;
        let c = check_pinsker(&p, &q)?;
        pinsker_fail += usize::from(!c.holds);
        pinsker_slack = pinsker_slack.min(c.rhs - c.lhs);
    }
    let mut trunc_fail = 0usize;
    let mut trunc_ratio = 0.0f64;
    for _ in 0..truncation_pairs {
        let d = r.random_range(1..=3);
        let (k1, k2) = (r.random_range(1..=5), r.random_range(1..=5));
        let mu = DiscreteDist::new(random_atoms(k1, d, &mut r), random_units(k1, &mut r))?;
        let nu = DiscreteDist::new(random_atoms(k2, d, &mut r), random_units(k2, &mut r))?;
        for a in [0.5, 1.0, 2.0] {
            let c = check_truncation_lemma(&mu, &nu, a)?;
            trunc_fail += usize::from(!c.holds);
            if c.bound > 0.0 {
                trunc_ratio = trunc_ratio.max(c.w1 / c.bound);
            }
        }
    }
    let mu = DiscreteDist::new(vec![vec![0.0]], vec![1.0])?;
    let nu = DiscreteDist::new(vec![vec![1.0]], vec![1.0])?;
    let hand = check_truncation_lemma(&mu, &nu, 1.0)?;
    let hand_ok = hand.holds && hand.w1 == 1.0 && (hand.bound - 4.0).abs() < 1e-12;
    Ok(vec![
        CheckOutcome {
            name: "pinsker",
            value: pinsker_fail as f64,
            threshold: 0.0,
            passed: pinsker_fail == 0,
            detail: format!("{pinsker_pairs} pairs, smallest slack {pinsker_slack:.3e}"),
        },
        CheckOutcome {
            name: "truncation_lemma",
            value: trunc_fail as f64,
            threshold: 0.0,
            passed: trunc_fail == 0 && hand_ok,
            detail: format!(
                "{truncation_pairs} pairs × 3 exponents, largest W1/bound {trunc_ratio:.3}; hand case W1 = {} ≤ {}",
                hand.w1, hand.bound
            ),
        },
    ])
}

/// RKHS critic on two samples from one law: the estimate stays near zero.
pub fn rkhs_null(n: usize, seed: u64) -> Result<CheckOutcome> {
    let mut r = rng(seed);
    let p = Tensor::randn([n, 1], 1.0, &mut r);
    let q = Tensor::randn([n, 1], 1.0, &mut r);
    let ball = CriticBall {
        gamma: 0.5,
        b: 2.0,
        k_half: 6.0,
    };
    let (est, _) = dv_kl_estimate(&p, None, &q, None, ball, DvOptions::default())?;
    Ok(CheckOutcome::below("rkhs_equal_laws", est.abs(), 0.05, format!("n = m = {n}")))
}

/// Named child streams do not perturb one another.
pub fn stream_isolation(seed: u64) -> CheckOutcome {
    let streams = crate::rng::seed_everything(seed);
    let draw = |burn: usize| {
        let mut critic = streams.stream("critic_init");
        for _ in 0..burn {
            critic.random::<u64>();
        }
        let mut data = streams.stream("ik_data");
        (0..8).map(|_| data.random::<u64>()).collect::<Vec<_>>()
    };
    let same = draw(0) == draw(1000);
    CheckOutcome {
        name: "stream_isolation",
        value: if same { 0.0 } else { 1.0 },
        threshold: 0.0,
        passed: same,
        detail: "data draws unchanged by extra critic draws".into(),
    }
}

/// The whole suite at the sizes the invariants are stated for.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![
        coupling_invertibility(100, seed)?,
        iresnet_invertibility(100, seed + 1)?,
        logdet_oracle(50, seed + 2)?,
    ];
    out.extend(loss_gradients(seed + 3)?);
    out.extend(sinkhorn_consistency(seed + 4)?);
    out.extend(w1_oracle(100, seed + 5)?);
    out.extend(inequality_witnesses(1000, 200, seed + 6)?);
    out.push(rkhs_null(500, seed + 7)?);
    out.push(stream_isolation(seed));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        for c in [coupling_invertibility(5, 1).unwrap(), iresnet_invertibility(5, 2).unwrap(), logdet_oracle(3, 3).unwrap()] {
            assert!(c.passed, "{c:?}");
        }
        for c in w1_oracle(10, 4).unwrap().into_iter().chain(inequality_witnesses(50, 10, 5).unwrap()) {
            assert!(c.passed, "{c:?}");
        }
        assert!(stream_isolation(0).passed);
    }

    #[test]
    fn a_broken_round_trip_is_caught() {
        let c = CheckOutcome::below("x", 1e-3, 1e-10, String::new());
        assert!(!c.passed);
    }
}
