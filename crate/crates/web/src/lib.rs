//! Browser bindings for three small interactive operations: sampling the
//! arm posterior from an INN trained in the page, the entropic bias of
//! Sinkhorn against ε, and sample-to-sample W1 of Pareto data.
//!
//! Every function has a plain Rust counterpart returning `Result<_, String>`
//! so the logic runs (and is tested) off the browser too.

use varinn::autodiff::Tensor;
use varinn::benchmarks::{IkConfig, ParetoConfig};
use varinn::divergences::{sinkhorn_cost_values, sinkhorn_divergence_values, SinkhornOptions};
use varinn::flows::{ArchSpec, FlowModel, PaddingSpec};
use varinn::metrics::w1_1d;
use varinn::rng::{seed_everything, Rng};
use varinn::training::{sample_posterior, train_inn, LatentSampler, TrainConfig};
use wasm_bindgen::prelude::*;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn text(e: varinn::Error) -> String {
    e.to_string()
}

/// An INN on the 4-DOF arm, small enough to train in a page.
#[wasm_bindgen]
pub struct ArmDemo {
    arm: IkConfig,
    model: FlowModel,
    padding: Option<PaddingSpec>,
    latent: LatentSampler,
    x: Tensor,
    y: Tensor,
    rng: Rng,
    epochs: usize,
    round: u64,
}

impl ArmDemo {
    pub fn build(seed: u64, samples: usize, hidden: usize) -> Result<ArmDemo, String> {
        let arm = IkConfig::default();
        let (x, y) = arm.generate(samples, seed).map_err(text)?;
        let streams = seed_everything(seed);
        let arch = ArchSpec {
            hidden,
            ..ArchSpec::default()
        };
        let model = FlowModel::build(&arch, 2, 2, &mut streams.stream("model_init")).map_err(text)?;
        Ok(ArmDemo {
            arm,
            model,
            padding: None,
            latent: LatentSampler::Normal { dim: 2 },
            x,
            y,
            rng: streams.stream("posterior"),
            epochs: 0,
            round: 0,
        })
    }

    /// Train for `epochs` more epochs with NLL; returns the last epoch loss.
    /// Each call starts a fresh optimizer.
    pub fn fit(&mut self, epochs: usize, lr: f64) -> Result<f64, String> {
        let cfg = TrainConfig {
            epochs,
            batch_size: 256,
            lr_model: lr,
            seed: self.round,
            ..TrainConfig::default()
        };
        let model = self.model.clone();
        let history = train_inn(model, &self.x, &self.y, &cfg).map_err(text)?;
        self.model = history.model.clone();
        self.padding = history.padding.clone();
        self.epochs += epochs;
        self.round += 1;
        Ok(history.final_total())
    }

    /// `n` posterior draws at `(tx, ty)`, flattened row-major `n × 4`.
    pub fn posterior(&mut self, tx: f64, ty: f64, n: usize) -> Result<Vec<f64>, String> {
        let x = sample_posterior(&self.model, &[tx, ty], n, &self.latent, self.padding.as_ref(), &mut self.rng).map_err(text)?;
        Ok(x.data().to_vec())
    }

    /// Mean distance from the target of the arms in `samples`.
    pub fn resim(&self, samples: &[f64], tx: f64, ty: f64) -> Result<f64, String> {
        let x = Tensor::new([samples.len() / 4, 4], samples.to_vec()).map_err(text)?;
        self.arm.resim_error_of(&x, [tx, ty]).map_err(text)
    }
}

#[wasm_bindgen]
impl ArmDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, samples: u32, hidden: u32) -> Result<ArmDemo, JsError> {
        ArmDemo::build(seed.into(), samples as usize, hidden as usize).map_err(js)
    }

    pub fn train(&mut self, epochs: u32, lr: f64) -> Result<f64, JsError> {
        self.fit(epochs as usize, lr).map_err(js)
    }

    pub fn sample(&mut self, tx: f64, ty: f64, n: u32) -> Result<Vec<f64>, JsError> {
        self.posterior(tx, ty, n as usize).map_err(js)
    }

    pub fn resim_error(&self, samples: &[f64], tx: f64, ty: f64) -> Result<f64, JsError> {
        self.resim(samples, tx, ty).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn epochs(&self) -> u32 {
        self.epochs as u32
    }

    #[wasm_bindgen(getter)]
    pub fn reach(&self) -> f64 {
        self.arm.reach()
    }

    /// Rail base, two elbows and the hand of one configuration, as
    /// `[x0, y0, x1, y1, x2, y2, x3, y3]`.
    pub fn joints(&self, x: &[f64]) -> Vec<f64> {
        arm_joints(&self.arm, x)
    }
}

pub fn arm_joints(arm: &IkConfig, x: &[f64]) -> Vec<f64> {
    let angles = [x[1], x[2] - x[1], x[3] - x[1] - x[2]];
    let mut p = [x[0], 0.0];
    let mut out = p.to_vec();
    for (l, a) in arm.lengths.iter().zip(angles) {
        p = [p[0] + l * a.sin(), p[1] + l * a.cos()];
        out.extend(p);
    }
    out
}

/// Exact `W2²` between two 1-D clouds of `n` points (`N(0,1)` and
/// `N(shift,1)`), followed by `(cost, divergence)` for each ε.
pub fn sinkhorn_table(n: usize, shift: f64, seed: u64, epsilons: &[f64]) -> Result<Vec<f64>, String> {
    let streams = seed_everything(seed);
    let p = Tensor::randn([n, 1], 1.0, &mut streams.stream("p"));
    let q = Tensor::randn([n, 1], 1.0, &mut streams.stream("q")).map(|v| v + shift);
    let mut a = p.data().to_vec();
    let mut b = q.data().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let exact = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / n as f64;
    let opts = SinkhornOptions {
        max_iter: 5000,
        tol: 1e-10,
    };
    let mut out = vec![exact];
    for &eps in epsilons {
        out.push(sinkhorn_cost_values(&p, &q, eps, opts).map_err(text)?);
        out.push(sinkhorn_divergence_values(&p, &q, eps, opts).map_err(text)?);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn sinkhorn_sweep(n: u32, shift: f64, seed: u32, epsilons: &[f64]) -> Result<Vec<f64>, JsError> {
    sinkhorn_table(n as usize, shift, seed.into(), epsilons).map_err(js)
}

/// W1 between two independent Pareto(α, 1) samples of each size in `sizes`.
pub fn pareto_w1_curve(alpha: f64, sizes: &[usize], seed: u64) -> Result<Vec<f64>, String> {
    let cfg = ParetoConfig { alpha, x_m: 1.0, dim: 1 };
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(2 * i as u64);
            let a = cfg.sample(n, s).map_err(text)?;
            let b = cfg.sample(n, s + 1).map_err(text)?;
            w1_1d(a.data(), b.data()).map_err(text)
        })
        .collect()
}

#[wasm_bindgen]
pub fn pareto_w1(alpha: f64, sizes: &[u32], seed: u32) -> Result<Vec<f64>, JsError> {
    let sizes: Vec<usize> = sizes.iter().map(|&n| n as usize).collect();
    pareto_w1_curve(alpha, &sizes, seed.into()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joints_end_at_the_forward_model() {
        let arm = IkConfig::default();
        let x = [0.3, 0.4, -0.2, 0.9];
        let j = arm_joints(&arm, &x);
        let hand = arm.forward(&x);
        assert!((j[6] - hand[0]).abs() < 1e-12 && (j[7] - hand[1]).abs() < 1e-12);
    }

    #[test]
    fn training_improves_resimulation() {
        let mut demo = ArmDemo::build(1, 3000, 64).unwrap();
        let before = demo.posterior(0.2, 1.4, 200).unwrap();
        let before = demo.resim(&before, 0.2, 1.4).unwrap();
        demo.fit(10, 1e-3).unwrap();
        demo.fit(10, 1e-3).unwrap();
        let after = demo.posterior(0.2, 1.4, 200).unwrap();
        let after = demo.resim(&after, 0.2, 1.4).unwrap();
        assert_eq!(demo.epochs, 20);
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn sinkhorn_bias_shrinks_with_epsilon() {
        let t = sinkhorn_table(48, 1.0, 0, &[1.0, 0.1, 0.01]).unwrap();
        let gaps: Vec<f64> = (0..3).map(|k| (t[1 + 2 * k] - t[0]).abs()).collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn light_tails_converge_faster() {
        let sizes = [4000];
        let heavy = pareto_w1_curve(1.0, &sizes, 0).unwrap()[0];
        let light = pareto_w1_curve(10.0, &sizes, 0).unwrap()[0];
        assert!(light < heavy, "{light} vs {heavy}");
    }
}
