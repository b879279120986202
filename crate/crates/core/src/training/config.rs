use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::autodiff::Tensor;
use crate::divergences::{FDivergence, FDivergenceSpec, JsConjugate, MmdEstimator, Pairing, Prior};
use crate::error::{Error, Result};
use crate::flows::PadMode;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    Nll,
    Mmd,
    /// Debiased Sinkhorn divergence.
    Sinkhorn,
    /// Plain entropic transport cost.
    SinkhornApprox,
    FDiv(FDivergence),
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "nll" => LossKind::Nll,
            "mmd" => LossKind::Mmd,
            "sinkhorn" => LossKind::Sinkhorn,
            "sinkhorn_approx" => LossKind::SinkhornApprox,
            "fdiv_dv" => LossKind::FDiv(FDivergence::KL),
            other => LossKind::FDiv(FDivergence::parse(other)?),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Nll => "nll",
            LossKind::Mmd => "mmd",
            LossKind::Sinkhorn => "sinkhorn",
            LossKind::SinkhornApprox => "sinkhorn_approx",
            LossKind::FDiv(FDivergence::KL) => "kl",
            LossKind::FDiv(FDivergence::ReverseKL) => "reverse_kl",
            LossKind::FDiv(FDivergence::JS) => "js",
        }
    }

    pub fn uses_critic(self) -> bool {
        matches!(self, LossKind::FDiv(_))
    }
}

/// Where the unsupervised INN loss compares distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Direction {
    /// `(Y, Z)` against `T(X)` on the output side.
    Forward,
    /// `T⁻¹(Y, Z)` against `X` on the input side.
    #[default]
    Backward,
    /// `(Y, Z)` against the pairing of `T_z(X)` chosen by the config.
    Latent,
    /// Forward plus backward, summed before one optimizer step.
    Bidirectional,
    /// Forward on even batches, backward on odd ones.
    Alternate,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "forward" => Direction::Forward,
            "backward" => Direction::Backward,
            "latent" => Direction::Latent,
            "bidirectional" => Direction::Bidirectional,
            "alternate" => Direction::Alternate,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Latent => "latent",
            Direction::Bidirectional => "bidirectional",
            Direction::Alternate => "alternate",
        }
    }
}

/// Which inputs the Gaussian prior loss compares `T⁻¹(Y_i, Z_i)` with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PriorReference {
    /// `X_i`, the input paired with `Y_i`.
    Paired,
    /// An input drawn independently of `(Y_i, Z_i)`: in expectation the
    /// loss is then the prior's negative log-likelihood up to a constant.
    #[default]
    Independent,
}

impl PriorReference {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paired" => Some(PriorReference::Paired),
            "independent" => Some(PriorReference::Independent),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorReference::Paired => "paired",
            PriorReference::Independent => "independent",
        }
    }
}

/// Law of the latent variable `Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatentSampler {
    Normal { dim: usize },
    Uniform { a: f64, b: f64, dim: usize },
}

impl LatentSampler {
    pub fn dim(&self) -> usize {
        match *self {
            LatentSampler::Normal { dim } | LatentSampler::Uniform { dim, .. } => dim,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        let dim = self.dim();
        let data: Vec<f64> = match *self {
            LatentSampler::Normal { .. } => (0..n * dim).map(|_| rng.sample(StandardNormal)).collect(),
            LatentSampler::Uniform { a, b, .. } => {
                let u = Uniform::new(a, b).map_err(|e| Error::domain("latent sampler", e.to_string()))?;
                (0..n * dim).map(|_| rng.sample(u)).collect()
            }
        };
        Tensor::new([n, dim], data)
    }
}

/// Hyper-parameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_model: f64,
    pub lr_critic: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// `None` picks 0 for likelihood training and `2e-5` otherwise.
    pub weight_decay: Option<f64>,
    pub critic_steps: usize,
    pub model_steps: usize,
    /// Extra critic-only passes over the first batch before training.
    pub critic_warmup: usize,
    pub critic_width: usize,
    pub loss: LossKind,
    pub direction: Direction,
    pub pairing: Pairing,
    pub js: JsConjugate,
    pub lambda: f64,
    pub lambda_prior: f64,
    pub prior: Prior,
    pub prior_reference: PriorReference,
    pub sigma: f64,
    pub epsilon: f64,
    pub mmd: MmdEstimator,
    pub pad_mode: PadMode,
    pub pad_noise: f64,
    /// `None` means a standard normal of the model's latent width.
    pub latent: Option<LatentSampler>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 512,
            lr_model: 1e-4,
            lr_critic: 2e-4,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            weight_decay: None,
            critic_steps: 1,
            model_steps: 1,
            critic_warmup: 0,
            critic_width: crate::divergences::CRITIC_WIDTH,
            loss: LossKind::Nll,
            direction: Direction::Backward,
            pairing: Pairing::Observed,
            js: JsConjugate::Shifted,
            lambda: 1.0,
            lambda_prior: 0.0,
            prior: Prior::Gaussian,
            prior_reference: PriorReference::Independent,
            sigma: 0.1,
            epsilon: 0.1,
            mmd: MmdEstimator::Biased,
            pad_mode: PadMode::Zero,
            pad_noise: 0.05,
            latent: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The f-divergence behind a critic-based loss.
    pub fn loss_spec(&self) -> Option<FDivergenceSpec> {
        match self.loss {
            LossKind::FDiv(kind) => Some(FDivergenceSpec { kind, js: self.js }),
            _ => None,
        }
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
            .unwrap_or(if self.loss == LossKind::Nll { 0.0 } else { 2e-5 })
    }

    /// Every violated constraint, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        need(self.epochs >= 1, format!("epochs must be ≥ 1, got {}", self.epochs));
        need(self.batch_size >= 1, format!("batch_size must be ≥ 1, got {}", self.batch_size));
        need(self.lr_model >= 0.0, format!("lr_model must be ≥ 0, got {}", self.lr_model));
        need(self.lr_critic >= 0.0, format!("lr_critic must be ≥ 0, got {}", self.lr_critic));
        need(
            (0.0..1.0).contains(&self.betas.0) && (0.0..1.0).contains(&self.betas.1),
            format!("betas must lie in [0, 1), got {:?}", self.betas),
        );
        need(self.adam_eps > 0.0, format!("adam_eps must be > 0, got {}", self.adam_eps));
        if let Some(wd) = self.weight_decay {
            need(wd >= 0.0, format!("weight_decay must be ≥ 0, got {wd}"));
        }
        need(self.critic_steps >= 1, format!("critic_steps must be ≥ 1, got {}", self.critic_steps));
        need(self.model_steps >= 1, format!("model_steps must be ≥ 1, got {}", self.model_steps));
        need(self.critic_width >= 1, format!("critic_width must be ≥ 1, got {}", self.critic_width));
        need(self.lambda >= 0.0, format!("lambda must be ≥ 0, got {}", self.lambda));
        need(self.lambda_prior >= 0.0, format!("lambda_prior must be ≥ 0, got {}", self.lambda_prior));
        if let Prior::Uniform { a, b } = self.prior {
            need(a < b, format!("uniform prior needs a < b, got [{a}, {b}]"));
        }
        need(self.sigma > 0.0, format!("sigma must be > 0, got {}", self.sigma));
        need(self.epsilon > 0.0, format!("epsilon must be > 0, got {}", self.epsilon));
        need(self.pad_noise >= 0.0, format!("pad_noise must be ≥ 0, got {}", self.pad_noise));
        if let Some(LatentSampler::Uniform { a, b, .. }) = self.latent {
            need(a < b, format!("uniform latent needs a < b, got [{a}, {b}]"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}
