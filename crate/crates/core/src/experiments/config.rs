//! Sectioned `key = value` experiment configuration.
//!
//! ```text
//! [experiment]
//! seeds = 0..5
//! [train]
//! epochs = 20
//! [sweep]
//! alphas = 1, 2, 10
//! ```
//!
//! File settings are applied over the subcommand's defaults, then command
//! line overrides (`section.key=value`) over those. Every problem found on
//! the way is reported at once.

use std::path::PathBuf;

use crate::benchmarks::IkConfig;
use crate::divergences::{FDivergence, JsConjugate, MmdEstimator, Pairing, Prior};
use crate::error::{Error, Result};
use crate::flows::{Activation, ArchKind, ArchSpec, InitMode, PadMode};
use crate::training::{Direction, LossKind, PriorReference, TrainConfig};

pub const SECTIONS: [&str; 4] = ["experiment", "arch", "train", "sweep"];

/// Environment variable naming the directory relative output paths live in.
pub const OUTPUT_ROOT_ENV: &str = "VARINN_OUTPUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subcommand {
    PriorEffect,
    FdivCompare,
    LatentSweep,
    EpsilonSweep,
    SupportMismatch,
    ParetoMoments,
    KlOracle,
    Selfcheck,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::PriorEffect,
        Subcommand::FdivCompare,
        Subcommand::LatentSweep,
        Subcommand::EpsilonSweep,
        Subcommand::SupportMismatch,
        Subcommand::ParetoMoments,
        Subcommand::KlOracle,
        Subcommand::Selfcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::PriorEffect => "prior-effect",
            Subcommand::FdivCompare => "fdiv-compare",
            Subcommand::LatentSweep => "latent-sweep",
            Subcommand::EpsilonSweep => "epsilon-sweep",
            Subcommand::SupportMismatch => "support-mismatch",
            Subcommand::ParetoMoments => "pareto-moments",
            Subcommand::KlOracle => "kl-oracle",
            Subcommand::Selfcheck => "selfcheck",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Subcommand::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// One `section.key = value` assignment and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub section: String,
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Read a config file. Returns the settings and every syntax problem.
pub fn parse_settings(text: &str, source: &str) -> (Vec<Setting>, Vec<String>) {
    let mut settings = Vec::new();
    let mut problems = Vec::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let origin = format!("{source}:{}", i + 1);
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if SECTIONS.contains(&name) {
                section = Some(name.to_string());
            } else {
                problems.push(format!("{origin}: unknown section [{name}]"));
                section = None;
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("{origin}: expected `key = value`, got `{line}`"));
            continue;
        };
        match &section {
            Some(s) => settings.push(Setting {
                section: s.clone(),
                key: key.trim().to_string(),
                value: value.trim().to_string(),
                origin,
            }),
            None => problems.push(format!("{origin}: `{}` is outside a known section", key.trim())),
        }
    }
    (settings, problems)
}

/// Parse one `section.key=value` override; a leading `--` is accepted.
pub fn parse_override(arg: &str) -> std::result::Result<Setting, String> {
    let body = arg.strip_prefix("--").unwrap_or(arg);
    let (path, value) = body
        .split_once('=')
        .ok_or_else(|| format!("override `{arg}`: expected section.key=value"))?;
    let (section, key) = path
        .split_once('.')
        .ok_or_else(|| format!("override `{arg}`: expected section.key=value"))?;
    if !SECTIONS.contains(&section) {
        return Err(format!("override `{arg}`: unknown section [{section}]"));
    }
    Ok(Setting {
        section: section.to_string(),
        key: key.to_string(),
        value: value.to_string(),
        origin: format!("override {path}"),
    })
}

/// Sweep axes. Each subcommand reads the ones it crosses.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub archs: Vec<ArchKind>,
    pub losses: Vec<LossKind>,
    pub directions: Vec<Direction>,
    pub latent_dims: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Latent supports `U(a, b)` per coordinate.
    pub supports: Vec<(f64, f64)>,
    pub lambda_priors: Vec<f64>,
    pub priors: Vec<Prior>,
    pub sample_sizes: Vec<usize>,
    /// RKHS critic norm bounds.
    pub bounds: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            archs: vec![ArchKind::Coupling],
            losses: vec![LossKind::Nll],
            directions: vec![Direction::Backward],
            latent_dims: vec![14],
            epsilons: vec![0.1],
            alphas: vec![],
            supports: vec![],
            lambda_priors: vec![0.0],
            priors: vec![Prior::Gaussian],
            sample_sizes: vec![],
            bounds: vec![],
        }
    }
}

/// A complete, seedable description of one subcommand invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Subcommand,
    /// CSV path; relative paths resolve against [`OUTPUT_ROOT_ENV`].
    pub output: PathBuf,
    pub seeds: Vec<u64>,
    /// Training set size.
    pub samples: usize,
    /// Posterior or generated samples per evaluation.
    pub eval_samples: usize,
    /// Held-out conditioning targets for IK evaluation.
    pub targets: usize,
    /// Data dimension of the uniform and Pareto sources.
    pub data_dim: usize,
    pub pareto_scale: f64,
    pub ik: IkConfig,
    pub arch: ArchSpec,
    pub d_z: usize,
    pub train: TrainConfig,
    /// Uniform prior bounds used whenever the sweep selects `uniform`.
    pub uniform_prior: (f64, f64),
    /// RKHS critic kernel scale and cube half-width.
    pub rkhs_gamma: f64,
    pub rkhs_k: f64,
    /// Directory for trained-model checkpoints; none are written when unset.
    pub checkpoints: Option<PathBuf>,
    pub sweep: Sweep,
}

impl ExperimentConfig {
    /// Defaults for a subcommand, before any file or override.
    pub fn defaults(experiment: Subcommand) -> Self {
        let ik_arch = ArchSpec {
            activation: Activation::Relu,
            ..ArchSpec::default()
        };
        let critic_train = TrainConfig {
            lr_model: 2e-4,
            lr_critic: 2e-4,
            critic_steps: 5,
            critic_warmup: 100,
            ..TrainConfig::default()
        };
        let nf_arch = ArchSpec {
            hidden: 64,
            ..ArchSpec::default()
        };
        let nf_train = TrainConfig {
            epochs: 20,
            batch_size: 256,
            lr_model: 1e-3,
            lr_critic: 2e-3,
            critic_steps: 5,
            critic_warmup: 100,
            ..TrainConfig::default()
        };
        let mut cfg = ExperimentConfig {
            experiment,
            output: PathBuf::from(format!("{}.csv", experiment.name())),
            seeds: vec![0],
            samples: 100_000,
            eval_samples: 2000,
            targets: 20,
            data_dim: 2,
            pareto_scale: 1.0,
            ik: IkConfig::default(),
            arch: ik_arch,
            d_z: 14,
            train: TrainConfig::default(),
            uniform_prior: (0.0, 1.0),
            rkhs_gamma: 0.5,
            rkhs_k: 6.0,
            checkpoints: None,
            sweep: Sweep::default(),
        };
        match experiment {
            Subcommand::PriorEffect => {
                cfg.sweep.lambda_priors = vec![0.0, 1.0, 100.0];
                cfg.sweep.priors = vec![Prior::Gaussian, Prior::Uniform { a: 0.0, b: 1.0 }];
            }
            Subcommand::FdivCompare => {
                cfg.samples = 20_000;
                cfg.seeds = (0..20).collect();
                cfg.arch.init = InitMode::StandardNormal;
                cfg.train = critic_train;
                cfg.sweep.archs = vec![ArchKind::Coupling, ArchKind::IResNet];
                cfg.sweep.losses = FDivergence::ALL.map(LossKind::FDiv).to_vec();
                cfg.sweep.directions = vec![Direction::Forward, Direction::Backward];
            }
            Subcommand::LatentSweep => {
                cfg.samples = 20_000;
                cfg.train = critic_train;
                cfg.sweep.latent_dims = vec![2, 4, 6, 8, 10, 14, 20];
                cfg.sweep.losses = vec![LossKind::FDiv(FDivergence::KL), LossKind::Sinkhorn];
            }
            Subcommand::EpsilonSweep => {
                cfg.samples = 20_000;
                cfg.train = critic_train;
                cfg.sweep.epsilons = vec![1.0, 0.5, 0.1, 0.05, 0.01];
                cfg.sweep.losses = vec![LossKind::Sinkhorn, LossKind::SinkhornApprox];
            }
            Subcommand::SupportMismatch => {
                cfg.samples = 2000;
                cfg.eval_samples = 1000;
                cfg.arch = nf_arch;
                cfg.train = nf_train;
                cfg.sweep.supports = vec![(0.0, 1.0), (3.0, 4.0), (5.0, 6.0), (10.0, 11.0), (15.0, 16.0)];
                cfg.sweep.losses = vec![LossKind::FDiv(FDivergence::KL), LossKind::Sinkhorn];
            }
            Subcommand::ParetoMoments => {
                cfg.samples = 4000;
                cfg.eval_samples = 4000;
                cfg.seeds = (0..5).collect();
                cfg.arch = nf_arch;
                cfg.train = TrainConfig {
                    lr_model: 3e-4,
                    lr_critic: 1e-3,
                    loss: LossKind::FDiv(FDivergence::KL),
                    ..nf_train
                };
                cfg.sweep.alphas = vec![1.0, 2.0, 5.0, 10.0];
            }
            Subcommand::KlOracle => {
                cfg.seeds = (0..5).collect();
                cfg.sweep.sample_sizes = vec![100, 300, 1000];
                cfg.sweep.bounds = vec![8.0];
            }
            Subcommand::Selfcheck => {}
        }
        cfg
    }

    /// Defaults, then file settings, then overrides; fails listing every
    /// problem found.
    pub fn resolve(experiment: Subcommand, file: Option<(&str, &str)>, overrides: &[String]) -> Result<Self> {
        let mut cfg = ExperimentConfig::defaults(experiment);
        let mut problems = Vec::new();
        let mut settings = Vec::new();
        if let Some((text, source)) = file {
            let (s, p) = parse_settings(text, source);
            settings.extend(s);
            problems.extend(p);
        }
        for o in overrides {
            match parse_override(o) {
                Ok(s) => settings.push(s),
                Err(e) => problems.push(e),
            }
        }
        for s in &settings {
            if let Err(e) = cfg.apply(s) {
                problems.push(format!("{}: {}.{}: {e}", s.origin, s.section, s.key));
            }
        }
        let (a, b) = cfg.uniform_prior;
        for p in std::iter::once(&mut cfg.train.prior).chain(cfg.sweep.priors.iter_mut()) {
            if let Prior::Uniform { .. } = p {
                *p = Prior::Uniform { a, b };
            }
        }
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    /// Apply one setting.
    pub fn apply(&mut self, s: &Setting) -> std::result::Result<(), String> {
        let v = s.value.as_str();
        let t = &mut self.train;
        match (s.section.as_str(), s.key.as_str()) {
            ("experiment", "name") => {
                if v != self.experiment.name() {
                    return Err(format!("config is for `{v}`, not `{}`", self.experiment.name()));
                }
            }
            ("experiment", "output") => self.output = PathBuf::from(v),
            ("experiment", "seeds") => self.seeds = parse_seeds(v)?,
            ("experiment", "samples") => self.samples = num(v)?,
            ("experiment", "eval_samples") => self.eval_samples = num(v)?,
            ("experiment", "targets") => self.targets = num(v)?,
            ("experiment", "data_dim") => self.data_dim = num(v)?,
            ("experiment", "pareto_scale") => self.pareto_scale = num(v)?,
            ("experiment", "arm_lengths") => self.ik.lengths = array(v)?,
            ("experiment", "arm_sigmas") => self.ik.sigmas = array(v)?,
            ("experiment", "uniform_prior") => self.uniform_prior = parse_interval(v)?,
            ("experiment", "rkhs_gamma") => self.rkhs_gamma = num(v)?,
            ("experiment", "rkhs_k") => self.rkhs_k = num(v)?,
            ("experiment", "checkpoints") => self.checkpoints = Some(PathBuf::from(v.trim())),
            ("arch", "kind") => self.arch.kind = named(v, ArchKind::parse)?,
            ("arch", "blocks") => self.arch.blocks = num(v)?,
            ("arch", "hidden") => self.arch.hidden = num(v)?,
            ("arch", "activation") => self.arch.activation = named(v, Activation::parse)?,
            ("arch", "clamp") => self.arch.clamp = num(v)?,
            ("arch", "split") => self.arch.split = if v == "auto" { None } else { Some(num(v)?) },
            ("arch", "spectral_bound") => self.arch.spectral_bound = num(v)?,
            ("arch", "init") => self.arch.init = named(v, InitMode::parse)?,
            ("arch", "d_z") => self.d_z = num(v)?,
            ("arch", "pad_mode") => t.pad_mode = named(v, PadMode::parse)?,
            ("train", "epochs") => t.epochs = num(v)?,
            ("train", "batch_size") => t.batch_size = num(v)?,
            ("train", "lr_model") => t.lr_model = num(v)?,
            ("train", "lr_critic") => t.lr_critic = num(v)?,
            ("train", "beta1") => t.betas.0 = num(v)?,
            ("train", "beta2") => t.betas.1 = num(v)?,
            ("train", "adam_eps") => t.adam_eps = num(v)?,
            ("train", "weight_decay") => t.weight_decay = if v == "auto" { None } else { Some(num(v)?) },
            ("train", "critic_steps") => t.critic_steps = num(v)?,
            ("train", "model_steps") => t.model_steps = num(v)?,
            ("train", "critic_warmup") => t.critic_warmup = num(v)?,
            ("train", "critic_width") => t.critic_width = num(v)?,
            ("train", "loss") => t.loss = named(v, LossKind::parse)?,
            ("train", "direction") => t.direction = named(v, Direction::parse)?,
            ("train", "pairing") => t.pairing = named(v, Pairing::parse)?,
            ("train", "js") => {
                t.js = match v {
                    "shifted" => JsConjugate::Shifted,
                    "classical" => JsConjugate::Classical,
                    _ => return Err(format!("unknown value `{v}`")),
                }
            }
            ("train", "lambda") => t.lambda = num(v)?,
            ("train", "lambda_prior") => t.lambda_prior = num(v)?,
            ("train", "prior") => t.prior = self_prior(v, self.uniform_prior)?,
            ("train", "prior_reference") => t.prior_reference = named(v, PriorReference::parse)?,
            ("train", "sigma") => t.sigma = num(v)?,
            ("train", "epsilon") => t.epsilon = num(v)?,
            ("train", "mmd") => {
                t.mmd = match v {
                    "biased" => MmdEstimator::Biased,
                    "unbiased" => MmdEstimator::Unbiased,
                    _ => return Err(format!("unknown value `{v}`")),
                }
            }
            ("train", "pad_noise") => t.pad_noise = num(v)?,
            ("sweep", "archs") => self.sweep.archs = list(v, |x| named(x, ArchKind::parse))?,
            ("sweep", "losses") => self.sweep.losses = list(v, |x| named(x, LossKind::parse))?,
            ("sweep", "directions") => self.sweep.directions = list(v, |x| named(x, Direction::parse))?,
            ("sweep", "latent_dims") => self.sweep.latent_dims = list(v, num)?,
            ("sweep", "epsilons") => self.sweep.epsilons = list(v, num)?,
            ("sweep", "alphas") => self.sweep.alphas = list(v, num)?,
            ("sweep", "supports") => self.sweep.supports = list(v, parse_interval)?,
            ("sweep", "lambda_priors") => self.sweep.lambda_priors = list(v, num)?,
            ("sweep", "priors") => {
                let bounds = self.uniform_prior;
                self.sweep.priors = list(v, |x| self_prior(x, bounds))?
            }
            ("sweep", "sample_sizes") => self.sweep.sample_sizes = list(v, num)?,
            ("sweep", "bounds") => self.sweep.bounds = list(v, num)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every constraint violation across the configuration.
    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = self.train.problems().into_iter().map(|p| format!("train: {p}")).collect();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        need(!self.seeds.is_empty(), "experiment.seeds is empty".into());
        need(self.samples >= 2, format!("experiment.samples must be ≥ 2, got {}", self.samples));
        need(self.eval_samples >= 2, format!("experiment.eval_samples must be ≥ 2, got {}", self.eval_samples));
        need(self.targets >= 1, format!("experiment.targets must be ≥ 1, got {}", self.targets));
        need(self.data_dim >= 2, format!("experiment.data_dim must be ≥ 2, got {}", self.data_dim));
        need(self.pareto_scale > 0.0, format!("experiment.pareto_scale must be > 0, got {}", self.pareto_scale));
        need(
            self.uniform_prior.0 < self.uniform_prior.1,
            format!("experiment.uniform_prior needs a < b, got {:?}", self.uniform_prior),
        );
        need(self.rkhs_gamma > 0.0, format!("experiment.rkhs_gamma must be > 0, got {}", self.rkhs_gamma));
        need(self.rkhs_k > 0.0, format!("experiment.rkhs_k must be > 0, got {}", self.rkhs_k));
        if let Err(e) = self.ik.validate() {
            need(false, format!("experiment: {e}"));
        }
        need(self.arch.blocks >= 1, format!("arch.blocks must be ≥ 1, got {}", self.arch.blocks));
        need(self.arch.hidden >= 1, format!("arch.hidden must be ≥ 1, got {}", self.arch.hidden));
        need(self.arch.clamp > 0.0, format!("arch.clamp must be > 0, got {}", self.arch.clamp));
        need(
            self.arch.spectral_bound > 0.0 && self.arch.spectral_bound < 1.0,
            format!("arch.spectral_bound must lie in (0, 1), got {}", self.arch.spectral_bound),
        );
        need(self.d_z >= 1, format!("arch.d_z must be ≥ 1, got {}", self.d_z));
        let sw = &self.sweep;
        need(sw.epsilons.iter().all(|&e| e > 0.0), format!("sweep.epsilons must be > 0, got {:?}", sw.epsilons));
        need(sw.alphas.iter().all(|&a| a > 0.0), format!("sweep.alphas must be > 0, got {:?}", sw.alphas));
        need(sw.supports.iter().all(|(a, b)| a < b), format!("sweep.supports need a < b, got {:?}", sw.supports));
        need(
            sw.lambda_priors.iter().all(|&l| l >= 0.0),
            format!("sweep.lambda_priors must be ≥ 0, got {:?}", sw.lambda_priors),
        );
        need(sw.bounds.iter().all(|&b| b > 0.0), format!("sweep.bounds must be > 0, got {:?}", sw.bounds));
        need(sw.sample_sizes.iter().all(|&n| n >= 2), format!("sweep.sample_sizes must be ≥ 2, got {:?}", sw.sample_sizes));
        match self.experiment {
            Subcommand::LatentSweep => need(
                sw.latent_dims.iter().all(|&d| d + 2 >= 4),
                format!("sweep.latent_dims must be ≥ 2 for the 4-joint arm, got {:?}", sw.latent_dims),
            ),
            Subcommand::PriorEffect | Subcommand::FdivCompare | Subcommand::EpsilonSweep => {
                need(self.d_z >= 2, format!("arch.d_z must be ≥ 2 for the 4-joint arm, got {}", self.d_z))
            }
            _ => {}
        }
        out
    }

    /// Output path with the environment's output root applied.
    pub fn output_path(&self) -> PathBuf {
        rooted(&self.output)
    }

    /// Checkpoint directory with the environment's output root applied.
    pub fn checkpoint_dir(&self) -> Option<PathBuf> {
        self.checkpoints.as_deref().map(rooted)
    }
}

fn rooted(path: &std::path::Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.trim().parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn named<T>(v: &str, parse: impl Fn(&str) -> Option<T>) -> std::result::Result<T, String> {
    parse(v.trim()).ok_or_else(|| format!("unknown value `{}`", v.trim()))
}

fn list<T>(v: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(item).collect()
}

fn array<const N: usize>(v: &str) -> std::result::Result<[f64; N], String> {
    let xs: Vec<f64> = list(v, num)?;
    xs.try_into().map_err(|xs: Vec<f64>| format!("expected {N} values, got {}", xs.len()))
}

/// `a:b`, as used for supports and uniform priors.
fn parse_interval(v: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = v.trim().split_once(':').ok_or_else(|| format!("expected a:b, got `{v}`"))?;
    Ok((num(a)?, num(b)?))
}

/// `0..20` (half-open) or a comma list.
fn parse_seeds(v: &str) -> std::result::Result<Vec<u64>, String> {
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (u64, u64) = (num(a)?, num(b)?);
        return Ok((a..b).collect());
    }
    list(v, num)
}

fn self_prior(v: &str, uniform: (f64, f64)) -> std::result::Result<Prior, String> {
    match v.trim() {
        "gaussian" => Ok(Prior::Gaussian),
        "uniform" => Ok(Prior::Uniform { a: uniform.0, b: uniform.1 }),
        other => Err(format!("unknown value `{other}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_overrides_layer_over_defaults() {
        let text = "[experiment]\nseeds = 0..3\n\n[train]\nepochs = 7 # short\n[sweep]\nalphas = 1, 2.5\n";
        let cfg = ExperimentConfig::resolve(
            Subcommand::ParetoMoments,
            Some((text, "x.cfg")),
            &["--train.epochs=9".into(), "sweep.supports=0:1,3:4".into()],
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.sweep.alphas, vec![1.0, 2.5]);
        assert_eq!(cfg.sweep.supports, vec![(0.0, 1.0), (3.0, 4.0)]);
        assert_eq!(cfg.train.lr_model, 3e-4);
    }

    #[test]
    fn every_problem_is_reported() {
        let text = "[experiment]\nseedz = 1\n[train]\nepochs = 0\nbatch_size = many\n[tarin]\nlr = 1\nno equals here\n";
        let err = ExperimentConfig::resolve(Subcommand::PriorEffect, Some((text, "bad.cfg")), &["arch.blocks=0".into()])
            .unwrap_err();
        let Error::Config(msg) = err else { panic!("{err:?}") };
        for needle in [
            "bad.cfg:2: experiment.seedz: unknown key",
            "bad.cfg:5: train.batch_size: cannot parse `many`",
            "bad.cfg:6: unknown section [tarin]",
            "bad.cfg:7: `lr` is outside a known section",
            "bad.cfg:8: expected `key = value`",
            "epochs must be ≥ 1",
            "arch.blocks must be ≥ 1",
        ] {
            assert!(msg.contains(needle), "missing {needle:?} in\n{msg}");
        }
    }

    #[test]
    fn name_mismatch_and_bad_overrides() {
        let err = ExperimentConfig::resolve(Subcommand::KlOracle, Some(("[experiment]\nname = selfcheck\n", "c")), &[])
            .unwrap_err();
        assert!(err.to_string().contains("not `kl-oracle`"));
        assert!(parse_override("epochs=3").is_err());
        assert!(parse_override("--foo.epochs=3").is_err());
        assert_eq!(parse_override("--train.loss=kl").unwrap().value, "kl");
    }

    #[test]
    fn subcommand_defaults_validate() {
        for sub in Subcommand::ALL {
            let cfg = ExperimentConfig::defaults(sub);
            assert!(cfg.problems().is_empty(), "{}: {:?}", sub.name(), cfg.problems());
            assert_eq!(Subcommand::parse(sub.name()), Some(sub));
        }
        let f = ExperimentConfig::defaults(Subcommand::FdivCompare);
        assert_eq!(f.seeds, (0..20).collect::<Vec<_>>());
        assert_eq!(f.arch.init, InitMode::StandardNormal);
    }
}
