//! One sweep cell: build, train, evaluate, and turn the outcome into rows.

use crate::clock::Stopwatch;

use super::checks;
use super::config::ExperimentConfig;
use super::rows::{ResultRow, Status};
use crate::autodiff::Tensor;
use crate::benchmarks::{IkConfig, ParetoConfig, Standardizer};
use crate::divergences::{mmd2_values, FDivergence, FDivergenceSpec, MmdEstimator};
use crate::error::{Error, Result};
use crate::flows::{checkpoint, ArchSpec, FlowModel, PaddingSpec};
use crate::metrics::{kl_gaussian, w1_1d};
use crate::rkhs::{dv_kl_estimate, CriticBall, DvOptions};
use crate::rng::seed_everything;
use crate::training::{mlp_divergence_estimate, train_inn, train_nf, CriticFit, LatentSampler, TrainConfig, TrainHistory};

/// Conditioning target at which every IK cell also reports its error.
pub const IK_REFERENCE_TARGET: [f64; 2] = [0.0, 1.5];

/// Kernel scale of the MMD reported by support-mismatch cells.
pub const SUPPORT_MMD_GAMMA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum OracleCritic {
    Mlp,
    Rkhs { b: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    /// INN on the robot arm; reports resimulation errors.
    Ik,
    /// NF from a `U(a, b)` latent to `U(0, 1)` data; reports MMD.
    Support { a: f64, b: f64 },
    /// NF on standardized Pareto data; reports raw-scale W1.
    Pareto { alpha: f64 },
    /// KL estimate between N(0, 1) and N(1, 1) from `n` samples each.
    KlOracle { n: usize, critic: OracleCritic },
    Selfcheck,
    /// Mean and standard deviation of the listed cells' final metrics.
    Aggregate { members: Vec<usize>, metrics: Vec<&'static str> },
}

/// A fully resolved unit of work with its own seed streams and model.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub run_id: String,
    pub architecture: String,
    pub loss: String,
    pub direction: String,
    pub seed: Option<u64>,
    pub arch: ArchSpec,
    pub d_z: usize,
    pub train: TrainConfig,
    pub task: Task,
}

/// Rows of a finished cell, plus a note when it failed.
pub struct CellOutcome {
    pub rows: Vec<ResultRow>,
    pub note: Option<String>,
}

impl Cell {
    fn row(&self, cfg: &ExperimentConfig, epoch: Option<usize>, metric: &str, value: f64, wall: f64) -> ResultRow {
        ResultRow {
            run_id: self.run_id.clone(),
            experiment: cfg.experiment.name().to_string(),
            architecture: self.architecture.clone(),
            loss: self.loss.clone(),
            direction: self.direction.clone(),
            seed: self.seed,
            epoch,
            metric_name: metric.to_string(),
            metric_value: value,
            wall_time_s: wall,
            status: Status::Ok,
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Run the cell. Training failures become failed rows, not errors.
    pub fn run(&self, cfg: &ExperimentConfig) -> CellOutcome {
        let start = Stopwatch::start();
        let result = match &self.task {
            Task::Ik => self.ik(cfg, start),
            Task::Support { a, b } => self.support(cfg, *a, *b, start),
            Task::Pareto { alpha } => self.pareto(cfg, *alpha, start),
            Task::KlOracle { n, critic } => self.kl_oracle(cfg, *n, critic, start),
            Task::Selfcheck => self.selfcheck(cfg, start),
            Task::Aggregate { .. } => Err(Error::Config("aggregate cells are computed from their members".into())),
        };
        match result {
            Ok(rows) => CellOutcome { rows, note: None },
            Err(e) => CellOutcome {
                rows: vec![self.row(cfg, None, self.primary_metric(), f64::NAN, start.elapsed_s())],
                note: Some(format!("{}: {e}", self.run_id)),
            },
        }
    }

    /// Save a trained model as `<dir>/<run id>.flow`, with characters
    /// outside `[A-Za-z0-9._=-]` replaced by `_`.
    fn checkpoint(&self, cfg: &ExperimentConfig, model: &FlowModel) -> Result<()> {
        let Some(dir) = cfg.checkpoint_dir() else {
            return Ok(());
        };
        std::fs::create_dir_all(&dir)?;
        let name: String = self
            .run_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._=-".contains(c) { c } else { '_' })
            .collect();
        checkpoint::save(model, dir.join(format!("{name}.flow")))
    }

    fn primary_metric(&self) -> &'static str {
        match self.task {
            Task::Ik => "resim_error",
            Task::Support { .. } => "mmd",
            Task::Pareto { .. } => "w1",
            Task::KlOracle { .. } => "kl_estimate",
            Task::Selfcheck => "selfcheck",
            Task::Aggregate { .. } => "aggregate",
        }
    }

    fn history_rows(&self, cfg: &ExperimentConfig, h: &TrainHistory) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        let mut elapsed = 0.0;
        for r in &h.records {
            elapsed += r.wall_time_s;
            rows.push(self.row(cfg, Some(r.epoch), "loss", r.total, elapsed));
            for (name, v) in &r.components {
                rows.push(self.row(cfg, Some(r.epoch), name, *v, elapsed));
            }
            if let Some(c) = r.critic_objective {
                rows.push(self.row(cfg, Some(r.epoch), "critic_objective", c, elapsed));
            }
        }
        rows
    }

    fn ik(&self, cfg: &ExperimentConfig, start: Stopwatch) -> Result<Vec<ResultRow>> {
        let seed = self.seed();
        let (x_all, y_all) = cfg.ik.generate(cfg.samples + cfg.targets, seed)?;
        let train_rows: Vec<usize> = (0..cfg.samples).collect();
        let x = x_all.select_rows(&train_rows);
        let y = y_all.select_rows(&train_rows);
        let held: Vec<[f64; 2]> = (cfg.samples..cfg.samples + cfg.targets)
            .map(|i| [y_all.at(i, 0), y_all.at(i, 1)])
            .collect();
        let streams = seed_everything(seed);
        let model = FlowModel::build(&self.arch, 2, self.d_z, &mut streams.stream("model_init"))?;
        let latent = LatentSampler::Normal { dim: self.d_z };
        let padding = if model.dim() > 4 {
            Some(PaddingSpec::new(4, model.dim(), self.train.pad_mode)?.with_noise(self.train.pad_noise))
        } else {
            None
        };
        let untrained = ik_eval(&cfg.ik, &model, &held, cfg.eval_samples, &latent, padding.as_ref(), seed)?;
        let h = train_inn(model, &x, &y, &self.train)?;
        self.checkpoint(cfg, &h.model)?;
        let mut rows = self.history_rows(cfg, &h);
        let trained = ik_eval(&cfg.ik, &h.model, &held, cfg.eval_samples, &latent, h.padding.as_ref(), seed)?;
        let reference = ik_eval(
            &cfg.ik,
            &h.model,
            &[IK_REFERENCE_TARGET],
            cfg.eval_samples,
            &latent,
            h.padding.as_ref(),
            seed,
        )?;
        let wall = start.elapsed_s();
        rows.push(self.row(cfg, None, "resim_error", trained, wall));
        rows.push(self.row(cfg, None, "resim_error_ref", reference, wall));
        rows.push(self.row(cfg, None, "resim_error_untrained", untrained, wall));
        rows.push(self.row(cfg, None, "wall_time", wall, wall));
        Ok(rows)
    }

    fn support(&self, cfg: &ExperimentConfig, a: f64, b: f64, start: Stopwatch) -> Result<Vec<ResultRow>> {
        let seed = self.seed();
        let d = cfg.data_dim;
        let streams = seed_everything(seed);
        let data = LatentSampler::Uniform { a: 0.0, b: 1.0, dim: d }.sample(cfg.samples, &mut streams.stream("data"))?;
        let model = FlowModel::build(&self.arch, 0, d, &mut streams.stream("model_init"))?;
        let latent = LatentSampler::Uniform { a, b, dim: d };
        let train = TrainConfig {
            latent: Some(latent),
            ..self.train.clone()
        };
        let h = train_nf(model, &data, &train)?;
        self.checkpoint(cfg, &h.model)?;
        let mut rows = self.history_rows(cfg, &h);
        let generated = h
            .model
            .inverse_joint_values(&latent.sample(cfg.eval_samples, &mut streams.stream("eval"))?)?;
        let truth = LatentSampler::Uniform { a: 0.0, b: 1.0, dim: d }.sample(cfg.eval_samples, &mut streams.stream("truth"))?;
        let mmd = mmd2_values(&generated, &truth, SUPPORT_MMD_GAMMA, MmdEstimator::Biased)?.max(0.0).sqrt();
        let wall = start.elapsed_s();
        rows.push(self.row(cfg, None, "mmd", mmd, wall));
        Ok(rows)
    }

    fn pareto(&self, cfg: &ExperimentConfig, alpha: f64, start: Stopwatch) -> Result<Vec<ResultRow>> {
        let seed = self.seed();
        let source = ParetoConfig {
            alpha,
            x_m: cfg.pareto_scale,
            dim: cfg.data_dim,
        };
        let raw = source.sample(cfg.samples, seed)?;
        let scaler = Standardizer::pareto(&raw, cfg.pareto_scale)?;
        let streams = seed_everything(seed);
        let model = FlowModel::build(&self.arch, 0, cfg.data_dim, &mut streams.stream("model_init"))?;
        let h = train_nf(model, &scaler.apply(&raw)?, &self.train)?;
        self.checkpoint(cfg, &h.model)?;
        let mut rows = self.history_rows(cfg, &h);
        let z = h.latent.sample(cfg.eval_samples, &mut streams.stream("eval"))?;
        let generated = scaler.invert(&h.model.inverse_joint_values(&z)?)?;
        let truth = source.sample(cfg.eval_samples, seed.wrapping_add(1 << 32))?;
        let w1 = mean_coordinate_w1(&generated, &truth)?;
        let wall = start.elapsed_s();
        rows.push(self.row(cfg, None, "w1", w1, wall));
        Ok(rows)
    }

    fn kl_oracle(&self, cfg: &ExperimentConfig, n: usize, critic: &OracleCritic, start: Stopwatch) -> Result<Vec<ResultRow>> {
        let streams = seed_everything(self.seed());
        let draw = |name: &str, shift: f64| Tensor::randn([n, 1], 1.0, &mut streams.stream(name)).map(|v| v + shift);
        let (p, q) = (draw("p", 0.0), draw("q", 1.0));
        let estimate = match critic {
            OracleCritic::Mlp => {
                let (p_ev, q_ev) = (draw("p_eval", 0.0), draw("q_eval", 1.0));
                mlp_divergence_estimate(
                    FDivergenceSpec::from(FDivergence::KL),
                    (&p, &q),
                    (&p_ev, &q_ev),
                    CriticFit::default(),
                    &mut streams.stream("critic"),
                )?
                .0
            }
            OracleCritic::Rkhs { b } => {
                let ball = CriticBall {
                    gamma: cfg.rkhs_gamma,
                    b: *b,
                    k_half: cfg.rkhs_k,
                };
                dv_kl_estimate(&p, None, &q, None, ball, DvOptions::default())?.0
            }
        };
        let wall = start.elapsed_s();
        Ok(vec![
            self.row(cfg, None, "kl_estimate", estimate, wall),
            self.row(cfg, None, "kl_true", kl_gaussian(0.0, 1.0, 1.0, 1.0)?, wall),
        ])
    }

    fn selfcheck(&self, cfg: &ExperimentConfig, start: Stopwatch) -> Result<Vec<ResultRow>> {
        let mut rows = Vec::new();
        for c in checks::run_all(self.seed())? {
            let mut row = self.row(cfg, None, c.name, c.value, start.elapsed_s());
            if !c.passed {
                row.status = Status::Failed;
            }
            rows.push(row);
        }
        Ok(rows)
    }

    /// Summary rows over the members' final rows.
    pub fn aggregate(&self, cfg: &ExperimentConfig, members: &[&[ResultRow]], metrics: &[&str]) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for &metric in metrics {
            let values: Vec<f64> = members
                .iter()
                .flat_map(|rs| rs.iter())
                .filter(|r| r.epoch.is_none() && r.metric_name == metric)
                .map(|r| r.metric_value)
                .collect();
            let (mean, std) = mean_std(&values);
            let failed = values.len() < members.len() || values.iter().any(|v| !v.is_finite());
            for (suffix, v) in [("mean", mean), ("std", std)] {
                let mut row = self.row(cfg, None, &format!("{metric}_{suffix}"), v, 0.0);
                if failed {
                    row.status = Status::Failed;
                }
                rows.push(row);
            }
        }
        rows
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-coordinate 1-D W1, averaged over coordinates.
pub fn mean_coordinate_w1(x: &Tensor, y: &Tensor) -> Result<f64> {
    let d = x.cols();
    if d == 0 || y.cols() != d {
        return Err(Error::shape("mean_coordinate_w1", x.shape(), y.shape()));
    }
    let mut total = 0.0;
    for j in 0..d {
        total += w1_1d(&x.column(j), &y.column(j))?;
    }
    Ok(total / d as f64)
}

/// Mean resimulation error over `targets`, each from `n` posterior samples.
/// The posterior draws depend only on the seed and the target's index.
pub fn ik_eval(
    arm: &IkConfig,
    model: &FlowModel,
    targets: &[[f64; 2]],
    n: usize,
    latent: &LatentSampler,
    padding: Option<&PaddingSpec>,
    seed: u64,
) -> Result<f64> {
    let streams = seed_everything(seed);
    let mut total = 0.0;
    for (i, &y_star) in targets.iter().enumerate() {
        total += arm.resim_error(model, y_star, n, latent, padding, &mut streams.stream_indexed("posterior", i as u64))?;
    }
    Ok(total / targets.len() as f64)
}
