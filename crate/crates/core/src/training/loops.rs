use crate::clock::Stopwatch;

use rand::seq::SliceRandom;
use rand::Rng;

use super::adam::AdamState;
use super::config::{Direction, LatentSampler, LossKind, PriorReference, TrainConfig};
use crate::autodiff::{Parameters, Tape, Tensor, Var};
use crate::divergences::{
    inn_backward_loss, inn_forward_loss, inn_unsup_loss_lz, median_heuristic, mmd2, nll_loss, prior_loss,
    reconstruction_loss, sinkhorn_cost, sinkhorn_divergence, supervised_mse, variational_gap, CriticNet,
    FDivergenceSpec, SinkhornOptions,
};
use crate::error::{Error, Result};
use crate::flows::{FlowModel, PaddingSpec};
use crate::rng::{seed_everything, SeedStreams};

/// Mean loss components over one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub components: Vec<(&'static str, f64)>,
    /// Mean critic objective over the ascent steps, for critic-based losses.
    pub critic_objective: Option<f64>,
    pub wall_time_s: f64,
}

impl EpochRecord {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

#[derive(Clone, Debug)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub model: FlowModel,
    pub critics: Vec<CriticNet>,
    pub padding: Option<PaddingSpec>,
    pub latent: LatentSampler,
}

impl TrainHistory {
    pub fn initial_total(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.total)
    }

    pub fn final_total(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.total)
    }

    /// Equal records apart from wall time.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.total.to_bits() == b.total.to_bits()
                    && a.components.len() == b.components.len()
                    && a.components
                        .iter()
                        .zip(&b.components)
                        .all(|(p, q)| p.0 == q.0 && p.1.to_bits() == q.1.to_bits())
            })
    }
}

/// One mini-batch. `x` is already padded to the model width; `y` is empty
/// for flows without an observed block.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub z: Tensor,
    /// Unpadded inputs the prior loss compares against.
    pub x_ref: Tensor,
}

/// Loss terms recorded on one tape. `gap` is the part the critics ascend.
pub struct Terms<'t> {
    pub total: Var<'t>,
    pub gap: Option<Var<'t>>,
    pub parts: Vec<(&'static str, Var<'t>)>,
    /// Constant added to the reported total (not differentiated).
    pub offset: f64,
}

/// A training objective over a model, its critics and a batch.
pub trait Objective {
    fn terms<'t>(&self, tape: &'t Tape, model: &FlowModel, critics: &[CriticNet], batch: &Batch, index: usize)
        -> Result<Terms<'t>>;
}

/// The two optimizers of a minimax run.
#[derive(Clone, Debug)]
pub struct Optimizers {
    pub model: AdamState,
    pub critic: AdamState,
}

impl Optimizers {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        let wd = cfg.weight_decay();
        Ok(Optimizers {
            model: AdamState::new(cfg.lr_model, cfg.betas, cfg.adam_eps, wd)?,
            critic: AdamState::new(cfg.lr_critic, cfg.betas, cfg.adam_eps, wd)?,
        })
    }
}

fn critic_ascent(
    model: &FlowModel,
    critics: &mut [CriticNet],
    objective: &dyn Objective,
    batch: &Batch,
    index: usize,
    adam: &mut AdamState,
) -> Result<f64> {
    let tape = Tape::new();
    tape.freeze(model.params());
    let terms = objective.terms(&tape, model, critics, batch, index)?;
    let gap = terms.gap.ok_or_else(|| Error::domain("minimax_epoch", "objective has no critic term"))?;
    let value = gap.item();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "critic objective" });
    }
    if gap.is_tracked() {
        let grads = gap.neg()?.backward()?;
        adam.step(critics.iter_mut().flat_map(|c| c.params_mut()), &grads)?;
    }
    Ok(value)
}

/// One pass over `batches`. Per batch the critics take `critic_steps`
/// ascent steps on the variational objective with the model frozen, then the
/// model takes `model_steps` descent steps with the critics frozen. Without
/// critics this is plain mini-batch descent.
pub fn minimax_epoch(
    model: &mut FlowModel,
    critics: &mut [CriticNet],
    objective: &dyn Objective,
    batches: &[Batch],
    cfg: &TrainConfig,
    opt: &mut Optimizers,
) -> Result<EpochRecord> {
    if cfg.critic_steps == 0 || cfg.model_steps == 0 {
        return Err(Error::Config("critic_steps and model_steps must be ≥ 1".into()));
    }
    if batches.is_empty() {
        return Err(Error::Empty { op: "minimax_epoch" });
    }
    let start = Stopwatch::start();
    let mut total = 0.0;
    let mut sums: Vec<(&'static str, f64)> = Vec::new();
    let mut critic_sum = 0.0;
    let mut critic_count = 0usize;
    for (index, batch) in batches.iter().enumerate() {
        if !critics.is_empty() {
            for _ in 0..cfg.critic_steps {
                critic_sum += critic_ascent(model, critics, objective, batch, index, &mut opt.critic)?;
                critic_count += 1;
            }
        }
        for step in 0..cfg.model_steps {
            let tape = Tape::new();
            for c in critics.iter() {
                tape.freeze(c.params());
            }
            let terms = objective.terms(&tape, model, critics, batch, index)?;
            let value = terms.total.item();
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "training loss" });
            }
            if step + 1 == cfg.model_steps {
                total += value + terms.offset;
                for (name, v) in &terms.parts {
                    match sums.iter_mut().find(|(n, _)| n == name) {
                        Some(slot) => slot.1 += v.item(),
                        None => sums.push((name, v.item())),
                    }
                }
            }
            if terms.total.is_tracked() {
                let grads = terms.total.backward()?;
                opt.model.step(model.params_mut(), &grads)?;
                model.project()?;
            }
        }
    }
    let nb = batches.len() as f64;
    Ok(EpochRecord {
        epoch: 0,
        total: total / nb,
        components: sums.into_iter().map(|(n, v)| (n, v / nb)).collect(),
        critic_objective: (critic_count > 0).then(|| critic_sum / critic_count as f64),
        wall_time_s: start.elapsed_s(),
    })
}

fn fdiv_spec(cfg: &TrainConfig) -> Option<FDivergenceSpec> {
    cfg.loss_spec()
}

fn sinkhorn_options() -> SinkhornOptions {
    SinkhornOptions::default()
}

/// Sample discrepancy between `p` and `q` for the non-critic losses.
fn discrepancy<'t>(tape: &'t Tape, cfg: &TrainConfig, p: Var<'t>, q: Var<'t>) -> Result<Var<'t>> {
    match cfg.loss {
        LossKind::Mmd => {
            let gamma = median_heuristic(&p.value(), &q.value())?;
            mmd2(p, q, gamma, cfg.mmd)
        }
        LossKind::Sinkhorn => sinkhorn_divergence(tape, p, q, cfg.epsilon, sinkhorn_options()),
        LossKind::SinkhornApprox => sinkhorn_cost(tape, p, q, cfg.epsilon, sinkhorn_options()),
        LossKind::Nll | LossKind::FDiv(_) => Err(Error::domain("discrepancy", "not a sample discrepancy")),
    }
}

/// Unsupervised flow objective: data `X` against `T⁻¹(Z)`.
pub struct NfObjective {
    pub cfg: TrainConfig,
}

impl Objective for NfObjective {
    fn terms<'t>(&self, tape: &'t Tape, model: &FlowModel, critics: &[CriticNet], batch: &Batch, _: usize)
        -> Result<Terms<'t>> {
        let x = tape.constant(batch.x.clone());
        let cfg = &self.cfg;
        if cfg.loss == LossKind::Nll {
            let nll = nll_loss(tape, model, x, None, cfg.sigma)?;
            let offset = 0.5 * model.dim() as f64 * (2.0 * std::f64::consts::PI).ln();
            return Ok(Terms {
                total: nll,
                gap: None,
                parts: vec![("nll", nll)],
                offset,
            });
        }
        let gen = model.inverse_joint(tape, tape.constant(batch.z.clone()))?;
        let (total, gap, name) = match fdiv_spec(cfg) {
            Some(spec) => {
                let critic = critics.first().ok_or_else(|| Error::domain("train_nf", "missing critic"))?;
                let g = variational_gap(tape, spec, critic, x, gen)?;
                (g, Some(g), "usl")
            }
            None => (discrepancy(tape, cfg, x, gen)?, None, cfg.loss.name()),
        };
        Ok(Terms {
            total,
            gap,
            parts: vec![(name, total)],
            offset: 0.0,
        })
    }
}

/// Supervised INN objective with its unsupervised, prior and padding terms.
pub struct InnObjective {
    pub cfg: TrainConfig,
    /// Unpadded input width.
    pub original: usize,
}

impl InnObjective {
    fn usl<'t>(
        &self,
        tape: &'t Tape,
        model: &FlowModel,
        critics: &[CriticNet],
        batch: &Batch,
        dir: Direction,
    ) -> Result<Var<'t>> {
        let cfg = &self.cfg;
        let (x, y, z) = (
            tape.constant(batch.x.clone()),
            tape.constant(batch.y.clone()),
            tape.constant(batch.z.clone()),
        );
        let joint = |a: Var<'t>, b: Var<'t>| match (a.shape()[1], b.shape()[1]) {
            (0, _) => Ok(b),
            (_, 0) => Ok(a),
            _ => Var::concat_cols(&[a, b]),
        };
        if let Some(spec) = fdiv_spec(cfg) {
            let critic = |k: usize| critics.get(k).ok_or_else(|| Error::domain("train_inn", "missing critic"));
            return match dir {
                Direction::Forward => inn_forward_loss(tape, model, critic(0)?, spec, x, y, z),
                Direction::Backward => inn_backward_loss(tape, model, critic(0)?, spec, x, y, z),
                Direction::Latent => inn_unsup_loss_lz(tape, model, critic(0)?, spec, x, y, z, cfg.pairing),
                Direction::Bidirectional | Direction::Alternate => unreachable!("resolved by caller"),
            };
        }
        match dir {
            Direction::Forward => {
                let out = model.forward(tape, x)?.out;
                discrepancy(tape, cfg, joint(y, z)?, out)
            }
            Direction::Backward => {
                let gen = model.inverse(tape, y, z)?;
                discrepancy(tape, cfg, gen, x)
            }
            Direction::Latent => {
                let out = model.forward(tape, x)?;
                let first = match cfg.pairing {
                    crate::divergences::Pairing::Observed => y,
                    crate::divergences::Pairing::Predicted => out.y,
                };
                discrepancy(tape, cfg, joint(y, z)?, joint(first, out.z)?)
            }
            Direction::Bidirectional | Direction::Alternate => unreachable!("resolved by caller"),
        }
    }

    /// Critic slot and direction of each unsupervised term for this batch.
    fn directions(&self, index: usize) -> Vec<(usize, Direction)> {
        match self.cfg.direction {
            Direction::Bidirectional => vec![(0, Direction::Forward), (1, Direction::Backward)],
            Direction::Alternate if index % 2 == 0 => vec![(0, Direction::Forward)],
            Direction::Alternate => vec![(1, Direction::Backward)],
            d => vec![(0, d)],
        }
    }

    pub fn critic_count(&self) -> usize {
        match (self.cfg.loss.uses_critic(), self.cfg.direction) {
            (false, _) => 0,
            (true, Direction::Bidirectional | Direction::Alternate) => 2,
            (true, _) => 1,
        }
    }
}

impl Objective for InnObjective {
    fn terms<'t>(&self, tape: &'t Tape, model: &FlowModel, critics: &[CriticNet], batch: &Batch, index: usize)
        -> Result<Terms<'t>> {
        let cfg = &self.cfg;
        let x = tape.constant(batch.x.clone());
        let y = tape.constant(batch.y.clone());
        let mut parts = Vec::new();
        let mut gap: Option<Var<'t>> = None;
        let mut total = if cfg.loss == LossKind::Nll {
            let nll = nll_loss(tape, model, x, Some(y), cfg.sigma)?;
            parts.push(("nll", nll));
            nll
        } else {
            let mse = supervised_mse(tape, model, x, y)?;
            parts.push(("mse", mse));
            let mut usl: Option<Var<'t>> = None;
            for (slot, dir) in self.directions(index) {
                let pick = if critics.len() > slot { &critics[slot..=slot] } else { critics };
                let term = self.usl(tape, model, pick, batch, dir)?;
                usl = Some(match usl {
                    None => term,
                    Some(acc) => acc.add(term)?,
                });
            }
            let usl = usl.expect("at least one direction");
            parts.push(("usl", usl));
            if cfg.loss.uses_critic() {
                gap = Some(usl);
            }
            mse.add(usl.scale(cfg.lambda)?)?
        };
        let padded = model.dim() > self.original;
        if cfg.lambda_prior > 0.0 || padded {
            let z = tape.constant(batch.z.clone());
            let x_rec = model.inverse(tape, y, z)?;
            if cfg.lambda_prior > 0.0 {
                let x_ref = tape.constant(batch.x_ref.clone());
                let prior = prior_loss(cfg.prior, x_rec.slice_cols(0, self.original)?, Some(x_ref))?;
                parts.push(("prior", prior));
                total = total.add(prior.scale(cfg.lambda_prior)?)?;
            }
            if padded {
                let rec = reconstruction_loss(x_rec.slice_cols(self.original, model.dim())?)?;
                parts.push(("reconstruction", rec));
                total = total.add(rec)?;
            }
        }
        Ok(Terms {
            total,
            gap,
            parts,
            offset: 0.0,
        })
    }
}

/// Row order for one epoch: full batches of a fresh permutation, or one
/// batch of everything when the data is smaller than a batch.
fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if n <= batch_size {
        return vec![idx];
    }
    idx.chunks_exact(batch_size).map(|c| c.to_vec()).collect()
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } | Error::NonConvergence { .. } => Error::Diverged {
            epoch,
            source: Box::new(e),
        },
        other => other,
    }
}

struct Run<'a> {
    streams: SeedStreams,
    cfg: &'a TrainConfig,
    latent: LatentSampler,
}

impl Run<'_> {
    fn new_critics(&self, count: usize, width: usize) -> Vec<CriticNet> {
        let mut rng = self.streams.stream("critic_init");
        (0..count)
            .map(|_| CriticNet::with_width(width, self.cfg.critic_width, &mut rng))
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn train(
        &self,
        mut model: FlowModel,
        objective: &dyn Objective,
        critic_count: usize,
        x: &Tensor,
        y: &Tensor,
        padding: Option<PaddingSpec>,
    ) -> Result<TrainHistory> {
        let cfg = self.cfg;
        let mut critics = self.new_critics(critic_count, model.dim());
        let mut opt = Optimizers::from_config(cfg)?;
        let mut shuffle = self.streams.stream("shuffle");
        let mut latent_rng = self.streams.stream("latent");
        let mut pad_rng = self.streams.stream("pad_noise");
        let mut prior_rng = self.streams.stream("prior_reference");
        let n = x.rows();
        let mut records = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut batches = Vec::new();
            for rows in epoch_batches(n, cfg.batch_size, &mut shuffle) {
                let xb = x.select_rows(&rows);
                let x_ref = match cfg.prior_reference {
                    PriorReference::Paired => xb.clone(),
                    PriorReference::Independent => {
                        let mut other = rows.clone();
                        other.shuffle(&mut prior_rng);
                        x.select_rows(&other)
                    }
                };
                let xb = match padding {
                    Some(p) => p.pad_noisy(&xb, &mut pad_rng)?,
                    None => xb,
                };
                batches.push(Batch {
                    x: xb,
                    y: y.select_rows(&rows),
                    z: self.latent.sample(rows.len(), &mut latent_rng)?,
                    x_ref,
                });
            }
            if epoch == 0 && !critics.is_empty() {
                for _ in 0..cfg.critic_warmup {
                    critic_ascent(&model, &mut critics, objective, &batches[0], 0, &mut opt.critic)
                        .map_err(diverged(epoch))?;
                }
            }
            let mut rec = minimax_epoch(&mut model, &mut critics, objective, &batches, cfg, &mut opt)
                .map_err(diverged(epoch))?;
            rec.epoch = epoch;
            records.push(rec);
        }
        Ok(TrainHistory {
            records,
            model,
            critics,
            padding,
            latent: self.latent,
        })
    }
}

fn resolve_latent(cfg: &TrainConfig, d_z: usize) -> Result<LatentSampler> {
    let latent = cfg.latent.unwrap_or(LatentSampler::Normal { dim: d_z });
    if latent.dim() != d_z {
        return Err(Error::Config(format!(
            "latent sampler has width {} but the model's latent block has width {d_z}",
            latent.dim()
        )));
    }
    Ok(latent)
}

/// Fit a flow without observed block (`d_y = 0`) to `data` with the loss in
/// `cfg`: likelihood, or a sample discrepancy between data and `T⁻¹(Z)`.
pub fn train_nf(model: FlowModel, data: &Tensor, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let (n, d) = data.dims2()?;
    if model.d_y != 0 || model.dim() != d {
        return Err(Error::shape("train_nf", &[n, d], &[model.d_y, model.d_z]));
    }
    if n == 0 {
        return Err(Error::Empty { op: "train_nf" });
    }
    let run = Run {
        streams: seed_everything(cfg.seed),
        cfg,
        latent: resolve_latent(cfg, model.d_z)?,
    };
    let objective = NfObjective { cfg: cfg.clone() };
    let critics = usize::from(cfg.loss.uses_critic());
    run.train(model, &objective, critics, data, &Tensor::zeros([n, 0]), None)
}

/// Fit an INN to paired `(X, Y)`. `X` is padded to the model width per the
/// config when it is narrower.
pub fn train_inn(model: FlowModel, x: &Tensor, y: &Tensor, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let (n, d_x) = x.dims2()?;
    let (ny, d_y) = y.dims2()?;
    if ny != n || d_y != model.d_y || d_x > model.dim() {
        return Err(Error::shape("train_inn", &[n, d_x, ny, d_y], &[model.d_y, model.d_z]));
    }
    if n == 0 {
        return Err(Error::Empty { op: "train_inn" });
    }
    let padding = if d_x < model.dim() {
        Some(PaddingSpec::new(d_x, model.dim(), cfg.pad_mode)?.with_noise(cfg.pad_noise))
    } else {
        None
    };
    let run = Run {
        streams: seed_everything(cfg.seed),
        cfg,
        latent: resolve_latent(cfg, model.d_z)?,
    };
    let objective = InnObjective {
        cfg: cfg.clone(),
        original: d_x,
    };
    run.train(model, &objective, objective.critic_count(), x, y, padding)
}

/// `T⁻¹(y*, Z_i)` for `n` fresh latent draws, unpadded when the model was
/// trained on padded inputs.
pub fn sample_posterior<R: Rng + ?Sized>(
    model: &FlowModel,
    y_star: &[f64],
    n: usize,
    latent: &LatentSampler,
    padding: Option<&PaddingSpec>,
    rng: &mut R,
) -> Result<Tensor> {
    if y_star.len() != model.d_y {
        return Err(Error::shape("sample_posterior", &[y_star.len()], &[model.d_y]));
    }
    if latent.dim() != model.d_z {
        return Err(Error::shape("sample_posterior", &[latent.dim()], &[model.d_z]));
    }
    let z = latent.sample(n, rng)?;
    let y = Tensor::new([n, model.d_y], y_star.iter().copied().cycle().take(n * model.d_y).collect())?;
    let x = model.inverse_values(&y, &z)?;
    match padding {
        Some(p) => p.unpad(&x),
        None => Ok(x),
    }
}
