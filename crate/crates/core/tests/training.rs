use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use varinn::autodiff::{Parameters, Tensor};
use varinn::divergences::{supervised_mse, FDivergence, Prior};
use varinn::flows::{ArchSpec, FlowModel};
use varinn::metrics::kl_gaussian;
use varinn::training::*;
use varinn::Error;

fn rng(seed: u64) -> varinn::rng::Rng {
    varinn::rng::Rng::seed_from_u64(seed)
}

fn gaussian(n: usize, mean: &[f64], std: &[f64], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let d = mean.len();
    let data = (0..n * d)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut r);
            mean[k % d] + std[k % d] * z
        })
        .collect();
    Tensor::new([n, d], data).unwrap()
}

fn small_arch() -> ArchSpec {
    ArchSpec {
        blocks: 2,
        hidden: 32,
        ..ArchSpec::default()
    }
}

fn nf_model(d: usize) -> FlowModel {
    FlowModel::build(&small_arch(), 0, d, &mut rng(1)).unwrap()
}

fn params_of(m: &impl Parameters) -> Vec<Tensor> {
    m.params().into_iter().map(|p| p.value.clone()).collect()
}

#[test]
fn nll_epoch_zero_is_the_base_entropy() {
    let data = gaussian(4096, &[0.0, 0.0], &[1.0, 1.0], 2);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 256,
        ..TrainConfig::default()
    };
    let h = train_nf(nf_model(2), &data, &cfg).unwrap();
    let entropy = 1.0 + (2.0 * std::f64::consts::PI).ln();
    assert!((h.initial_total() - entropy).abs() < 0.05, "{}", h.initial_total());
}

#[test]
fn mmd_is_small_when_matched_at_init() {
    let data = gaussian(2048, &[0.0, 0.0], &[1.0, 1.0], 3);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 256,
        loss: LossKind::Mmd,
        ..TrainConfig::default()
    };
    let h = train_nf(nf_model(2), &data, &cfg).unwrap();
    assert!(h.initial_total() < 0.05, "{}", h.initial_total());
}

#[test]
fn every_loss_kind_decreases_on_a_gaussian_task() {
    let data = gaussian(8192, &[1.0, -1.0], &[2.0, 0.5], 4);
    for loss in [
        LossKind::Nll,
        LossKind::Mmd,
        LossKind::Sinkhorn,
        LossKind::FDiv(FDivergence::KL),
    ] {
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 256,
            lr_model: 1e-3,
            lr_critic: 2e-3,
            critic_steps: 5,
            critic_warmup: 100,
            epsilon: 0.5,
            loss,
            ..TrainConfig::default()
        };
        let h = train_nf(nf_model(2), &data, &cfg).unwrap();
        assert_eq!(h.records.len(), 10);
        assert!(
            h.final_total() < h.initial_total(),
            "{}: {} !< {}",
            loss.name(),
            h.final_total(),
            h.initial_total()
        );
    }
}

#[test]
fn training_is_deterministic() {
    let data = gaussian(1024, &[0.5, 0.0], &[1.0, 2.0], 5);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 128,
        lr_model: 1e-3,
        loss: LossKind::FDiv(FDivergence::JS),
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train_nf(nf_model(2), &data, &cfg).unwrap();
    let b = train_nf(nf_model(2), &data, &cfg).unwrap();
    assert!(a.same_trajectory(&b));
    let c = train_nf(nf_model(2), &data, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert!(!a.same_trajectory(&c));
}

#[test]
fn non_finite_data_reports_the_epoch() {
    let mut data = gaussian(64, &[0.0, 0.0], &[1.0, 1.0], 6);
    data.data_mut()[5] = f64::INFINITY;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 64,
        ..TrainConfig::default()
    };
    match train_nf(nf_model(2), &data, &cfg) {
        Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn linear_toy(n: usize, seed: u64) -> (Tensor, Tensor) {
    let x = gaussian(n, &[0.0, 0.0], &[1.0, 1.0], seed);
    let y = Tensor::new([n, 1], x.column(0)).unwrap();
    (x, y)
}

#[test]
fn supervised_fit_on_a_realizable_toy() {
    let (x, y) = linear_toy(2560, 7);
    let model = FlowModel::build(&small_arch(), 1, 1, &mut rng(2)).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 128,
        lr_model: 1e-3,
        loss: LossKind::Mmd,
        lambda: 0.0,
        ..TrainConfig::default()
    };
    let h = train_inn(model, &x, &y, &cfg).unwrap();
    let tape = varinn::autodiff::Tape::no_grad();
    let mse = supervised_mse(&tape, &h.model, tape.constant(x), tape.constant(y)).unwrap().item();
    assert!(mse < 1e-3, "{mse}");
}

#[test]
fn dominant_misspecified_prior_hurts_the_fit() {
    let n = 2048;
    let x = gaussian(n, &[0.0, 0.0], &[1.0, 1.0], 8);
    let y = Tensor::new([n, 1], (0..n).map(|i| x.at(i, 0) + 0.5 * x.at(i, 1)).collect()).unwrap();
    let fit = |lambda_prior: f64| {
        let model = FlowModel::build(&small_arch(), 1, 1, &mut rng(3)).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 256,
            lr_model: 3e-3,
            lambda_prior,
            prior: Prior::Uniform { a: 0.0, b: 1.0 },
            ..TrainConfig::default()
        };
        let h = train_inn(model, &x, &y, &cfg).unwrap();
        let tape = varinn::autodiff::Tape::no_grad();
        supervised_mse(&tape, &h.model, tape.constant(x.clone()), tape.constant(y.clone()))
            .unwrap()
            .item()
    };
    let (free, dominated) = (fit(0.0), fit(100.0));
    assert!(dominated > free, "{dominated} !> {free}");
}

#[test]
fn padded_dimensions_stay_inactive() {
    let (x, y) = linear_toy(2048, 9);
    let model = FlowModel::build(&small_arch(), 1, 3, &mut rng(4)).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 256,
        lr_model: 3e-3,
        ..TrainConfig::default()
    };
    let h = train_inn(model, &x, &y, &cfg).unwrap();
    assert_eq!(h.padding.unwrap().padded, 4);
    let rec = h.records.last().unwrap().component("reconstruction").unwrap();
    assert!(rec < 0.01, "{rec}");
}

fn gaussian_pair_setup() -> (FlowModel, Vec<Batch>, TrainConfig) {
    let model = nf_model(2);
    let data = gaussian(4096, &[1.0, 0.0], &[1.0, 1.0], 10);
    let z = gaussian(4096, &[0.0, 0.0], &[1.0, 1.0], 11);
    let batches = (0..8)
        .map(|b| {
            let rows: Vec<usize> = (b * 512..(b + 1) * 512).collect();
            Batch {
                x: data.select_rows(&rows),
                y: Tensor::zeros([512, 0]),
                z: z.select_rows(&rows),
                x_ref: data.select_rows(&rows),
            }
        })
        .collect();
    let cfg = TrainConfig {
        lr_model: 0.0,
        lr_critic: 5e-3,
        loss: LossKind::FDiv(FDivergence::KL),
        critic_steps: 5,
        ..TrainConfig::default()
    };
    (model, batches, cfg)
}

#[test]
fn frozen_model_critic_ascends_toward_the_oracle() {
    let (mut model, batches, cfg) = gaussian_pair_setup();
    let objective = NfObjective { cfg: cfg.clone() };
    let mut critics = vec![varinn::divergences::CriticNet::new(2, &mut rng(5))];
    let mut opt = Optimizers::from_config(&cfg).unwrap();
    let before = params_of(&model);
    let mut history = Vec::new();
    for _ in 0..6 {
        let rec = minimax_epoch(&mut model, &mut critics, &objective, &batches, &cfg, &mut opt).unwrap();
        history.push(rec.critic_objective.unwrap());
    }
    assert_eq!(params_of(&model), before, "model moved with lr 0");
    for w in history.windows(2) {
        assert!(w[1] > w[0] - 0.02, "{history:?}");
    }
    let oracle = kl_gaussian(1.0, 1.0, 0.0, 1.0).unwrap();
    let gap = gap_value(
        cfg.loss_spec().unwrap(),
        &critics[0],
        &batches[0].x,
        &batches[0].z,
    )
    .unwrap();
    assert!((0.0..=oracle + 0.1).contains(&gap), "{gap} vs {oracle}");
}

#[test]
fn model_steps_leave_critics_alone_and_vice_versa() {
    let (mut model, batches, cfg) = gaussian_pair_setup();
    let objective = NfObjective { cfg: cfg.clone() };
    let mut critics = vec![varinn::divergences::CriticNet::new(2, &mut rng(6))];

    let frozen_critic = TrainConfig {
        lr_model: 1e-2,
        lr_critic: 0.0,
        critic_steps: 1,
        model_steps: 1,
        ..cfg.clone()
    };
    let mut opt = Optimizers::from_config(&frozen_critic).unwrap();
    let (m0, c0) = (params_of(&model), params_of(&critics[0]));
    minimax_epoch(&mut model, &mut critics, &objective, &batches, &frozen_critic, &mut opt).unwrap();
    assert_eq!(params_of(&critics[0]), c0);
    assert_ne!(params_of(&model), m0);

    let frozen_model = TrainConfig {
        weight_decay: Some(1e-2),
        ..cfg
    };
    let mut opt = Optimizers::from_config(&frozen_model).unwrap();
    let m1 = params_of(&model);
    minimax_epoch(&mut model, &mut critics, &objective, &batches, &frozen_model, &mut opt).unwrap();
    assert_eq!(params_of(&model), m1);
    assert_ne!(params_of(&critics[0]), c0);
}

#[test]
fn posterior_samples_of_the_identity_model() {
    let model = FlowModel::build(&small_arch(), 1, 1, &mut rng(7)).unwrap();
    let latent = LatentSampler::Normal { dim: 1 };
    let s = sample_posterior(&model, &[1.0], 50, &latent, None, &mut rng(8)).unwrap();
    let z = latent.sample(50, &mut rng(8)).unwrap();
    for i in 0..50 {
        assert!((s.at(i, 0) - 1.0).abs() < 1e-12);
        assert!((s.at(i, 1) - z.at(i, 0)).abs() < 1e-12);
    }

    let (x, y) = linear_toy(256, 12);
    let wide = FlowModel::build(&small_arch(), 1, 5, &mut rng(9)).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 128,
        ..TrainConfig::default()
    };
    let h = train_inn(wide, &x, &y, &cfg).unwrap();
    let s = sample_posterior(&h.model, &[0.3], 40, &h.latent, h.padding.as_ref(), &mut rng(10)).unwrap();
    assert_eq!(s.shape(), &[40, 2]);
}

#[test]
fn bidirectional_modes_train() {
    let (x, y) = linear_toy(512, 13);
    for direction in [Direction::Bidirectional, Direction::Alternate, Direction::Latent, Direction::Forward] {
        let model = FlowModel::build(&small_arch(), 1, 1, &mut rng(11)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 128,
            lr_model: 1e-3,
            loss: LossKind::FDiv(FDivergence::ReverseKL),
            direction,
            ..TrainConfig::default()
        };
        let h = train_inn(model, &x, &y, &cfg).unwrap();
        let expected = if matches!(direction, Direction::Bidirectional | Direction::Alternate) { 2 } else { 1 };
        assert_eq!(h.critics.len(), expected);
        assert!(h.final_total().is_finite());
    }
}
