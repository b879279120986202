//! Optimizers and training loops: plain descent for likelihood and sample
//! discrepancies, critic/model alternation for variational objectives.

mod adam;
mod config;
mod estimate;
mod loops;

pub use adam::AdamState;
pub use config::{Direction, LatentSampler, LossKind, PriorReference, TrainConfig};
pub use estimate::{fit_critic, gap_value, mlp_divergence_estimate, CriticFit};
pub use loops::{
    minimax_epoch, sample_posterior, train_inn, train_nf, Batch, EpochRecord, InnObjective, NfObjective,
    Objective, Optimizers, Terms, TrainHistory,
};
