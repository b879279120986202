//! Training objectives: variational f-divergences, likelihood, kernel and
//! optimal-transport discrepancies, and the auxiliary INN losses.

mod critic;
mod fdiv;
mod losses;
mod mmd;
mod sinkhorn;

pub use critic::{CriticNet, CRITIC_WIDTH};
pub use fdiv::{FDivergence, FDivergenceSpec, JsConjugate};
pub use losses::{
    inn_backward_loss, inn_forward_loss, inn_unsup_loss_lz, mean_sq_norm, nll_loss, prior_loss,
    reconstruction_loss, supervised_mse, variational_gap, Pairing, Prior,
};
pub use mmd::{median_heuristic, mmd2, mmd2_values, MmdEstimator};
pub use sinkhorn::{
    sinkhorn_cost, sinkhorn_cost_values, sinkhorn_divergence, sinkhorn_divergence_values,
    sinkhorn_plan, SinkhornOptions, SinkhornSolution,
};
