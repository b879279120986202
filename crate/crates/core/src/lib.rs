pub mod autodiff;
pub mod benchmarks;
pub mod clock;
pub mod divergences;
pub mod experiments;
pub mod error;
pub mod flows;
pub mod metrics;
pub mod rkhs;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
