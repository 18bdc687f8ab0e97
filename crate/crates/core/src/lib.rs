//! Architecture-conditioned scaling laws: parameter counting, the depth-penalised
//! loss model, fitting, gradient-signal simulation, compute-optimal shape
//! search and depth audits of published models.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod gradsim;
pub mod model;
pub mod planner;
pub mod rng;
pub mod scaling_law;

pub use error::{Error, Result};
pub use model::{count_params, compute_flops, Architecture, LossRecord, ScaleGroup};
pub use scaling_law::{d_crit, predict_loss, DcritForm, ScalingLawParams};
pub use dataset::Dataset;
