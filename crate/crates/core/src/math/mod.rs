//! Numerical kernel: flat-parameter MLPs with analytic backprop, Adam,
//! Gaussian log-densities, total variation and seeded random streams.

pub mod adam;
pub mod mlp;
pub mod rng;
pub mod stats;

pub use adam::{AdamState, DEFAULT_LR};
pub use mlp::{param_count, Mlp, MlpCache, MlpGradient};
pub use rng::RngStream;
pub use stats::{logsumexp, mean_ci95, tv_distance, unit_gaussian_logpdf};
