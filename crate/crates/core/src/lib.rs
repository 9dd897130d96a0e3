//! Predictable latent action abstractions for zero-shot model-based control.
//!
//! The crate trains an action decoder that only permits transitions a learned
//! model can predict, then plans or learns downstream tasks purely inside
//! that model. It also ships an exact tabular laboratory for the performance
//! bounds that relate latent-model returns to true returns.

// `!(x >= 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Numeric kernels index several parallel buffers; planner entry points take explicit state.
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod agents;
pub mod baselines;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod intrinsic;
pub mod math;
pub mod planners;
pub mod tabular;

pub use error::{Error, Result};
