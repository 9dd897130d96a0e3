//! Policies, critics, buffers and the unsupervised training loop.

pub mod buffer;
pub mod critic;
pub mod pma;
pub mod policy;
pub mod sac;

pub use buffer::{PmaBuffers, ReplayBuffer, DEFAULT_REPLAY_CAPACITY};
pub use critic::CriticPair;
pub use pma::{decoder_action, decoder_input, pma_epoch, uniform_latent, EpochMetrics, PmaAgent, PmaConfig};
pub use policy::{PolicySample, SquashedGaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use sac::{sac_update, Sac, SacBatch, SacConfig, SacReport};
