//! Action-conditioned model baselines and their data collectors.

pub mod classic;
pub mod rnd;

pub use classic::{
    disagreement_explore_reward, train_classic, train_classic_on_replay, ClassicAgent, ClassicConfig,
    ClassicEpochMetrics, Collector,
};
pub use rnd::{RndConfig, RndPair, DEFAULT_EMBED_DIM};
