//! Zero-shot control on frozen models: sampling-based planning and
//! actor-critic training on virtual transitions.

pub mod mbpo;
pub mod model;
pub mod mppi;

pub use mbpo::{
    evaluate_policy, mbpo_train, mbpo_zero_shot, random_control_return, MbpoConfig, MbpoEpochMetrics, MbpoResult,
};
pub use model::{batch_returns, model_rollout, ClassicModel, ExactModel, LatentModel, PlanningModel, Rollout};
pub use mppi::{mppi_plan, mppi_refine, mppi_update, EpisodeOutcome, MppiConfig};
