//! Gaussian dynamics models over `(state, conditioner)` with unit covariance
//! in normalized state-delta space: the variational model used by the
//! mutual-information reward, the ensemble that approximates the model
//! posterior, and the classic `p(s'|s,a)` variant.

mod ensemble;
mod model;
mod normalizer;

pub(crate) use ensemble::minibatch_indices;
pub use ensemble::{EnsembleDynamics, EnsemblePrediction, DEFAULT_ENSEMBLE_SIZE};
pub use model::{Conditioner, FitBatch, GaussianDynamicsModel};
pub use normalizer::{Normalizer, STD_FLOOR};
