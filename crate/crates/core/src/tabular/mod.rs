//! Exact finite-MDP checks of the performance bounds.

pub mod abstraction;
pub mod bounds;
pub mod mdp;

pub use abstraction::{
    conditional_entropy, latent_projection, simplex_grid_search, uniform_latent_policy, LatentAbstraction, MimicTable,
    PHI_GRID_STEP,
};
pub use bounds::{
    random_instance, sweep, verify_bounds, BoundReport, Epsilons, InstanceShape, SweepConfig, SweepRow, TheoryInstance,
    VerificationReport, SLACK_TOL,
};
pub use mdp::{Occupancy, Policy, TabularMdp};
