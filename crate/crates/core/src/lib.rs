//! k-means maximum entropy exploration.
//!
//! An intrinsic reward for reinforcement learning built on an
//! additively-weighted online k-means summary of visited states. The reward
//! for a state is the change it causes in `L_f = Σ_i f(M_i)`, where `M_i` is
//! cluster `i`'s weighted distance to its nearest neighbour. With `f = log`
//! this objective is an affine transform of an approximate lower bound on the
//! entropy of the state distribution.
//!
//! Modules:
//! - [`clustering`]: the online clustering and its incremental neighbour cache.
//! - [`objective`]: `L_f`, the unit-ball volume and the entropy bound.
//! - [`reward`]: peek/commit rewards, batch replay, checkpoints.
//! - [`density`]: Monte-Carlo cell measures and the `1/(k·m(c))` estimator.
//! - [`synth`]: seeded samplers with closed-form entropies.
//! - [`explore`]: the on-policy loop, a sparse-reward box and a CEM policy search.
//! - [`experiments`]: the entropy, density, bound and timing experiments.

pub mod clustering;
pub mod density;
pub mod error;
pub mod experiments;
pub mod explore;
pub mod objective;
pub mod reward;
pub mod synth;

pub use clustering::{ClusterModel, CommitOutcome, InitPolicy, ModelSnapshot, NeighborCache};
pub use density::{cluster_measures_mc, density_estimate, MeasureEstimate, SupportBox};
pub use error::{KmeError, Result};
pub use explore::{
    coverage_metric, rollout, train, train_without_engine, EnvContract, ExploreConfig, LearningRecord,
    LinearPolicy, SparseBoxEnv, StepRecord, TrainReport, Trajectory,
};
pub use objective::{
    entropy_lower_bound, log_unit_ball_volume, objective_value, FChoice, ObjectiveSpec,
};
pub use reward::{EngineCheckpoint, RewardEngine};
pub use synth::{sample, DistributionSpec, MixtureComponent, SampleStream};
