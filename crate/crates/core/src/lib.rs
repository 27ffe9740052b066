//! Group-sensitive offline contextual bandits.
//!
//! Logged bandit data with a sensitive group attribute, a gradient-boosted
//! reward model, softmax MLP policies, DM/IPS/DR off-policy estimators, and a
//! primal-dual policy-gradient trainer that keeps the gap between group
//! values within a tolerance. Multigroup training, epsilon sweeps with Pareto
//! selection, and the experiment harness build on those pieces.

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod multigroup;
pub mod pareto;
pub mod policy;
pub mod reward_model;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use dataset::{
    BanditDataset, GroupFilter, LoggedSample, LoggingPolicy, LoggingPolicyKind, Provenance,
};
pub use error::{Error, Result};
pub use estimators::{Evaluator, Method, PredictionTable, ValueEstimate, VarianceBreakdown};
pub use multigroup::{train_multigroup, MultigroupOutcome, MultigroupTrainer, PairDuals};
pub use pareto::{pareto_frontier, run_sweep, select_fairest, SweepEpsilon, SweepPoint, SweepResult};
pub use policy::{GradientBuffer, SoftmaxMlpPolicy, StochasticPolicy};
pub use reward_model::{GbtConfig, GbtRewardModel, RewardEstimator};
pub use synthetic::PlantedAdvantage;
pub use trainer::{train, DualState, Epsilon, GcpgTrainer, TrainConfig, TrainOutcome};
