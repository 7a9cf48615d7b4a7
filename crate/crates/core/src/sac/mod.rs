//! Soft actor-critic with pluggable robust Bellman targets.

mod agent;
mod buffer;
mod config;
mod trainer;

pub use agent::{
    actor_loss, critic_loss, temperature_gradient, ActorStep, Agent, SoftValue, UpdateStats,
};
pub use buffer::{Batch, ReplayBuffer, TransitionSample};
pub use config::TrainConfig;
pub use trainer::{contraction_delta, evaluate_agent, log_csv, train, LogRow, TrainOutcome, LOG_HEADER};
