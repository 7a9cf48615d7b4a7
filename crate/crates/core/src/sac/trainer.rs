use crate::checkpoint::AgentCheckpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_returns, random_action, DeterministicActor};
use crate::localmodel::grad_norm_integral_1d;
use crate::rng::{derive_rng, derive_seed};

use super::agent::{Agent, UpdateStats};
use super::buffer::{ReplayBuffer, TransitionSample};
use super::config::TrainConfig;

pub const LOG_HEADER: &str =
    "step,episode_return,critic_loss_1,critic_loss_2,actor_loss,temperature,penalty_mean";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean deterministic-policy return over the evaluation episodes.
    pub episode_return: f64,
    pub critic_loss_1: f64,
    pub critic_loss_2: f64,
    pub actor_loss: f64,
    pub temperature: f64,
    pub penalty_mean: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step,
            r.episode_return,
            r.critic_loss_1,
            r.critic_loss_2,
            r.actor_loss,
            r.temperature,
            r.penalty_mean
        ));
    }
    s
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Final checkpoint, or the last finite one when training aborted.
    pub checkpoint: AgentCheckpoint,
    pub log: Vec<LogRow>,
    pub abort: Option<Error>,
    /// `γ + δ` for target-regularizing kinds.
    pub contraction: Option<f64>,
}

/// `δ = α_u ∫ ‖∇_w P‖₂ ds'` for a one-dimensional local model with the
/// configured scale, or `None` when the kind leaves the target alone.
pub fn contraction_delta(config: &TrainConfig) -> Result<Option<f64>> {
    if !config.usr.kind.regularizes_target() {
        return Ok(None);
    }
    let integral = grad_norm_integral_1d(config.model_sigma, config.param_mode, 20_001)?;
    Ok(Some(config.usr.effective_radius() * integral))
}

/// Mean deterministic return over `episodes` nominal episodes.
pub fn evaluate_agent(agent: &Agent, config: &TrainConfig, episodes: usize, seed: u64) -> Result<f64> {
    let mut env = config.make_env()?;
    let returns = evaluate_returns(&mut env, &DeterministicActor(&agent.actor), episodes, seed)?;
    Ok(returns.iter().sum::<f64>() / returns.len() as f64)
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    agent: Agent,
    stats: UpdateStats,
}

impl Trainer<'_> {
    fn update(
        &mut self,
        step: usize,
        buffer: &ReplayBuffer,
        batch_rng: &mut crate::rng::SimRng,
        update_rng: &mut crate::rng::SimRng,
    ) -> Result<()> {
        let cfg = self.config;
        let batch = buffer.sample(cfg.batch_size, batch_rng)?;
        let (l1, l2, pen) = self.agent.critic_update(&batch, cfg, update_rng)?;
        self.stats.critic_loss_1 = l1;
        self.stats.critic_loss_2 = l2;
        self.stats.penalty_mean = pen;
        if step % cfg.actor_update_freq == 0 {
            let (loss, mean_lp) = self.agent.actor_update(&batch, cfg, update_rng)?;
            self.agent.temperature_update(mean_lp, cfg.target_entropy())?;
            self.stats.actor_loss = loss;
        }
        if step % cfg.target_update_freq == 0 {
            self.agent.update_targets(cfg.rho)?;
        }
        if !self.agent.is_finite() {
            return Err(Error::evaluation("non-finite network parameters"));
        }
        Ok(())
    }
}

/// Runs the full actor-critic loop: random warmup, then one gradient phase
/// per environment step once the buffer holds a batch.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let seed = config.seed;
    let contraction = contraction_delta(config)?.map(|delta| config.gamma + delta);
    if let Some(c) = contraction {
        if c > 1.0 {
            log::warn!(
                "gamma + delta = {c:.4} exceeds 1 (gamma {}, alpha_u {}, sigma {}); robust targets may not contract",
                config.gamma,
                config.usr.radius,
                config.model_sigma
            );
        }
    }
    let mut init_rng = derive_rng(seed, "init", 0);
    let mut env_rng = derive_rng(seed, "env", 0);
    let mut act_rng = derive_rng(seed, "act", 0);
    let mut batch_rng = derive_rng(seed, "batch", 0);
    let mut update_rng = derive_rng(seed, "update", 0);

    let mut trainer = Trainer {
        config,
        agent: Agent::new(config, &mut init_rng)?,
        stats: UpdateStats::default(),
    };
    let mut env = config.make_env()?;
    let action_dim = env.spec().action_dim;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut log = Vec::new();
    let mut last_good = AgentCheckpoint::from_agent(&trainer.agent, config, 0);
    let mut state = env.reset(&mut env_rng);

    for step in 1..=config.max_steps {
        let action = if step <= config.warmup_steps {
            random_action(action_dim, &mut act_rng)
        } else {
            crate::nets::policy_sample(&trainer.agent.actor, &state, &mut act_rng)
                .map_err(|e| Error::Training {
                    step,
                    message: e.to_string(),
                })?
                .action
                .into_data()
        };
        let t = env.step(&action, &mut env_rng)?;
        buffer.push(TransitionSample {
            state: std::mem::take(&mut state),
            action,
            reward: t.reward,
            next_state: t.next_state.clone(),
            done: t.terminated,
        })?;
        state = if t.done() {
            env.reset(&mut env_rng)
        } else {
            t.next_state
        };

        if step > config.warmup_steps && buffer.len() >= config.batch_size {
            if let Err(e) = trainer.update(step, &buffer, &mut batch_rng, &mut update_rng) {
                let err = Error::Training {
                    step,
                    message: e.to_string(),
                };
                log::error!("{err}");
                return Ok(TrainOutcome {
                    checkpoint: last_good,
                    log,
                    abort: Some(err),
                    contraction,
                });
            }
        }

        if step % config.log_interval == 0 {
            let eval_seed = derive_seed(seed, "eval", step as u64);
            let ret = evaluate_agent(&trainer.agent, config, config.eval_episodes, eval_seed)?;
            let s = trainer.stats;
            log.push(LogRow {
                step,
                episode_return: ret,
                critic_loss_1: s.critic_loss_1,
                critic_loss_2: s.critic_loss_2,
                actor_loss: s.actor_loss,
                temperature: trainer.agent.temperature(),
                penalty_mean: s.penalty_mean,
            });
            log::info!(
                "step {step}: eval return {ret:.3}, critic loss {:.4}, temperature {:.4}",
                s.critic_loss_1,
                trainer.agent.temperature()
            );
            last_good = AgentCheckpoint::from_agent(&trainer.agent, config, step as u64);
        }
    }
    Ok(TrainOutcome {
        checkpoint: AgentCheckpoint::from_agent(&trainer.agent, config, config.max_steps as u64),
        log,
        abort: None,
        contraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn tiny() -> TrainConfig {
        TrainConfig {
            hidden_width: 8,
            batch_size: 8,
            warmup_steps: 20,
            max_steps: 60,
            log_interval: 30,
            eval_episodes: 1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_is_initialization() {
        let cfg = TrainConfig {
            max_steps: 0,
            ..tiny()
        };
        let out = train(&cfg).unwrap();
        let agent = Agent::new(&cfg, &mut derive_rng(cfg.seed, "init", 0)).unwrap();
        assert_eq!(out.checkpoint, AgentCheckpoint::from_agent(&agent, &cfg, 0));
        assert!(out.log.is_empty());
        assert_eq!(log_csv(&out.log), format!("{LOG_HEADER}\n"));
        let _ = rng_from_seed(0);
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let cfg = tiny().with_usr(crate::uncertainty::UsrKind::L2Usr, 1e-3);
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(log_csv(&a.log), log_csv(&b.log));
        assert_eq!(a.checkpoint.to_json().unwrap(), b.checkpoint.to_json().unwrap());
        assert_eq!(a.log.len(), 2);
        assert!(a.contraction.unwrap() > cfg.gamma);
    }

    #[test]
    fn delta_matches_closed_form() {
        // mean-only 1-D: ∫|p'| = 2 p(0)/σ · σ... = sqrt(2/π)/σ
        let cfg = TrainConfig {
            model_sigma: 0.5,
            ..Default::default()
        }
        .with_usr(crate::uncertainty::UsrKind::L2Usr, 0.01);
        let d = contraction_delta(&cfg).unwrap().unwrap();
        let expect = 0.01 * (2.0 / std::f64::consts::PI).sqrt() / 0.5;
        assert!((d - expect).abs() < 1e-6 * expect);
        assert!(contraction_delta(&TrainConfig::default()).unwrap().is_none());
    }
}
