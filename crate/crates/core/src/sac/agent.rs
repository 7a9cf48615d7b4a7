use crate::diffcore::{Array, NodeId, Tape};
use crate::error::{Error, Result};
use crate::nets::{clip_global_norm, soft_update, Activation, Actor, Adam, Critic, ValueFunction};
use crate::rng::{standard_normal_vec, SimRng};
use crate::uncertainty::{local_models, robust_targets, TargetBatch, TargetRow, TargetSettings, UsrKind};

use super::buffer::Batch;
use super::config::TrainConfig;

/// `V(s) = min_i Q_i(s, ã) − temperature · log π(ã|s)` with `ã ~ π(·|s)`
/// drawn afresh on every call.
pub struct SoftValue<'a> {
    pub actor: &'a Actor,
    pub critics: &'a [Critic; 2],
    pub temperature: f64,
}

impl ValueFunction for SoftValue<'_> {
    fn value_on_tape(&self, tape: &mut Tape, states: NodeId, rng: &mut SimRng) -> Result<NodeId> {
        let rows = tape.value(states).rows();
        let da = self.actor.action_dim;
        let noise = Array::matrix(rows, da, standard_normal_vec(rng, rows * da))?;
        let actor = self.actor.net.bind(tape);
        let pol = self.actor.on_tape(tape, &actor, states, &noise)?;
        let b1 = self.critics[0].net.bind(tape);
        let b2 = self.critics[1].net.bind(tape);
        let q1 = Critic::on_tape(tape, &b1, states, pol.action)?;
        let q2 = Critic::on_tape(tape, &b2, states, pol.action)?;
        let q = tape.minimum(q1, q2)?;
        let ent = tape.scale(pol.log_prob, self.temperature)?;
        tape.sub(q, ent)
    }
}

/// Weight penalty `α‖θ‖₁` or `α‖θ‖₂` over every tensor of a bound network.
fn weight_penalty(tape: &mut Tape, params: &[NodeId], kind: UsrKind, alpha: f64) -> Result<Option<NodeId>> {
    if !kind.regularizes_weights() || alpha == 0.0 {
        return Ok(None);
    }
    let mut total: Option<NodeId> = None;
    for &p in params {
        let part = match kind {
            UsrKind::L1WeightReg => {
                let pos = tape.relu(p)?;
                let neg_in = tape.scale(p, -1.0)?;
                let neg = tape.relu(neg_in)?;
                let abs = tape.add(pos, neg)?;
                tape.sum(abs)?
            }
            _ => {
                let sq = tape.square(p)?;
                tape.sum(sq)?
            }
        };
        total = Some(match total {
            None => part,
            Some(t) => tape.add(t, part)?,
        });
    }
    let Some(total) = total else { return Ok(None) };
    let norm = if kind == UsrKind::L2WeightReg {
        tape.sqrt(total)?
    } else {
        total
    };
    Ok(Some(tape.scale(norm, alpha)?))
}

/// Critic loss `mean((Q(s, a) − y)²)` plus any weight penalty, and its
/// gradient for every critic tensor.
pub fn critic_loss(
    critic: &Critic,
    states: &Array,
    actions: &Array,
    targets: &[f64],
    kind: UsrKind,
    alpha_u: f64,
) -> Result<(f64, Vec<Array>)> {
    let mut tape = Tape::new();
    let bound = critic.net.bind(&mut tape);
    let s = tape.leaf(states.clone());
    let a = tape.leaf(actions.clone());
    let q = Critic::on_tape(&mut tape, &bound, s, a)?;
    let y = tape.leaf(Array::matrix(targets.len(), 1, targets.to_vec())?);
    let diff = tape.sub(q, y)?;
    let sq = tape.square(diff)?;
    let mut loss = tape.mean(sq)?;
    if let Some(pen) = weight_penalty(&mut tape, &bound.leaves(), kind, alpha_u)? {
        loss = tape.add(loss, pen)?;
    }
    let value = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    Ok((value, bound.gradients(&tape, &grads)))
}

/// Actor loss `mean(temperature · log π(ã|s) − min_i Q_i(s, ã))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorStep {
    pub loss: f64,
    pub mean_log_prob: f64,
    pub grads: Vec<Array>,
}

pub fn actor_loss(
    actor: &Actor,
    critics: &[Critic; 2],
    temperature: f64,
    states: &Array,
    noise: &Array,
) -> Result<ActorStep> {
    let mut tape = Tape::new();
    let bound = actor.net.bind(&mut tape);
    let s = tape.leaf(states.clone());
    let pol = actor.on_tape(&mut tape, &bound, s, noise)?;
    let b1 = critics[0].net.bind(&mut tape);
    let b2 = critics[1].net.bind(&mut tape);
    let q1 = Critic::on_tape(&mut tape, &b1, s, pol.action)?;
    let q2 = Critic::on_tape(&mut tape, &b2, s, pol.action)?;
    let q = tape.minimum(q1, q2)?;
    let ent = tape.scale(pol.log_prob, temperature)?;
    let per_row = tape.sub(ent, q)?;
    let loss = tape.mean(per_row)?;
    let value = tape.value(loss).item()?;
    let lp = tape.value(pol.log_prob);
    let mean_log_prob = lp.sum() / lp.len() as f64;
    let grads = tape.backward(loss)?;
    Ok(ActorStep {
        loss: value,
        mean_log_prob,
        grads: bound.gradients(&tape, &grads),
    })
}

/// `∂/∂log_temp` of `log_temp · mean(−log π − target_entropy)`.
pub fn temperature_gradient(mean_log_prob: f64, target_entropy: f64) -> f64 {
    -mean_log_prob - target_entropy
}

/// Losses and diagnostics of one gradient phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss_1: f64,
    pub critic_loss_2: f64,
    pub actor_loss: f64,
    pub penalty_mean: f64,
}

/// Actor, twin critics with targets, learned temperature and optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Actor,
    pub critics: [Critic; 2],
    pub targets: [Critic; 2],
    pub log_temperature: f64,
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    temp_opt: Adam,
}

impl Agent {
    pub fn new(config: &TrainConfig, rng: &mut SimRng) -> Result<Self> {
        let spec = config.env.spec();
        let hidden = config.hidden_sizes();
        let actor = Actor::new(
            spec.state_dim,
            spec.action_dim,
            &hidden,
            Activation::Relu,
            (config.log_std_min, config.log_std_max),
            rng,
        )?;
        let c1 = Critic::new(spec.state_dim, spec.action_dim, &hidden, Activation::Relu, rng)?;
        let c2 = Critic::new(spec.state_dim, spec.action_dim, &hidden, Activation::Relu, rng)?;
        Ok(Self::from_parts(
            actor,
            [c1.clone(), c2.clone()],
            [c1, c2],
            config.init_temperature.ln(),
            config,
        ))
    }

    pub fn from_parts(
        actor: Actor,
        critics: [Critic; 2],
        targets: [Critic; 2],
        log_temperature: f64,
        config: &TrainConfig,
    ) -> Self {
        Self {
            actor,
            critics,
            targets,
            log_temperature,
            actor_opt: Adam::new(config.actor_lr),
            critic_opts: [Adam::new(config.critic_lr), Adam::new(config.critic_lr)],
            temp_opt: Adam::new(config.temp_lr),
        }
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn soft_value(&self) -> SoftValue<'_> {
        SoftValue {
            actor: &self.actor,
            critics: &self.targets,
            temperature: self.temperature(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.net.is_finite()
            && self.critics.iter().all(|c| c.net.is_finite())
            && self.targets.iter().all(|c| c.net.is_finite())
            && self.log_temperature.is_finite()
    }

    /// Bellman targets for `batch`. USR kinds go through the local-model
    /// robust target; the rest bootstrap from the observed next state.
    pub fn compute_targets(
        &self,
        batch: &Batch,
        config: &TrainConfig,
        rng: &mut SimRng,
    ) -> Result<TargetBatch> {
        let vf = self.soft_value();
        if config.usr.kind.regularizes_target() {
            let dim = batch.next_states.cols();
            let models = local_models(
                &batch.next_states,
                &vec![config.model_sigma; dim],
                config.param_mode,
            )?;
            let rows: Vec<TargetRow> = batch
                .rewards
                .iter()
                .zip(&batch.dones)
                .map(|(&reward, &done)| TargetRow { reward, done })
                .collect();
            let mut settings = TargetSettings::new(config.usr, config.sample_size, config.gamma)?;
            settings.average_directions = config.adv_average;
            robust_targets(&rows, &models, &vf, &settings, rng)
        } else {
            let v = vf.values(&batch.next_states, rng)?;
            let targets = batch
                .rewards
                .iter()
                .zip(&batch.dones)
                .zip(v.data())
                .map(|((r, d), v)| if *d { *r } else { r + config.gamma * v })
                .collect();
            Ok(TargetBatch {
                targets,
                penalty_mean: 0.0,
            })
        }
    }

    /// One Adam step on each critic. Returns both losses and the mean
    /// target penalty.
    pub fn critic_update(
        &mut self,
        batch: &Batch,
        config: &TrainConfig,
        rng: &mut SimRng,
    ) -> Result<(f64, f64, f64)> {
        let tb = self.compute_targets(batch, config, rng)?;
        let mut losses = [0.0; 2];
        for i in 0..2 {
            let (loss, mut grads) = critic_loss(
                &self.critics[i],
                &batch.states,
                &batch.actions,
                &tb.targets,
                config.usr.kind,
                config.usr.effective_radius(),
            )?;
            if !loss.is_finite() {
                return Err(Error::evaluation(format!("critic {} loss is {loss}", i + 1)));
            }
            clip_global_norm(&mut grads, config.grad_clip);
            self.critic_opts[i].step(self.critics[i].net.tensors_mut(), &grads)?;
            losses[i] = loss;
        }
        Ok((losses[0], losses[1], tb.penalty_mean))
    }

    /// One Adam step on the actor; returns the loss and the batch mean of
    /// `log π(ã|s)` for the temperature step.
    pub fn actor_update(
        &mut self,
        batch: &Batch,
        config: &TrainConfig,
        rng: &mut SimRng,
    ) -> Result<(f64, f64)> {
        let rows = batch.len();
        let da = self.actor.action_dim;
        let noise = Array::matrix(rows, da, standard_normal_vec(rng, rows * da))?;
        let mut step = actor_loss(
            &self.actor,
            &self.critics,
            self.temperature(),
            &batch.states,
            &noise,
        )?;
        if !step.loss.is_finite() {
            return Err(Error::evaluation(format!("actor loss is {}", step.loss)));
        }
        clip_global_norm(&mut step.grads, config.grad_clip);
        self.actor_opt.step(self.actor.net.tensors_mut(), &step.grads)?;
        Ok((step.loss, step.mean_log_prob))
    }

    pub fn temperature_update(&mut self, mean_log_prob: f64, target_entropy: f64) -> Result<()> {
        let g = Array::scalar(temperature_gradient(mean_log_prob, target_entropy));
        let mut p = Array::scalar(self.log_temperature);
        self.temp_opt.step(vec![&mut p], &[g])?;
        self.log_temperature = p.item()?;
        Ok(())
    }

    pub fn update_targets(&mut self, rho: f64) -> Result<()> {
        for i in 0..2 {
            soft_update(&mut self.targets[i].net, &self.critics[i].net, rho)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::sac::buffer::TransitionSample;

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden_width: 8,
            batch_size: 4,
            ..Default::default()
        }
    }

    fn batch(done: bool) -> Batch {
        let samples: Vec<TransitionSample> = (0..4)
            .map(|i| TransitionSample {
                state: vec![i as f64, 1.0],
                action: vec![0.5, -0.5],
                reward: -(i as f64),
                next_state: vec![i as f64 - 0.5, 0.7],
                done,
            })
            .collect();
        Batch::from_samples(&samples).unwrap()
    }

    #[test]
    fn zero_discount_targets_reward() {
        let cfg = TrainConfig {
            gamma: 0.0,
            ..small_config()
        };
        let agent = Agent::new(&cfg, &mut rng_from_seed(0)).unwrap();
        let b = batch(false);
        let tb = agent.compute_targets(&b, &cfg, &mut rng_from_seed(1)).unwrap();
        assert_eq!(tb.targets, b.rewards);
        let (loss, _) = critic_loss(&agent.critics[0], &b.states, &b.actions, &tb.targets, UsrKind::None, 0.0).unwrap();
        let q = agent.critics[0].values(&b.states, &b.actions).unwrap();
        let mse = q.data().iter().zip(&b.rewards).map(|(q, r)| (q - r) * (q - r)).sum::<f64>() / 4.0;
        assert!((loss - mse).abs() < 1e-12);
    }

    #[test]
    fn terminal_mask_targets_reward() {
        for kind in UsrKind::ALL {
            let cfg = small_config().with_usr(kind, 0.1);
            let agent = Agent::new(&cfg, &mut rng_from_seed(0)).unwrap();
            let b = batch(true);
            let tb = agent.compute_targets(&b, &cfg, &mut rng_from_seed(1)).unwrap();
            assert_eq!(tb.targets, b.rewards);
        }
    }

    #[test]
    fn updates_touch_only_their_group() {
        let cfg = small_config();
        let mut agent = Agent::new(&cfg, &mut rng_from_seed(0)).unwrap();
        let b = batch(false);
        let actor_before = agent.actor.clone();
        let targets_before = agent.targets.clone();
        agent.critic_update(&b, &cfg, &mut rng_from_seed(1)).unwrap();
        assert_eq!(agent.actor, actor_before);
        assert_eq!(agent.targets, targets_before);
        let critics_before = agent.critics.clone();
        agent.actor_update(&b, &cfg, &mut rng_from_seed(2)).unwrap();
        assert_eq!(agent.critics, critics_before);
        assert_ne!(agent.actor, actor_before);
    }

    #[test]
    fn zero_critic_and_temperature_give_zero_actor_gradient() {
        let cfg = small_config();
        let mut agent = Agent::new(&cfg, &mut rng_from_seed(0)).unwrap();
        for c in agent.critics.iter_mut() {
            for t in c.net.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let b = batch(false);
        let noise = Array::matrix(4, 2, standard_normal_vec(&mut rng_from_seed(3), 8)).unwrap();
        let step = actor_loss(&agent.actor, &agent.critics, 0.0, &b.states, &noise).unwrap();
        assert!(step.grads.iter().all(|g| g.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn temperature_direction() {
        assert_eq!(temperature_gradient(2.0, -2.0), 0.0);
        let cfg = small_config();
        let mut agent = Agent::new(&cfg, &mut rng_from_seed(0)).unwrap();
        let before = agent.temperature();
        // mean log π = 3 is an entropy estimate of −3, below the target −2
        agent.temperature_update(3.0, -2.0).unwrap();
        assert!(agent.temperature() > before);
        for _ in 0..10_000 {
            agent.temperature_update(-50.0, -2.0).unwrap();
        }
        assert!(agent.temperature() > 0.0);
    }

    #[test]
    fn weight_penalty_adds_norm() {
        let cfg = small_config();
        let agent = Agent::new(&cfg, &mut rng_from_seed(0)).unwrap();
        let b = batch(false);
        let y = vec![0.0; 4];
        let c = &agent.critics[0];
        let (plain, _) = critic_loss(c, &b.states, &b.actions, &y, UsrKind::None, 0.0).unwrap();
        let (l2, _) = critic_loss(c, &b.states, &b.actions, &y, UsrKind::L2WeightReg, 0.01).unwrap();
        let (l1, _) = critic_loss(c, &b.states, &b.actions, &y, UsrKind::L1WeightReg, 0.01).unwrap();
        let sq: f64 = c.net.tensors().iter().flat_map(|t| t.data()).map(|v| v * v).sum();
        let abs: f64 = c.net.tensors().iter().flat_map(|t| t.data()).map(|v| v.abs()).sum();
        assert!((l2 - plain - 0.01 * sq.sqrt()).abs() < 1e-12);
        assert!((l1 - plain - 0.01 * abs).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_update() {
        let cfg = small_config().with_usr(UsrKind::AdvUsr, 1e-3);
        let run = || {
            let mut agent = Agent::new(&cfg, &mut rng_from_seed(0)).unwrap();
            let mut rng = rng_from_seed(4);
            agent.critic_update(&batch(false), &cfg, &mut rng).unwrap();
            agent.actor_update(&batch(false), &cfg, &mut rng).unwrap();
            agent
        };
        let (a, b) = (run(), run());
        assert_eq!(a.actor, b.actor);
        assert_eq!(a.critics, b.critics);
    }
}
