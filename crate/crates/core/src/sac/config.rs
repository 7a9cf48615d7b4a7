use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::localmodel::ParamMode;
use crate::uncertainty::{UncertaintySetSpec, UsrKind};

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub noise_scale: f64,
    /// Episode length; `None` keeps the environment's own horizon.
    pub horizon: Option<usize>,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temp_lr: f64,
    pub init_temperature: f64,
    pub rho: f64,
    pub target_update_freq: usize,
    pub actor_update_freq: usize,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub seed: u64,
    pub usr: UncertaintySetSpec,
    pub sample_size: usize,
    pub model_sigma: f64,
    pub param_mode: ParamMode,
    /// Adv-USR: average the direction over the target samples.
    pub adv_average: bool,
    pub grad_clip: f64,
    /// Steps between log rows; each row carries a fresh evaluation.
    pub log_interval: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    /// Desk-scale preset.
    fn default() -> Self {
        Self {
            env: EnvKind::MovingToTarget,
            noise_scale: crate::envs::moving_target::DEFAULT_NOISE_SCALE,
            horizon: None,
            gamma: 0.99,
            batch_size: 256,
            buffer_capacity: 100_000,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            temp_lr: 1e-4,
            init_temperature: 0.1,
            rho: 0.005,
            target_update_freq: 2,
            actor_update_freq: 1,
            warmup_steps: 5000,
            max_steps: 30_000,
            log_std_min: -5.0,
            log_std_max: 2.0,
            hidden_width: 256,
            hidden_layers: 2,
            seed: 0,
            usr: UncertaintySetSpec::default(),
            sample_size: 1,
            model_sigma: 0.1,
            param_mode: ParamMode::MeanOnly,
            adv_average: false,
            grad_clip: 10.0,
            log_interval: 1000,
            eval_episodes: 5,
        }
    }
}

impl TrainConfig {
    /// Full-length settings: 1024 batch, 10⁶ buffer and steps, 1000-step episodes.
    pub fn paper_fidelity() -> Self {
        Self {
            batch_size: 1024,
            buffer_capacity: 1_000_000,
            max_steps: 1_000_000,
            horizon: Some(1000),
            ..Self::default()
        }
    }

    pub fn with_usr(mut self, kind: UsrKind, alpha_u: f64) -> Self {
        self.usr = UncertaintySetSpec {
            kind,
            radius: alpha_u,
        };
        self
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        vec![self.hidden_width; self.hidden_layers]
    }

    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, value: f64, min: f64, max: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    name: name.to_string(),
                    value,
                    min,
                    max,
                })
            }
        };
        let inf = f64::INFINITY;
        range("gamma", self.gamma, 0.0, 1.0, (0.0..1.0).contains(&self.gamma))?;
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("temp_lr", self.temp_lr),
            ("init_temperature", self.init_temperature),
            ("model_sigma", self.model_sigma),
            ("grad_clip", self.grad_clip),
        ] {
            range(name, v, 0.0, inf, v > 0.0 && v.is_finite())?;
        }
        range("rho", self.rho, 0.0, 1.0, (0.0..=1.0).contains(&self.rho))?;
        range("noise_scale", self.noise_scale, 0.0, inf, self.noise_scale >= 0.0)?;
        range(
            "alpha_u",
            self.usr.radius,
            0.0,
            inf,
            self.usr.radius >= 0.0 && self.usr.radius.is_finite(),
        )?;
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("target_update_freq", self.target_update_freq),
            ("actor_update_freq", self.actor_update_freq),
            ("hidden_width", self.hidden_width),
            ("hidden_layers", self.hidden_layers),
            ("sample_size", self.sample_size),
            ("log_interval", self.log_interval),
            ("eval_episodes", self.eval_episodes),
        ] {
            range(name, v as f64, 1.0, inf, v >= 1)?;
        }
        if let Some(h) = self.horizon {
            range("horizon", h as f64, 1.0, inf, h >= 1)?;
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::contract(format!(
                "log_std_min {} must be below log_std_max {}",
                self.log_std_min, self.log_std_max
            )));
        }
        Ok(())
    }

    /// The training environment at nominal parameters.
    pub fn make_env(&self) -> Result<crate::envs::Env> {
        let env = crate::envs::Env::new(self.env).with_noise_scale(self.noise_scale)?;
        match self.horizon {
            Some(h) => env.with_horizon(h),
            None => Ok(env),
        }
    }

    pub fn target_entropy(&self) -> f64 {
        -(self.env.spec().action_dim as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::paper_fidelity().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            TrainConfig {
                gamma: 1.0,
                ..Default::default()
            },
            TrainConfig {
                sample_size: 0,
                ..Default::default()
            },
            TrainConfig {
                critic_lr: 0.0,
                ..Default::default()
            },
            TrainConfig::default().with_usr(UsrKind::L2Usr, -1.0),
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
