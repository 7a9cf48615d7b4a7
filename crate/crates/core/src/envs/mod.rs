//! Perturbable continuous-control environments.
//!
//! Each environment exposes its physical parameters by name with a nominal
//! value and a closed perturbation range. Dynamics are pure functions of
//! `(state, action, params, rng)`; [`Env`] adds the episode bookkeeping.

pub mod moving_target;
pub mod pendulum;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub use moving_target::{
    greedy_action, mtt_optimal_value, mtt_step, FrictionTransition, MttStep,
};
pub use pendulum::{pendulum_step, PendulumStep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub nominal: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub params: Vec<ParamSpec>,
    pub horizon: usize,
    pub initial_state: String,
}

impl EnvSpec {
    pub fn param(&self, name: &str) -> Result<(usize, &ParamSpec)> {
        self.params
            .iter()
            .enumerate()
            .find(|(_, p)| p.name == name)
            .ok_or_else(|| Error::UnknownParam {
                name: name.to_string(),
                valid: self
                    .params
                    .iter()
                    .map(|p| format!("{} in [{}, {}]", p.name, p.min, p.max))
                    .collect(),
            })
    }

    pub fn nominal(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.nominal).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    MovingToTarget,
    Pendulum,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::MovingToTarget => "moving_to_target",
            EnvKind::Pendulum => "pendulum",
        }
    }

    pub fn spec(self) -> EnvSpec {
        let p = |name: &str, nominal, min, max| ParamSpec {
            name: name.to_string(),
            nominal,
            min,
            max,
        };
        match self {
            EnvKind::MovingToTarget => EnvSpec {
                name: self.as_str().to_string(),
                state_dim: 2,
                action_dim: 2,
                params: vec![p("w1", 1.0, 0.0, 3.0), p("w2", 1.0, 0.0, 3.0)],
                horizon: moving_target::HORIZON,
                initial_state: format!(
                    "uniform on the circle of radius {} around the target (0, 0)",
                    moving_target::START_RADIUS
                ),
            },
            EnvKind::Pendulum => EnvSpec {
                name: self.as_str().to_string(),
                state_dim: 3,
                action_dim: 1,
                params: vec![
                    p("length", 1.0, 0.3, 3.0),
                    p("mass", 1.0, 0.1, 10.0),
                    p("damping", 0.05, 1e-3, 2.0),
                ],
                horizon: pendulum::HORIZON,
                initial_state: "theta ~ U[-pi, pi], theta_dot ~ U[-1, 1]".to_string(),
            },
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving_to_target" | "mtt" => Ok(EnvKind::MovingToTarget),
            "pendulum" => Ok(EnvKind::Pendulum),
            _ => Err(Error::contract(format!(
                "unknown environment '{s}' (expected moving_to_target or pendulum)"
            ))),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Natural termination; the bootstrap is cut.
    pub terminated: bool,
    /// Horizon reached.
    pub truncated: bool,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// An environment instance with its own state and parameter vector.
#[derive(Debug, Clone)]
pub struct Env {
    kind: EnvKind,
    spec: EnvSpec,
    params: Vec<f64>,
    noise_scale: f64,
    state: Vec<f64>,
    steps: usize,
    finished: bool,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        let spec = kind.spec();
        Self {
            kind,
            params: spec.nominal(),
            state: vec![0.0; spec.state_dim],
            spec,
            noise_scale: moving_target::DEFAULT_NOISE_SCALE,
            steps: 0,
            finished: true,
        }
    }

    /// Transition noise of the moving-to-target task; ignored by the pendulum.
    pub fn with_noise_scale(mut self, noise_scale: f64) -> Result<Self> {
        if !(noise_scale >= 0.0) {
            return Err(Error::OutOfRange {
                name: "noise_scale".into(),
                value: noise_scale,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        self.noise_scale = noise_scale;
        Ok(self)
    }

    /// Overrides the episode length.
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::contract("horizon must be at least 1"));
        }
        self.spec.horizon = horizon;
        Ok(self)
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Resets every parameter to nominal and then applies `values`.
    pub fn set_params(&mut self, values: &BTreeMap<String, f64>) -> Result<()> {
        let mut params = self.spec.nominal();
        for (name, &value) in values {
            let (i, p) = self.spec.param(name)?;
            if !(value >= p.min && value <= p.max) {
                return Err(Error::OutOfRange {
                    name: name.clone(),
                    value,
                    min: p.min,
                    max: p.max,
                });
            }
            params[i] = value;
        }
        self.params = params;
        Ok(())
    }

    /// Replaces the whole parameter vector, in [`EnvSpec::params`] order.
    pub fn set_param_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.spec.params.len() {
            return Err(Error::Shape {
                op: "set_params",
                lhs: vec![self.spec.params.len()],
                rhs: vec![values.len()],
            });
        }
        for (p, &v) in self.spec.params.iter().zip(values) {
            if !(v >= p.min && v <= p.max) {
                return Err(Error::OutOfRange {
                    name: p.name.clone(),
                    value: v,
                    min: p.min,
                    max: p.max,
                });
            }
        }
        self.params = values.to_vec();
        Ok(())
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        self.set_params(&BTreeMap::from([(name.to_string(), value)]))
    }

    pub fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        self.state = match self.kind {
            EnvKind::MovingToTarget => {
                let phi = rng.random_range(0.0..2.0 * PI);
                vec![
                    moving_target::START_RADIUS * phi.cos(),
                    moving_target::START_RADIUS * phi.sin(),
                ]
            }
            EnvKind::Pendulum => {
                let th = rng.random_range(-PI..=PI);
                let vel = rng.random_range(-1.0..=1.0);
                pendulum::state_from_angle(th, vel)
            }
        };
        self.steps = 0;
        self.finished = false;
        self.state.clone()
    }

    pub fn step(&mut self, action: &[f64], rng: &mut SimRng) -> Result<Transition> {
        if self.finished {
            return Err(Error::contract("step called on a finished episode; call reset"));
        }
        let (next_state, reward, terminated) = match self.kind {
            EnvKind::MovingToTarget => {
                let out = mtt_step(&self.state, action, &self.params, self.noise_scale, rng)?;
                (out.next_state, out.reward, out.done)
            }
            EnvKind::Pendulum => {
                let out = pendulum_step(&self.state, action, &self.params)?;
                (out.next_state, out.reward, out.done)
            }
        };
        self.steps += 1;
        let truncated = !terminated && self.steps >= self.spec.horizon;
        self.finished = terminated || truncated;
        self.state = next_state.clone();
        Ok(Transition {
            next_state,
            reward,
            terminated,
            truncated,
        })
    }
}
