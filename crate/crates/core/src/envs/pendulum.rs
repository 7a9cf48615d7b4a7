//! Damped torque-driven pendulum, `θ = 0` upright.
//!
//! The state is `(cos θ, sin θ, θ̇)`. The angle update is applied as a
//! rotation of the `(cos θ, sin θ)` pair, so the hanging and upright rest
//! states are exact fixed points in floating point.

use crate::error::{Error, Result};

pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 9.81;
pub const HORIZON: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub fn angle(state: &[f64]) -> f64 {
    state[1].atan2(state[0])
}

/// `θ̈` at the given state for `params = (length, mass, damping)`.
pub fn angular_acceleration(state: &[f64], torque: f64, params: &[f64]) -> f64 {
    let (length, mass, damping) = (params[0], params[1], params[2]);
    let inertia = mass * length * length;
    GRAVITY / length * state[1] - damping / inertia * state[2] + torque / inertia
}

/// `½ m l² θ̇² + m g l cos θ`; drops under damping with no torque.
pub fn energy(state: &[f64], params: &[f64]) -> f64 {
    let (length, mass) = (params[0], params[1]);
    0.5 * mass * length * length * state[2] * state[2] + mass * GRAVITY * length * state[0]
}

/// `−(θ² + 0.1 θ̇² + 0.001 u²)` on the pre-step state, `θ` wrapped to (−π, π].
pub fn reward(state: &[f64], torque: f64) -> f64 {
    let th = angle(state);
    -(th * th + 0.1 * state[2] * state[2] + 0.001 * torque * torque)
}

/// Semi-implicit Euler step. Deterministic; `done` is always false here and
/// the horizon is applied by the environment wrapper.
pub fn pendulum_step(state: &[f64], action: &[f64], params: &[f64]) -> Result<PendulumStep> {
    if params.len() != 3 || params.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::contract(format!(
            "pendulum parameters (length, mass, damping) must be positive, got {params:?}"
        )));
    }
    if action.len() != 1 {
        return Err(Error::Shape {
            op: "pendulum_step",
            lhs: vec![1],
            rhs: vec![action.len()],
        });
    }
    let torque = action[0];
    if !(-1.0..=1.0).contains(&torque) {
        return Err(Error::contract(format!(
            "pendulum torque must lie in [-1, 1], got {torque}"
        )));
    }
    let accel = angular_acceleration(state, torque, params);
    let vel = state[2] + DT * accel;
    let turn = DT * vel;
    let (s, c) = if turn == 0.0 { (0.0, 1.0) } else { turn.sin_cos() };
    let mut cos = state[0] * c - state[1] * s;
    let mut sin = state[1] * c + state[0] * s;
    let norm = (cos * cos + sin * sin).sqrt();
    if norm != 1.0 {
        cos /= norm;
        sin /= norm;
    }
    Ok(PendulumStep {
        next_state: vec![cos, sin, vel],
        reward: reward(state, torque),
        done: false,
    })
}

pub fn state_from_angle(theta: f64, velocity: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin(), velocity]
}
