//! Particle moving towards a fixed target under per-axis friction.

use crate::error::{Error, Result};
use crate::localmodel::{Draw, ReparamTransition};
use crate::rng::{standard_normal_vec, SimRng};

/// Episode ends once the particle is closer than this to the target.
pub const GOAL_RADIUS: f64 = 0.2;
/// Per-step time cost.
pub const TIME_COST: f64 = 2.0;
pub const HORIZON: usize = 100;
pub const START_RADIUS: f64 = 5.0;
pub const DEFAULT_NOISE_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct MttStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Reached the goal disc. Horizon truncation is the caller's concern.
    pub done: bool,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Rescales `action` to unit L2 norm.
pub fn normalize_action(action: &[f64]) -> Result<[f64; 2]> {
    if action.len() != 2 {
        return Err(Error::Shape {
            op: "mtt_step",
            lhs: vec![2],
            rhs: vec![action.len()],
        });
    }
    let n = (action[0] * action[0] + action[1] * action[1]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::contract(format!(
            "moving-to-target action must have non-zero finite norm, got {action:?}"
        )));
    }
    Ok([action[0] / n, action[1] / n])
}

/// One transition with target at the origin.
///
/// `s' ~ N(s + (a1·w1, a2·w2), noise²·I)` and
/// `r = d(s, 0) − d(s', 0) − 2`. Two normals are drawn even when the noise
/// scale is zero so the random stream does not depend on it.
pub fn mtt_step(
    state: &[f64],
    action: &[f64],
    params: &[f64],
    noise_scale: f64,
    rng: &mut SimRng,
) -> Result<MttStep> {
    if !(noise_scale >= 0.0) {
        return Err(Error::contract(format!(
            "noise scale must be non-negative, got {noise_scale}"
        )));
    }
    let a = normalize_action(action)?;
    let eps = standard_normal_vec(rng, 2);
    let next: Vec<f64> = (0..2)
        .map(|k| state[k] + a[k] * params[k] + noise_scale * eps[k])
        .collect();
    let origin = [0.0, 0.0];
    let d_next = distance(&next, &origin);
    Ok(MttStep {
        reward: distance(state, &origin) - d_next - TIME_COST,
        done: d_next < GOAL_RADIUS,
        next_state: next,
    })
}

/// `V*(s) = −‖s − target‖₂`.
pub fn mtt_optimal_value(state: &[f64], target: &[f64]) -> f64 {
    -distance(state, target)
}

/// Greedy straight-line action towards the target.
pub fn greedy_action(state: &[f64], target: &[f64]) -> Vec<f64> {
    let dir: Vec<f64> = target.iter().zip(state).map(|(e, s)| e - s).collect();
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return vec![1.0, 0.0];
    }
    dir.into_iter().map(|v| v / n).collect()
}

/// The friction transition `s' = s + a ⊙ w + noise·ε` seen as a function of
/// the friction parameters `w`, so `∂s'/∂w = diag(a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionTransition {
    pub state: Vec<f64>,
    pub action: [f64; 2],
    pub params: Vec<f64>,
    pub noise_scale: f64,
}

impl FrictionTransition {
    pub fn new(state: &[f64], action: &[f64], params: &[f64], noise_scale: f64) -> Result<Self> {
        Ok(Self {
            state: state.to_vec(),
            action: normalize_action(action)?,
            params: params.to_vec(),
            noise_scale,
        })
    }
}

impl ReparamTransition for FrictionTransition {
    fn state_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn draw(&self, rng: &mut SimRng) -> Draw {
        let noise = standard_normal_vec(rng, 2);
        let point = (0..2)
            .map(|k| self.state[k] + self.action[k] * self.params[k] + self.noise_scale * noise[k])
            .collect();
        Draw { point, noise }
    }

    fn pullback(&self, grad_point: &[f64], _noise: &[f64]) -> Vec<f64> {
        grad_point.iter().zip(&self.action).map(|(g, a)| g * a).collect()
    }
}
