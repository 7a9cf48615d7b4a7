//! Tanh-squashed diagonal Gaussian actor.
//!
//! The trunk emits `2·dA` columns: the pre-squash mean and an unbounded
//! log-std head. The log-std is mapped into `[log_std_min, log_std_max]`
//! with `min + (max - min) (tanh(raw) + 1) / 2`, the action is
//! `tanh(mean + exp(log_std) ⊙ ε)` and the log-density carries the
//! change-of-variables correction `−Σ log(1 − a² + 1e-6)`.

use std::f64::consts::PI;

use crate::diffcore::{Array, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::{standard_normal_vec, SimRng};

use super::mlp::{Activation, BoundMlp, Mlp};

/// Added inside the log of the tanh Jacobian so saturated actions stay finite.
pub const TANH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Mlp,
    pub action_dim: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// Plain-array result of sampling the policy on a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// `B×dA`, every entry in (−1, 1).
    pub action: Array,
    /// `B×1`.
    pub log_prob: Array,
    pub mean: Array,
    pub log_std: Array,
}

/// Tape nodes of a policy evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PolicyNodes {
    pub action: NodeId,
    pub log_prob: NodeId,
    pub mean: NodeId,
    pub log_std: NodeId,
}

impl Actor {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        log_std_bounds: (f64, f64),
        rng: &mut SimRng,
    ) -> Result<Self> {
        let (lo, hi) = log_std_bounds;
        if !(lo < hi) {
            return Err(Error::contract(format!(
                "log-std bounds must satisfy min < max, got [{lo}, {hi}]"
            )));
        }
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Ok(Self {
            net: Mlp::new(&sizes, activation, rng)?,
            action_dim,
            log_std_min: lo,
            log_std_max: hi,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Evaluates the policy on `states` (`B×dS`) with fixed standard-normal
    /// `noise` (`B×dA`). Gradients flow to the bound parameters and to
    /// `states`.
    pub fn on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundMlp,
        states: NodeId,
        noise: &Array,
    ) -> Result<PolicyNodes> {
        let rows = tape.value(states).rows();
        let da = self.action_dim;
        if noise.shape() != [rows, da] {
            return Err(Error::Shape {
                op: "policy",
                lhs: vec![rows, da],
                rhs: noise.shape().to_vec(),
            });
        }
        let out = bound.forward(tape, states)?;
        let mean = tape.slice_cols(out, 0, da)?;
        let raw = tape.slice_cols(out, da, 2 * da)?;
        let squashed = tape.tanh(raw)?;
        let half_span = 0.5 * (self.log_std_max - self.log_std_min);
        let scaled = tape.scale(squashed, half_span)?;
        let offset = tape.scalar(self.log_std_min + half_span);
        let log_std = tape.add(scaled, offset)?;
        let std = tape.exp(log_std)?;
        let eps = tape.leaf(noise.clone());
        let spread = tape.mul(std, eps)?;
        let pre = tape.add(mean, spread)?;
        let action = tape.tanh(pre)?;

        // Gaussian part: −ε²/2 − log σ − log(2π)/2, with the ε term constant.
        let gauss_const = noise.map(|e| -0.5 * e * e - 0.5 * (2.0 * PI).ln());
        let gc = tape.leaf(gauss_const);
        let gauss = tape.sub(gc, log_std)?;
        let a2 = tape.square(action)?;
        let neg_a2 = tape.scale(a2, -1.0)?;
        let one = tape.scalar(1.0 + TANH_EPS);
        let jac = tape.add(neg_a2, one)?;
        let log_jac = tape.ln(jac)?;
        let per_dim = tape.sub(gauss, log_jac)?;
        let log_prob = tape.row_sums(per_dim)?;
        Ok(PolicyNodes {
            action,
            log_prob,
            mean,
            log_std,
        })
    }

    /// Samples a reparameterized action for every row of `states`.
    pub fn sample(&self, states: &Array, rng: &mut SimRng) -> Result<PolicyOutput> {
        let noise = Array::matrix(
            states.rows(),
            self.action_dim,
            standard_normal_vec(rng, states.rows() * self.action_dim),
        )?;
        self.sample_with_noise(states, &noise)
    }

    pub fn sample_with_noise(&self, states: &Array, noise: &Array) -> Result<PolicyOutput> {
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape);
        let s = tape.leaf(states.clone());
        let nodes = self.on_tape(&mut tape, &bound, s, noise)?;
        Ok(PolicyOutput {
            action: tape.value(nodes.action).clone(),
            log_prob: tape.value(nodes.log_prob).clone(),
            mean: tape.value(nodes.mean).clone(),
            log_std: tape.value(nodes.log_std).clone(),
        })
    }

    /// Evaluation-time action `tanh(mean)` for a single state.
    pub fn deterministic_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = Array::matrix(1, state.len(), state.to_vec())?;
        let out = self.net.forward(&x)?;
        Ok(out.data()[..self.action_dim].iter().map(|m| m.tanh()).collect())
    }
}

/// Draws one action for a single state.
pub fn policy_sample(actor: &Actor, state: &[f64], rng: &mut SimRng) -> Result<PolicyOutput> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("policy input state must be finite"));
    }
    let x = Array::matrix(1, state.len(), state.to_vec())?;
    actor.sample(&x, rng)
}
