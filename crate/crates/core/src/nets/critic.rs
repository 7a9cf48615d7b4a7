use crate::diffcore::{Array, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::SimRng;

use super::mlp::{Activation, BoundMlp, Mlp};

/// State-action value network on the concatenated input `[s, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
}

impl Critic {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::new(&sizes, activation, rng)?,
        })
    }

    /// `B×1` values for `B×dS` states and `B×dA` actions.
    pub fn on_tape(
        tape: &mut Tape,
        bound: &BoundMlp,
        states: NodeId,
        actions: NodeId,
    ) -> Result<NodeId> {
        let x = tape.concat_cols(states, actions)?;
        bound.forward(tape, x)
    }

    pub fn values(&self, states: &Array, actions: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape);
        let s = tape.leaf(states.clone());
        let a = tape.leaf(actions.clone());
        let q = Self::on_tape(&mut tape, &bound, s, a)?;
        Ok(tape.value(q).clone())
    }
}

/// Scalar `Q(s, a)` for a single state-action pair.
pub fn critic_forward(critic: &Critic, state: &[f64], action: &[f64]) -> Result<f64> {
    if state.len() + action.len() != critic.net.input_dim() {
        return Err(Error::Shape {
            op: "critic_forward",
            lhs: vec![state.len(), action.len()],
            rhs: vec![critic.net.input_dim()],
        });
    }
    let s = Array::matrix(1, state.len(), state.to_vec())?;
    let a = Array::matrix(1, action.len(), action.to_vec())?;
    critic.values(&s, &a)?.item()
}

/// Pessimistic twin estimate.
pub fn min_twin(q1: f64, q2: f64) -> f64 {
    q1.min(q2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn zero_params_give_zero() {
        let mut rng = rng_from_seed(0);
        let mut c = Critic::new(2, 1, &[8, 8], Activation::Relu, &mut rng).unwrap();
        for t in c.net.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        assert_eq!(critic_forward(&c, &[1.0, -2.0], &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn twin_minimum() {
        assert_eq!(min_twin(2.0, 3.0), 2.0);
        assert_eq!(min_twin(3.0, 2.0), 2.0);
    }

    #[test]
    fn repeated_calls_identical() {
        let mut rng = rng_from_seed(9);
        let c = Critic::new(2, 2, &[8], Activation::Relu, &mut rng).unwrap();
        let a = critic_forward(&c, &[0.1, 0.2], &[-0.3, 0.4]).unwrap();
        let b = critic_forward(&c, &[0.1, 0.2], &[-0.3, 0.4]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = rng_from_seed(9);
        let c = Critic::new(2, 2, &[8], Activation::Relu, &mut rng).unwrap();
        assert!(critic_forward(&c, &[0.1], &[-0.3, 0.4]).is_err());
    }

    #[test]
    fn twin_critics_are_independent_draws() {
        let mut rng = rng_from_seed(9);
        let c1 = Critic::new(2, 2, &[8], Activation::Relu, &mut rng).unwrap();
        let c2 = Critic::new(2, 2, &[8], Activation::Relu, &mut rng).unwrap();
        assert_ne!(c1, c2);
    }
}
