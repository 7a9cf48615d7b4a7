use crate::diffcore::{Array, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::SimRng;

use super::mlp::Mlp;

/// A differentiable state-value function.
///
/// Implementations map a `B×d` batch of states to a `B×1` column and must
/// treat rows independently, so the gradient of the summed output with
/// respect to the input batch holds each row's own `∇_s V(s)`.
pub trait ValueFunction {
    fn value_on_tape(&self, tape: &mut Tape, states: NodeId, rng: &mut SimRng) -> Result<NodeId>;

    fn values(&self, states: &Array, rng: &mut SimRng) -> Result<Array> {
        let mut tape = Tape::new();
        let s = tape.leaf(states.clone());
        let v = self.value_on_tape(&mut tape, s, rng)?;
        Ok(tape.value(v).clone())
    }
}

/// Values and input gradients for every row of `points`.
pub fn input_gradients<V: ValueFunction + ?Sized>(
    vf: &V,
    points: &Array,
    rng: &mut SimRng,
) -> Result<(Array, Array)> {
    let mut tape = Tape::new();
    let s = tape.leaf(points.clone());
    let v = vf.value_on_tape(&mut tape, s, rng)?;
    if tape.value(v).len() != points.rows() {
        return Err(Error::Shape {
            op: "input_gradient",
            lhs: points.shape().to_vec(),
            rhs: tape.value(v).shape().to_vec(),
        });
    }
    let total = tape.sum(v)?;
    let grads = tape.backward(total)?;
    let g = grads.get_or_zeros(s, points);
    if !g.is_finite() {
        return Err(Error::evaluation("non-finite value gradient"));
    }
    Ok((tape.value(v).clone(), g))
}

/// `∇_s V(s)` at a single point.
pub fn input_gradient<V: ValueFunction + ?Sized>(
    vf: &V,
    point: &[f64],
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let x = Array::matrix(1, point.len(), point.to_vec())?;
    Ok(input_gradients(vf, &x, rng)?.1.into_data())
}

/// A scalar-output network used directly as `V(s)`.
#[derive(Debug, Clone)]
pub struct MlpValue(pub Mlp);

impl ValueFunction for MlpValue {
    fn value_on_tape(&self, tape: &mut Tape, states: NodeId, _: &mut SimRng) -> Result<NodeId> {
        if self.0.output_dim() != 1 {
            return Err(Error::contract("value network must have a single output"));
        }
        let bound = self.0.bind(tape);
        bound.forward(tape, states)
    }
}

/// `V(s) = −‖s − target‖₂`, the optimal value of the moving-to-target task.
#[derive(Debug, Clone)]
pub struct NegativeDistance {
    pub target: Vec<f64>,
}

impl ValueFunction for NegativeDistance {
    fn value_on_tape(&self, tape: &mut Tape, states: NodeId, _: &mut SimRng) -> Result<NodeId> {
        let d = self.target.len();
        let mut eye = Array::zeros(&[d, d]);
        for i in 0..d {
            eye.data_mut()[i * d + i] = 1.0;
        }
        let shift = Array::matrix(1, d, self.target.iter().map(|t| -t).collect())?;
        let w = tape.leaf(eye);
        let b = tape.leaf(shift);
        let diff = tape.linear(states, w, b)?;
        let sq = tape.square(diff)?;
        let dist2 = tape.row_sums(sq)?;
        let dist = tape.sqrt(dist2)?;
        tape.scale(dist, -1.0)
    }
}

/// `V(s) = c` regardless of the input.
#[derive(Debug, Clone)]
pub struct ConstantValue(pub f64);

impl ValueFunction for ConstantValue {
    fn value_on_tape(&self, tape: &mut Tape, states: NodeId, _: &mut SimRng) -> Result<NodeId> {
        let cols = tape.value(states).cols();
        let w = tape.leaf(Array::zeros(&[cols, 1]));
        let b = tape.leaf(Array::full(&[1, 1], self.0));
        tape.linear(states, w, b)
    }
}
