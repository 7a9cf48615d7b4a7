use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: &Array) -> Array {
        match self {
            Activation::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Tanh => x.map(f64::tanh),
            Activation::Identity => x.clone(),
        }
    }

    fn on_tape(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// One dense layer: `in×out` weight, `1×out` bias, then an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array,
    pub bias: Array,
    pub activation: Activation,
}

/// Feed-forward network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Node ids of an [`Mlp`]'s parameters after binding them to a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    params: Vec<(NodeId, NodeId, Activation)>,
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` weights and zero biases. `sizes` lists the
    /// layer widths from input to output; hidden layers use `hidden` and
    /// the output layer is linear.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut SimRng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::contract(format!(
                "mlp needs at least two positive layer sizes, got {sizes:?}"
            )));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weight: Array::matrix(fan_in, fan_out, w).unwrap(),
                    bias: Array::zeros(&[1, fan_out]),
                    activation: if i + 1 == n {
                        Activation::Identity
                    } else {
                        hidden
                    },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("mlp needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            let (fan_in, fan_out) = l.weight.require_matrix("mlp")?;
            if l.bias.len() != fan_out {
                return Err(Error::Shape {
                    op: "mlp",
                    lhs: l.weight.shape().to_vec(),
                    rhs: l.bias.shape().to_vec(),
                });
            }
            if i > 0 {
                let prev_out = layers[i - 1].weight.cols();
                if prev_out != fan_in {
                    return Err(Error::Shape {
                        op: "mlp",
                        lhs: layers[i - 1].weight.shape().to_vec(),
                        rhs: l.weight.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    /// Weight and bias of every layer, in order.
    pub fn tensors(&self) -> Vec<&Array> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Forward pass on an `n×in` batch without recording a tape.
    pub fn forward(&self, input: &Array) -> Result<Array> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in &self.layers {
            x = l.activation.apply(&x.affine(&l.weight, &l.bias)?);
        }
        Ok(x)
    }

    fn check_input(&self, input: &Array) -> Result<()> {
        if input.shape().len() != 2 || input.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: input.shape().to_vec(),
                rhs: self.layers[0].weight.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let params = self
            .layers
            .iter()
            .map(|l| {
                (
                    tape.leaf(l.weight.clone()),
                    tape.leaf(l.bias.clone()),
                    l.activation,
                )
            })
            .collect();
        BoundMlp { params }
    }
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        let (w0, _, _) = self.params[0];
        let x = tape.value(input);
        if x.shape().len() != 2 || x.cols() != tape.value(w0).rows() {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: x.shape().to_vec(),
                rhs: tape.value(w0).shape().to_vec(),
            });
        }
        let mut h = input;
        for &(w, b, act) in &self.params {
            let z = tape.linear(h, w, b)?;
            h = act.on_tape(tape, z)?;
        }
        Ok(h)
    }

    /// Parameter leaves in [`Mlp::tensors`] order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.params.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }

    /// Gradients for each parameter tensor, in [`Mlp::tensors`] order.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> Vec<Array> {
        self.params
            .iter()
            .flat_map(|&(w, b, _)| {
                [
                    grads.get_or_zeros(w, tape.value(w)),
                    grads.get_or_zeros(b, tape.value(b)),
                ]
            })
            .collect()
    }
}

/// Polyak averaging `target <- (1 - rho) target + rho source`.
pub fn soft_update(target: &mut Mlp, source: &Mlp, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::contract(format!("soft update rho {rho} outside [0, 1]")));
    }
    let src = source.tensors();
    let mut dst = target.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::contract("soft update between different architectures"));
    }
    for (d, s) in dst.iter_mut().zip(&src) {
        if d.shape() != s.shape() {
            return Err(Error::Shape {
                op: "soft_update",
                lhs: d.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
    }
    for (d, s) in dst.iter_mut().zip(src) {
        for (dv, sv) in d.data_mut().iter_mut().zip(s.data()) {
            *dv = (1.0 - rho) * *dv + rho * sv;
        }
    }
    Ok(())
}
