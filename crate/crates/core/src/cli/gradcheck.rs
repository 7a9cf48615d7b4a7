//! Registry of finite-difference gradient checks.
//!
//! Every check compares an analytic gradient with central differences at a
//! fixed seeded point. The error of one coordinate is
//! `|analytic − numeric| / max(|analytic|, |numeric|, FLOOR)`, so exact
//! zeros compare equal and tiny gradients are judged on an absolute scale.

use crate::diffcore::{central_differences, Array, NodeId, OpKind, Tape};
use crate::error::Result;
use crate::localmodel::{LocalGaussianModel, ParamMode};
use crate::nets::{input_gradients, Activation, Actor, Critic, MlpValue, Mlp};
use crate::rng::{derive_rng, standard_normal_vec, SimRng};
use crate::sac::critic_loss;
use crate::uncertainty::UsrKind;

use rand::Rng;

pub const FLOOR: f64 = 1e-6;
pub const EPSILON: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;
pub const DENSITY_THRESHOLD: f64 = 1e-6;
const ROOT_SEED: u64 = 0x6772_6164;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub group: String,
    pub checks: usize,
    pub worst: f64,
    pub threshold: f64,
}

impl GroupResult {
    pub fn passed(&self) -> bool {
        self.worst < self.threshold
    }
}

pub fn scaled_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

type Check = Box<dyn Fn(&mut SimRng) -> Result<f64>>;

struct Group {
    name: &'static str,
    threshold: f64,
    checks: Vec<Check>,
}

/// `f` returns `(value, analytic gradient)`; only values are used off-point.
fn compare<F>(f: F, point: &[f64], epsilon: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = f(point)?;
    let numeric = central_differences(|x| f(x).map(|(v, _)| v), point, epsilon)?;
    Ok(scaled_error(&analytic, &numeric))
}

fn uniform(rng: &mut SimRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Reduces a tape node to a scalar with fixed random weights so that every
/// output coordinate contributes to the checked gradient.
fn weighted_sum(tape: &mut Tape, node: NodeId, weights: &Array) -> Result<NodeId> {
    let w = tape.leaf(weights.clone());
    let prod = tape.mul(node, w)?;
    tape.sum(prod)
}

/// Checks the gradient of one primitive with respect to each operand.
fn primitive(kind: OpKind, shapes: Vec<Vec<usize>>, lo: f64, hi: f64) -> Check {
    Box::new(move |rng| {
        let inputs: Vec<Array> = shapes
            .iter()
            .map(|s| Array::new(s.clone(), uniform(rng, s.iter().product(), lo, hi)))
            .collect::<Result<_>>()?;
        let out_shape = {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
            let out = tape.forward(kind, &ids)?;
            tape.value(out).shape().to_vec()
        };
        let weights = Array::new(out_shape.clone(), uniform(rng, out_shape.iter().product(), 0.5, 1.5))?;
        let mut worst = 0.0f64;
        for slot in 0..inputs.len() {
            let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                let mut tape = Tape::new();
                let ids: Vec<NodeId> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        if i == slot {
                            Array::new(a.shape().to_vec(), x.to_vec()).map(|v| tape.leaf(v))
                        } else {
                            Ok(tape.leaf(a.clone()))
                        }
                    })
                    .collect::<Result<_>>()?;
                let out = tape.forward(kind, &ids)?;
                let loss = weighted_sum(&mut tape, out, &weights)?;
                let value = tape.value(loss).item()?;
                let grads = tape.backward(loss)?;
                Ok((value, grads.get_or_zeros(ids[slot], tape.value(ids[slot])).into_data()))
            };
            worst = worst.max(compare(f, inputs[slot].data(), EPSILON)?);
        }
        Ok(worst)
    })
}

fn primitive_groups() -> Vec<Group> {
    let m = |r: usize, c: usize| vec![r, c];
    let binary = |kind, lo, hi| primitive(kind, vec![m(3, 4), m(3, 4)], lo, hi);
    let unary = |kind, lo, hi| primitive(kind, vec![m(3, 4)], lo, hi);
    let table: Vec<(&'static str, Check)> = vec![
        ("autodiff_add", binary(OpKind::Add, -2.0, 2.0)),
        ("autodiff_sub", binary(OpKind::Sub, -2.0, 2.0)),
        ("autodiff_mul", binary(OpKind::Mul, -2.0, 2.0)),
        ("autodiff_div", binary(OpKind::Div, 0.5, 2.0)),
        ("autodiff_matmul", primitive(OpKind::MatMul, vec![m(3, 4), m(4, 2)], -1.0, 1.0)),
        ("autodiff_linear", primitive(OpKind::Linear, vec![m(3, 4), m(4, 2), m(1, 2)], -1.0, 1.0)),
        ("autodiff_tanh", unary(OpKind::Tanh, -2.0, 2.0)),
        ("autodiff_exp", unary(OpKind::Exp, -2.0, 2.0)),
        ("autodiff_ln", unary(OpKind::Ln, 0.5, 3.0)),
        ("autodiff_square", unary(OpKind::Square, -2.0, 2.0)),
        ("autodiff_sqrt", unary(OpKind::Sqrt, 0.5, 3.0)),
        ("autodiff_relu", unary(OpKind::Relu, 0.1, 2.0)),
        ("autodiff_relu_negative", unary(OpKind::Relu, -2.0, -0.1)),
        ("autodiff_minimum", binary(OpKind::Minimum, -2.0, 2.0)),
        ("autodiff_sum", unary(OpKind::Sum, -2.0, 2.0)),
        ("autodiff_mean", unary(OpKind::Mean, -2.0, 2.0)),
        ("autodiff_scale", unary(OpKind::Scale(-1.7), -2.0, 2.0)),
        ("autodiff_concat_cols", primitive(OpKind::ConcatCols, vec![m(3, 2), m(3, 3)], -2.0, 2.0)),
        ("autodiff_slice_cols", unary(OpKind::SliceCols(1, 3), -2.0, 2.0)),
        ("autodiff_broadcast", primitive(OpKind::Mul, vec![m(3, 4), vec![]], -2.0, 2.0)),
    ];
    table
        .into_iter()
        .map(|(name, check)| Group {
            name,
            threshold: DEFAULT_THRESHOLD,
            checks: vec![check],
        })
        .collect()
}

/// Gradient of the density with respect to the model parameters, in both
/// parameterizations and several dimensions.
fn density_checks() -> Vec<Check> {
    let mut checks: Vec<Check> = Vec::new();
    for mode in [ParamMode::MeanOnly, ParamMode::MeanScale] {
        for dim in [1usize, 2, 3] {
            checks.push(Box::new(move |rng| {
                let mean = uniform(rng, dim, -1.0, 1.0);
                let sigma = uniform(rng, dim, 0.5, 1.5);
                let model = LocalGaussianModel::build(&mean, &sigma, mode)?;
                let point: Vec<f64> = mean
                    .iter()
                    .zip(&sigma)
                    .map(|(m, s)| m + s * rng.random_range(-1.5..1.5))
                    .collect();
                let analytic = model.grad_density(&point)?;
                let f = |w: &[f64]| {
                    let (m, s) = match mode {
                        ParamMode::MeanOnly => (w.to_vec(), sigma.clone()),
                        ParamMode::MeanScale => (w[..dim].to_vec(), w[dim..].to_vec()),
                    };
                    LocalGaussianModel::build(&m, &s, mode)?.density(&point)
                };
                let numeric = central_differences(f, &model.param_vector(), 1e-5)?;
                Ok(scaled_error(&analytic, &numeric))
            }));
        }
    }
    checks
}

fn small_actor(rng: &mut SimRng) -> Result<Actor> {
    Actor::new(3, 2, &[5, 4], Activation::Relu, (-5.0, 2.0), rng)
}

fn flat(net: &Mlp) -> Vec<f64> {
    net.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
}

fn with_flat(net: &Mlp, x: &[f64]) -> Mlp {
    let mut out = net.clone();
    let mut offset = 0;
    for t in out.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&x[offset..offset + n]);
        offset += n;
    }
    out
}

fn policy_logprob_checks() -> Vec<Check> {
    let params: Check = Box::new(|rng| {
        let actor = small_actor(rng)?;
        let states = Array::matrix(4, 3, uniform(rng, 12, -1.0, 1.0))?;
        let noise = Array::matrix(4, 2, standard_normal_vec(rng, 8))?;
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let a = Actor {
                net: with_flat(&actor.net, x),
                ..actor.clone()
            };
            let mut tape = Tape::new();
            let bound = a.net.bind(&mut tape);
            let s = tape.leaf(states.clone());
            let nodes = a.on_tape(&mut tape, &bound, s, &noise)?;
            let total = tape.sum(nodes.log_prob)?;
            let value = tape.value(total).item()?;
            let grads = tape.backward(total)?;
            let g = bound.gradients(&tape, &grads);
            Ok((value, g.iter().flat_map(|t| t.data().to_vec()).collect()))
        };
        compare(f, &flat(&actor.net), EPSILON)
    });
    let states: Check = Box::new(|rng| {
        let actor = small_actor(rng)?;
        let noise = Array::matrix(4, 2, standard_normal_vec(rng, 8))?;
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut tape = Tape::new();
            let bound = actor.net.bind(&mut tape);
            let s = tape.leaf(Array::matrix(4, 3, x.to_vec())?);
            let nodes = actor.on_tape(&mut tape, &bound, s, &noise)?;
            let total = tape.sum(nodes.log_prob)?;
            let value = tape.value(total).item()?;
            let grads = tape.backward(total)?;
            Ok((value, grads.get_or_zeros(s, tape.value(s)).into_data()))
        };
        compare(f, &uniform(rng, 12, -1.0, 1.0), EPSILON)
    });
    vec![params, states]
}

fn critic_loss_checks() -> Vec<Check> {
    [UsrKind::None, UsrKind::L1WeightReg, UsrKind::L2WeightReg]
        .into_iter()
        .map(|kind| -> Check {
            Box::new(move |rng| {
                let critic = Critic::new(3, 2, &[6, 5], Activation::Relu, rng)?;
                let states = Array::matrix(5, 3, uniform(rng, 15, -1.0, 1.0))?;
                let actions = Array::matrix(5, 2, uniform(rng, 10, -1.0, 1.0))?;
                let targets = uniform(rng, 5, -2.0, 2.0);
                let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                    let c = Critic {
                        net: with_flat(&critic.net, x),
                    };
                    let (loss, grads) = critic_loss(&c, &states, &actions, &targets, kind, 0.01)?;
                    Ok((loss, grads.iter().flat_map(|t| t.data().to_vec()).collect()))
                };
                compare(f, &flat(&critic.net), EPSILON)
            })
        })
        .collect()
}

/// `∇_s V(s)` of a network value function, used by the adversarial set.
fn value_input_checks() -> Vec<Check> {
    vec![Box::new(|rng| {
        let net = Mlp::new(&[3, 6, 1], Activation::Tanh, rng)?;
        let vf = MlpValue(net);
        let point = uniform(rng, 3, -1.0, 1.0);
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let pts = Array::matrix(1, 3, x.to_vec())?;
            let mut scratch = derive_rng(0, "unused", 0);
            let (v, g) = input_gradients(&vf, &pts, &mut scratch)?;
            Ok((v.item()?, g.into_data()))
        };
        compare(f, &point, EPSILON)
    })]
}

fn registry() -> Vec<Group> {
    let mut groups = primitive_groups();
    groups.push(Group {
        name: "density_grad",
        threshold: DENSITY_THRESHOLD,
        checks: density_checks(),
    });
    groups.push(Group {
        name: "policy_logprob",
        threshold: DEFAULT_THRESHOLD,
        checks: policy_logprob_checks(),
    });
    groups.push(Group {
        name: "critic_loss",
        threshold: DEFAULT_THRESHOLD,
        checks: critic_loss_checks(),
    });
    groups.push(Group {
        name: "value_input_grad",
        threshold: DEFAULT_THRESHOLD,
        checks: value_input_checks(),
    });
    groups
}

pub fn group_names() -> Vec<&'static str> {
    registry().iter().map(|g| g.name).collect()
}

/// Runs every registered group; each check has its own derived seed.
pub fn run_all() -> Result<Vec<GroupResult>> {
    registry()
        .into_iter()
        .map(|g| {
            let mut worst = 0.0f64;
            for (i, check) in g.checks.iter().enumerate() {
                let mut rng = derive_rng(ROOT_SEED, g.name, i as u64);
                let err = check(&mut rng)?;
                worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            }
            Ok(GroupResult {
                group: g.name.to_string(),
                checks: g.checks.len(),
                worst,
                threshold: g.threshold,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_required_groups() {
        let names = group_names();
        for g in ["density_grad", "policy_logprob", "critic_loss", "autodiff_matmul"] {
            assert!(names.contains(&g), "{g} missing");
        }
    }

    #[test]
    fn scaled_error_cases() {
        assert_eq!(scaled_error(&[0.0], &[0.0]), 0.0);
        assert!((scaled_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-15);
        assert!((scaled_error(&[1e-9], &[0.0]) - 1e-3).abs() < 1e-15);
    }
}
