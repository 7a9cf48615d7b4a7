//! Actor and critic networks built on [`crate::diffcore`].

mod adam;
mod critic;
mod mlp;
mod policy;
mod value;

pub use adam::{clip_global_norm, Adam};
pub use critic::{critic_forward, min_twin, Critic};
pub use mlp::{soft_update, Activation, BoundMlp, Layer, Mlp};
pub use policy::{policy_sample, Actor, PolicyNodes, PolicyOutput, TANH_EPS};
pub use value::{
    input_gradient, input_gradients, ConstantValue, MlpValue, NegativeDistance, ValueFunction,
};
