pub mod checkpoint;
pub mod cli;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod eval;
pub mod localmodel;
pub mod nets;
pub mod rng;
pub mod sac;
pub mod tabular;
pub mod uncertainty;

pub use error::{Error, Result};
