//! JSON checkpoint of a trained agent.
//!
//! Parameters are stored as ordered named records (`name`, `shape`,
//! flat `data`). Floats are written in shortest round-trip form, so
//! save → load → save is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::nets::{Activation, Actor, Critic, Layer, Mlp};
use crate::sac::{Agent, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub seed: u64,
    pub steps: u64,
    pub config: TrainConfig,
    pub records: Vec<ParamRecord>,
}

fn push_net(records: &mut Vec<ParamRecord>, prefix: &str, net: &Mlp) {
    for (i, layer) in net.layers.iter().enumerate() {
        for (kind, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
            records.push(ParamRecord {
                name: format!("{prefix}.{i}.{kind}"),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            });
        }
    }
}

impl AgentCheckpoint {
    pub fn from_agent(agent: &Agent, config: &TrainConfig, steps: u64) -> Self {
        let mut records = Vec::new();
        push_net(&mut records, "actor", &agent.actor.net);
        push_net(&mut records, "critic1", &agent.critics[0].net);
        push_net(&mut records, "critic2", &agent.critics[1].net);
        push_net(&mut records, "target1", &agent.targets[0].net);
        push_net(&mut records, "target2", &agent.targets[1].net);
        records.push(ParamRecord {
            name: "log_temperature".into(),
            shape: vec![],
            data: vec![agent.log_temperature],
        });
        Self {
            version: FORMAT_VERSION,
            seed: config.seed,
            steps,
            config: config.clone(),
            records,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::contract(format!(
                "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        for r in &self.records {
            if r.shape.iter().product::<usize>() != r.data.len() {
                return Err(Error::contract(format!(
                    "record {} has shape {:?} but {} values",
                    r.name,
                    r.shape,
                    r.data.len()
                )));
            }
        }
        Ok(())
    }

    fn net(&self, prefix: &str) -> Result<Mlp> {
        let mut layers: Vec<Layer> = Vec::new();
        let find = |name: String| {
            self.records
                .iter()
                .find(|r| r.name == name)
                .map(|r| Array::new(r.shape.clone(), r.data.clone()))
        };
        for i in 0.. {
            let Some(weight) = find(format!("{prefix}.{i}.weight")) else {
                break;
            };
            let bias = find(format!("{prefix}.{i}.bias")).ok_or_else(|| {
                Error::contract(format!("checkpoint lacks {prefix}.{i}.bias"))
            })??;
            layers.push(Layer {
                weight: weight?,
                bias,
                activation: Activation::Relu,
            });
        }
        match layers.last_mut() {
            Some(last) => last.activation = Activation::Identity,
            None => return Err(Error::contract(format!("checkpoint has no {prefix} records"))),
        }
        Mlp::from_layers(layers)
    }

    pub fn actor(&self) -> Result<Actor> {
        let net = self.net("actor")?;
        let action_dim = net.output_dim() / 2;
        Ok(Actor {
            net,
            action_dim,
            log_std_min: self.config.log_std_min,
            log_std_max: self.config.log_std_max,
        })
    }

    pub fn agent(&self) -> Result<Agent> {
        self.validate()?;
        let critic = |p: &str| self.net(p).map(|net| Critic { net });
        let log_temperature = self
            .records
            .iter()
            .find(|r| r.name == "log_temperature")
            .and_then(|r| r.data.first().copied())
            .ok_or_else(|| Error::contract("checkpoint lacks log_temperature"))?;
        Ok(Agent::from_parts(
            self.actor()?,
            [critic("critic1")?, critic("critic2")?],
            [critic("target1")?, critic("target2")?],
            log_temperature,
            &self.config,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn id(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn ckpt() -> AgentCheckpoint {
        let cfg = TrainConfig {
            hidden_width: 6,
            ..Default::default()
        };
        let agent = Agent::new(&cfg, &mut rng_from_seed(3)).unwrap();
        AgentCheckpoint::from_agent(&agent, &cfg, 0)
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let c = ckpt();
        let a = c.to_json().unwrap();
        let b = AgentCheckpoint::from_json(&a).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn agent_round_trip() {
        let c = ckpt();
        let agent = c.agent().unwrap();
        let again = AgentCheckpoint::from_agent(&agent, &c.config, 0);
        assert_eq!(c, again);
    }

    #[test]
    fn bad_records_rejected() {
        let mut c = ckpt();
        c.records[0].data.pop();
        assert!(c.validate().is_err());
        let mut c = ckpt();
        c.version = 99;
        assert!(AgentCheckpoint::from_json(&c.to_json().unwrap()).is_err());
    }

    #[test]
    fn record_order_is_stable() {
        let c = ckpt();
        assert_eq!(c.records[0].name, "actor.0.weight");
        assert_eq!(c.records.last().unwrap().name, "log_temperature");
        assert_eq!(c.id().unwrap().len(), 64);
    }
}
