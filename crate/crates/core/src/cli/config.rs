//! Plain-text `key = value` run configuration.
//!
//! Lines are `key = value`, blank, `# comment`, or a `[section]` header.
//! Inside a section, bare keys are prefixed with the section name; fully
//! dotted keys are accepted anywhere. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::eval::SweepConfig;
use crate::localmodel::ParamMode;
use crate::sac::TrainConfig;
use crate::uncertainty::UsrKind;

pub const KEYS: [&str; 31] = [
    "env.name",
    "env.noise_scale",
    "env.horizon",
    "train.gamma",
    "train.batch_size",
    "train.buffer_capacity",
    "train.actor_lr",
    "train.critic_lr",
    "train.temp_lr",
    "train.init_temperature",
    "train.rho",
    "train.target_update_freq",
    "train.actor_update_freq",
    "train.warmup_steps",
    "train.max_steps",
    "train.log_std_min",
    "train.log_std_max",
    "train.hidden_width",
    "train.seed",
    "usr.kind",
    "usr.alpha_u",
    "usr.sample_size",
    "usr.model_sigma",
    "usr.param_mode",
    "sweep.param",
    "sweep.min",
    "sweep.max",
    "sweep.points",
    "sweep.episodes",
    "sweep.quantile",
    "sweep.walk_sigma",
];

/// Sweep settings as written in a config; unset fields fall back to
/// command-line values or defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSection {
    pub param: Option<String>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub points: Option<usize>,
    pub episodes: Option<usize>,
    pub quantile: Option<f64>,
    pub walk_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sweep: SweepSection,
    /// Line on which each key was set.
    pub lines: BTreeMap<String, usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
            lines: BTreeMap::new(),
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        key: key.to_string(),
        message: format!("cannot parse '{raw}' as {}", std::any::type_name::<T>()),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !["env", "train", "usr", "sweep"].contains(&name) {
                    return Err(Error::Config {
                        line,
                        key: format!("[{name}]"),
                        message: "unknown section (expected env, train, usr or sweep)".into(),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    key: content.to_string(),
                    message: "expected key = value".into(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            let key = match (&section, k.contains('.')) {
                (Some(s), false) => format!("{s}.{k}"),
                _ => k.to_string(),
            };
            cfg.set(line, &key, v)?;
            cfg.lines.insert(key, line);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.sweep;
        match key {
            "env.name" => {
                t.env = EnvKind::from_str(raw).map_err(|_| Error::Config {
                    line,
                    key: key.into(),
                    message: format!("unknown environment '{raw}' (expected moving_to_target or pendulum)"),
                })?
            }
            "env.noise_scale" => t.noise_scale = value(line, key, raw)?,
            "env.horizon" => t.horizon = Some(value(line, key, raw)?),
            "train.gamma" => t.gamma = value(line, key, raw)?,
            "train.batch_size" => t.batch_size = value(line, key, raw)?,
            "train.buffer_capacity" => t.buffer_capacity = value(line, key, raw)?,
            "train.actor_lr" => t.actor_lr = value(line, key, raw)?,
            "train.critic_lr" => t.critic_lr = value(line, key, raw)?,
            "train.temp_lr" => t.temp_lr = value(line, key, raw)?,
            "train.init_temperature" => t.init_temperature = value(line, key, raw)?,
            "train.rho" => t.rho = value(line, key, raw)?,
            "train.target_update_freq" => t.target_update_freq = value(line, key, raw)?,
            "train.actor_update_freq" => t.actor_update_freq = value(line, key, raw)?,
            "train.warmup_steps" => t.warmup_steps = value(line, key, raw)?,
            "train.max_steps" => t.max_steps = value(line, key, raw)?,
            "train.log_std_min" => t.log_std_min = value(line, key, raw)?,
            "train.log_std_max" => t.log_std_max = value(line, key, raw)?,
            "train.hidden_width" => t.hidden_width = value(line, key, raw)?,
            "train.seed" => t.seed = value(line, key, raw)?,
            "usr.kind" => {
                t.usr.kind = UsrKind::from_str(raw).map_err(|_| Error::Config {
                    line,
                    key: key.into(),
                    message: format!(
                        "unknown kind '{raw}' (expected one of {})",
                        UsrKind::ALL.map(|k| k.as_str()).join(", ")
                    ),
                })?
            }
            "usr.alpha_u" => t.usr.radius = value(line, key, raw)?,
            "usr.sample_size" => t.sample_size = value(line, key, raw)?,
            "usr.model_sigma" => t.model_sigma = value(line, key, raw)?,
            "usr.param_mode" => {
                t.param_mode = ParamMode::parse(raw).ok_or_else(|| Error::Config {
                    line,
                    key: key.into(),
                    message: format!("unknown mode '{raw}' (expected mean or mean_scale)"),
                })?
            }
            "sweep.param" => s.param = Some(raw.to_string()),
            "sweep.min" => s.min = Some(value(line, key, raw)?),
            "sweep.max" => s.max = Some(value(line, key, raw)?),
            "sweep.points" => s.points = Some(value(line, key, raw)?),
            "sweep.episodes" => s.episodes = Some(value(line, key, raw)?),
            "sweep.quantile" => s.quantile = Some(value(line, key, raw)?),
            "sweep.walk_sigma" => s.walk_sigma = Some(value(line, key, raw)?),
            _ => {
                return Err(Error::Config {
                    line,
                    key: key.into(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Maps a TrainConfig field name back to its config key.
    fn key_for(field: &str) -> String {
        let key = match field {
            "noise_scale" => "env.noise_scale",
            "horizon" => "env.horizon",
            "alpha_u" => "usr.alpha_u",
            "sample_size" => "usr.sample_size",
            "model_sigma" => "usr.model_sigma",
            other => return format!("train.{other}"),
        };
        key.to_string()
    }

    fn validate(&self) -> Result<()> {
        let located = |key: String, message: String| Error::Config {
            line: self.lines.get(&key).copied().unwrap_or(0),
            key,
            message,
        };
        match self.train.validate() {
            Ok(()) => {}
            Err(Error::OutOfRange {
                name,
                value,
                min,
                max,
            }) => {
                return Err(located(
                    Self::key_for(&name),
                    format!("value {value} violates {min} <= {name} (upper bound {max})"),
                ))
            }
            Err(Error::Contract(m)) => return Err(located("train.log_std_min".into(), m)),
            Err(e) => return Err(e),
        }
        if let Some(w) = self.sweep.walk_sigma {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(located("sweep.walk_sigma".into(), format!("value {w} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Sweep settings with command-line overrides taking precedence.
    pub fn sweep_config(&self, overrides: &SweepSection) -> Result<SweepConfig> {
        let pick_param = overrides.param.clone().or_else(|| self.sweep.param.clone());
        let param = pick_param.ok_or_else(|| Error::contract("sweep needs a parameter (--param or sweep.param)"))?;
        let min = overrides.min.or(self.sweep.min);
        let max = overrides.max.or(self.sweep.max);
        let (Some(min), Some(max)) = (min, max) else {
            return Err(Error::contract("sweep needs --min and --max (or sweep.min / sweep.max)"));
        };
        let mut cfg = SweepConfig::new(&param, min, max);
        if let Some(p) = overrides.points.or(self.sweep.points) {
            cfg.points = p;
        }
        if let Some(n) = overrides.episodes.or(self.sweep.episodes) {
            cfg.episodes = n;
        }
        if let Some(q) = overrides.quantile.or(self.sweep.quantile) {
            cfg.quantile = q;
        }
        Ok(cfg)
    }
}
