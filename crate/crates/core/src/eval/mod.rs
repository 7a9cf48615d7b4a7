//! Policy evaluation under perturbed physical parameters.
//!
//! A sweep fixes one parameter at each of `points` evenly spaced values,
//! runs `N` deterministic-policy episodes per value and summarizes the
//! returns by a low quantile. The Robust-AUC is the normalized area under
//! that quantile curve.

mod metrics;
mod svg;

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{greedy_action, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::nets::Actor;
use crate::rng::{derive_rng, derive_seed, standard_normal, SimRng};

pub use metrics::{quantile, robust_auc};
pub use svg::render_svg;

/// Environment variable capping the number of sweep workers.
pub const THREADS_ENV: &str = "USR_RL_THREADS";
pub const BAND: (f64, f64) = (0.05, 0.15);
pub const CURVE_HEADER: &str = "param_value,q05,q10,q15,n_episodes";

/// A state-to-action map used at evaluation time.
pub trait Policy: Sync {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>>;
}

/// The actor's mean action `tanh(μ(s))`.
pub struct DeterministicActor<'a>(pub &'a Actor);

impl Policy for DeterministicActor<'_> {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.0.deterministic_action(state)
    }
}

/// Straight-line moving-to-target controller `a = (e − s)/‖e − s‖`.
pub struct GreedyOracle {
    pub target: Vec<f64>,
}

impl Default for GreedyOracle {
    fn default() -> Self {
        Self {
            target: vec![0.0, 0.0],
        }
    }
}

impl Policy for GreedyOracle {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(greedy_action(state, &self.target))
    }
}

/// Random stream of the `index`-th evaluation episode under `seed`.
pub fn episode_rng(seed: u64, index: u64) -> SimRng {
    derive_rng(seed, "episode", index)
}

/// Undiscounted return of one episode from a fresh reset.
pub fn run_episode<P: Policy + ?Sized>(env: &mut Env, policy: &P, rng: &mut SimRng) -> Result<f64> {
    let mut state = env.reset(rng);
    let mut total = 0.0;
    loop {
        let action = policy.act(&state)?;
        let t = env.step(&action, rng)?;
        total += t.reward;
        if t.done() {
            return Ok(total);
        }
        state = t.next_state;
    }
}

/// Returns of `episodes` episodes, episode `j` seeded by [`episode_rng`].
pub fn evaluate_returns<P: Policy + ?Sized>(
    env: &mut Env,
    policy: &P,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|j| run_episode(env, policy, &mut episode_rng(seed, j as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub param: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub episodes: usize,
    pub quantile: f64,
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn new(param: &str, min: f64, max: f64) -> Self {
        Self {
            param: param.to_string(),
            min,
            max,
            points: 20,
            episodes: 100,
            quantile: 0.10,
            seeds: vec![0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min < self.max) {
            return Err(Error::contract(format!(
                "sweep range needs min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.points < 2 {
            return Err(Error::OutOfRange {
                name: "points".into(),
                value: self.points as f64,
                min: 2.0,
                max: f64::INFINITY,
            });
        }
        if self.episodes == 0 {
            return Err(Error::contract("sweep needs at least one episode per point"));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::OutOfRange {
                name: "quantile".into(),
                value: self.quantile,
                min: 0.0,
                max: 1.0,
            });
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("sweep needs at least one seed"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.max
                } else {
                    self.min + step * i as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub param_value: f64,
    pub q05: f64,
    /// The configured quantile (0.10 by default).
    pub q10: f64,
    pub q15: f64,
    pub n_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustCurveReport {
    pub env: EnvSpec,
    pub param: String,
    pub range: [f64; 2],
    pub points: usize,
    pub quantile: f64,
    pub auc: f64,
    pub band_area: f64,
    pub curve: Vec<CurveRow>,
    pub checkpoint_id: String,
    pub seeds: Vec<u64>,
    pub nominal: Option<f64>,
    pub returns: Vec<Vec<f64>>,
}

impl RobustCurveReport {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from(CURVE_HEADER);
        s.push('\n');
        for r in &self.curve {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.param_value, r.q05, r.q10, r.q15, r.n_episodes
            ));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Worker pool sized by `USR_RL_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => builder = builder.num_threads(n),
            _ => log::warn!("ignoring {THREADS_ENV}={raw:?}; expected a positive integer"),
        }
    }
    builder
        .build()
        .map_err(|e| Error::contract(format!("cannot build worker pool: {e}")))
}

fn point_returns<P: Policy + ?Sized>(
    template: &Env,
    policy: &P,
    cfg: &SweepConfig,
    index: usize,
    value: f64,
) -> Result<Vec<f64>> {
    let mut env = template.clone();
    env.set_params(&BTreeMap::from([(cfg.param.clone(), value)]))?;
    let mut out = Vec::with_capacity(cfg.episodes * cfg.seeds.len());
    for &seed in &cfg.seeds {
        let point_seed = derive_seed(seed, "sweep-point", index as u64);
        out.extend(evaluate_returns(&mut env, policy, cfg.episodes, point_seed)?);
    }
    Ok(out)
}

/// Fixed-perturbation sweep. Points run in parallel; each point's episodes
/// are seeded by its index, so the report does not depend on scheduling.
pub fn sweep<P: Policy + ?Sized>(
    template: &Env,
    policy: &P,
    cfg: &SweepConfig,
    checkpoint_id: &str,
) -> Result<RobustCurveReport> {
    cfg.validate()?;
    let (_, spec) = template.spec().param(&cfg.param)?;
    let nominal = spec.nominal;
    let values = cfg.values();
    // fail fast on out-of-range endpoints before spawning work
    for v in [cfg.min, cfg.max] {
        template
            .clone()
            .set_params(&BTreeMap::from([(cfg.param.clone(), v)]))?;
    }
    let pool = thread_pool()?;
    let returns: Vec<Vec<f64>> = pool.install(|| {
        values
            .par_iter()
            .enumerate()
            .map(|(i, &v)| point_returns(template, policy, cfg, i, v))
            .collect::<Result<_>>()
    })?;
    let mut curve = Vec::with_capacity(values.len());
    for (v, r) in values.iter().zip(&returns) {
        curve.push(CurveRow {
            param_value: *v,
            q05: quantile(r, BAND.0)?,
            q10: quantile(r, cfg.quantile)?,
            q15: quantile(r, BAND.1)?,
            n_episodes: r.len(),
        });
    }
    let col = |f: fn(&CurveRow) -> f64| curve.iter().map(f).collect::<Vec<f64>>();
    let auc = robust_auc(&values, &col(|r| r.q10))?;
    let band_area =
        (robust_auc(&values, &col(|r| r.q15))? - robust_auc(&values, &col(|r| r.q05))?).abs();
    Ok(RobustCurveReport {
        env: template.spec().clone(),
        param: cfg.param.clone(),
        range: [cfg.min, cfg.max],
        points: cfg.points,
        quantile: cfg.quantile,
        auc,
        band_area,
        curve,
        checkpoint_id: checkpoint_id.to_string(),
        seeds: cfg.seeds.clone(),
        nominal: Some(nominal),
        returns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyReport {
    pub env: String,
    pub walk_sigma: f64,
    pub episodes: usize,
    pub quantile: f64,
    pub value: f64,
    pub checkpoint_id: String,
    pub seed: u64,
    pub returns: Vec<f64>,
}

/// One episode whose parameters take a clamped Gaussian random-walk step
/// after every environment step, starting from nominal.
pub fn run_noisy_episode<P: Policy + ?Sized>(
    env: &mut Env,
    policy: &P,
    walk_sigma: f64,
    rng: &mut SimRng,
    walk_rng: &mut SimRng,
) -> Result<f64> {
    let nominal = env.spec().nominal();
    env.set_param_values(&nominal)?;
    let bounds: Vec<(f64, f64)> = env.spec().params.iter().map(|p| (p.min, p.max)).collect();
    let mut state = env.reset(rng);
    let mut total = 0.0;
    loop {
        let action = policy.act(&state)?;
        let t = env.step(&action, rng)?;
        total += t.reward;
        if t.done() {
            return Ok(total);
        }
        state = t.next_state;
        if walk_sigma > 0.0 {
            let next: Vec<f64> = env
                .params()
                .iter()
                .zip(&bounds)
                .map(|(p, (lo, hi))| (p + walk_sigma * standard_normal(walk_rng)).clamp(*lo, *hi))
                .collect();
            env.set_param_values(&next)?;
        }
    }
}

/// The 0.10-quantile return under random-walk parameter noise.
pub fn noisy_sweep<P: Policy + ?Sized>(
    template: &Env,
    policy: &P,
    walk_sigma: f64,
    episodes: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if !(walk_sigma >= 0.0) || !walk_sigma.is_finite() {
        return Err(Error::OutOfRange {
            name: "walk_sigma".into(),
            value: walk_sigma,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    if episodes == 0 {
        return Err(Error::contract("noisy sweep needs at least one episode"));
    }
    let pool = thread_pool()?;
    let returns: Vec<f64> = pool.install(|| {
        (0..episodes)
            .into_par_iter()
            .map(|j| {
                let mut env = template.clone();
                let mut rng = episode_rng(seed, j as u64);
                let mut walk = derive_rng(seed, "walk", j as u64);
                run_noisy_episode(&mut env, policy, walk_sigma, &mut rng, &mut walk)
            })
            .collect::<Result<_>>()
    })?;
    Ok((quantile(&returns, 0.10)?, returns))
}

/// Uniform action in `[−1, 1]^dim`.
pub fn random_action(dim: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}
