//! Uncertainty sets on transition parameters, their support functions, and
//! the sampled robust Bellman target.
//!
//! For a parameter ball of radius `α` the worst-case linear change
//! `sup ⟨l, w̃⟩` is a norm of `l`: the L2 ball gives `α‖l‖₂`, the L1 ball
//! gives `α‖l‖∞` and the ellipsoid `{w̃ : ‖w̃ ⊘ d‖₂ ≤ α}` gives `α‖d ⊙ l‖₂`.
//! The robust target subtracts that penalty, applied to
//! `l = ∇_w P(s') V(s')` and importance-weighted by `1/P(s')`, from every
//! sampled bootstrap value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::localmodel::{Draw, LocalGaussianModel, ParamMode, ReparamTransition};
use crate::nets::{input_gradients, ValueFunction};
use crate::rng::SimRng;

/// Samples with a smaller nominal density are redrawn.
pub const DENSITY_FLOOR: f64 = 1e-30;
pub const MAX_REDRAWS: usize = 10;
/// Below this raw-gradient norm the adversarial direction is uniform.
pub const DIRECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum UsrKind {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "l2_usr")]
    L2Usr,
    #[serde(rename = "l1_usr")]
    L1Usr,
    #[serde(rename = "adv_usr")]
    AdvUsr,
    #[serde(rename = "l1_reg")]
    L1WeightReg,
    #[serde(rename = "l2_reg")]
    L2WeightReg,
}

impl UsrKind {
    pub const ALL: [UsrKind; 6] = [
        UsrKind::None,
        UsrKind::L2Usr,
        UsrKind::L1Usr,
        UsrKind::AdvUsr,
        UsrKind::L1WeightReg,
        UsrKind::L2WeightReg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UsrKind::None => "none",
            UsrKind::L2Usr => "l2_usr",
            UsrKind::L1Usr => "l1_usr",
            UsrKind::AdvUsr => "adv_usr",
            UsrKind::L1WeightReg => "l1_reg",
            UsrKind::L2WeightReg => "l2_reg",
        }
    }

    /// Whether the kind changes the Bellman target (as opposed to the loss).
    pub fn regularizes_target(self) -> bool {
        matches!(self, UsrKind::L2Usr | UsrKind::L1Usr | UsrKind::AdvUsr)
    }

    pub fn regularizes_weights(self) -> bool {
        matches!(self, UsrKind::L1WeightReg | UsrKind::L2WeightReg)
    }
}

impl FromStr for UsrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UsrKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::contract(format!(
                    "unknown uncertainty kind '{s}' (expected one of {})",
                    UsrKind::ALL.map(|k| k.as_str()).join(", ")
                ))
            })
    }
}

impl fmt::Display for UsrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct UncertaintySetSpec {
    pub kind: UsrKind,
    pub radius: f64,
}

impl UncertaintySetSpec {
    pub fn new(kind: UsrKind, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::OutOfRange {
                name: "alpha_u".into(),
                value: radius,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        Ok(Self { kind, radius })
    }

    /// The radius actually applied; `kind = none` forces zero.
    pub fn effective_radius(&self) -> f64 {
        match self.kind {
            UsrKind::None => 0.0,
            _ => self.radius,
        }
    }
}

/// `α‖l‖₂`.
pub fn dual_l2(l: &[f64], alpha: f64) -> f64 {
    alpha * l.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `α max_k |l_k|`.
pub fn dual_l1(l: &[f64], alpha: f64) -> f64 {
    alpha * l.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `α‖d ⊙ l‖₂`.
pub fn dual_weighted_l2(l: &[f64], direction: &[f64], alpha: f64) -> f64 {
    alpha
        * l.iter()
            .zip(direction)
            .map(|(v, d)| (v * d) * (v * d))
            .sum::<f64>()
            .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvDirection {
    pub raw: Vec<f64>,
    pub direction: Vec<f64>,
}

impl AdvDirection {
    /// `d = g / ‖g‖₂`, or the uniform `1/√W` direction when `g` vanishes.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::evaluation("non-finite value gradient in adversarial direction"));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let direction = if norm < DIRECTION_TOL {
            vec![1.0 / (raw.len() as f64).sqrt(); raw.len()]
        } else {
            raw.iter().map(|v| v / norm).collect()
        };
        Ok(Self { raw, direction })
    }
}

/// Draws one next state from `transition`, differentiates the value there
/// and pulls the gradient back to the transition parameters.
pub fn adv_direction<V, T>(vf: &V, transition: &T, rng: &mut SimRng) -> Result<AdvDirection>
where
    V: ValueFunction + ?Sized,
    T: ReparamTransition + ?Sized,
{
    let draw = transition.draw(rng);
    let x = Array::matrix(1, draw.point.len(), draw.point.clone())?;
    let (_, g) = input_gradients(vf, &x, rng)?;
    AdvDirection::from_raw(transition.pullback(g.data(), &draw.noise))
}

/// Shared settings of a batch of robust targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSettings {
    pub set: UncertaintySetSpec,
    pub samples: usize,
    pub gamma: f64,
    /// Adv-USR only: average the raw gradient over the `M` target samples
    /// instead of drawing one fresh point per transition.
    pub average_directions: bool,
}

impl TargetSettings {
    pub fn new(set: UncertaintySetSpec, samples: usize, gamma: f64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::contract("sample count M must be at least 1"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::OutOfRange {
                name: "gamma".into(),
                value: gamma,
                min: 0.0,
                max: 1.0,
            });
        }
        Ok(Self {
            set,
            samples,
            gamma,
            average_directions: false,
        })
    }
}

/// Reward and termination of one replay tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRow {
    pub reward: f64,
    /// Cuts the bootstrap term.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    pub targets: Vec<f64>,
    /// Mean over rows of `(1/M) Σ penalty_i / P(s'_i)`.
    pub penalty_mean: f64,
}

fn draw_above_floor(model: &LocalGaussianModel, rng: &mut SimRng) -> Result<(Draw, f64)> {
    for _ in 0..=MAX_REDRAWS {
        let d = model.draw(rng);
        let p = model.density(&d.point)?;
        if p >= DENSITY_FLOOR {
            return Ok((d, p));
        }
    }
    Err(Error::evaluation(format!(
        "next-state density stayed below {DENSITY_FLOOR} after {MAX_REDRAWS} redraws"
    )))
}

/// Robust targets `y = r + γ (1/M) Σ_i [V(s'_i) − penalty_i / P(s'_i)]` for a
/// batch of tuples, one local model per row.
///
/// Random draws happen in a fixed order regardless of kind and radius: all
/// `s'_i` first, then the value function, then (Adv-USR) the direction
/// samples. Targets for different radii are therefore comparable under the
/// same seed.
pub fn robust_targets<V: ValueFunction + ?Sized>(
    rows: &[TargetRow],
    models: &[LocalGaussianModel],
    vf: &V,
    settings: &TargetSettings,
    rng: &mut SimRng,
) -> Result<TargetBatch> {
    if rows.len() != models.len() {
        return Err(Error::Shape {
            op: "robust_target",
            lhs: vec![rows.len()],
            rhs: vec![models.len()],
        });
    }
    if rows.is_empty() {
        return Ok(TargetBatch {
            targets: Vec::new(),
            penalty_mean: 0.0,
        });
    }
    let m = settings.samples;
    let dim = models[0].dim();
    let mut draws = Vec::with_capacity(rows.len() * m);
    let mut densities = Vec::with_capacity(rows.len() * m);
    for model in models {
        for _ in 0..m {
            let (d, p) = draw_above_floor(model, rng)?;
            draws.push(d);
            densities.push(p);
        }
    }
    let mut flat = Vec::with_capacity(draws.len() * dim);
    for d in &draws {
        flat.extend_from_slice(&d.point);
    }
    let points = Array::matrix(draws.len(), dim, flat)?;
    let kind = settings.set.kind;
    let alpha = settings.set.effective_radius();
    let averaged = kind == UsrKind::AdvUsr && settings.average_directions;
    let (values, point_grads) = if averaged {
        let (v, g) = input_gradients(vf, &points, rng)?;
        (v, Some(g))
    } else {
        (vf.values(&points, rng)?, None)
    };
    if !values.is_finite() {
        return Err(Error::evaluation("non-finite bootstrap value"));
    }

    let directions: Option<Vec<Vec<f64>>> = match (kind, point_grads) {
        (UsrKind::AdvUsr, Some(g)) => Some(
            models
                .iter()
                .enumerate()
                .map(|(r, model)| {
                    let mut raw = vec![0.0; model.param_dim()];
                    for i in r * m..(r + 1) * m {
                        let pulled = model.pullback(g.row(i), &draws[i].noise);
                        for (acc, v) in raw.iter_mut().zip(pulled) {
                            *acc += v / m as f64;
                        }
                    }
                    AdvDirection::from_raw(raw).map(|a| a.direction)
                })
                .collect::<Result<_>>()?,
        ),
        (UsrKind::AdvUsr, None) => {
            let fresh: Vec<Draw> = models.iter().map(|model| model.draw(rng)).collect();
            let mut flat = Vec::with_capacity(fresh.len() * dim);
            for d in &fresh {
                flat.extend_from_slice(&d.point);
            }
            let x = Array::matrix(fresh.len(), dim, flat)?;
            let (_, g) = input_gradients(vf, &x, rng)?;
            Some(
                models
                    .iter()
                    .zip(&fresh)
                    .enumerate()
                    .map(|(r, (model, d))| {
                        AdvDirection::from_raw(model.pullback(g.row(r), &d.noise))
                            .map(|a| a.direction)
                    })
                    .collect::<Result<_>>()?,
            )
        }
        _ => None,
    };

    let mut targets = Vec::with_capacity(rows.len());
    let mut penalty_total = 0.0;
    for (r, (row, model)) in rows.iter().zip(models).enumerate() {
        let mut acc = 0.0;
        let mut pen_acc = 0.0;
        for i in r * m..(r + 1) * m {
            let v = values.data()[i];
            let penalty = if kind.regularizes_target() && alpha > 0.0 && v != 0.0 {
                let l: Vec<f64> = model
                    .grad_density(&draws[i].point)?
                    .into_iter()
                    .map(|g| g * v)
                    .collect();
                let dual = match kind {
                    UsrKind::L2Usr => dual_l2(&l, alpha),
                    UsrKind::L1Usr => dual_l1(&l, alpha),
                    UsrKind::AdvUsr => {
                        dual_weighted_l2(&l, &directions.as_ref().expect("direction")[r], alpha)
                    }
                    _ => 0.0,
                };
                dual / densities[i]
            } else {
                0.0
            };
            acc += v - penalty;
            pen_acc += penalty;
        }
        let bootstrap = if row.done { 0.0 } else { acc / m as f64 };
        targets.push(row.reward + settings.gamma * bootstrap);
        penalty_total += pen_acc / m as f64;
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::evaluation("non-finite robust target"));
    }
    Ok(TargetBatch {
        targets,
        penalty_mean: penalty_total / rows.len() as f64,
    })
}

/// Single-tuple form of [`robust_targets`].
pub fn robust_target<V: ValueFunction + ?Sized>(
    reward: f64,
    model: &LocalGaussianModel,
    vf: &V,
    settings: &TargetSettings,
    rng: &mut SimRng,
) -> Result<f64> {
    let row = TargetRow {
        reward,
        done: false,
    };
    Ok(robust_targets(&[row], std::slice::from_ref(model), vf, settings, rng)?.targets[0])
}

/// Builds one local model per next state with a shared scale.
pub fn local_models(
    next_states: &Array,
    sigma: &[f64],
    mode: ParamMode,
) -> Result<Vec<LocalGaussianModel>> {
    (0..next_states.rows())
        .map(|r| LocalGaussianModel::build(next_states.row(r), sigma, mode))
        .collect()
}
