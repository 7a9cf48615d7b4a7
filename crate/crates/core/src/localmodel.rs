//! Local Gaussian transition model built from a single replay tuple.
//!
//! For a tuple `(s, a, r, x)` the nominal next-state model is
//! `N(x, diag(σ²))` with `σ` a fixed hyperparameter. Its parameter vector
//! `w̄` is either the mean alone or the mean followed by the per-dimension
//! scale. Density gradients with respect to `w̄` are analytic.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normal_vec, SimRng};

/// Which transition parameters are treated as uncertain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    #[default]
    #[serde(rename = "mean")]
    MeanOnly,
    MeanScale,
}

impl ParamMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(ParamMode::MeanOnly),
            "mean_scale" => Some(ParamMode::MeanScale),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamMode::MeanOnly => "mean",
            ParamMode::MeanScale => "mean_scale",
        }
    }
}

/// A reparameterized next-state sampler `s' = f(w̄, ε)`.
///
/// `pullback` maps `∇_{s'} V(s')` to `∇_{w} V(f(w, ε))` at `w̄` for the
/// noise that produced the draw.
pub trait ReparamTransition {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn draw(&self, rng: &mut SimRng) -> Draw;
    fn pullback(&self, grad_point: &[f64], noise: &[f64]) -> Vec<f64>;
}

/// One sampled next state with the standard-normal noise behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub point: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGaussianModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    mode: ParamMode,
}

impl LocalGaussianModel {
    pub fn build(next_state: &[f64], sigma: &[f64], mode: ParamMode) -> Result<Self> {
        if sigma.len() != next_state.len() {
            return Err(Error::Shape {
                op: "local_model",
                lhs: vec![next_state.len()],
                rhs: vec![sigma.len()],
            });
        }
        if let Some(bad) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::contract(format!(
                "local model scale must be strictly positive, got {bad}"
            )));
        }
        if next_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("local model mean must be finite"));
        }
        Ok(Self {
            mean: next_state.to_vec(),
            scale: sigma.to_vec(),
            mode,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn mode(&self) -> ParamMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `w̄`: the mean, followed by the scale in mean+scale mode.
    pub fn param_vector(&self) -> Vec<f64> {
        match self.mode {
            ParamMode::MeanOnly => self.mean.clone(),
            ParamMode::MeanScale => [self.mean.as_slice(), self.scale.as_slice()].concat(),
        }
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::Shape {
                op: "local_model",
                lhs: vec![self.dim()],
                rhs: vec![point.len()],
            });
        }
        Ok(())
    }

    pub fn log_density(&self, point: &[f64]) -> Result<f64> {
        self.check_point(point)?;
        Ok(self
            .mean
            .iter()
            .zip(&self.scale)
            .zip(point)
            .map(|((m, s), p)| {
                let z = (p - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum())
    }

    pub fn density(&self, point: &[f64]) -> Result<f64> {
        Ok(self.log_density(point)?.exp())
    }

    /// `∇_w P(point | w̄)` over the parameter vector.
    ///
    /// `∂p/∂x_k = p (y_k − x_k)/σ_k²` and
    /// `∂p/∂σ_k = p ((y_k − x_k)²/σ_k³ − 1/σ_k)`.
    pub fn grad_density(&self, point: &[f64]) -> Result<Vec<f64>> {
        let p = self.density(point)?;
        Ok(self.score(point)?.into_iter().map(|v| p * v).collect())
    }

    /// `∇_w log P(point | w̄)`, i.e. the gradient of the density divided by
    /// the density. Finite even where the density underflows.
    pub fn score(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_point(point)?;
        let d = self.dim();
        let mut out = Vec::with_capacity(d * 2);
        for k in 0..d {
            out.push((point[k] - self.mean[k]) / (self.scale[k] * self.scale[k]));
        }
        if self.mode == ParamMode::MeanScale {
            for k in 0..d {
                let s = self.scale[k];
                let diff = point[k] - self.mean[k];
                out.push(diff * diff / (s * s * s) - 1.0 / s);
            }
        }
        Ok(out)
    }

    /// `m` i.i.d. draws `x + σ ⊙ ε`, each kept with its `ε`.
    pub fn sample(&self, m: usize, rng: &mut SimRng) -> Result<Vec<Draw>> {
        if m == 0 {
            return Err(Error::contract("sample count M must be at least 1"));
        }
        Ok((0..m).map(|_| self.draw(rng)).collect())
    }
}

impl ReparamTransition for LocalGaussianModel {
    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn param_dim(&self) -> usize {
        match self.mode {
            ParamMode::MeanOnly => self.dim(),
            ParamMode::MeanScale => 2 * self.dim(),
        }
    }

    fn draw(&self, rng: &mut SimRng) -> Draw {
        let noise = standard_normal_vec(rng, self.dim());
        let point = self
            .mean
            .iter()
            .zip(&self.scale)
            .zip(&noise)
            .map(|((m, s), e)| m + s * e)
            .collect();
        Draw { point, noise }
    }

    fn pullback(&self, grad_point: &[f64], noise: &[f64]) -> Vec<f64> {
        // s' = x + σ ⊙ ε: ∂s'/∂x = I, ∂s'/∂σ = diag(ε)
        let mut g = grad_point.to_vec();
        if self.mode == ParamMode::MeanScale {
            g.extend(grad_point.iter().zip(noise).map(|(a, e)| a * e));
        }
        g
    }
}

/// Composite trapezoid rule with `nodes` equally spaced nodes on `[a, b]`.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> f64 {
    assert!(nodes >= 2, "trapezoid needs at least two nodes");
    let h = (b - a) / (nodes - 1) as f64;
    let mut acc = 0.5 * (f(a) + f(b));
    for i in 1..nodes - 1 {
        acc += f(a + h * i as f64);
    }
    acc * h
}

/// Quadrature nodes and weights of the trapezoid rule on `[a, b]`.
pub fn trapezoid_rule(a: f64, b: f64, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(nodes >= 2, "trapezoid needs at least two nodes");
    let h = (b - a) / (nodes - 1) as f64;
    let xs = (0..nodes).map(|i| a + h * i as f64).collect();
    let ws = (0..nodes)
        .map(|i| if i == 0 || i == nodes - 1 { 0.5 * h } else { h })
        .collect();
    (xs, ws)
}

/// Half-width, in standard deviations, of the integration window used for
/// one-dimensional Gaussian integrals.
pub const QUADRATURE_HALF_WIDTH: f64 = 8.0;

/// `∫ ‖∇_w P(s' | w̄)‖₂ ds'` for a one-dimensional model, by trapezoid
/// quadrature over `mean ± 8σ`. The value does not depend on the mean.
pub fn grad_norm_integral_1d(sigma: f64, mode: ParamMode, nodes: usize) -> Result<f64> {
    let model = LocalGaussianModel::build(&[0.0], &[sigma], mode)?;
    let half = QUADRATURE_HALF_WIDTH * sigma;
    Ok(trapezoid(
        |y| {
            let g = model.grad_density(&[y]).unwrap();
            g.iter().map(|v| v * v).sum::<f64>().sqrt()
        },
        -half,
        half,
        nodes,
    ))
}

/// Monte Carlo estimate of the same integral in any dimension:
/// `E_{s'~P}[‖∇_w P(s')‖₂ / P(s')]`.
pub fn grad_norm_integral_mc(model: &LocalGaussianModel, n: usize, rng: &mut SimRng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..n {
        let d = model.draw(rng);
        let s = model.score(&d.point).unwrap();
        acc += s.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    acc / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn build_copies_fields() {
        let m = LocalGaussianModel::build(&[3.2, 2.4], &[0.1, 0.1], ParamMode::MeanScale).unwrap();
        assert_eq!(m.param_vector(), vec![3.2, 2.4, 0.1, 0.1]);
        let m = LocalGaussianModel::build(&[3.2, 2.4], &[0.1, 0.1], ParamMode::MeanOnly).unwrap();
        assert_eq!(m.param_vector().len(), 2);
        assert_eq!(m.param_dim(), 2);
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(LocalGaussianModel::build(&[0.0, 0.0], &[0.1, 0.0], ParamMode::MeanOnly).is_err());
        assert!(LocalGaussianModel::build(&[0.0], &[-1.0], ParamMode::MeanOnly).is_err());
        assert!(LocalGaussianModel::build(&[0.0], &[1.0, 1.0], ParamMode::MeanOnly).is_err());
    }

    #[test]
    fn density_values() {
        let m = LocalGaussianModel::build(&[0.7], &[1.0], ParamMode::MeanOnly).unwrap();
        assert!((m.density(&[0.7]).unwrap() - 0.398_942_280_4).abs() < 1e-9);
        assert!((m.density(&[1.7]).unwrap() - 0.241_970_724_5).abs() < 1e-9);
        let m2 = LocalGaussianModel::build(&[1.0, -2.0], &[1.0, 1.0], ParamMode::MeanOnly).unwrap();
        assert!((m2.density(&[1.0, -2.0]).unwrap() - 0.159_154_943_1).abs() < 1e-9);
    }

    #[test]
    fn gradient_at_mean() {
        let m = LocalGaussianModel::build(&[0.0], &[1.0], ParamMode::MeanScale).unwrap();
        let g = m.grad_density(&[0.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] + 0.398_942_280_4).abs() < 1e-9);
    }

    #[test]
    fn degenerate_scale_samples_at_mean() {
        let m = LocalGaussianModel::build(&[1.5, -0.5], &[1e-12, 1e-12], ParamMode::MeanOnly).unwrap();
        let mut rng = rng_from_seed(1);
        for d in m.sample(50, &mut rng).unwrap() {
            assert!((d.point[0] - 1.5).abs() < 1e-10);
            assert!((d.point[1] + 0.5).abs() < 1e-10);
        }
        assert!(m.sample(0, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_points() {
        let m = LocalGaussianModel::build(&[0.0, 1.0], &[0.3, 0.2], ParamMode::MeanOnly).unwrap();
        let a = m.sample(10, &mut rng_from_seed(4)).unwrap();
        let b = m.sample(10, &mut rng_from_seed(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pullback_in_both_modes() {
        let m = LocalGaussianModel::build(&[0.0, 0.0], &[1.0, 1.0], ParamMode::MeanScale).unwrap();
        assert_eq!(m.pullback(&[2.0, 3.0], &[0.5, -1.0]), vec![2.0, 3.0, 1.0, -3.0]);
        let m = LocalGaussianModel::build(&[0.0, 0.0], &[1.0, 1.0], ParamMode::MeanOnly).unwrap();
        assert_eq!(m.pullback(&[2.0, 3.0], &[0.5, -1.0]), vec![2.0, 3.0]);
    }

    #[test]
    fn trapezoid_of_line() {
        assert!((trapezoid(|x| x, 0.0, 1.0, 2) - 0.5).abs() < 1e-15);
        let (xs, ws) = trapezoid_rule(0.0, 2.0, 3);
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);
        assert_eq!(ws, vec![0.5, 1.0, 0.5]);
    }
}
