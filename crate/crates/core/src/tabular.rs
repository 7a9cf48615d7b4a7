//! Finite-MDP oracle lab for the robust Bellman operator.
//!
//! For a rectangular norm-ball set `{P̄_sa + α u : ‖u‖ ≤ 1}` over signed
//! measures, the worst case of `⟨P, V⟩` has the closed form
//! `⟨P̄, V⟩ − α‖V‖_*`, with `‖·‖_*` the dual norm. Everything here is checked
//! against an exhaustive minimization, a direct linear solve, or the
//! contraction bound `γ + δ`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localmodel::{trapezoid_rule, LocalGaussianModel, ParamMode, QUADRATURE_HALF_WIDTH};
use crate::rng::{derive_rng, standard_normal, SimRng};
use crate::uncertainty::{dual_l1, dual_l2};

/// Norm of the perturbation ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallNorm {
    L1,
    L2,
}

impl BallNorm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(BallNorm::L1),
            "l2" => Ok(BallNorm::L2),
            _ => Err(Error::contract(format!("unknown set kind '{s}' (expected l1 or l2)"))),
        }
    }

    /// Lipschitz constant of `V ↦ ‖V‖_*` with respect to `‖·‖∞`.
    pub fn penalty_lipschitz(self, n_states: usize) -> f64 {
        match self {
            BallNorm::L2 => (n_states as f64).sqrt(),
            BallNorm::L1 => 1.0,
        }
    }
}

/// Deliberate defects for exercising the verification harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Negates the L2 support function.
    FlipL2Sign,
}

impl Mutation {
    fn penalty(self, norm: BallNorm, v: &[f64], alpha: f64) -> f64 {
        match (norm, self) {
            (BallNorm::L2, Mutation::FlipL2Sign) => -dual_l2(v, alpha),
            (BallNorm::L2, Mutation::None) => dual_l2(v, alpha),
            (BallNorm::L1, _) => dual_l1(v, alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `r[s·nA + a]`.
    pub rewards: Vec<f64>,
    /// `P̄_sa` at `transitions[s·nA + a]`.
    pub transitions: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl FiniteMdp {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_states * self.n_actions;
        if self.rewards.len() != n || self.transitions.len() != n {
            return Err(Error::contract("MDP tables do not match nS·nA"));
        }
        for p in &self.transitions {
            if p.len() != self.n_states || p.iter().any(|v| *v < 0.0) {
                return Err(Error::contract("transition row is not a non-negative nS-vector"));
            }
            if (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::contract("transition row does not sum to 1"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::contract(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }

    /// Garnet-style instance: each row puts random mass on a random subset
    /// of `1..=nS` successor states; rewards are uniform in `[0, 1]`.
    pub fn garnet(n_states: usize, n_actions: usize, gamma: f64, rng: &mut SimRng) -> Self {
        let n = n_states * n_actions;
        let rewards = (0..n).map(|_| rng.random::<f64>()).collect();
        let transitions = (0..n)
            .map(|_| {
                let branching = rng.random_range(1..=n_states);
                let mut idx: Vec<usize> = (0..n_states).collect();
                for i in 0..branching {
                    let j = rng.random_range(i..n_states);
                    idx.swap(i, j);
                }
                let mut row = vec![0.0; n_states];
                for &k in &idx[..branching] {
                    let e: f64 = Exp1.sample(rng);
                    row[k] = e + 1e-12;
                }
                normalize(&mut row);
                row
            })
            .collect();
        Self {
            n_states,
            n_actions,
            rewards,
            transitions,
            gamma,
        }
    }

    /// Random instance with `nS ∈ 2..=8`, `nA ∈ 1..=3`.
    pub fn random(gamma: f64, rng: &mut SimRng) -> Self {
        let ns = rng.random_range(2..=8);
        let na = rng.random_range(1..=3);
        Self::garnet(ns, na, gamma, rng)
    }
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= total);
    // push the rounding residue onto the largest entry
    let residue = 1.0 - row.iter().sum::<f64>();
    if let Some(m) = row
        .iter_mut()
        .max_by(|a, b| a.total_cmp(b))
    {
        *m += residue;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    /// `π(a|s)` at `probs[s·nA + a]`.
    pub probs: Vec<f64>,
    pub n_actions: usize,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
            n_actions,
        }
    }

    pub fn random(n_states: usize, n_actions: usize, rng: &mut SimRng) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let mut row: Vec<f64> = (0..n_actions).map(|_| Exp1.sample(rng)).collect();
            normalize(&mut row);
            probs.extend(row);
        }
        Self { probs, n_actions }
    }

    /// `V(s) = Σ_a π(a|s) Q(s, a)`.
    pub fn state_values(&self, q: &[f64]) -> Vec<f64> {
        q.chunks(self.n_actions)
            .zip(self.probs.chunks(self.n_actions))
            .map(|(qs, ps)| qs.iter().zip(ps).map(|(q, p)| q * p).sum())
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `r + γ(⟨P̄, V⟩ − α‖V‖_*)`.
pub fn robust_backup_closed(p: &[f64], v: &[f64], r: f64, gamma: f64, norm: BallNorm, alpha: f64) -> f64 {
    closed_with(p, v, r, gamma, norm, alpha, Mutation::None)
}

fn closed_with(
    p: &[f64],
    v: &[f64],
    r: f64,
    gamma: f64,
    norm: BallNorm,
    alpha: f64,
    mutation: Mutation,
) -> f64 {
    r + gamma * (dot(p, v) - mutation.penalty(norm, v, alpha))
}

/// Random point on the unit sphere of the chosen norm.
pub fn random_boundary_direction(norm: BallNorm, dim: usize, rng: &mut SimRng) -> Vec<f64> {
    match norm {
        BallNorm::L2 => {
            let u: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.into_iter().map(|x| x / n).collect()
        }
        BallNorm::L1 => {
            let u: Vec<f64> = (0..dim)
                .map(|_| {
                    let e: f64 = Exp1.sample(rng);
                    if rng.random::<bool>() {
                        e
                    } else {
                        -e
                    }
                })
                .collect();
            let n: f64 = u.iter().map(|x| x.abs()).sum();
            u.into_iter().map(|x| x / n).collect()
        }
    }
}

/// The minimizing directions known in closed form: `−V/‖V‖₂` for L2, all
/// vertices `±e_k` for L1.
pub fn analytic_directions(norm: BallNorm, v: &[f64]) -> Vec<Vec<f64>> {
    let dim = v.len();
    match norm {
        BallNorm::L2 => {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                Vec::new()
            } else {
                vec![v.iter().map(|x| -x / n).collect()]
            }
        }
        BallNorm::L1 => (0..dim)
            .flat_map(|k| {
                [1.0, -1.0].map(|s| {
                    let mut e = vec![0.0; dim];
                    e[k] = s;
                    e
                })
            })
            .collect(),
    }
}

/// Exhaustive `min r + γ⟨P̄ + α u, V⟩` over `n_dirs` random boundary
/// directions and, if requested, the analytic minimizers.
#[allow(clippy::too_many_arguments)]
pub fn robust_backup_bruteforce(
    p: &[f64],
    v: &[f64],
    r: f64,
    gamma: f64,
    norm: BallNorm,
    alpha: f64,
    n_dirs: usize,
    include_analytic: bool,
    rng: &mut SimRng,
) -> f64 {
    let base = dot(p, v);
    let eval = |u: &[f64]| r + gamma * (base + alpha * dot(u, v));
    let mut best = if alpha == 0.0 { r + gamma * base } else { f64::INFINITY };
    if alpha == 0.0 {
        return best;
    }
    for _ in 0..n_dirs {
        best = best.min(eval(&random_boundary_direction(norm, v.len(), rng)));
    }
    if include_analytic {
        for u in analytic_directions(norm, v) {
            best = best.min(eval(&u));
        }
    }
    best
}

/// Whether the worst-case transition `P̄ + α u*` has a negative entry.
pub fn minimizer_leaves_simplex(p: &[f64], v: &[f64], norm: BallNorm, alpha: f64) -> bool {
    let dirs = analytic_directions(norm, v);
    let best = dirs
        .iter()
        .min_by(|a, b| dot(a, v).total_cmp(&dot(b, v)));
    match best {
        Some(u) => p.iter().zip(u).any(|(pi, ui)| pi + alpha * ui < 0.0),
        None => false,
    }
}

/// One application of the closed-form robust policy-evaluation operator.
pub fn robust_operator(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    q: &[f64],
    norm: BallNorm,
    alpha: f64,
) -> Vec<f64> {
    operator_with(mdp, policy, q, norm, alpha, Mutation::None)
}

fn operator_with(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    q: &[f64],
    norm: BallNorm,
    alpha: f64,
    mutation: Mutation,
) -> Vec<f64> {
    let v = policy.state_values(q);
    mdp.transitions
        .iter()
        .zip(&mdp.rewards)
        .map(|(p, &r)| closed_with(p, &v, r, mdp.gamma, norm, alpha, mutation))
        .collect()
}

/// The integral-of-duals operator in tabular coordinates, where the
/// transition parameters are `P̄_sa` itself and `∇_w P(s') = e_{s'}`:
/// `r + γ⟨P̄, V⟩ − α Σ_{s'} |V(s')|`.
pub fn integral_operator(mdp: &FiniteMdp, policy: &TabularPolicy, q: &[f64], alpha: f64) -> Vec<f64> {
    let v = policy.state_values(q);
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    mdp.transitions
        .iter()
        .zip(&mdp.rewards)
        .map(|(p, &r)| r + mdp.gamma * dot(p, &v) - alpha * l1)
        .collect()
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    pub q: Vec<f64>,
    pub iterations: usize,
    /// `‖Q_{k+1} − Q_k‖∞` per sweep.
    pub residuals: Vec<f64>,
}

/// Iterates the closed-form robust operator until the a-posteriori bound
/// `f·‖Q_{k+1} − Q_k‖∞ / (1 − f)` on the distance to the fixed point drops
/// below `tol`, where `f = γ + α c`. Refuses when `f ≥ 1`.
pub fn robust_value_iteration(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    norm: BallNorm,
    alpha: f64,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<ValueIteration> {
    mdp.validate()?;
    if !(tol > 0.0) {
        return Err(Error::contract("tolerance must be positive"));
    }
    let factor = mdp.gamma + alpha * norm.penalty_lipschitz(mdp.n_states);
    if factor >= 1.0 {
        return Err(Error::contract(format!(
            "robust operator may not contract: gamma + alpha*c = {} + {}*{} = {factor} >= 1",
            mdp.gamma,
            alpha,
            norm.penalty_lipschitz(mdp.n_states)
        )));
    }
    let n = mdp.n_states * mdp.n_actions;
    let mut q = match init {
        Some(q0) if q0.len() == n => q0.to_vec(),
        Some(q0) => {
            return Err(Error::Shape {
                op: "robust_value_iteration",
                lhs: vec![n],
                rhs: vec![q0.len()],
            })
        }
        None => vec![0.0; n],
    };
    let mut residuals = Vec::new();
    let stop = tol * (1.0 - factor) / factor.max(f64::EPSILON);
    let max_iters = 1_000_000;
    for k in 1..=max_iters {
        let next = robust_operator(mdp, policy, &q, norm, alpha);
        let res = sup_dist(&next, &q);
        residuals.push(res);
        q = next;
        if res <= stop {
            return Ok(ValueIteration {
                q,
                iterations: k,
                residuals,
            });
        }
    }
    Err(Error::evaluation(format!(
        "robust value iteration did not reach tol {tol} in {max_iters} sweeps"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionMeasure {
    pub ratio: f64,
    /// `α max_{s,a} ∫ ‖∇_w P‖₂ ds'`.
    pub delta: f64,
}

/// Which tabular operator a contraction check applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabularOperator {
    Closed(BallNorm),
    IntegralOfDuals,
}

/// `‖TQ₁ − TQ₂‖∞ / ‖Q₁ − Q₂‖∞` on a finite MDP, with `δ = α·nS` (each
/// `∇_w P(s') = e_{s'}` has unit norm and there are `nS` successor states).
pub fn contraction_check_tabular(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    op: TabularOperator,
    q1: &[f64],
    q2: &[f64],
    alpha: f64,
) -> Result<ContractionMeasure> {
    let denom = sup_dist(q1, q2);
    if denom == 0.0 {
        return Err(Error::contract("contraction check needs Q1 != Q2"));
    }
    let apply = |q: &[f64]| match op {
        TabularOperator::Closed(norm) => robust_operator(mdp, policy, q, norm, alpha),
        TabularOperator::IntegralOfDuals => integral_operator(mdp, policy, q, alpha),
    };
    Ok(ContractionMeasure {
        ratio: sup_dist(&apply(q1), &apply(q2)) / denom,
        delta: alpha * mdp.n_states as f64,
    })
}

/// One-dimensional continuous setting: states live on `grid`, `V` is the
/// piecewise-linear interpolant of its grid values (constant beyond the
/// ends), and each grid state `g_i` moves to `N(means[i], σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChain {
    pub grid: Vec<f64>,
    pub means: Vec<f64>,
    pub rewards: Vec<f64>,
    pub sigma: f64,
    pub mode: ParamMode,
    pub gamma: f64,
    pub nodes: usize,
}

impl GaussianChain {
    pub fn random(n: usize, gamma: f64, rng: &mut SimRng) -> Self {
        let grid: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
        let means = grid
            .iter()
            .map(|g| (0.8 * g + rng.random_range(-0.5..0.5)).clamp(-2.0, 2.0))
            .collect();
        let rewards = (0..n).map(|_| rng.random::<f64>()).collect();
        let mode = if rng.random::<bool>() {
            ParamMode::MeanOnly
        } else {
            ParamMode::MeanScale
        };
        Self {
            grid,
            means,
            rewards,
            sigma: rng.random_range(0.2..1.0),
            mode,
            gamma,
            nodes: 801,
        }
    }

    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] {
            return values[0];
        }
        if x >= g[g.len() - 1] {
            return values[values.len() - 1];
        }
        let i = g.partition_point(|v| *v <= x) - 1;
        let t = (x - g[i]) / (g[i + 1] - g[i]);
        values[i] + t * (values[i + 1] - values[i])
    }

    fn model(&self, i: usize) -> LocalGaussianModel {
        LocalGaussianModel::build(&[self.means[i]], &[self.sigma], self.mode)
            .expect("positive sigma")
    }

    fn rule(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let half = QUADRATURE_HALF_WIDTH * self.sigma;
        trapezoid_rule(self.means[i] - half, self.means[i] + half, self.nodes)
    }

    /// `r + γ∫P V ds' − α∫‖∇_w P V‖₂ ds'` at every grid state.
    pub fn operator(&self, values: &[f64], alpha: f64) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| {
                let model = self.model(i);
                let (xs, ws) = self.rule(i);
                let mut expect = 0.0;
                let mut penalty = 0.0;
                for (x, w) in xs.iter().zip(&ws) {
                    let v = self.interpolate(values, *x);
                    let p = model.density(&[*x]).unwrap();
                    let g = model.grad_density(&[*x]).unwrap();
                    expect += w * p * v;
                    penalty += w * dual_l2(&g, 1.0) * v.abs();
                }
                self.rewards[i] + self.gamma * expect - alpha * penalty
            })
            .collect()
    }

    /// `α max_i ∫‖∇_w P_i‖₂ ds'` with the operator's own quadrature rule.
    pub fn delta(&self, alpha: f64) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let model = self.model(i);
                let (xs, ws) = self.rule(i);
                xs.iter()
                    .zip(&ws)
                    .map(|(x, w)| w * dual_l2(&model.grad_density(&[*x]).unwrap(), 1.0))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
            * alpha
    }

    pub fn contraction_check(&self, v1: &[f64], v2: &[f64], alpha: f64) -> Result<ContractionMeasure> {
        let denom = sup_dist(v1, v2);
        if denom == 0.0 {
            return Err(Error::contract("contraction check needs Q1 != Q2"));
        }
        Ok(ContractionMeasure {
            ratio: sup_dist(&self.operator(v1, alpha), &self.operator(v2, alpha)) / denom,
            delta: self.delta(alpha),
        })
    }
}

/// A failing case, serialized for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub suite: String,
    pub trial: usize,
    pub detail: String,
    pub instance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub suite: String,
    pub trials: usize,
    pub worst: f64,
    pub bound: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub summaries: Vec<SuiteSummary>,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<22} {:>7} {:>14} {:>14} {:>9}\n",
            "suite", "trials", "worst", "bound", "failures"
        );
        for m in &self.summaries {
            s.push_str(&format!(
                "{:<22} {:>7} {:>14.3e} {:>14.3e} {:>9}\n",
                m.suite, m.trials, m.worst, m.bound, m.failures
            ));
        }
        s
    }

    fn record(&mut self, suite: &str, trials: usize, worst: f64, bound: f64, violations: Vec<Violation>) {
        self.summaries.push(SuiteSummary {
            suite: suite.to_string(),
            trials,
            worst,
            bound,
            failures: violations.len(),
        });
        self.violations.extend(violations);
    }
}

fn random_vector(n: usize, scale: f64, rng: &mut SimRng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

#[derive(Serialize)]
struct DualityCase<'a> {
    norm: BallNorm,
    alpha: f64,
    gamma: f64,
    reward: f64,
    nominal: &'a [f64],
    values: &'a [f64],
    closed: f64,
    bruteforce: f64,
}

/// Closed form against exhaustive minimization on random instances.
pub fn duality_suite(trials: usize, tol: f64, seed: u64, mutation: Mutation, report: &mut VerifyReport) {
    for norm in [BallNorm::L2, BallNorm::L1] {
        let mut worst = 0.0f64;
        let mut bad = Vec::new();
        for t in 0..trials {
            let mut rng = derive_rng(seed, "duality", t as u64);
            let mdp = FiniteMdp::random(0.9, &mut rng);
            let p = &mdp.transitions[0];
            let v = random_vector(mdp.n_states, 10.0, &mut rng);
            let alpha = rng.random_range(0.0..1.0);
            let r = mdp.rewards[0];
            let closed = closed_with(p, &v, r, mdp.gamma, norm, alpha, mutation);
            let brute =
                robust_backup_bruteforce(p, &v, r, mdp.gamma, norm, alpha, 1000, true, &mut rng);
            let err = (closed - brute).abs();
            worst = worst.max(err);
            if !(err <= tol) {
                bad.push(Violation {
                    suite: format!("duality_{norm:?}").to_lowercase(),
                    trial: t,
                    detail: format!("|closed - bruteforce| = {err:e} > {tol:e}"),
                    instance: serde_json::to_value(DualityCase {
                        norm,
                        alpha,
                        gamma: mdp.gamma,
                        reward: r,
                        nominal: p,
                        values: &v,
                        closed,
                        bruteforce: brute,
                    })
                    .unwrap_or_default(),
                });
            }
        }
        let name = match norm {
            BallNorm::L2 => "duality_l2",
            BallNorm::L1 => "duality_l1",
        };
        report.record(name, trials, worst, tol, bad);
    }
}

/// Robust value iteration from several random starts lands on one point.
pub fn uniqueness_suite(
    trials: usize,
    starts: usize,
    tol: f64,
    seed: u64,
    mutation: Mutation,
    report: &mut VerifyReport,
) {
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for t in 0..trials {
        let mut rng = derive_rng(seed, "uniqueness", t as u64);
        let mdp = FiniteMdp::random(rng.random_range(0.5..0.9), &mut rng);
        let policy = TabularPolicy::random(mdp.n_states, mdp.n_actions, &mut rng);
        let norm = if t % 2 == 0 { BallNorm::L2 } else { BallNorm::L1 };
        let c = norm.penalty_lipschitz(mdp.n_states);
        let alpha = rng.random_range(0.0..1.0) * (1.0 - mdp.gamma) / c * 0.9;
        let n = mdp.n_states * mdp.n_actions;
        let mut fixed: Vec<Vec<f64>> = Vec::new();
        let mut failed = None;
        for _ in 0..starts {
            let init = random_vector(n, 50.0, &mut rng);
            match iterate_with(&mdp, &policy, norm, alpha, tol, &init, mutation) {
                Ok(q) => fixed.push(q),
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        let spread = fixed
            .iter()
            .skip(1)
            .map(|q| sup_dist(q, &fixed[0]))
            .fold(0.0, f64::max);
        worst = worst.max(spread);
        if failed.is_some() || !(spread <= 2.0 * tol) {
            bad.push(Violation {
                suite: "uniqueness".into(),
                trial: t,
                detail: failed.unwrap_or_else(|| format!("fixed points differ by {spread:e}")),
                instance: serde_json::json!({ "mdp": mdp, "policy": policy, "norm": norm, "alpha": alpha }),
            });
        }
    }
    report.record("uniqueness", trials, worst, 2.0 * tol, bad);
}

fn iterate_with(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    norm: BallNorm,
    alpha: f64,
    tol: f64,
    init: &[f64],
    mutation: Mutation,
) -> Result<Vec<f64>> {
    if mutation == Mutation::None {
        return robust_value_iteration(mdp, policy, norm, alpha, tol, Some(init)).map(|v| v.q);
    }
    let mut q = init.to_vec();
    for _ in 0..100_000 {
        let next = operator_with(mdp, policy, &q, norm, alpha, mutation);
        let res = sup_dist(&next, &q);
        q = next;
        if res < tol {
            return Ok(q);
        }
    }
    Err(Error::evaluation("mutated iteration did not settle"))
}

/// Measured operator ratios against `γ + δ`.
pub fn contraction_suite(trials: usize, seed: u64, mutation: Mutation, report: &mut VerifyReport) {
    let mut worst = f64::NEG_INFINITY;
    let mut bad = Vec::new();
    for t in 0..trials {
        let mut rng = derive_rng(seed, "contraction", t as u64);
        let mdp = FiniteMdp::garnet(5, rng.random_range(1..=3), rng.random_range(0.0..0.99), &mut rng);
        let policy = TabularPolicy::random(mdp.n_states, mdp.n_actions, &mut rng);
        let alpha = rng.random_range(0.0..0.05);
        let n = mdp.n_states * mdp.n_actions;
        let scale = rng.random_range(0.1..100.0);
        let q1 = random_vector(n, scale, &mut rng);
        let q2 = random_vector(n, scale, &mut rng);
        let op = match t % 3 {
            0 => TabularOperator::Closed(BallNorm::L2),
            1 => TabularOperator::Closed(BallNorm::L1),
            _ => TabularOperator::IntegralOfDuals,
        };
        let m = match (op, mutation) {
            (TabularOperator::Closed(norm), Mutation::FlipL2Sign) => {
                let a = operator_with(&mdp, &policy, &q1, norm, alpha, mutation);
                let b = operator_with(&mdp, &policy, &q2, norm, alpha, mutation);
                Ok(ContractionMeasure {
                    ratio: sup_dist(&a, &b) / sup_dist(&q1, &q2),
                    delta: alpha * mdp.n_states as f64,
                })
            }
            _ => contraction_check_tabular(&mdp, &policy, op, &q1, &q2, alpha),
        };
        let Ok(m) = m else { continue };
        let bound = mdp.gamma + m.delta + 1e-9;
        worst = worst.max(m.ratio - bound);
        if m.ratio > bound {
            bad.push(Violation {
                suite: "contraction".into(),
                trial: t,
                detail: format!("ratio {} > gamma + delta = {}", m.ratio, bound),
                instance: serde_json::json!({ "mdp": mdp, "policy": policy, "alpha": alpha, "q1": q1, "q2": q2 }),
            });
        }
    }
    report.record("contraction", trials, worst, 0.0, bad);
}

/// Runs the duality, uniqueness and contraction suites.
pub fn verify(trials: usize, tol: f64, seed: u64, mutation: Mutation) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(Error::contract("trials must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::contract("tol must be positive"));
    }
    let mut report = VerifyReport::default();
    duality_suite(trials, tol, seed, mutation, &mut report);
    uniqueness_suite(trials.min(100), 3, tol.min(1e-8), seed, mutation, &mut report);
    contraction_suite(trials, seed, mutation, &mut report);
    Ok(report)
}
