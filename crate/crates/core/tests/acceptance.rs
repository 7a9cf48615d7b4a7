//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! straight to stdout (bypassing capture) and then asserts.
//!
//! The criteria run one at a time so that their wall-clock budgets are
//! measured without interference.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Beta, Distribution};

use usr_rl::checkpoint::AgentCheckpoint;
use usr_rl::cli::{self, gradcheck, RunConfig, SweepSection};
use usr_rl::diffcore::{Array, NodeId, Tape};
use usr_rl::envs::moving_target::{mtt_optimal_value, FrictionTransition};
use usr_rl::eval::{self, quantile, robust_auc, DeterministicActor, GreedyOracle};
use usr_rl::localmodel::{trapezoid_rule, LocalGaussianModel, ParamMode, QUADRATURE_HALF_WIDTH};
use usr_rl::nets::{NegativeDistance, ValueFunction};
use usr_rl::rng::{derive_rng, rng_from_seed, standard_normal, SimRng};
use usr_rl::sac::{evaluate_agent, train, Agent, TrainConfig};
use usr_rl::tabular::{contraction_suite, duality_suite, uniqueness_suite, GaussianChain, Mutation, VerifyReport};
use usr_rl::uncertainty::{
    adv_direction, dual_l1, dual_l2, dual_weighted_l2, local_models, robust_target, robust_targets,
    TargetRow, TargetSettings, UncertaintySetSpec, UsrKind,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line and fails the test if the criterion failed.
fn report(id: u32, name: &str, pass: bool, budget: Duration, elapsed: Duration, detail: &str) {
    let within = elapsed <= budget;
    let ok = pass && within;
    let line = format!(
        "acceptance {id:>2} {:<4} {name}: {detail} [{:.1}s / budget {:.0}s]\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(within, "criterion {id} exceeded its runtime budget");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn acceptance_config() -> RunConfig {
    RunConfig::parse(include_str!("../configs/acceptance.conf")).expect("acceptance preset parses")
}

#[test]
fn criterion_01_duality_oracle() {
    let _g = serial();
    let t = Instant::now();
    let mut rep = VerifyReport::default();
    duality_suite(1000, 1e-6, 1, Mutation::None, &mut rep);
    let worst = rep.summaries.iter().map(|s| s.worst).fold(0.0, f64::max);
    report(
        1,
        "closed-form robust backup equals brute force (L1, L2; 1000 instances)",
        rep.passed(),
        secs(30),
        t.elapsed(),
        &format!("worst |closed - brute| = {worst:.2e} (tol 1e-6)"),
    );
}

fn unit_l2(d: usize, rng: &mut SimRng) -> Vec<f64> {
    let u: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.into_iter().map(|x| x / n).collect()
}

/// Point on the unit L1 sphere; a sparse Beta-based sampler keeps plenty
/// of mass near the vertices and edges.
fn unit_l1(d: usize, rng: &mut SimRng) -> Vec<f64> {
    let beta = Beta::new(0.05, 1.0).unwrap();
    let u: Vec<f64> = (0..d)
        .map(|_| {
            let m: f64 = beta.sample(rng) + 1e-300;
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    let n: f64 = u.iter().map(|x| x.abs()).sum();
    u.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn criterion_02_dual_function_oracles() {
    let _g = serial();
    let t = Instant::now();
    let samples = 100_000;
    let mut worst = [0.0f64; 3];
    for i in 0..100u64 {
        let mut rng = derive_rng(2, "dual-input", i);
        let d = rng.random_range(1..=3);
        let l: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let dir: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let alpha = rng.random_range(0.01..2.0);
        let (mut s2, mut s1, mut sw) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for _ in 0..samples {
            let u = unit_l2(d, &mut rng);
            s2 = s2.max(alpha * dot(&u, &l));
            let ellipse: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a * b).collect();
            sw = sw.max(alpha * dot(&ellipse, &l));
            s1 = s1.max(alpha * dot(&unit_l1(d, &mut rng), &l));
        }
        let rel = |closed: f64, brute: f64| (closed - brute).abs() / closed.abs().max(1e-12);
        worst[0] = worst[0].max(rel(dual_l2(&l, alpha), s2));
        worst[1] = worst[1].max(rel(dual_l1(&l, alpha), s1));
        worst[2] = worst[2].max(rel(dual_weighted_l2(&l, &dir, alpha), sw));
    }
    report(
        2,
        "dual functions match sampled suprema (1e5 boundary samples, 100 inputs)",
        worst.iter().all(|w| *w <= 1e-3),
        secs(60),
        t.elapsed(),
        &format!(
            "worst relative error l2 {:.2e}, l1 {:.2e}, weighted {:.2e} (tol 1e-3)",
            worst[0], worst[1], worst[2]
        ),
    );
}

#[test]
fn criterion_03_contraction() {
    let _g = serial();
    let t = Instant::now();
    let mut rep = VerifyReport::default();
    contraction_suite(10_000, 3, Mutation::None, &mut rep);
    let tabular_margin = rep.summaries[0].worst;

    let mut chain_margin = f64::NEG_INFINITY;
    let mut chain_ok = true;
    for c in 0..100u64 {
        let mut rng = derive_rng(3, "chain", c);
        let gamma = rng.random_range(0.0..0.99);
        let mut chain = GaussianChain::random(9, gamma, &mut rng);
        chain.nodes = 401;
        let alpha = rng.random_range(0.0..0.3);
        for p in 0..100 {
            let scale = rng.random_range(0.1..50.0);
            let v1: Vec<f64> = (0..9).map(|_| rng.random_range(-scale..scale)).collect();
            let v2: Vec<f64> = match p % 3 {
                0 => (0..9).map(|_| rng.random_range(-scale..scale)).collect(),
                1 => v1.iter().map(|v| -v).collect(),
                _ => {
                    let shift = rng.random_range(-scale..scale);
                    v1.iter().map(|v| v + shift).collect()
                }
            };
            let m = chain.contraction_check(&v1, &v2, alpha).unwrap();
            let margin = m.ratio - (gamma + m.delta + 1e-9);
            chain_margin = chain_margin.max(margin);
            chain_ok &= margin <= 0.0;
        }
    }
    report(
        3,
        "operator ratio <= gamma + delta (1e4 tabular pairs, 1e4 local-Gaussian pairs)",
        rep.passed() && chain_ok,
        secs(60),
        t.elapsed(),
        &format!(
            "max(ratio - gamma - delta): tabular {tabular_margin:.3e}, local-Gaussian {chain_margin:.3e}"
        ),
    );
}

#[test]
fn criterion_04_fixed_point_uniqueness() {
    let _g = serial();
    let t = Instant::now();
    let mut rep = VerifyReport::default();
    uniqueness_suite(100, 10, 1e-8, 4, Mutation::None, &mut rep);
    report(
        4,
        "robust value iteration from 10 starts agrees within 2 tol (100 MDPs, tol 1e-8)",
        rep.passed(),
        secs(60),
        t.elapsed(),
        &format!("worst spread {:.3e} (bound 2e-8)", rep.summaries[0].worst),
    );
}

#[test]
fn criterion_05_gradient_suites() {
    let _g = serial();
    let t = Instant::now();
    let results = gradcheck::run_all().unwrap();
    let failing: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} {:.2e}", r.group, r.worst))
        .collect();
    let worst_default = results
        .iter()
        .filter(|r| r.group != "density_grad")
        .map(|r| r.worst)
        .fold(0.0, f64::max);
    let density = results.iter().find(|r| r.group == "density_grad").unwrap().worst;
    report(
        5,
        "analytic gradients match central differences",
        failing.is_empty(),
        secs(60),
        t.elapsed(),
        &format!(
            "{} groups, worst {worst_default:.2e} (tol 1e-4), density {density:.2e} (tol 1e-6){}",
            results.len(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    );
}

/// `V(x) = c − (x − m)²` on one-dimensional states.
struct Quadratic {
    c: f64,
    m: f64,
}

impl Quadratic {
    fn at(&self, x: f64) -> f64 {
        self.c - (x - self.m).powi(2)
    }
}

impl ValueFunction for Quadratic {
    fn value_on_tape(&self, tape: &mut Tape, states: NodeId, _: &mut SimRng) -> usr_rl::Result<NodeId> {
        let w = tape.leaf(Array::matrix(1, 1, vec![1.0])?);
        let b = tape.leaf(Array::matrix(1, 1, vec![-self.m])?);
        let shifted = tape.linear(states, w, b)?;
        let sq = tape.square(shifted)?;
        let neg = tape.scale(sq, -1.0)?;
        let c = tape.scalar(self.c);
        tape.add(neg, c)
    }
}

#[test]
fn criterion_06_sampled_target_matches_quadrature() {
    let _g = serial();
    let t = Instant::now();
    let vf = Quadratic { c: 3.0, m: 0.2 };
    let (mean, sigma, reward, gamma, alpha) = (0.5, 0.5, 1.0, 0.9, 0.2);
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (mode, kind) in [
        (ParamMode::MeanOnly, UsrKind::L2Usr),
        (ParamMode::MeanScale, UsrKind::L2Usr),
        (ParamMode::MeanScale, UsrKind::L1Usr),
    ] {
        let model = LocalGaussianModel::build(&[mean], &[sigma], mode).unwrap();
        let settings =
            TargetSettings::new(UncertaintySetSpec::new(kind, alpha).unwrap(), 100_000, gamma).unwrap();
        let sampled = robust_target(reward, &model, &vf, &settings, &mut rng_from_seed(6)).unwrap();

        // r + γ (∫ P V ds' − α ∫ ‖∇_w P‖_* |V| ds') by the trapezoid rule
        let half = QUADRATURE_HALF_WIDTH * sigma;
        let (xs, ws) = trapezoid_rule(mean - half, mean + half, 20_001);
        let (mut expect, mut penalty) = (0.0, 0.0);
        for (x, w) in xs.iter().zip(&ws) {
            let z = (x - mean) / sigma;
            let p = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let mut grad = vec![p * z / sigma];
            if mode == ParamMode::MeanScale {
                grad.push(p * (z * z - 1.0) / sigma);
            }
            let lv: Vec<f64> = grad.iter().map(|g| g * vf.at(*x)).collect();
            let dual = match kind {
                UsrKind::L1Usr => lv.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                _ => lv.iter().map(|v| v * v).sum::<f64>().sqrt(),
            };
            expect += w * p * vf.at(*x);
            penalty += w * dual;
        }
        let quad = reward + gamma * (expect - alpha * penalty);
        let rel = (sampled - quad).abs() / quad.abs();
        worst = worst.max(rel);
        detail.push(format!("{}/{} {sampled:.4} vs {quad:.4}", kind, mode.as_str()));
    }
    report(
        6,
        "M=1e5 sampled robust target matches quadrature",
        worst <= 0.01,
        secs(30),
        t.elapsed(),
        &format!("{}; worst relative {worst:.2e} (tol 1e-2)", detail.join(", ")),
    );
}

#[test]
fn criterion_07_moving_target_geometry() {
    let _g = serial();
    let t = Instant::now();
    let vf = NegativeDistance {
        target: vec![0.0, 0.0],
    };
    let transition = FrictionTransition::new(&[4.0, 3.0], &[-0.8, -0.6], &[1.0, 1.0], 0.0).unwrap();
    let adv = adv_direction(&vf, &transition, &mut rng_from_seed(7)).unwrap();
    let err = (adv.raw[0] - 0.64).abs().max((adv.raw[1] - 0.36).abs());
    let norm = adv.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let v_star = mtt_optimal_value(&[4.0, 3.0], &[0.0, 0.0]);
    report(
        7,
        "adversarial direction and optimal value at s=(4,3)",
        err <= 1e-6 && (norm - 1.0).abs() <= 1e-12 && (v_star + 5.0).abs() <= 1e-12,
        secs(1),
        t.elapsed(),
        &format!(
            "raw ({:.6}, {:.6}), |d| = {norm:.12}, V*(s) = {v_star}",
            adv.raw[0], adv.raw[1]
        ),
    );
}

struct TrainedRun {
    checkpoint: AgentCheckpoint,
    eval_return: f64,
    elapsed: Duration,
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EVAL_SEED: u64 = 900;
const EVAL_EPISODES: usize = 100;

fn train_runs(kind: UsrKind) -> Vec<TrainedRun> {
    let base = acceptance_config().train;
    let alpha = base.usr.radius;
    SEEDS
        .iter()
        .map(|&seed| {
            let t = Instant::now();
            let cfg = TrainConfig { seed, ..base.clone() }.with_usr(kind, alpha);
            let outcome = train(&cfg).unwrap();
            assert!(outcome.abort.is_none(), "training aborted: {:?}", outcome.abort);
            let agent = outcome.checkpoint.agent().unwrap();
            let eval_return = evaluate_agent(&agent, &cfg, EVAL_EPISODES, EVAL_SEED).unwrap();
            TrainedRun {
                checkpoint: outcome.checkpoint,
                eval_return,
                elapsed: t.elapsed(),
            }
        })
        .collect()
}

fn baseline_runs() -> &'static [TrainedRun] {
    static RUNS: OnceLock<Vec<TrainedRun>> = OnceLock::new();
    RUNS.get_or_init(|| train_runs(UsrKind::None))
}

#[test]
fn criterion_08_end_to_end_learning() {
    let _g = serial();
    let t = Instant::now();
    let cfg = acceptance_config().train;
    let mut env = cfg.make_env().unwrap();
    let oracle = eval::evaluate_returns(&mut env, &GreedyOracle::default(), EVAL_EPISODES, EVAL_SEED).unwrap();
    let oracle_mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
    let oracle_median = quantile(&oracle, 0.5).unwrap();

    let runs = baseline_runs();
    let train_time: Duration = runs.iter().map(|r| r.elapsed).sum();
    let returns: Vec<f64> = runs.iter().map(|r| r.eval_return).collect();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let elapsed = t.elapsed().max(train_time);
    report(
        8,
        "SAC reaches mean evaluation return >= -9 in 3e4 steps (5 seeds)",
        mean >= -9.0,
        secs(20 * 60),
        elapsed,
        &format!(
            "greedy oracle mean {oracle_mean:.2} / median {oracle_median:.2} (1.5x median {:.2}); \
             per-seed {returns:.2?}; mean {mean:.2}",
            1.5 * oracle_median
        ),
    );
}

#[test]
fn criterion_09_directional_robustness() {
    let _g = serial();
    let t = Instant::now();
    let run_cfg = acceptance_config();
    let mut sweep_cfg = run_cfg.sweep_config(&SweepSection::default()).unwrap();
    sweep_cfg.seeds = vec![EVAL_SEED];
    let env = run_cfg.train.make_env().unwrap();
    let auc = |run: &TrainedRun| {
        let actor = run.checkpoint.actor().unwrap();
        eval::sweep(&env, &DeterministicActor(&actor), &sweep_cfg, "").unwrap().auc
    };
    let baseline = baseline_runs();
    let baseline_time: Duration = baseline.iter().map(|r| r.elapsed).sum();
    let adv = train_runs(UsrKind::AdvUsr);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for (b, a) in baseline.iter().zip(&adv) {
        let (ab, aa) = (auc(b), auc(a));
        wins += usize::from(aa >= ab);
        pairs.push(format!("({ab:.2}, {aa:.2})"));
    }
    // the shared baseline runs count against this budget too
    let elapsed = t.elapsed() + baseline_time;
    report(
        9,
        "Adv-USR robust AUC >= None in at least 4 of 5 paired seeds (w1 in [0.3, 2.0])",
        wins >= 4,
        secs(45 * 60),
        elapsed,
        &format!(
            "alpha_u {}, (none, adv) AUC per seed {}; adv wins {wins}/5",
            run_cfg.train.usr.radius,
            pairs.join(" ")
        ),
    );
}

#[test]
fn criterion_10_pessimism() {
    let _g = serial();
    let t = Instant::now();
    let cfg = TrainConfig {
        hidden_width: 32,
        ..TrainConfig::default()
    };
    let mut violations = 0usize;
    let mut max_gap = f64::NEG_INFINITY;
    for b in 0..1000u64 {
        let mut rng = derive_rng(10, "batch", b);
        let agent = Agent::new(&cfg, &mut derive_rng(10, "agent", b % 10)).unwrap();
        let vf = agent.soft_value();
        let n = 8;
        let next = Array::matrix(n, 2, (0..2 * n).map(|_| rng.random_range(-6.0..6.0)).collect()).unwrap();
        let rows: Vec<TargetRow> = (0..n)
            .map(|_| TargetRow {
                reward: rng.random_range(-3.0..0.0),
                done: rng.random_range(0.0..1.0) < 0.1,
            })
            .collect();
        let mode = if b % 2 == 0 { ParamMode::MeanOnly } else { ParamMode::MeanScale };
        let models = local_models(&next, &[0.1, 0.1], mode).unwrap();
        let alpha = rng.random_range(1e-4..1.0);
        let seed = rng.random::<u64>();
        for kind in [UsrKind::L2Usr, UsrKind::L1Usr, UsrKind::AdvUsr] {
            let settings = |a: f64| {
                let mut s = TargetSettings::new(UncertaintySetSpec::new(kind, a).unwrap(), 1 + (b % 3) as usize, 0.99)
                    .unwrap();
                s.average_directions = b % 5 == 0;
                s
            };
            let robust = robust_targets(&rows, &models, &vf, &settings(alpha), &mut rng_from_seed(seed)).unwrap();
            let plain = robust_targets(&rows, &models, &vf, &settings(0.0), &mut rng_from_seed(seed)).unwrap();
            for (r, p) in robust.targets.iter().zip(&plain.targets) {
                max_gap = max_gap.max(r - p);
                violations += usize::from(r > p);
            }
        }
    }
    report(
        10,
        "robust targets never exceed alpha_u = 0 targets (1e3 batches, 3 kinds)",
        violations == 0,
        secs(30),
        t.elapsed(),
        &format!("violations {violations}, max(robust - plain) {max_gap:.3e}"),
    );
}

/// Area under a piecewise-linear curve by summing trapezoids.
fn trapezoid_area(v: &[f64], r: &[f64]) -> f64 {
    let mut area = 0.0;
    for i in 1..v.len() {
        area += (v[i] - v[i - 1]) * (r[i] + r[i - 1]) / 2.0;
    }
    area
}

#[test]
fn criterion_11_metric_golden() {
    let _g = serial();
    let t = Instant::now();
    let mut ok = robust_auc(&[0.3, 1.1, 2.0], &[-4.5; 3]).unwrap() == -4.5;
    ok &= robust_auc(&[0.0, 1.0], &[0.0, 1.0]).unwrap() == 0.5;
    ok &= robust_auc(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap() == 0.5;
    let mut worst = 0.0f64;
    for c in 0..20u64 {
        let mut rng = derive_rng(11, "curve", c);
        let n = rng.random_range(2..30);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        let r: Vec<f64> = v.iter().map(|_| rng.random_range(-100.0..10.0)).collect();
        let expect = trapezoid_area(&v, &r) / (v[v.len() - 1] - v[0]);
        worst = worst.max((robust_auc(&v, &r).unwrap() - expect).abs() / expect.abs().max(1.0));
    }
    ok &= worst < 1e-12;
    report(
        11,
        "robust AUC golden values and 20 random curves",
        ok,
        secs(1),
        t.elapsed(),
        &format!("constant, unit line, tent exact; random curves worst relative {worst:.1e}"),
    );
}

fn run_cli(args: &[&str]) -> i32 {
    cli::run(std::iter::once("usr-rl").chain(args.iter().copied()))
}

#[test]
fn criterion_12_reproducibility() {
    let _g = serial();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.conf");
    std::fs::write(
        &config,
        "[train]\nmax_steps = 1500\nwarmup_steps = 500\nbatch_size = 32\nhidden_width = 32\n",
    )
    .unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let (o, c) = (out.to_str().unwrap(), config.to_str().unwrap());
        assert_eq!(run_cli(&["train", "--config", c, "--seed", "12", "--out", o]), 0);
        let ckpt = out.join("checkpoint.json");
        let sweep = out.join("sweep");
        let code = run_cli(&[
            "sweep",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--param",
            "w1",
            "--min",
            "0.3",
            "--max",
            "2.0",
            "--points",
            "5",
            "--episodes",
            "20",
            "--seed",
            "3",
            "--out",
            sweep.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let read = |p: std::path::PathBuf| std::fs::read(p).unwrap();
        files.push([
            read(out.join("checkpoint.json")),
            read(out.join("train_log.csv")),
            read(sweep.join("report.json")),
            read(sweep.join("curve.csv")),
            read(sweep.join("curve.svg")),
        ]);
    }
    let same = files[0] == files[1];
    report(
        12,
        "train and sweep with identical seeds are byte-identical",
        same,
        secs(5 * 60),
        t.elapsed(),
        &format!(
            "checkpoint, train log, report, curve csv and svg identical: {same}; checkpoint {} bytes",
            files[0][0].len()
        ),
    );
}
