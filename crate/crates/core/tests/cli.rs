use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use usr_rl::checkpoint::AgentCheckpoint;
use usr_rl::cli::RunConfig;
use usr_rl::eval::CURVE_HEADER;
use usr_rl::sac::LOG_HEADER;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usr-rl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "[train]\nhidden_width = 16\nbatch_size = 16\nwarmup_steps = 50\nmax_steps = 0\n";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

/// Trains the small zero-step config and returns the checkpoint path.
fn init_checkpoint(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, SMALL);
    let out = dir.join("train");
    let o = bin(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out.join("checkpoint.json")
}

#[test]
fn shipped_presets_parse() {
    for name in ["desk.conf", "paper-fidelity.conf", "acceptance.conf"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
        RunConfig::parse(&std::fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn zero_step_training_writes_initial_checkpoint_and_headed_log() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = init_checkpoint(dir.path());
    let ckpt = AgentCheckpoint::load(&ckpt_path).unwrap();
    assert_eq!(ckpt.steps, 0);
    assert_eq!(ckpt.config.hidden_width, 16);
    let log = std::fs::read_to_string(ckpt_path.with_file_name("train_log.csv")).unwrap();
    assert_eq!(log, format!("{LOG_HEADER}\n"));
    // save → load → save is byte-identical
    let again = dir.path().join("again.json");
    ckpt.save(&again).unwrap();
    assert_eq!(std::fs::read(&ckpt_path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn config_errors_exit_2_naming_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[usr]\nkind = l2_usr\nalpha_u = -1\n");
    let o = bin(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 3") && msg.contains("usr.alpha_u") && msg.contains("0 <= alpha_u"), "{msg}");

    let cfg = write_config(dir.path(), "# c\n[train]\nlearning_rate = 1\n");
    let o = bin(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 3") && msg.contains("train.learning_rate"), "{msg}");
}

#[test]
fn numerical_abort_exits_3_and_keeps_a_finite_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[train]\nhidden_width = 8\nbatch_size = 8\nwarmup_steps = 10\nmax_steps = 400\n\
         critic_lr = 1e300\nactor_lr = 1e300\n",
    );
    let out = dir.path().join("o");
    let o = bin(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let ckpt = AgentCheckpoint::load(&out.join("checkpoint.json")).unwrap();
    assert!(ckpt.records.iter().all(|r| r.data.iter().all(|v| v.is_finite())));
    assert!(out.join("train_log.csv").exists());
}

#[test]
fn sweep_defaults_and_output_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = init_checkpoint(dir.path());
    let out = dir.path().join("sweep");
    let o = bin(&[
        "sweep", "--checkpoint", s(&ckpt), "--param", "w1", "--min", "0.3", "--max", "2.0", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 5);
        assert!(r[1] <= r[2] && r[2] <= r[3]);
        assert_eq!(r[4], 100.0);
        if i > 0 {
            assert!(r[0] > rows[i - 1][0]);
        }
    }
    assert_eq!((rows[0][0], rows[19][0]), (0.3, 2.0));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in ["env", "param", "range", "points", "quantile", "auc", "band_area", "curve", "checkpoint_id", "seeds"] {
        assert!(report.get(key).is_some(), "report.json lacks {key}");
    }
    assert_eq!(report["points"], 20);
    assert_eq!(report["quantile"], 0.1);
    assert_eq!(report["curve"].as_array().unwrap().len(), 20);
    assert!(report["band_area"].as_f64().unwrap() >= 0.0);
    let id = AgentCheckpoint::load(&ckpt).unwrap().id().unwrap();
    assert_eq!(report["checkpoint_id"], id.as_str());

    let svg = std::fs::read_to_string(out.join("curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline") && svg.contains("stroke-dasharray"));
}

#[test]
fn sweep_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = init_checkpoint(dir.path());
    let out = dir.path().join("sweep");
    let o = bin(&[
        "sweep", "--checkpoint", s(&ckpt), "--param", "w1", "--min", "0.3", "--max", "2", "--points", "1",
        "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&[
        "sweep", "--checkpoint", s(&ckpt), "--param", "gravity", "--min", "0.3", "--max", "2", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("w1") && msg.contains("w2"), "{msg}");
}

#[test]
fn noisy_sweep_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = init_checkpoint(dir.path());
    let out = dir.path().join("noisy");
    let o = bin(&[
        "noisy-sweep", "--checkpoint", s(&ckpt), "--walk-sigma", "0.05", "--episodes", "30", "--seed", "4",
        "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("noisy.json")).unwrap()).unwrap();
    assert_eq!(report["walk_sigma"], 0.05);
    assert_eq!(report["returns"].as_array().unwrap().len(), 30);
    let o = bin(&["noisy-sweep", "--checkpoint", s(&ckpt), "--walk-sigma=-1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tabular_verify_exit_codes() {
    let o = bin(&["tabular-verify", "--trials", "200", "--tol", "1e-6"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = bin(&["tabular-verify", "--trials", "20", "--mutate-flip-l2"]);
    assert_eq!(o.status.code(), Some(1));
    let replay: serde_json::Value = {
        let text = String::from_utf8_lossy(&o.stdout);
        serde_json::from_str(&text[text.find('[').unwrap()..]).unwrap()
    };
    assert!(replay[0]["instance"]["values"].is_array());
    assert_eq!(bin(&["tabular-verify", "--trials", "0"]).status.code(), Some(2));
}

#[test]
fn gradcheck_is_deterministic_and_passes() {
    let a = bin(&["gradcheck"]);
    let b = bin(&["gradcheck"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    for group in ["density_grad", "policy_logprob", "critic_loss"] {
        assert!(text.contains(group));
    }
}

#[test]
fn unknown_command_is_a_usage_error() {
    assert_eq!(bin(&["fly"]).status.code(), Some(2));
}
