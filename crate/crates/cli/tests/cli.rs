use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_CONFIG: &str = r#"{
  "sim": { "n_steps": 200 },
  "schedule": { "double_at_step": 100 },
  "grid": { "train_rollers": [13, 16], "loads": [7000.0, 9000.0] },
  "sampling": { "windows": [[0, 10]], "stride": 20 },
  "model": { "latent_size": 8, "n_blocks": 1, "hidden_layers": 1 },
  "train": { "steps": 12, "batch_size": 4, "eval_every": 6, "learning_rate": 0.001 },
  "eval": { "windows": [[0, 10]], "steady_window": [150, 200] }
}"#;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bearing-gnn-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bearing-gnn"))
        .args(args)
        .env("BEARING_GNN_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_train_verify() {
    let dir = scratch("flow");
    let config = dir.join("small.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let traj = dir.join("traj");
    ok(&["simulate", "--config", p(&config), "--out", p(&traj)]);
    let files = std::fs::read_dir(&traj).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "jsonl")).count();
    assert_eq!(files, 5);

    let (t1, t2) = (dir.join("t1"), dir.join("t2"));
    ok(&["train", "--config", p(&config), "--seed", "7", "--trajectories", p(&traj), "--out", p(&t1)]);
    ok(&["train", "--config", p(&config), "--seed", "7", "--trajectories", p(&traj), "--out", p(&t2)]);
    let c1 = std::fs::read(t1.join("checkpoint.json")).unwrap();
    assert_eq!(c1, std::fs::read(t2.join("checkpoint.json")).unwrap());
    let t3 = dir.join("t3");
    ok(&["train", "--config", p(&config), "--seed", "8", "--trajectories", p(&traj), "--out", p(&t3)]);
    assert_ne!(c1, std::fs::read(t3.join("checkpoint.json")).unwrap());

    let ckpt = t1.join("checkpoint.json");
    let sweep = dir.join("sweep");
    ok(&["verify", "--checkpoint", p(&ckpt), "--out", p(&sweep)]);
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 102);
    assert!(sweep.join("run_manifest.json").is_file());

    let eval = dir.join("eval");
    let out = ok(&["eval", "--config", p(&config), "--checkpoint", p(&ckpt), "--trajectories", p(&traj), "--out", p(&eval)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"steady_state\""));
    assert!(eval.join("eval_rows.csv").is_file());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn diagnostics_and_exit_codes() {
    let dir = scratch("errors");
    let out = bin(&["verify", "--checkpoint", "/nonexistent/ckpt.json", "--out", p(&dir.join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));

    assert!(!bin(&["simulate", "--out", p(&dir), "--bogus"]).status.success());
    assert!(!bin(&["frobnicate"]).status.success());

    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"train": {"stepz": 3}}"#).unwrap();
    let out = bin(&["simulate", "--config", p(&bad), "--out", p(&dir.join("y"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));

    let invalid = dir.join("invalid.json");
    std::fs::write(&invalid, r#"{"train": {"batch_size": 0}}"#).unwrap();
    let out = bin(&["simulate", "--config", p(&invalid), "--out", p(&dir.join("z"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));

    let out = bin(&["train", "--out", p(&dir.join("w")), "--trajectories", p(&dir.join("missing"))]);
    assert!(!out.status.success());
    std::fs::remove_dir_all(&dir).unwrap();
}
