use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quadbench::gc::GcGains;
use quadbench::io;
use quadbench::tuner::TuneStudy;

fn quadbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadbench")).args(args).output().expect("spawn quadbench")
}

fn ok(args: &[&str]) -> String {
    let out = quadbench(args);
    assert!(out.status.success(), "{args:?}\nstdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn eval_writes_summary_aggregate_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), r#"{"episode_seconds": 1.0}"#);
    let stdout = ok(&["eval", "--task", "lissajous", "--episodes", "3", "--config", &cfg, "--out", out, "--traces"]);
    assert!(stdout.contains("avg_reward"));
    let summary = io::read_summary(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 3);
    assert!(summary.iter().all(|r| r.task == "Lissajous" && r.avg_reward <= 15.0));
    let trace = fs::read_to_string(dir.path().join(format!("trace_{}.csv", summary[0].seed))).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "t,ex,ey,ez,e_yaw,reward,f_T,Mx,My,Mz");
    assert_eq!(trace.lines().count(), 51);
    assert!(dir.path().join("aggregate.json").exists());

    // same seeds, same numbers
    let again = tempfile::tempdir().unwrap();
    ok(&["eval", "--task", "lissajous", "--episodes", "3", "--config", &cfg, "--out", again.path().to_str().unwrap()]);
    assert_eq!(fs::read(dir.path().join("summary.csv")).unwrap(), fs::read(again.path().join("summary.csv")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"task": "lissajous", "episodes": 5, "episode_seconds": 0.5}"#);
    ok(&["eval", "--task", "hover", "--episodes", "2", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    let summary = io::read_summary(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|r| r.task == "Hover"));
}

#[test]
fn tune_then_eval_with_the_tuned_gains() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tune");
    let cfg = write_config(dir.path(), r#"{"episode_seconds": 1.0, "tune_trials": 20, "tune_rollouts": 2, "tune_explore": 5}"#);
    ok(&["tune", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let gains: GcGains = io::read_json(&out.join("gains.json")).unwrap();
    gains.validate().unwrap();
    let study = TuneStudy::load_jsonl(&out.join("study.jsonl")).unwrap();
    assert_eq!(study.history.len(), 20);
    assert_eq!(study.best().unwrap().gains, gains);

    // rerunning replays the log instead of appending to it
    ok(&["tune", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(TuneStudy::load_jsonl(&out.join("study.jsonl")).unwrap().history.len(), 20);

    let eval = dir.path().join("eval");
    let g = out.join("gains.json");
    ok(&["eval", "--episodes", "2", "--config", &cfg, "--gains", g.to_str().unwrap(), "--out", eval.to_str().unwrap()]);
    assert_eq!(io::read_summary(&eval.join("summary.csv")).unwrap().len(), 2);
}

#[test]
fn train_then_eval_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("train");
    let cfg = write_config(
        dir.path(),
        r#"{"episode_seconds": 0.5, "horizon_steps": 8, "eval_every": 1, "eval_episodes": 2, "minibatches": 2}"#,
    );
    ok(&["train", "--updates", "2", "--envs", "4", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let curve = fs::read_to_string(out.join("learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert!(out.join("policy.json").exists() && out.join("policy_last.json").exists());

    let eval = dir.path().join("eval");
    let p = out.join("policy.json");
    ok(&["eval", "--controller", "rl", "--policy", p.to_str().unwrap(), "--episodes", "2", "--config", &cfg, "--out", eval.to_str().unwrap()]);
    let rows = io::read_summary(&eval.join("summary.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.avg_reward.is_finite()));
}

#[test]
fn catch_writes_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"catch_opportunities": 1, "catch_settle_seconds": 0.5}"#);
    let stdout = ok(&["catch", "--episodes", "2", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("time-to-catch")).count(), 4);
    let text = fs::read_to_string(dir.path().join("catch.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn sweep_reports_absent_cells() {
    let dir = tempfile::tempdir().unwrap();
    let artifacts = dir.path().join("artifacts");
    fs::create_dir_all(&artifacts).unwrap();
    let cfg = write_config(dir.path(), r#"{"episode_seconds": 0.5}"#);
    let stdout = ok(&["sweep", "--artifacts", artifacts.to_str().unwrap(), "--episodes", "2", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(stdout.lines().filter(|l| l.contains("absent")).count(), 20);
    assert_eq!(fs::read_to_string(dir.path().join("sweep.csv")).unwrap().lines().count(), 25);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"kp_xyz": 1.0}"#);
    let out = quadbench(&["eval", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("kp_xyz"));

    let out = quadbench(&["eval", "--controller", "rl", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--policy"));

    let out = quadbench(&["eval", "--dr", "30"]);
    assert!(!out.status.success());
}
