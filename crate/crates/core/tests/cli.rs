use std::path::Path;
use std::process::{Command, Output};

fn tosser(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tosser")).args(args).env("TOSSER_THREADS", "1").output().expect("run tosser")
}

const TINY: &str = "name = \"cli\"\nobjects = \"hammer\"\nobjects_per_bin = 4\neval_steps = 10\nseeds = [2]\n\
    [train]\nsteps = 12\npretrain_steps = 10\n[arch]\ntrunk = [2, 2, 4, 4]\nhead = [4, 2, 2]\ntile = 2\n\
    [workspace]\nresolution = 0.025\nnum_rotations = 4\n";

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn plan_prints_release_json() {
    let out = tosser(&["plan", "1.5", "-0.15"]);
    assert!(out.status.success());
    let plan: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(plan["planar_speed"].as_f64().unwrap() > 0.0);
}

#[test]
fn errors_exit_nonzero() {
    let out = tosser(&["plan", "0.1", "0.0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("release circle"));
    assert!(!tosser(&["train", "--config", "/nonexistent.toml"]).status.success());
    assert!(!tosser(&["eval", "--out", "/nonexistent-dir"]).status.success());
    assert!(!tosser(&["bogus"]).status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_tosser")).args(["plan", "1", "0"]).env("TOSSER_THREADS", "x").output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn train_eval_unseen_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("runs");
    let out_s = out.to_str().unwrap();
    for v in ["residual-physics", "regression", "regression-pop", "physics-only"] {
        let o = tosser(&["train", "-c", &cfg, "-o", out_s, "--variant", v]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let run = out.join("cli/residual-physics/seed_2");
    for f in ["train_steps.csv", "curve.csv", "checkpoint.bin"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let o = tosser(&["eval", "-c", &cfg, "-o", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("eval.json").exists());

    for cmd in ["unseen-locations", "unseen-objects"] {
        let o = tosser(&[cmd, "-c", &cfg, "-o", out_s]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("physics-only"));
    }
    assert!(out.join("cli/unseen_locations.csv").exists());

    let hist = dir.path().join("hist");
    let log = run.join("eval_steps.csv");
    let o = tosser(&["histograms", "--log", log.to_str().unwrap(), "--objects", "hammer", "-o", hist.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(hist.join("hammer_grasps.csv").exists());
    assert!(hist.join("hammer_meta.json").exists());
}

#[test]
fn steps_and_seed_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("runs");
    let o = tosser(&["train", "-c", &cfg, "-o", out.to_str().unwrap(), "--steps", "7", "--seed", "9"]);
    assert!(o.status.success());
    let log = std::fs::read_to_string(out.join("cli/residual-physics/seed_9/train_steps.csv")).unwrap();
    assert_eq!(log.lines().count(), 8);
}
