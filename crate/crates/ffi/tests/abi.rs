use std::ffi::{CStr, CString};
use std::ptr;

use tosser_ffi::*;

fn config(toml: &str) -> *mut TosserConfig {
    let s = CString::new(toml).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { tosser_config_new(s.as_ptr(), &mut cfg) }, TosserStatus::Ok);
    cfg
}

const TINY: &str = "objects = \"cube\"\nobjects_per_bin = 4\neval_steps = 5\n\
    [train]\nsteps = 5\n[arch]\ntrunk = [2, 2, 4, 4]\nhead = [4, 2, 2]\ntile = 2\n\
    [workspace]\nresolution = 0.025\nnum_rotations = 4\n";

fn last_error() -> String {
    let p = tosser_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn release_plan_matches_the_library() {
    let cfg = config("");
    let mut plan = TosserReleasePlan::default();
    assert_eq!(unsafe { tosser_solve_release(cfg, 1.5, -0.15, 0.0, &mut plan) }, TosserStatus::Ok);
    let ws = tosser::scene::WorkspaceConfig::default();
    let expected = tosser::ballistics::solve_release(tosser::scene::Vec3::new(1.5, -0.15, 0.0), &ws).unwrap();
    assert_eq!(plan.planar_speed, expected.planar_speed);
    assert_eq!(plan.velocity, [expected.velocity.x, expected.velocity.y, expected.velocity.z]);
    assert_eq!(unsafe { tosser_config_num_boxes(cfg) }, 12);
    unsafe { tosser_config_free(cfg) };
}

#[test]
fn errors_map_to_codes_and_messages() {
    let cfg = config("");
    let mut plan = TosserReleasePlan::default();
    assert_eq!(unsafe { tosser_solve_release(cfg, 0.1, 0.0, 0.0, &mut plan) }, TosserStatus::Unreachable);
    assert!(last_error().contains("release circle"));
    assert_eq!(unsafe { tosser_solve_release(ptr::null(), 1.0, 0.0, 0.0, &mut plan) }, TosserStatus::NullPointer);
    assert!(last_error().contains("cfg"));

    let bad = CString::new("objects = \"anvil\"").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { tosser_config_new(bad.as_ptr(), &mut out) }, TosserStatus::Config);
    assert!(out.is_null());
    unsafe {
        tosser_config_free(cfg);
        tosser_config_free(ptr::null_mut());
    }
}

#[test]
fn step_train_evaluate_and_checkpoint() {
    let cfg = config(TINY);
    let mut sim = ptr::null_mut();
    let mut policy = ptr::null_mut();
    unsafe {
        assert_eq!(tosser_simulator_new(cfg, 3, &mut sim), TosserStatus::Ok);
        assert_eq!(tosser_train(cfg, 3, &mut policy), TosserStatus::Ok);

        let (mut w, mut h) = (0, 0);
        assert_eq!(tosser_simulator_heightmap(sim, ptr::null_mut(), 0, &mut w, &mut h), TosserStatus::Ok);
        assert_eq!((w, h), (18, 14));
        let mut buf = vec![0f32; 2 * w * h];
        assert_eq!(tosser_simulator_heightmap(sim, buf.as_mut_ptr(), 3, &mut w, &mut h), TosserStatus::InvalidArgument);
        assert_eq!(tosser_simulator_heightmap(sim, buf.as_mut_ptr(), buf.len(), &mut w, &mut h), TosserStatus::Ok);
        assert!(buf.iter().all(|v| v.is_finite()));

        let mut step = TosserStepResult::default();
        for _ in 0..6 {
            assert_eq!(tosser_step(policy, sim, 1, &mut step), TosserStatus::Ok);
            assert!(!step.thrown || step.grasp_success);
        }
        assert_eq!(tosser_step(policy, sim, 99, &mut step), TosserStatus::InvalidArgument);

        let mut m = TosserMetrics::default();
        assert_eq!(tosser_evaluate(cfg, policy, 3, &mut m), TosserStatus::Ok);
        assert_eq!(m.attempts, 5);
        assert!((0.0..=100.0).contains(&m.grasp_success_pct));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("p.bin").to_str().unwrap()).unwrap();
        assert_eq!(tosser_policy_save(policy, path.as_ptr()), TosserStatus::Ok);
        let mut other = ptr::null_mut();
        assert_eq!(tosser_policy_new(cfg, 99, &mut other), TosserStatus::Ok);
        assert_eq!(tosser_policy_load(other, path.as_ptr()), TosserStatus::Ok);
        let mut m2 = TosserMetrics::default();
        assert_eq!(tosser_evaluate(cfg, other, 3, &mut m2), TosserStatus::Ok);
        assert_eq!((m.grasp_success_pct, m.throw_success_pct), (m2.grasp_success_pct, m2.throw_success_pct));

        let missing = CString::new(dir.path().join("none.bin").to_str().unwrap()).unwrap();
        assert_eq!(tosser_policy_load(other, missing.as_ptr()), TosserStatus::Io);

        tosser_policy_free(other);
        tosser_policy_free(policy);
        tosser_simulator_free(sim);
        tosser_config_free(cfg);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tosser.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

/// Compiles tests/c/smoke.c against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libtosser_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let status = std::process::Command::new("cc")
        .arg(format!("{manifest}/tests/c/smoke.c"))
        .arg(format!("-I{manifest}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("cc available");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("heightmap 18x14"), "{stdout}");
}
