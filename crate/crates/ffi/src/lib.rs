//! C ABI over the `tosser` crate.
//!
//! Objects are opaque handles created by `tosser_*_new` and released by the
//! matching `tosser_*_free`. Every fallible call returns a [`TosserStatus`];
//! on failure the message is available from [`tosser_last_error`] until the
//! next failing call on the same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tosser::bench::{evaluate_policy, train, BoxLayout, ExperimentConfig};
use tosser::policy::Policy;
use tosser::scene::Vec3;
use tosser::simulator::Simulator;
use tosser::trainer::run_trial;
use tosser::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TosserStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Unreachable = 4,
    Simulation = 5,
    Checkpoint = 6,
    Io = 7,
    Panic = 8,
}

/// Experiment configuration (workspace, objects, network, training).
pub struct TosserConfig {
    inner: ExperimentConfig,
}

/// A bin of objects plus the box layout the throws aim at.
pub struct TosserSimulator {
    sim: Simulator,
    rng: ChaCha8Rng,
    step: usize,
}

/// Network parameters for one policy variant.
pub struct TosserPolicy {
    inner: Policy<f32>,
}

/// Release pose for a throw.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TosserReleasePlan {
    pub release: [f64; 3],
    pub velocity: [f64; 3],
    pub planar_speed: f64,
    pub azimuth: f64,
}

/// Outcome of one greedy grasp-and-throw.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TosserStepResult {
    pub grasp_success: bool,
    pub thrown: bool,
    pub throw_success: bool,
    /// Landing point; zeros when nothing was thrown.
    pub landing: [f64; 3],
    /// Commanded planar release speed; 0 when nothing was thrown.
    pub executed_speed: f64,
}

/// Greedy evaluation summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TosserMetrics {
    pub attempts: usize,
    pub grasp_success_pct: f64,
    pub throws: usize,
    pub throw_success_pct: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(TosserStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InsideReleaseCircle { .. } | Error::Unreachable(_) => TosserStatus::Unreachable,
            Error::BinTooSmall { .. } | Error::FlightTimeout(_) => TosserStatus::Simulation,
            Error::Config(_) | Error::Shape(_) | Error::MissingLabel(_) => TosserStatus::Config,
            Error::Checkpoint(_) => TosserStatus::Checkpoint,
            Error::Io(_) => TosserStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: TosserStatus, msg: &str) -> Failure {
    Failure(status, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TosserStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TosserStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            TosserStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(TosserStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(TosserStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(TosserStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(TosserStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tosser_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a TOML experiment config. `toml` may be NULL for the defaults.
///
/// # Safety
/// `toml` is NULL or a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tosser_config_new(toml: *const c_char, out: *mut *mut TosserConfig) -> TosserStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let inner = if toml.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_toml_str(c_str(toml, "toml")?)?
        };
        *out = Box::into_raw(Box::new(TosserConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` is NULL or a handle from [`tosser_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tosser_config_free(cfg: *mut TosserConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Number of target boxes in the training layout.
///
/// # Safety
/// `cfg` is a live config handle.
#[no_mangle]
pub unsafe extern "C" fn tosser_config_num_boxes(cfg: *const TosserConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.workspace_for(BoxLayout::Train).boxes.len())
}

/// Ballistic release plan for a landing target.
///
/// # Safety
/// `cfg` is a live config handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tosser_solve_release(
    cfg: *const TosserConfig,
    x: f64,
    y: f64,
    z: f64,
    out: *mut TosserReleasePlan,
) -> TosserStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?;
        let out = deref_mut(out, "out")?;
        let plan = tosser::ballistics::solve_release(Vec3::new(x, y, z), &cfg.inner.workspace)?;
        *out = TosserReleasePlan {
            release: [plan.release.x, plan.release.y, plan.release.z],
            velocity: [plan.velocity.x, plan.velocity.y, plan.velocity.z],
            planar_speed: plan.planar_speed,
            azimuth: plan.azimuth,
        };
        Ok(())
    })
}

/// Simulator with the config's object set and training box layout.
///
/// # Safety
/// `cfg` is a live config handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tosser_simulator_new(cfg: *const TosserConfig, seed: u64, out: *mut *mut TosserSimulator) -> TosserStatus {
    guard(|| {
        let cfg = &deref(cfg, "cfg")?.inner;
        let out = deref_mut(out, "out")?;
        let models = cfg.objects.models(&cfg.dynamics);
        let sim = Simulator::new(cfg.workspace_for(BoxLayout::Train), cfg.sim.clone(), &models, cfg.objects_per_bin, seed)?;
        *out = Box::into_raw(Box::new(TosserSimulator { sim, rng: ChaCha8Rng::seed_from_u64(seed), step: 0 }));
        Ok(())
    })
}

/// # Safety
/// `sim` is NULL or a handle from [`tosser_simulator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tosser_simulator_free(sim: *mut TosserSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Renders the normalized two-channel heightmap (height plane, then
/// intensity plane, rows along +y). Always writes the size to `width` and
/// `height`; copies the data when `buf` is non-NULL and `len` is at least
/// `2 * width * height`.
///
/// # Safety
/// `sim` is a live handle; `width` and `height` are valid pointers; `buf`
/// is NULL or points to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn tosser_simulator_heightmap(
    sim: *const TosserSimulator,
    buf: *mut f32,
    len: usize,
    width: *mut usize,
    height: *mut usize,
) -> TosserStatus {
    guard(|| {
        let sim = deref(sim, "sim")?;
        let (w, h) = (deref_mut(width, "width")?, deref_mut(height, "height")?);
        let hm = sim.sim.render_heightmap();
        *w = hm.width;
        *h = hm.height;
        if !buf.is_null() {
            if len < hm.data.len() {
                return Err(fail(TosserStatus::InvalidArgument, &format!("buffer holds {len} floats, need {}", hm.data.len())));
            }
            std::slice::from_raw_parts_mut(buf, hm.data.len()).copy_from_slice(&hm.data);
        }
        Ok(())
    })
}

/// Untrained policy of the config's variant.
///
/// # Safety
/// `cfg` is a live config handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tosser_policy_new(cfg: *const TosserConfig, seed: u64, out: *mut *mut TosserPolicy) -> TosserStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?;
        let out = deref_mut(out, "out")?;
        let inner = cfg.inner.fresh_policy(seed)?;
        *out = Box::into_raw(Box::new(TosserPolicy { inner }));
        Ok(())
    })
}

/// # Safety
/// `policy` is NULL or a policy handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tosser_policy_free(policy: *mut TosserPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Writes the parameters to `path`.
///
/// # Safety
/// `policy` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tosser_policy_save(policy: *const TosserPolicy, path: *const c_char) -> TosserStatus {
    guard(|| {
        let policy = deref(policy, "policy")?;
        let file = std::fs::File::create(PathBuf::from(c_str(path, "path")?)).map_err(Error::from)?;
        policy.inner.save(std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// Replaces the parameters with those stored at `path`.
///
/// # Safety
/// `policy` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tosser_policy_load(policy: *mut TosserPolicy, path: *const c_char) -> TosserStatus {
    guard(|| {
        let policy = deref_mut(policy, "policy")?;
        let file = std::fs::File::open(PathBuf::from(c_str(path, "path")?)).map_err(Error::from)?;
        policy.inner.load(std::io::BufReader::new(file))?;
        Ok(())
    })
}

/// Trains the config's variant from scratch for `train.steps` steps.
///
/// # Safety
/// `cfg` is a live config handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tosser_train(cfg: *const TosserConfig, seed: u64, out: *mut *mut TosserPolicy) -> TosserStatus {
    guard(|| {
        let cfg = deref(cfg, "cfg")?;
        let out = deref_mut(out, "out")?;
        let (inner, _) = train(&cfg.inner, seed)?;
        *out = Box::into_raw(Box::new(TosserPolicy { inner }));
        Ok(())
    })
}

/// Greedy evaluation for `eval_steps` steps on the config's objects and
/// evaluation layout. Parameters are not modified.
///
/// # Safety
/// `cfg` and `policy` are live handles; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tosser_evaluate(
    cfg: *const TosserConfig,
    policy: *const TosserPolicy,
    seed: u64,
    out: *mut TosserMetrics,
) -> TosserStatus {
    guard(|| {
        let cfg = &deref(cfg, "cfg")?.inner;
        let policy = &deref(policy, "policy")?.inner;
        let out = deref_mut(out, "out")?;
        let (r, _) = evaluate_policy(cfg, policy, cfg.layout, cfg.objects, seed)?;
        *out = TosserMetrics {
            attempts: r.attempts,
            grasp_success_pct: r.grasp_success_pct,
            throws: r.throws,
            throw_success_pct: r.throw_success_pct,
        };
        Ok(())
    })
}

/// One greedy grasp-and-throw toward `target_box`. Refills the bin when it
/// runs empty.
///
/// # Safety
/// `policy` and `sim` are live handles; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tosser_step(
    policy: *const TosserPolicy,
    sim: *mut TosserSimulator,
    target_box: usize,
    out: *mut TosserStepResult,
) -> TosserStatus {
    guard(|| {
        let policy = &deref(policy, "policy")?.inner;
        let sim = deref_mut(sim, "sim")?;
        let out = deref_mut(out, "out")?;
        if target_box >= sim.sim.ws.boxes.len() {
            return Err(fail(TosserStatus::InvalidArgument, &format!("no box {target_box}")));
        }
        let mode = tosser::trainer::SupervisionMode::Width;
        let trial = run_trial(policy, &mut sim.sim, target_box, 0.0, mode, sim.step, &mut sim.rng)?;
        sim.step += 1;
        sim.sim.reset_if_empty()?;
        let r = &trial.record;
        *out = TosserStepResult {
            grasp_success: r.grasp_success,
            thrown: r.thrown,
            throw_success: r.throw_success,
            landing: match (r.landing_x, r.landing_y) {
                (Some(x), Some(y)) => [x, y, sim.sim.ws.landing_height],
                _ => [0.0; 3],
            },
            executed_speed: r.executed_speed.unwrap_or(0.0),
        };
        Ok(())
    })
}
