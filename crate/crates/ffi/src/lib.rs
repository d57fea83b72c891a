//! C ABI over the simulator, geometric controller and policy.
//!
//! Objects are opaque handles created by `qb_*_new`/`qb_*_load` and released
//! by the matching `qb_*_free`. Every fallible call returns a [`QbStatus`];
//! the message of the last failure on the calling thread is available from
//! [`qb_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use quadbench::env::{ControlInput, Episode, Morphology, TaskConfig, TaskKind};
use quadbench::gc::{FeedforwardMode, GcGains};
use quadbench::harness::{episode_observation, Controller, GcAgent, ObservedFrame, ReferenceSource};
use quadbench::policy::{ActionScaler, PolicyNet, ACTION_DIM};
use quadbench::sim::{DynamicsFidelity, Wrench};
use quadbench::so3::Vec3;
use quadbench::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Diverged = 4,
    Singular = 5,
    EpisodeDone = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QbTask {
    Hover = 0,
    Lissajous = 1,
    BallCatch = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QbMorphology {
    Quadrotor = 0,
    AerialManipulator = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QbFidelity {
    Simple = 0,
    Realistic = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QbFeedforward {
    Ff = 0,
    Pid = 1,
    None = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QbWrench {
    pub thrust: f64,
    pub moment: [f64; 3],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QbGains {
    pub kp_xy: f64,
    pub kp_z: f64,
    pub kv_xy: f64,
    pub kv_z: f64,
    pub kr_xy: f64,
    pub kr_z: f64,
    pub kw_xy: f64,
    pub kw_z: f64,
}

/// Rigid-body state; `rotation` is body-to-world, row-major.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QbState {
    pub position: [f64; 3],
    pub rotation: [f64; 9],
    pub velocity: [f64; 3],
    /// Body frame.
    pub angular_velocity: [f64; 3],
}

/// Result of one control step.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QbStep {
    pub reward: f64,
    pub position_error: [f64; 3],
    pub yaw_error: f64,
    pub done: bool,
    pub failed: bool,
}

/// One running episode.
pub struct QbEnv {
    cfg: TaskConfig,
    episode: Episode,
}

pub struct QbGcController {
    agent: GcAgent,
}

pub struct QbPolicy {
    net: PolicyNet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> QbStatus {
    match e {
        Error::Io(_) | Error::MissingArtifact(_) | Error::Json(_) | Error::Csv(_) => QbStatus::Io,
        Error::Diverged(_) | Error::NonFiniteLoss { .. } => QbStatus::Diverged,
        Error::ThrustSingularity(_) | Error::YawSingularity | Error::SingularAllocation(_) => QbStatus::Singular,
        _ => QbStatus::InvalidArgument,
    }
}

/// Run `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (QbStatus, String)>) -> QbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            QbStatus::Panic
        }
    }
}

fn lift(e: Error) -> (QbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (QbStatus, String) {
    (QbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (QbStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (QbStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn gains_from(g: &QbGains) -> GcGains {
    GcGains {
        kp_xy: g.kp_xy,
        kp_z: g.kp_z,
        kv_xy: g.kv_xy,
        kv_z: g.kv_z,
        kr_xy: g.kr_xy,
        kr_z: g.kr_z,
        kw_xy: g.kw_xy,
        kw_z: g.kw_z,
    }
}

fn wrench_out(w: &Wrench) -> QbWrench {
    QbWrench { thrust: w.thrust, moment: [w.moment.x, w.moment.y, w.moment.z] }
}

/// Message of the last failed call on this thread; valid until the next call
/// that fails on the same thread.
#[no_mangle]
pub extern "C" fn qb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The manual baseline gains.
#[no_mangle]
pub extern "C" fn qb_gains_manual() -> QbGains {
    let g = GcGains::manual();
    QbGains {
        kp_xy: g.kp_xy,
        kp_z: g.kp_z,
        kv_xy: g.kv_xy,
        kv_z: g.kv_z,
        kr_xy: g.kr_xy,
        kr_z: g.kr_z,
        kw_xy: g.kw_xy,
        kw_z: g.kw_z,
    }
}

/// Create an environment and start the episode drawn from `seed`.
/// `dr_fraction` is the domain-randomization spread in [0, 1).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn qb_env_new(
    task: QbTask,
    morphology: QbMorphology,
    fidelity: QbFidelity,
    dr_fraction: f64,
    seed: u64,
    out: *mut *mut QbEnv,
) -> QbStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let kind = match task {
            QbTask::Hover => TaskKind::Hover,
            QbTask::Lissajous => TaskKind::Lissajous,
            QbTask::BallCatch => TaskKind::BallCatch,
        };
        let morph = match morphology {
            QbMorphology::Quadrotor => Morphology::Quadrotor,
            QbMorphology::AerialManipulator => Morphology::AerialManipulator,
        };
        let mut cfg = TaskConfig::new(kind, morph);
        cfg.fidelity = match fidelity {
            QbFidelity::Simple => DynamicsFidelity::Simple,
            QbFidelity::Realistic => DynamicsFidelity::Realistic,
        };
        cfg.dr_pct = dr_fraction;
        cfg.validate().map_err(lift)?;
        let episode = Episode::new(&cfg, seed).map_err(lift)?;
        *out = Box::into_raw(Box::new(QbEnv { cfg, episode }));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from [`qb_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qb_env_free(env: *mut QbEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Start a new episode drawn from `seed`.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qb_env_reset(env: *mut QbEnv, seed: u64) -> QbStatus {
    guard(|| {
        let env = as_mut(env, "env")?;
        env.episode = Episode::new(&env.cfg, seed).map_err(lift)?;
        Ok(())
    })
}

/// SHA-256 hex digest of the episode draw (64 characters plus NUL).
///
/// # Safety
/// `env` must be a live handle and `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qb_env_draw_hash(env: *const QbEnv, buf: *mut c_char, len: usize) -> QbStatus {
    guard(|| {
        let env = as_ref(env, "env")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let h = env.episode.draw.hash();
        if len < h.len() + 1 {
            return Err((QbStatus::BufferTooSmall, format!("need {} bytes", h.len() + 1)));
        }
        ptr::copy_nonoverlapping(h.as_ptr() as *const c_char, buf, h.len());
        *buf.add(h.len()) = 0;
        Ok(())
    })
}

/// Episode time of the next control step (s).
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qb_env_time(env: *const QbEnv, out: *mut f64) -> QbStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(env, "env")?.episode.time();
        Ok(())
    })
}

/// State of the tracked frame (end effector on a manipulator).
///
/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_env_state(env: *const QbEnv, out: *mut QbState) -> QbStatus {
    guard(|| {
        let s = as_ref(env, "env")?.episode.tracked_state();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = s.rotation[(i, j)];
            }
        }
        *as_mut(out, "out")? = QbState {
            position: s.position.into(),
            rotation,
            velocity: s.velocity.into(),
            angular_velocity: s.angular_velocity.into(),
        };
        Ok(())
    })
}

/// Policy observation of the current step; `written` receives its length
/// (21, or 61 with the waypoint horizon).
///
/// # Safety
/// `env` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qb_env_observation(
    env: *const QbEnv,
    use_horizon: bool,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> QbStatus {
    guard(|| {
        let env = as_ref(env, "env")?;
        let obs = episode_observation(&env.episode, use_horizon, ObservedFrame::Tracked);
        if !written.is_null() {
            *written = obs.len();
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < obs.len() {
            return Err((QbStatus::BufferTooSmall, format!("need {} doubles", obs.len())));
        }
        ptr::copy_nonoverlapping(obs.as_ptr(), buf, obs.len());
        Ok(())
    })
}

/// Apply `wrench` for one control step.
///
/// # Safety
/// `env` must be a live handle; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn qb_env_step(env: *mut QbEnv, wrench: QbWrench, out: *mut QbStep) -> QbStatus {
    guard(|| {
        let env = as_mut(env, "env")?;
        if env.episode.is_done() {
            return Err((QbStatus::EpisodeDone, "episode already finished".into()));
        }
        let w = Wrench::new(wrench.thrust, Vec3::from(wrench.moment));
        let o = env.episode.step(ControlInput::Wrench(w)).map_err(lift)?;
        if let Some(out) = out.as_mut() {
            *out = QbStep {
                reward: o.record.reward,
                position_error: o.record.pos_error.into(),
                yaw_error: o.record.yaw_error,
                done: o.done,
                failed: env.episode.failed(),
            };
        }
        Ok(())
    })
}

/// Geometric controller for the vehicle of `env`. `gains` may be null for
/// the manual baseline.
///
/// # Safety
/// `env` must be a live handle, `gains` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_gc_new(
    env: *const QbEnv,
    gains: *const QbGains,
    mode: QbFeedforward,
    out: *mut *mut QbGcController,
) -> QbStatus {
    guard(|| {
        let env = as_ref(env, "env")?;
        let out = as_mut(out, "out")?;
        let g = gains.as_ref().map(gains_from).unwrap_or_else(GcGains::manual);
        g.validate().map_err(lift)?;
        let mode = match mode {
            QbFeedforward::Ff => FeedforwardMode::Ff,
            QbFeedforward::Pid => FeedforwardMode::Pid,
            QbFeedforward::None => FeedforwardMode::None,
        };
        let mut agent = GcAgent::new(g, mode, ReferenceSource::Horizon, &env.cfg);
        agent.reset(&env.episode);
        *out = Box::into_raw(Box::new(QbGcController { agent }));
        Ok(())
    })
}

/// # Safety
/// `gc` must be null or a handle from [`qb_gc_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qb_gc_free(gc: *mut QbGcController) {
    if !gc.is_null() {
        drop(Box::from_raw(gc));
    }
}

/// Clear the controller's integral and hold state.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn qb_gc_reset(gc: *mut QbGcController, env: *const QbEnv) -> QbStatus {
    guard(|| {
        let env = as_ref(env, "env")?;
        as_mut(gc, "gc")?.agent.reset(&env.episode);
        Ok(())
    })
}

/// Wrench command for the current step of `env`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_gc_compute(gc: *mut QbGcController, env: *const QbEnv, out: *mut QbWrench) -> QbStatus {
    guard(|| {
        let gc = as_mut(gc, "gc")?;
        let env = as_ref(env, "env")?;
        let out = as_mut(out, "out")?;
        match gc.agent.control(&env.episode).map_err(lift)? {
            ControlInput::Wrench(w) => *out = wrench_out(&w),
            ControlInput::Teleport => return Err((QbStatus::InvalidArgument, "unexpected teleport".into())),
        }
        Ok(())
    })
}

/// Load a policy checkpoint (JSON).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_policy_load(path: *const c_char, out: *mut *mut QbPolicy) -> QbStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let out = as_mut(out, "out")?;
        let p = CStr::from_ptr(path).to_str().map_err(|e| (QbStatus::InvalidArgument, e.to_string()))?;
        let net = PolicyNet::load(Path::new(p)).map_err(lift)?;
        *out = Box::into_raw(Box::new(QbPolicy { net }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from [`qb_policy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qb_policy_free(policy: *mut QbPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Observation length the policy expects.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qb_policy_input_dim(policy: *const QbPolicy, out: *mut usize) -> QbStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(policy, "policy")?.net.input_dim();
        Ok(())
    })
}

/// Deterministic raw actions in [-1, 1]-scale units (4 values).
///
/// # Safety
/// `policy` must be live, `obs` must hold `len` doubles and `actions` 4.
#[no_mangle]
pub unsafe extern "C" fn qb_policy_act(policy: *const QbPolicy, obs: *const f64, len: usize, actions: *mut f64) -> QbStatus {
    guard(|| {
        let policy = as_ref(policy, "policy")?;
        if obs.is_null() || actions.is_null() {
            return Err(null("obs/actions"));
        }
        let obs = std::slice::from_raw_parts(obs, len);
        let a = policy.net.raw_action::<rand::rngs::ThreadRng>(obs, None).map_err(lift)?;
        ptr::copy_nonoverlapping(a.as_ptr(), actions, ACTION_DIM);
        Ok(())
    })
}

/// Deterministic wrench command for the current step of `env`.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_policy_compute(policy: *const QbPolicy, env: *const QbEnv, out: *mut QbWrench) -> QbStatus {
    guard(|| {
        let policy = as_ref(policy, "policy")?;
        let env = as_ref(env, "env")?;
        let out = as_mut(out, "out")?;
        let use_horizon = policy.net.input_dim() > quadbench::policy::BASE_OBS_DIM;
        let obs = episode_observation(&env.episode, use_horizon, ObservedFrame::Tracked);
        let scaler = ActionScaler::from_params(&env.cfg.vehicle);
        let w = policy.net.act::<rand::rngs::ThreadRng>(&obs, &scaler, None).map_err(lift)?;
        *out = wrench_out(&w);
        Ok(())
    })
}
