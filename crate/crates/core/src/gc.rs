//! Cascaded geometric controller on SE(3).
//!
//! The position loop produces a world-frame force, the desired attitude aligns
//! the body z axis with it, and the attitude loop tracks that attitude with an
//! optional angular-velocity / angular-acceleration feedforward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{RigidBodyState, VehicleParams, Wrench};
use crate::so3::{self, Mat3, Vec3};
use crate::trajectory::FlatReference;

/// Threshold on `|F_des|` (N) and on `|b3 x b1c|` below which the desired
/// attitude is undefined.
pub const SINGULARITY_EPS: f64 = 1e-6;
/// Anti-windup bound on each axis of the position-error integral (m s).
pub const INTEGRAL_LIMIT: f64 = 2.0;

/// Diagonal gains with matched x/y entries. Position gains are in N/m and
/// N s/m, attitude gains in N m/rad and N m s/rad; the attitude loop divides
/// them by the nominal inertia to get angular-acceleration gains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcGains {
    pub kp_xy: f64,
    pub kp_z: f64,
    pub kv_xy: f64,
    pub kv_z: f64,
    pub kr_xy: f64,
    pub kr_z: f64,
    pub kw_xy: f64,
    pub kw_z: f64,
}

impl Default for GcGains {
    fn default() -> Self {
        Self::manual()
    }
}

impl GcGains {
    /// Hand-tuned baseline.
    pub fn manual() -> Self {
        Self { kp_xy: 6.0, kp_z: 8.0, kv_xy: 4.0, kv_z: 5.0, kr_xy: 8.0, kr_z: 3.0, kw_xy: 0.8, kw_z: 0.3 }
    }

    pub const NAMES: [&'static str; 8] = ["kp_xy", "kp_z", "kv_xy", "kv_z", "kr_xy", "kr_z", "kw_xy", "kw_z"];

    pub fn to_array(&self) -> [f64; 8] {
        [self.kp_xy, self.kp_z, self.kv_xy, self.kv_z, self.kr_xy, self.kr_z, self.kw_xy, self.kw_z]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self { kp_xy: a[0], kp_z: a[1], kv_xy: a[2], kv_z: a[3], kr_xy: a[4], kr_z: a[5], kw_xy: a[6], kw_z: a[7] }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("gain {name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn kp(&self) -> Vec3 {
        Vec3::new(self.kp_xy, self.kp_xy, self.kp_z)
    }
    pub fn kv(&self) -> Vec3 {
        Vec3::new(self.kv_xy, self.kv_xy, self.kv_z)
    }
    pub fn kr(&self) -> Vec3 {
        Vec3::new(self.kr_xy, self.kr_xy, self.kr_z)
    }
    pub fn kw(&self) -> Vec3 {
        Vec3::new(self.kw_xy, self.kw_xy, self.kw_z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedforwardMode {
    /// Reference acceleration plus angular velocity/acceleration feedforward.
    #[default]
    Ff,
    /// No feedforward; integral action on the position error instead.
    Pid,
    /// No feedforward at all.
    None,
}

impl FeedforwardMode {
    pub fn label(&self) -> &'static str {
        match self {
            FeedforwardMode::Ff => "FF",
            FeedforwardMode::Pid => "PID",
            FeedforwardMode::None => "None",
        }
    }

    pub fn uses_feedforward(&self) -> bool {
        matches!(self, FeedforwardMode::Ff)
    }
}

/// Desired world force. `integral` is the accumulated position error and only
/// enters in PID mode.
pub fn position_loop(
    state: &RigidBodyState,
    reference: &FlatReference,
    gains: &GcGains,
    params: &VehicleParams,
    mode: FeedforwardMode,
    k_i: &Vec3,
    integral: &Vec3,
) -> Vec3 {
    let e_p = state.position - reference.position;
    let e_v = state.velocity - reference.velocity;
    let mut f = -gains.kp().component_mul(&e_p) - gains.kv().component_mul(&e_v)
        + Vec3::z() * (params.mass * params.gravity);
    match mode {
        FeedforwardMode::Ff => f += reference.acceleration * params.mass,
        FeedforwardMode::Pid => f -= k_i.component_mul(integral),
        FeedforwardMode::None => {}
    }
    f
}

pub fn desired_attitude(force: &Vec3, yaw: f64) -> Result<Mat3> {
    let norm = force.norm();
    if norm <= SINGULARITY_EPS {
        return Err(Error::ThrustSingularity(norm));
    }
    let b3 = force / norm;
    let b1c = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let b2 = b3.cross(&b1c);
    if b2.norm() <= SINGULARITY_EPS {
        return Err(Error::YawSingularity);
    }
    let b2 = b2.normalize();
    let b1 = b2.cross(&b3);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

pub fn attitude_error(r: &Mat3, r_des: &Mat3) -> Vec3 {
    0.5 * so3::vee(&(r_des.transpose() * r - r.transpose() * r_des))
}

/// Body-frame angular velocity and acceleration of the desired attitude from
/// three consecutive samples spaced `dt` apart.
pub fn feedforward_attitude(samples: &[Mat3; 3], dt: f64) -> (Vec3, Vec3) {
    let w0 = so3::log(&(samples[0].transpose() * samples[1])) / dt;
    let w1 = so3::log(&(samples[1].transpose() * samples[2])) / dt;
    (w0, (w1 - w0) / dt)
}

/// Desired attitudes implied by the reference alone at `t`, `t + dt` and
/// `t + 2 dt`, using its own derivatives to look ahead.
pub fn reference_attitudes(reference: &FlatReference, params: &VehicleParams, dt: f64) -> Result<[Mat3; 3]> {
    let at = |h: f64| -> Result<Mat3> {
        let (acc, yaw) = reference.extrapolate_accel_yaw(h);
        desired_attitude(&((acc + Vec3::z() * params.gravity) * params.mass), yaw)
    };
    Ok([at(0.0)?, at(dt)?, at(2.0 * dt)?])
}

/// Desired body angular acceleration; `w_d` and `w_d_dot` are expressed in
/// the desired frame. `inertia` converts the moment-unit gains.
pub fn attitude_loop(
    state: &RigidBodyState,
    r_des: &Mat3,
    w_d: &Vec3,
    w_d_dot: &Vec3,
    gains: &GcGains,
    inertia: &Vec3,
) -> Vec3 {
    let r = &state.rotation;
    let w = &state.angular_velocity;
    let e_r = attitude_error(r, r_des);
    let rel = r.transpose() * r_des;
    let kr = gains.kr().component_div(inertia);
    let kw = gains.kw().component_div(inertia);
    -kr.component_mul(&e_r) - kw.component_mul(&(w - w_d)) - (so3::hat(w) * rel * w_d - rel * w_d_dot)
}

pub fn compute_wrench(force: &Vec3, state: &RigidBodyState, w_dot_des: &Vec3, params: &VehicleParams) -> Wrench {
    let z_b = state.rotation.column(2).into_owned();
    let w = &state.angular_velocity;
    let jw = params.inertia.component_mul(w);
    let moment = params.inertia.component_mul(w_dot_des) + w.cross(&jw);
    Wrench::new(force.dot(&z_b), moment).clamped(params)
}

/// Stateful controller instance: gains, mode, nominal model, PID integral and
/// the last issued wrench.
#[derive(Clone, Debug)]
pub struct GcController {
    pub gains: GcGains,
    pub mode: FeedforwardMode,
    pub k_i: Vec3,
    pub params: VehicleParams,
    /// Control period (s).
    pub dt: f64,
    integral: Vec3,
    last: Wrench,
    singular_steps: usize,
}

impl GcController {
    pub fn default_integral_gains() -> Vec3 {
        Vec3::new(1.0, 1.0, 2.0)
    }

    pub fn new(gains: GcGains, mode: FeedforwardMode, params: VehicleParams, dt: f64) -> Self {
        let last = Wrench::hover(&params);
        Self {
            gains,
            mode,
            k_i: Self::default_integral_gains(),
            params,
            dt,
            integral: Vec3::zeros(),
            last,
            singular_steps: 0,
        }
    }

    pub fn reset(&mut self) {
        self.integral = Vec3::zeros();
        self.last = Wrench::hover(&self.params);
        self.singular_steps = 0;
    }

    pub fn integral(&self) -> Vec3 {
        self.integral
    }

    /// Number of control steps that hit a singularity since the last reset.
    pub fn singular_steps(&self) -> usize {
        self.singular_steps
    }

    /// Full cascade without touching the controller state.
    pub fn evaluate(&self, state: &RigidBodyState, reference: &FlatReference, integral: &Vec3) -> Result<Wrench> {
        let force = position_loop(state, reference, &self.gains, &self.params, self.mode, &self.k_i, integral);
        let r_des = desired_attitude(&force, reference.yaw)?;
        let (w_d, w_d_dot) = if self.mode.uses_feedforward() {
            feedforward_attitude(&reference_attitudes(reference, &self.params, self.dt)?, self.dt)
        } else {
            (Vec3::zeros(), Vec3::zeros())
        };
        let w_dot_des = attitude_loop(state, &r_des, &w_d, &w_d_dot, &self.gains, &self.params.inertia);
        Ok(compute_wrench(&force, state, &w_dot_des, &self.params))
    }

    /// One control step. On a singularity the previous wrench is held and the
    /// step is counted.
    pub fn control(&mut self, state: &RigidBodyState, reference: &FlatReference) -> Wrench {
        if self.mode == FeedforwardMode::Pid {
            let e_p = state.position - reference.position;
            self.integral = (self.integral + e_p * self.dt).map(|x| x.clamp(-INTEGRAL_LIMIT, INTEGRAL_LIMIT));
        }
        match self.evaluate(state, reference, &self.integral) {
            Ok(w) if w.is_finite() => {
                self.last = w;
                w
            }
            _ => {
                self.singular_steps += 1;
                self.last
            }
        }
    }
}
