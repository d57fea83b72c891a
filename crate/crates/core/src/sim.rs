//! Rigid-body quadrotor dynamics with an optional motor layer.
//!
//! The plant is integrated with semi-implicit Euler: linear and angular
//! velocity are updated first, then position with the new velocity and the
//! attitude through the exponential map of the new body rate. The attitude is
//! re-orthonormalized after every step.
//!
//! In [`DynamicsFidelity::Realistic`] mode the commanded wrench is converted
//! to rotor speeds by [`allocate`], each rotor follows a first-order lag
//! ([`motor_step`]), and the wrench actually applied to the body is
//! reconstructed from the lagged speeds ([`wrench_from_motors`]).

use nalgebra::Vector4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{self, Mat3, Vec3};

pub const GRAVITY: f64 = 9.81;

/// Pose and twist of a frame. `angular_velocity` is expressed in the body frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub position: Vec3,
    pub rotation: Mat3,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

impl RigidBodyState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            rotation: so3::rot_z(yaw),
            velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.rotation.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.angular_velocity.iter().all(|x| x.is_finite())
    }

    pub fn angular_velocity_world(&self) -> Vec3 {
        self.rotation * self.angular_velocity
    }

    pub fn yaw(&self) -> f64 {
        so3::yaw_of(&self.rotation)
    }

    /// Apply a world-frame rigid transform `(rot, trans)` to the state.
    pub fn transformed(&self, rot: &Mat3, trans: &Vec3) -> Self {
        Self {
            position: rot * self.position + trans,
            rotation: rot * self.rotation,
            velocity: rot * self.velocity,
            angular_velocity: self.angular_velocity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsFidelity {
    /// Wrench applied directly to the rigid body.
    #[default]
    Simple,
    /// Allocation, rotor saturation and first-order motor lag.
    Realistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass: f64,
    /// Diagonal of the body inertia tensor.
    pub inertia: Vec3,
    pub arm_length: f64,
    pub k_t: f64,
    pub k_m: f64,
    pub tau_m: f64,
    pub omega_max: f64,
    pub thrust_to_weight: f64,
    /// End-effector position in the body frame; zero for a plain quadrotor.
    pub ee_offset: Vec3,
    pub gravity: f64,
    /// Roll/pitch moment limit as a fraction of `arm_length * f_max`.
    pub moment_frac_xy: f64,
    /// Yaw moment limit as a fraction of `f_max * k_m / k_t`.
    pub moment_frac_z: f64,
}

impl VehicleParams {
    pub fn nominal_quadrotor() -> Self {
        let k_t = 1.0e-5;
        let mut p = Self {
            mass: 1.0,
            inertia: Vec3::new(0.01, 0.01, 0.02),
            arm_length: 0.17,
            k_t,
            k_m: 0.016 * k_t,
            tau_m: 0.05,
            omega_max: 0.0,
            thrust_to_weight: 2.0,
            ee_offset: Vec3::zeros(),
            gravity: GRAVITY,
            moment_frac_xy: 0.5,
            moment_frac_z: 0.5,
        };
        p.sync_omega_max();
        p
    }

    pub fn nominal_manipulator() -> Self {
        Self {
            ee_offset: Vec3::new(0.0, 0.0, -0.10),
            ..Self::nominal_quadrotor()
        }
    }

    /// Recompute `omega_max` so that `4 k_t omega_max^2 = thrust_to_weight * m * g`.
    pub fn sync_omega_max(&mut self) {
        self.omega_max = (self.thrust_to_weight * self.mass * self.gravity / (4.0 * self.k_t)).sqrt();
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn max_thrust(&self) -> f64 {
        4.0 * self.k_t * self.omega_max * self.omega_max
    }

    pub fn moment_limits(&self) -> Vec3 {
        let f_max = self.max_thrust();
        let xy = self.moment_frac_xy * self.arm_length * f_max;
        let z = self.moment_frac_z * f_max * (self.k_m / self.k_t);
        Vec3::new(xy, xy, z)
    }

    pub fn hover_motor_speed(&self) -> f64 {
        (self.weight() / (4.0 * self.k_t)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("inertia.x", self.inertia.x),
            ("inertia.y", self.inertia.y),
            ("inertia.z", self.inertia.z),
            ("arm_length", self.arm_length),
            ("k_t", self.k_t),
            ("k_m", self.k_m),
            ("tau_m", self.tau_m),
            ("omega_max", self.omega_max),
            ("thrust_to_weight", self.thrust_to_weight),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !self.ee_offset.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("ee_offset must be finite".into()));
        }
        let lhs = self.max_thrust();
        let rhs = self.thrust_to_weight * self.weight();
        if (lhs - rhs).abs() > 1e-6 * rhs.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "inconsistent thrust limits: 4 k_t omega_max^2 = {lhs}, thrust_to_weight * m * g = {rhs}"
            )));
        }
        Ok(())
    }
}

/// Collective thrust along body +z and body-frame moment.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub thrust: f64,
    pub moment: Vec3,
}

impl Wrench {
    pub fn new(thrust: f64, moment: Vec3) -> Self {
        Self { thrust, moment }
    }

    pub fn hover(params: &VehicleParams) -> Self {
        Self::new(params.weight(), Vec3::zeros())
    }

    pub fn clamped(&self, params: &VehicleParams) -> Self {
        let lim = params.moment_limits();
        Self {
            thrust: self.thrust.clamp(0.0, params.max_thrust()),
            moment: Vec3::new(
                self.moment.x.clamp(-lim.x, lim.x),
                self.moment.y.clamp(-lim.y, lim.y),
                self.moment.z.clamp(-lim.z, lim.z),
            ),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.moment.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.thrust * self.thrust + self.moment.norm_squared()).sqrt()
    }
}

/// Rotor speeds in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorState {
    pub speeds: Vector4<f64>,
}

impl MotorState {
    pub fn new(speeds: [f64; 4]) -> Self {
        Self { speeds: Vector4::from(speeds) }
    }

    pub fn uniform(speed: f64) -> Self {
        Self { speeds: Vector4::repeat(speed) }
    }

    pub fn hover(params: &VehicleParams) -> Self {
        Self::uniform(params.hover_motor_speed())
    }
}

/// Advance the rigid body by one semi-implicit Euler step.
pub fn step_simple(state: &RigidBodyState, wrench: &Wrench, params: &VehicleParams, dt: f64) -> Result<RigidBodyState> {
    if !state.is_finite() || !wrench.is_finite() {
        return Err(Error::Diverged("non-finite state or wrench".into()));
    }
    let z_w = Vec3::z();
    let thrust_dir = state.rotation.column(2).into_owned();
    let accel = thrust_dir * (wrench.thrust / params.mass) - z_w * params.gravity;
    let velocity = state.velocity + accel * dt;
    let position = state.position + velocity * dt;

    let w = state.angular_velocity;
    let jw = params.inertia.component_mul(&w);
    let w_dot = (wrench.moment - w.cross(&jw)).component_div(&params.inertia);
    let angular_velocity = w + w_dot * dt;
    let rotation = so3::orthonormalize(&(state.rotation * so3::exp(&(angular_velocity * dt))));

    let next = RigidBodyState { position, rotation, velocity, angular_velocity };
    if !next.is_finite() {
        return Err(Error::Diverged("state became non-finite".into()));
    }
    Ok(next)
}

fn check_allocatable(params: &VehicleParams) -> Result<()> {
    if params.k_t == 0.0 || params.arm_length == 0.0 || params.k_m == 0.0 {
        return Err(Error::SingularAllocation(format!(
            "k_t = {}, l = {}, k_m = {}",
            params.k_t, params.arm_length, params.k_m
        )));
    }
    Ok(())
}

/// Squared rotor speeds solving the mixer equations exactly (no clamping).
pub fn allocate_squared(wrench: &Wrench, params: &VehicleParams) -> Result<Vector4<f64>> {
    check_allocatable(params)?;
    let lk = params.arm_length * params.k_t;
    let sum = wrench.thrust / params.k_t;
    let yaw = wrench.moment.z / params.k_m;
    let odd = 0.5 * (sum - yaw); // rotors 1 and 3
    let even = 0.5 * (sum + yaw); // rotors 2 and 4
    let d13 = wrench.moment.y / lk; // s1 - s3
    let d42 = wrench.moment.x / lk; // s4 - s2
    Ok(Vector4::new(
        0.5 * (odd + d13),
        0.5 * (even - d42),
        0.5 * (odd - d13),
        0.5 * (even + d42),
    ))
}

/// Desired rotor speeds for a wrench. Negative squared speeds are pinned at
/// zero and speeds above `omega_max` are clamped; the wrench is not re-solved.
pub fn allocate(wrench: &Wrench, params: &VehicleParams) -> Result<MotorState> {
    let sq = allocate_squared(wrench, params)?;
    Ok(MotorState {
        speeds: sq.map(|s| s.max(0.0).sqrt().min(params.omega_max)),
    })
}

/// One explicit Euler step of the first-order rotor lag.
///
/// The blend factor `dt / tau_m` is capped at one, so a lag much faster than
/// the step reaches the target instead of overshooting.
pub fn motor_step(motors: &MotorState, desired: &MotorState, tau_m: f64, dt: f64, omega_max: f64) -> Result<MotorState> {
    if !(tau_m > 0.0 && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("tau_m = {tau_m}, dt = {dt}")));
    }
    if !motors.speeds.iter().chain(desired.speeds.iter()).all(|x| x.is_finite()) {
        return Err(Error::Diverged("non-finite motor speeds".into()));
    }
    let alpha = (dt / tau_m).min(1.0);
    let speeds = motors.speeds + (desired.speeds - motors.speeds) * alpha;
    Ok(MotorState { speeds: speeds.map(|s| s.clamp(0.0, omega_max)) })
}

pub fn wrench_from_motors(motors: &MotorState, params: &VehicleParams) -> Wrench {
    let s = motors.speeds.map(|w| w * w);
    let lk = params.arm_length * params.k_t;
    Wrench {
        thrust: params.k_t * s.sum(),
        moment: Vec3::new(
            lk * (s[3] - s[1]),
            lk * (s[0] - s[2]),
            params.k_m * (-s[0] + s[1] - s[2] + s[3]),
        ),
    }
}

/// State of a frame rigidly attached at `ee_offset` (body frame) from the COM.
pub fn end_effector_state(com: &RigidBodyState, params: &VehicleParams) -> RigidBodyState {
    offset_state(com, &params.ee_offset)
}

pub fn offset_state(com: &RigidBodyState, r: &Vec3) -> RigidBodyState {
    RigidBodyState {
        position: com.position + com.rotation * r,
        rotation: com.rotation,
        velocity: com.velocity + com.rotation * com.angular_velocity.cross(r),
        angular_velocity: com.angular_velocity,
    }
}

/// Sample physical parameters uniformly within `±pct` of nominal: mass, each
/// inertia diagonal entry and thrust-to-weight, in that draw order.
pub fn randomize_params<R: Rng + ?Sized>(nominal: &VehicleParams, pct: f64, rng: &mut R) -> Result<VehicleParams> {
    if !(0.0..1.0).contains(&pct) {
        return Err(Error::InvalidParameter(format!("randomization fraction must be in [0, 1), got {pct}")));
    }
    let mut factor = || 1.0 + pct * (2.0 * rng.random::<f64>() - 1.0);
    let mut p = nominal.clone();
    p.mass *= factor();
    p.inertia.x *= factor();
    p.inertia.y *= factor();
    p.inertia.z *= factor();
    p.thrust_to_weight *= factor();
    p.sync_omega_max();
    Ok(p)
}

/// The simulated vehicle: rigid body plus rotor states, stepped at the sim rate.
#[derive(Clone, Debug)]
pub struct Plant {
    pub params: VehicleParams,
    pub fidelity: DynamicsFidelity,
    pub state: RigidBodyState,
    pub motors: MotorState,
}

impl Plant {
    pub fn new(params: VehicleParams, fidelity: DynamicsFidelity, state: RigidBodyState) -> Self {
        let motors = MotorState::hover(&params);
        Self { params, fidelity, state, motors }
    }

    /// Advance one sim step under a commanded wrench; returns the wrench that
    /// actually acted on the body.
    pub fn step(&mut self, command: &Wrench, dt: f64) -> Result<Wrench> {
        let applied = match self.fidelity {
            DynamicsFidelity::Simple => command.clamped(&self.params),
            DynamicsFidelity::Realistic => {
                let desired = allocate(command, &self.params)?;
                self.motors = motor_step(&self.motors, &desired, self.params.tau_m, dt, self.params.omega_max)?;
                wrench_from_motors(&self.motors, &self.params)
            }
        };
        self.state = step_simple(&self.state, &applied, &self.params, dt)?;
        Ok(applied)
    }

    pub fn end_effector(&self) -> RigidBodyState {
        end_effector_state(&self.state, &self.params)
    }
}
