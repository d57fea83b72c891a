//! Lissajous references, waypoint horizons and task-distribution samplers.
//!
//! A reference is four independent sinusoids, one per flat output
//! (x, y, z, yaw): `A sin(w t + phi) + offset`. Hover is the special case of
//! zero amplitudes.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::RigidBodyState;
use crate::so3::{self, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Channel {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
}

impl Channel {
    pub fn constant(offset: f64) -> Self {
        Self { offset, ..Default::default() }
    }

    /// n-th time derivative at `t`.
    pub fn derivative(&self, t: f64, n: u32) -> f64 {
        let arg = self.frequency * t + self.phase + n as f64 * FRAC_PI_2;
        let v = self.amplitude * self.frequency.powi(n as i32) * arg.sin();
        if n == 0 {
            v + self.offset
        } else {
            v
        }
    }
}

/// Channels in order x, y, z, yaw.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LissajousParams {
    pub channels: [Channel; 4],
}

impl LissajousParams {
    pub fn hover(position: Vec3, yaw: f64) -> Self {
        Self {
            channels: [
                Channel::constant(position.x),
                Channel::constant(position.y),
                Channel::constant(position.z),
                Channel::constant(yaw),
            ],
        }
    }

    pub fn is_hover(&self) -> bool {
        self.channels.iter().all(|c| c.amplitude == 0.0)
    }

    fn position_derivative(&self, t: f64, n: u32) -> Vec3 {
        Vec3::new(
            self.channels[0].derivative(t, n),
            self.channels[1].derivative(t, n),
            self.channels[2].derivative(t, n),
        )
    }
}

/// Desired position with derivatives to 4th order and yaw to 2nd order.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct FlatReference {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub jerk: Vec3,
    pub snap: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub yaw_accel: f64,
}

impl FlatReference {
    pub fn constant(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw, ..Default::default() }
    }

    /// Desired world angular velocity of the tracked frame: pure yaw rate.
    pub fn angular_velocity_world(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.yaw_rate)
    }

    /// Taylor extrapolation of acceleration and yaw by `h` seconds, using the
    /// derivatives carried by the reference.
    pub fn extrapolate_accel_yaw(&self, h: f64) -> (Vec3, f64) {
        let acc = self.acceleration + self.jerk * h + self.snap * (0.5 * h * h);
        let yaw = self.yaw + self.yaw_rate * h + 0.5 * self.yaw_accel * h * h;
        (acc, yaw)
    }

    /// Shift the reference of a frame at body offset `r` to the frame origin,
    /// assuming the frame's desired attitude is a pure yaw `Rz(yaw)`.
    ///
    /// Offsets along body z are exact for every derivative. For horizontal
    /// offsets the jerk and snap shifts ignore yaw derivatives above second
    /// order.
    pub fn shifted_by_yawed_offset(&self, r: &Vec3) -> Self {
        let rho = (r.x * r.x + r.y * r.y).sqrt();
        let mut out = *self;
        out.position -= Vec3::new(0.0, 0.0, r.z);
        if rho == 0.0 {
            return out;
        }
        let th = self.yaw + r.y.atan2(r.x);
        let (w, a) = (self.yaw_rate, self.yaw_accel);
        let (s, c) = th.sin_cos();
        // derivatives of rho * (cos th, sin th) with th''' = th'''' = 0
        let d0 = Vec3::new(c, s, 0.0);
        let d1 = Vec3::new(-s, c, 0.0) * w;
        let d2 = Vec3::new(-s, c, 0.0) * a + Vec3::new(-c, -s, 0.0) * (w * w);
        let d3 = Vec3::new(-c, -s, 0.0) * (3.0 * w * a) + Vec3::new(s, -c, 0.0) * (w * w * w);
        let d4 = Vec3::new(s, -c, 0.0) * (6.0 * w * w * a) + Vec3::new(-c, -s, 0.0) * (3.0 * a * a)
            + Vec3::new(c, s, 0.0) * (w * w * w * w);
        out.position -= d0 * rho;
        out.velocity -= d1 * rho;
        out.acceleration -= d2 * rho;
        out.jerk -= d3 * rho;
        out.snap -= d4 * rho;
        out
    }
}

pub fn sample(params: &LissajousParams, t: f64) -> FlatReference {
    let yaw = &params.channels[3];
    FlatReference {
        position: params.position_derivative(t, 0),
        velocity: params.position_derivative(t, 1),
        acceleration: params.position_derivative(t, 2),
        jerk: params.position_derivative(t, 3),
        snap: params.position_derivative(t, 4),
        yaw: yaw.derivative(t, 0),
        yaw_rate: yaw.derivative(t, 1),
        yaw_accel: yaw.derivative(t, 2),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Vec3,
    pub yaw: f64,
}

impl From<&FlatReference> for Waypoint {
    fn from(r: &FlatReference) -> Self {
        Self { position: r.position, yaw: r.yaw }
    }
}

/// Future reference samples at `t + dt, ..., t + H dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointHorizon {
    pub t0: f64,
    pub dt: f64,
    pub points: Vec<Waypoint>,
}

impl WaypointHorizon {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + (k + 1) as f64 * self.dt
    }

    pub fn map_points(&self, f: impl Fn(&Waypoint) -> Waypoint) -> Self {
        Self { t0: self.t0, dt: self.dt, points: self.points.iter().map(f).collect() }
    }
}

pub const DEFAULT_HORIZON: usize = 10;

pub fn horizon(params: &LissajousParams, t: f64, dt: f64, len: usize) -> Result<WaypointHorizon> {
    if !(dt > 0.0) || len == 0 {
        return Err(Error::InvalidParameter(format!("horizon needs dt > 0 and H >= 1 (dt = {dt}, H = {len})")));
    }
    let points = (1..=len).map(|k| Waypoint::from(&sample(params, t + k as f64 * dt))).collect();
    Ok(WaypointHorizon { t0: t, dt, points })
}

/// Fornberg's recursion: weights for the `order`-th derivative at `x0` from
/// values at `nodes`.
pub fn fd_weights(nodes: &[f64], x0: f64, order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Accuracy order of the one-sided stencils used by [`fd_reference`].
pub const FD_ACCURACY: usize = 4;
/// Horizon entries needed (besides the current point) by [`fd_reference`].
pub const FD_MIN_HORIZON: usize = 5;

/// Reconstruct reference derivatives at the current time from the current
/// waypoint and the future horizon with forward finite-difference stencils.
///
/// Each derivative of order `m` uses `m + FD_ACCURACY` points when the horizon
/// is long enough, fewer otherwise. Yaw is differenced unwrapped.
pub fn fd_reference(horizon: &WaypointHorizon, current: &Waypoint, dt: f64) -> Result<FlatReference> {
    if horizon.len() < FD_MIN_HORIZON {
        return Err(Error::HorizonTooShort { needed: FD_MIN_HORIZON, got: horizon.len() });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let values: Vec<&Waypoint> = std::iter::once(current).chain(horizon.points.iter()).collect();
    let available = values.len();

    let deriv = |order: usize| -> (Vec3, f64) {
        let n = (order + FD_ACCURACY).min(available);
        let nodes: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let w = fd_weights(&nodes, 0.0, order);
        let scale = dt.powi(order as i32);
        let mut p = Vec3::zeros();
        let mut yaw = 0.0;
        // differences from the current point, so constant data gives exact zeros
        for (wk, v) in w.iter().zip(&values) {
            p += (v.position - current.position) * *wk;
            yaw += wk * (v.yaw - current.yaw);
        }
        (p / scale, yaw / scale)
    };

    let (velocity, yaw_rate) = deriv(1);
    let (acceleration, yaw_accel) = deriv(2);
    let (jerk, _) = deriv(3);
    let (snap, _) = deriv(4);
    Ok(FlatReference {
        position: current.position,
        velocity,
        acceleration,
        jerk,
        snap,
        yaw: current.yaw,
        yaw_rate,
        yaw_accel,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Hover,
    Lissajous,
}

/// Symmetric sampling boxes `[-x, x]` for one task's Lissajous parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRanges {
    pub amplitude_xyz: f64,
    pub frequency_xyz: f64,
    pub amplitude_yaw: f64,
    pub frequency_yaw: f64,
    pub phase: f64,
    pub offset_xyz: f64,
    pub offset_yaw: f64,
}

impl TaskRanges {
    pub fn for_kind(kind: TrajectoryKind) -> Self {
        match kind {
            TrajectoryKind::Hover => Self {
                amplitude_xyz: 0.0,
                frequency_xyz: 2.0,
                amplitude_yaw: 0.0,
                frequency_yaw: 2.0,
                phase: PI,
                offset_xyz: 2.0,
                offset_yaw: PI,
            },
            TrajectoryKind::Lissajous => Self {
                amplitude_xyz: 2.0,
                frequency_xyz: 3.0,
                amplitude_yaw: 2.0,
                frequency_yaw: 2.0,
                phase: PI,
                offset_xyz: 2.0,
                offset_yaw: PI,
            },
        }
    }
}

/// Initial-condition boxes, as offsets from the reference at t = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRanges {
    pub position: f64,
    pub velocity: f64,
    pub yaw: f64,
    pub angular_velocity: f64,
}

impl InitRanges {
    pub fn for_kind(kind: TrajectoryKind) -> Self {
        match kind {
            TrajectoryKind::Hover => Self { position: 2.0, velocity: 0.0, yaw: PI, angular_velocity: 0.0 },
            TrajectoryKind::Lissajous => Self { position: 0.5, velocity: 0.1, yaw: PI, angular_velocity: 0.1 },
        }
    }
}

fn sym<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    half_width * (2.0 * rng.random::<f64>() - 1.0)
}

/// Draw Lissajous parameters. Every channel draws amplitude, frequency,
/// phase and offset in that order, whatever the box widths, so the stream
/// position is independent of the task kind.
pub fn sample_task<R: Rng + ?Sized>(ranges: &TaskRanges, rng: &mut R) -> LissajousParams {
    let mut out = LissajousParams::default();
    for (i, ch) in out.channels.iter_mut().enumerate() {
        let is_yaw = i == 3;
        ch.amplitude = sym(rng, if is_yaw { ranges.amplitude_yaw } else { ranges.amplitude_xyz });
        ch.frequency = sym(rng, if is_yaw { ranges.frequency_yaw } else { ranges.frequency_xyz });
        ch.phase = sym(rng, ranges.phase);
        ch.offset = sym(rng, if is_yaw { ranges.offset_yaw } else { ranges.offset_xyz });
    }
    out
}

/// Initial state of the tracked frame: level attitude with randomized yaw,
/// position/velocity offsets from the reference, random body rates.
pub fn sample_initial_state<R: Rng + ?Sized>(ranges: &InitRanges, goal: &FlatReference, rng: &mut R) -> RigidBodyState {
    let dp = Vec3::new(sym(rng, ranges.position), sym(rng, ranges.position), sym(rng, ranges.position));
    let dv = Vec3::new(sym(rng, ranges.velocity), sym(rng, ranges.velocity), sym(rng, ranges.velocity));
    let dyaw = sym(rng, ranges.yaw);
    let w = Vec3::new(
        sym(rng, ranges.angular_velocity),
        sym(rng, ranges.angular_velocity),
        sym(rng, ranges.angular_velocity),
    );
    RigidBodyState {
        position: goal.position + dp,
        rotation: so3::rot_z(goal.yaw + dyaw),
        velocity: goal.velocity + dv,
        angular_velocity: w,
    }
}
