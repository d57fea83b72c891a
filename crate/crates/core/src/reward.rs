//! Shared tracking objective, tolerance annealing and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{RigidBodyState, Wrench};
use crate::so3::{self, Vec3};
use crate::trajectory::FlatReference;

/// Per-second reward of perfect tracking.
pub const MAX_REWARD: f64 = 15.0;
pub const DELTA_P_START: f64 = 0.8;
pub const DELTA_P_END: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub lambda_p: f64,
    pub lambda_r: f64,
    pub lambda_v: f64,
    pub lambda_w: f64,
    pub delta_p: f64,
}

impl RewardParams {
    pub fn new(dt: f64, delta_p: f64) -> Self {
        Self {
            lambda_p: MAX_REWARD * dt,
            lambda_r: -4.0 * dt,
            lambda_v: -0.05 * dt,
            lambda_w: -0.01 * dt,
            delta_p,
        }
    }

    /// Evaluation uses the final (tightest) tolerance.
    pub fn evaluation(dt: f64) -> Self {
        Self::new(dt, DELTA_P_END)
    }
}

/// Desired quantities of the tracked frame.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTarget {
    pub position: Vec3,
    pub yaw: f64,
    pub velocity: Vec3,
    /// World frame.
    pub angular_velocity: Vec3,
}

impl From<&FlatReference> for RewardTarget {
    fn from(r: &FlatReference) -> Self {
        Self {
            position: r.position,
            yaw: r.yaw,
            velocity: r.velocity,
            angular_velocity: r.angular_velocity_world(),
        }
    }
}

/// Error terms entering the reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingError {
    pub position: Vec3,
    /// Wrapped to [-pi, pi].
    pub yaw: f64,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

impl TrackingError {
    pub fn between(body: &RigidBodyState, target: &RewardTarget) -> Self {
        Self {
            position: body.position - target.position,
            yaw: so3::wrap_angle(body.yaw() - target.yaw),
            velocity: body.velocity - target.velocity,
            angular_velocity: body.angular_velocity_world() - target.angular_velocity,
        }
    }
}

/// Position tolerance kernel `exp(-|x| / delta)`.
pub fn tolerance_kernel(x: &Vec3, delta: f64) -> f64 {
    (-x.norm() / delta).exp()
}

pub fn reward_from_error(err: &TrackingError, params: &RewardParams) -> f64 {
    params.lambda_p * tolerance_kernel(&err.position, params.delta_p)
        + params.lambda_r * err.yaw.abs()
        + params.lambda_v * err.velocity.norm()
        + params.lambda_w * err.angular_velocity.norm()
}

pub fn reward(body: &RigidBodyState, target: &RewardTarget, params: &RewardParams) -> f64 {
    reward_from_error(&TrackingError::between(body, target), params)
}

/// Position tolerance schedule: halves every quarter of the budget, from 0.8
/// down to 0.1.
pub fn anneal_delta(step: u64, total_steps: u64) -> f64 {
    assert!(total_steps > 0, "total_steps must be positive");
    let stage = (4 * step as u128 / total_steps as u128).min(63) as i32;
    (DELTA_P_START * 2f64.powi(-stage)).max(DELTA_P_END)
}

/// One control step of an evaluation trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub pos_error: Vec3,
    pub yaw_error: f64,
    pub reward: f64,
    pub wrench: Wrench,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Per-second reward; perfect tracking scores [`MAX_REWARD`].
    pub avg_reward: f64,
    pub pos_rmse: f64,
    pub yaw_rmse: f64,
    /// `(MAX_REWARD - avg_reward) / MAX_REWARD`.
    pub gap: f64,
    pub steps: usize,
}

pub fn normalized_gap(avg_reward: f64) -> f64 {
    (MAX_REWARD - avg_reward) / MAX_REWARD
}

pub fn summarize(trace: &[StepRecord], dt: f64) -> Result<EvalSummary> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = trace.len() as f64;
    let total: f64 = trace.iter().map(|r| r.reward).sum();
    let avg_reward = total / (n * dt);
    let pos_rmse = (trace.iter().map(|r| r.pos_error.norm_squared()).sum::<f64>() / n).sqrt();
    let yaw_rmse = (trace.iter().map(|r| so3::wrap_angle(r.yaw_error).powi(2)).sum::<f64>() / n).sqrt();
    Ok(EvalSummary { avg_reward, pos_rmse, yaw_rmse, gap: normalized_gap(avg_reward), steps: trace.len() })
}
