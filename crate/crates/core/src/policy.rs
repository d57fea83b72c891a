//! Body-frame error observations and the MLP policy that maps them to wrench
//! commands.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::reward::RewardTarget;
use crate::sim::{RigidBodyState, VehicleParams, Wrench};
use crate::so3::{self, Vec3};
use crate::trajectory::WaypointHorizon;

pub const BASE_OBS_DIM: usize = 21;
pub const ACTION_DIM: usize = 4;
pub const HIDDEN: [usize; 3] = [256, 256, 256];

pub fn obs_dim(horizon_len: usize) -> usize {
    BASE_OBS_DIM + 4 * horizon_len
}

/// Observation of the tracked frame relative to its target.
///
/// Layout: `e_p (3) | R^T R_d row-major (9) | g_B (3) | e_v (3) | e_w (3)`,
/// then for each horizon point `R^T (p_k - p) (3) | wrap(yaw_k - yaw) (1)`.
pub fn observe(body: &RigidBodyState, target: &RewardTarget, gravity: f64, horizon: Option<&WaypointHorizon>) -> Vec<f64> {
    let rt = body.rotation.transpose();
    let r_d = so3::rot_z(target.yaw);
    let n = obs_dim(horizon.map_or(0, |h| h.len()));
    let mut out = Vec::with_capacity(n);
    out.extend((rt * (body.position - target.position)).iter());
    let e_r = rt * r_d;
    for i in 0..3 {
        for j in 0..3 {
            out.push(e_r[(i, j)]);
        }
    }
    out.extend((rt * Vec3::new(0.0, 0.0, gravity)).iter());
    out.extend((rt * (body.velocity - target.velocity)).iter());
    out.extend((rt * (body.angular_velocity_world() - target.angular_velocity)).iter());
    if let Some(h) = horizon {
        let yaw = body.yaw();
        for w in &h.points {
            out.extend((rt * (w.position - body.position)).iter());
            out.push(so3::wrap_angle(w.yaw - yaw));
        }
    }
    out
}

/// Affine map from clipped raw actions to a wrench.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionScaler {
    pub max_thrust: f64,
    pub moment_limits: Vec3,
}

impl ActionScaler {
    pub fn from_params(params: &VehicleParams) -> Self {
        Self { max_thrust: params.max_thrust(), moment_limits: params.moment_limits() }
    }

    pub fn scale(&self, raw: &[f64]) -> Wrench {
        let a: Vec<f64> = raw.iter().map(|x| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) }).collect();
        Wrench::new(
            0.5 * (a[0] + 1.0) * self.max_thrust,
            Vec3::new(a[1] * self.moment_limits.x, a[2] * self.moment_limits.y, a[3] * self.moment_limits.z),
        )
    }

    /// Raw action that produces `wrench` (inverse of [`scale`](Self::scale) inside the limits).
    pub fn unscale(&self, wrench: &Wrench) -> [f64; 4] {
        [
            2.0 * wrench.thrust / self.max_thrust - 1.0,
            wrench.moment.x / self.moment_limits.x,
            wrench.moment.y / self.moment_limits.y,
            wrench.moment.z / self.moment_limits.z,
        ]
    }
}

/// Per-input affine normalization applied before the networks, with the
/// result clipped to `[-OBS_CLIP, OBS_CLIP]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

pub const OBS_CLIP: f32 = 10.0;

impl ObsNorm {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Normalize a row-major batch of observations.
    pub fn apply(&self, obs: &[f32]) -> Vec<f32> {
        let d = self.mean.len();
        obs.iter()
            .enumerate()
            .map(|(k, x)| ((x - self.mean[k % d]) / self.std[k % d]).clamp(-OBS_CLIP, OBS_CLIP))
            .collect()
    }
}

/// Running mean and variance over observation batches (parallel-merge form).
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMoments {
    pub count: f64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    /// Fold in the rows of `obs` whose `keep` flag is set.
    pub fn update(&mut self, obs: &[f32], keep: &[bool]) {
        let d = self.mean.len();
        let rows: Vec<&[f32]> = obs.chunks(d).zip(keep).filter(|(_, k)| **k).map(|(r, _)| r).collect();
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        for j in 0..d {
            let m = rows.iter().map(|r| r[j] as f64).sum::<f64>() / n;
            let m2 = rows.iter().map(|r| (r[j] as f64 - m).powi(2)).sum::<f64>();
            let delta = m - self.mean[j];
            let total = self.count + n;
            self.mean[j] += delta * n / total;
            self.m2[j] += m2 + delta * delta * self.count * n / total;
        }
        self.count += n;
    }

    pub fn variance(&self) -> Vec<f64> {
        self.m2.iter().map(|m| if self.count > 0.0 { m / self.count } else { 1.0 }).collect()
    }

    pub fn to_norm(&self) -> ObsNorm {
        ObsNorm {
            mean: self.mean.iter().map(|m| *m as f32).collect(),
            std: self.variance().iter().map(|v| (v + 1e-8).sqrt() as f32).collect(),
        }
    }
}

/// Gaussian policy: MLP mean and a state-independent log standard deviation,
/// on normalized observations.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub actor: Mlp,
    pub log_std: [f32; ACTION_DIM],
    pub obs_norm: ObsNorm,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    input_dim: usize,
    layer_sizes: Vec<usize>,
    activation: String,
    log_std: Vec<f32>,
    #[serde(default)]
    obs_mean: Vec<f32>,
    #[serde(default)]
    obs_std: Vec<f32>,
    weights: Vec<f32>,
}

pub fn layer_sizes(input_dim: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input_dim).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], init_log_std: f32, rng: &mut R) -> Self {
        Self {
            actor: Mlp::init(&layer_sizes(input_dim, hidden, ACTION_DIM), 0.01, rng),
            log_std: [init_log_std; ACTION_DIM],
            obs_norm: ObsNorm::identity(input_dim),
        }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Self {
        Self {
            actor: Mlp::zeros(&layer_sizes(input_dim, hidden, ACTION_DIM)),
            log_std: [0.0; ACTION_DIM],
            obs_norm: ObsNorm::identity(input_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    /// Learnable parameters: network weights plus the log standard deviations.
    pub fn param_count(&self) -> usize {
        self.actor.param_count() + ACTION_DIM
    }

    /// Mean raw actions for a batch of (unnormalized) observations.
    pub fn mean_actions(&self, obs: &[f32], batch: usize) -> Result<Vec<f32>> {
        self.actor.predict(&self.obs_norm.apply(obs), batch)
    }

    /// Raw (unclipped) action for one observation; stochastic mode adds
    /// Gaussian noise scaled by `exp(log_std)`.
    pub fn raw_action<R: Rng + ?Sized>(&self, obs: &[f64], stochastic: Option<&mut R>) -> Result<[f64; ACTION_DIM]> {
        if obs.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: obs.len() });
        }
        let x: Vec<f32> = obs.iter().map(|v| *v as f32).collect();
        let mean = self.mean_actions(&x, 1)?;
        let mut a = [0.0; ACTION_DIM];
        match stochastic {
            Some(rng) => {
                for i in 0..ACTION_DIM {
                    let eps: f64 = rng.sample(StandardNormal);
                    a[i] = mean[i] as f64 + (self.log_std[i] as f64).exp() * eps;
                }
            }
            None => {
                for i in 0..ACTION_DIM {
                    a[i] = mean[i] as f64;
                }
            }
        }
        Ok(a)
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], scaler: &ActionScaler, stochastic: Option<&mut R>) -> Result<Wrench> {
        Ok(scaler.scale(&self.raw_action(obs, stochastic)?))
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            input_dim: self.input_dim(),
            layer_sizes: self.actor.sizes.clone(),
            activation: "elu".into(),
            log_std: self.log_std.to_vec(),
            obs_mean: self.obs_norm.mean.clone(),
            obs_std: self.obs_norm.std.clone(),
            weights: self.actor.params.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.activation != "elu" {
            return Err(Error::Config(format!("unsupported activation {:?}", ck.activation)));
        }
        if ck.layer_sizes.first() != Some(&ck.input_dim) || ck.layer_sizes.last() != Some(&ACTION_DIM) {
            return Err(Error::Config(format!("layer sizes {:?} do not match input {} / output {ACTION_DIM}", ck.layer_sizes, ck.input_dim)));
        }
        let log_std: [f32; ACTION_DIM] = ck
            .log_std
            .as_slice()
            .try_into()
            .map_err(|_| Error::DimensionMismatch { expected: ACTION_DIM, got: ck.log_std.len() })?;
        let obs_norm = if ck.obs_mean.is_empty() && ck.obs_std.is_empty() {
            ObsNorm::identity(ck.input_dim)
        } else {
            ObsNorm { mean: ck.obs_mean, std: ck.obs_std }
        };
        if obs_norm.mean.len() != ck.input_dim || obs_norm.std.len() != ck.input_dim {
            return Err(Error::DimensionMismatch { expected: ck.input_dim, got: obs_norm.mean.len().min(obs_norm.std.len()) });
        }
        if obs_norm.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || obs_norm.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("observation normalization must be finite with positive scales".into()));
        }
        let actor = Mlp { sizes: ck.layer_sizes, params: ck.weights };
        actor.validate()?;
        Ok(Self { actor, log_std, obs_norm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }
}
