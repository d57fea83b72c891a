//! Flat JSON run configuration. Every key is optional and overrides the
//! defaults; unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catch::BallCatchConfig;
use crate::env::{Morphology, TaskConfig, TaskKind};
use crate::error::{Error, Result};
use crate::gc::{FeedforwardMode, GcGains};
use crate::harness::{ObservedFrame, ReferenceSource};
use crate::ppo::TrainConfig;
use crate::sim::DynamicsFidelity;
use crate::so3::Vec3;
use crate::tuner::TuneSettings;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // task
    pub task: Option<TaskKind>,
    pub morphology: Option<Morphology>,
    pub fidelity: Option<DynamicsFidelity>,
    pub dr_pct: Option<f64>,
    pub episode_seconds: Option<f64>,
    pub control_dt: Option<f64>,
    pub sim_dt: Option<f64>,
    pub horizon_len: Option<usize>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    // vehicle
    pub mass: Option<f64>,
    pub inertia: Option<[f64; 3]>,
    pub arm_length: Option<f64>,
    pub k_t: Option<f64>,
    pub k_m: Option<f64>,
    pub tau_m: Option<f64>,
    pub omega_max: Option<f64>,
    pub thrust_to_weight: Option<f64>,
    pub ee_offset: Option<[f64; 3]>,
    pub gravity: Option<f64>,
    pub moment_frac_xy: Option<f64>,
    pub moment_frac_z: Option<f64>,
    // geometric controller
    pub ff: Option<FeedforwardMode>,
    pub reference_source: Option<ReferenceSource>,
    pub kp_xy: Option<f64>,
    pub kp_z: Option<f64>,
    pub kv_xy: Option<f64>,
    pub kv_z: Option<f64>,
    pub kr_xy: Option<f64>,
    pub kr_z: Option<f64>,
    pub kw_xy: Option<f64>,
    pub kw_z: Option<f64>,
    // training
    pub n_envs: Option<usize>,
    pub horizon_steps: Option<usize>,
    pub n_updates: Option<usize>,
    pub epochs: Option<usize>,
    pub minibatches: Option<usize>,
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub clip_eps: Option<f64>,
    pub lr: Option<f64>,
    pub lr_anneal: Option<bool>,
    pub vf_coef: Option<f64>,
    pub ent_coef: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub init_log_std: Option<f64>,
    pub obs_norm: Option<bool>,
    pub use_horizon: Option<bool>,
    pub observed_frame: Option<ObservedFrame>,
    pub eval_every: Option<usize>,
    pub eval_episodes: Option<usize>,
    // tuning
    pub tune_trials: Option<usize>,
    pub tune_rollouts: Option<usize>,
    pub tune_explore: Option<usize>,
    pub tune_lower: Option<f64>,
    pub tune_upper: Option<f64>,
    pub tune_sigma0: Option<f64>,
    pub tune_min_sigma: Option<f64>,
    // ball catching
    pub catch_times: Option<Vec<f64>>,
    pub catch_home: Option<[f64; 3]>,
    pub catch_launch_radius: Option<f64>,
    pub catch_launch_height: Option<f64>,
    pub catch_intercept_radius: Option<f64>,
    pub catch_radius: Option<f64>,
    pub catch_opportunities: Option<usize>,
    pub catch_settle_seconds: Option<f64>,
    pub catch_trials: Option<usize>,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

/// Everything a command can need, resolved from defaults and a file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub gains: GcGains,
    pub ff: FeedforwardMode,
    pub reference_source: ReferenceSource,
    pub train: TrainConfig,
    pub tune: TuneSettings,
    pub catch: BallCatchConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply on top of defaults for `kind`/`morphology` (file values win).
    pub fn resolve(&self, kind: TaskKind, morphology: Morphology) -> Result<RunConfig> {
        let kind = self.task.unwrap_or(kind);
        let morphology = self.morphology.unwrap_or(morphology);
        let mut task = TaskConfig::new(kind, morphology);
        set!(task.fidelity, self.fidelity);
        set!(task.dr_pct, self.dr_pct);
        set!(task.episode_seconds, self.episode_seconds);
        set!(task.control_dt, self.control_dt);
        set!(task.sim_dt, self.sim_dt);
        set!(task.horizon_len, self.horizon_len);
        set!(task.episodes, self.episodes);
        set!(task.seed, self.seed);

        let v = &mut task.vehicle;
        set!(v.mass, self.mass);
        set!(v.inertia, self.inertia.map(Vec3::from));
        set!(v.arm_length, self.arm_length);
        set!(v.k_t, self.k_t);
        set!(v.k_m, self.k_m);
        set!(v.tau_m, self.tau_m);
        set!(v.thrust_to_weight, self.thrust_to_weight);
        set!(v.ee_offset, self.ee_offset.map(Vec3::from));
        set!(v.gravity, self.gravity);
        set!(v.moment_frac_xy, self.moment_frac_xy);
        set!(v.moment_frac_z, self.moment_frac_z);
        v.sync_omega_max();
        if let Some(w) = self.omega_max {
            if (w - v.omega_max).abs() > 1e-6 * v.omega_max {
                return Err(Error::Config(format!(
                    "omega_max {w} is inconsistent with thrust_to_weight/mass/k_t (expected {})",
                    v.omega_max
                )));
            }
        }

        let mut gains = GcGains::manual();
        set!(gains.kp_xy, self.kp_xy);
        set!(gains.kp_z, self.kp_z);
        set!(gains.kv_xy, self.kv_xy);
        set!(gains.kv_z, self.kv_z);
        set!(gains.kr_xy, self.kr_xy);
        set!(gains.kr_z, self.kr_z);
        set!(gains.kw_xy, self.kw_xy);
        set!(gains.kw_z, self.kw_z);
        gains.validate()?;

        let mut train = TrainConfig::default();
        set!(train.n_envs, self.n_envs);
        set!(train.horizon_steps, self.horizon_steps);
        set!(train.n_updates, self.n_updates);
        set!(train.epochs, self.epochs);
        set!(train.minibatches, self.minibatches);
        set!(train.gamma, self.gamma);
        set!(train.gae_lambda, self.gae_lambda);
        set!(train.clip_eps, self.clip_eps);
        set!(train.lr, self.lr);
        set!(train.lr_anneal, self.lr_anneal);
        set!(train.vf_coef, self.vf_coef);
        set!(train.ent_coef, self.ent_coef);
        set!(train.max_grad_norm, self.max_grad_norm);
        set!(train.init_log_std, self.init_log_std);
        set!(train.obs_norm, self.obs_norm);
        set!(train.use_horizon, self.use_horizon);
        set!(train.frame, self.observed_frame);
        set!(train.eval_every, self.eval_every);
        set!(train.eval_episodes, self.eval_episodes);
        set!(train.seed, self.seed);

        let mut tune = TuneSettings::default();
        set!(tune.trials, self.tune_trials);
        set!(tune.rollouts, self.tune_rollouts);
        set!(tune.explore, self.tune_explore);
        set!(tune.lower, self.tune_lower);
        set!(tune.upper, self.tune_upper);
        set!(tune.sigma0, self.tune_sigma0);
        set!(tune.min_sigma, self.tune_min_sigma);
        set!(tune.seed, self.seed);

        let mut catch = BallCatchConfig::default();
        set!(catch.times_to_catch, self.catch_times.clone());
        set!(catch.home, self.catch_home.map(Vec3::from));
        set!(catch.launch_radius, self.catch_launch_radius);
        set!(catch.launch_height, self.catch_launch_height);
        set!(catch.intercept_radius, self.catch_intercept_radius);
        set!(catch.catch_radius, self.catch_radius);
        set!(catch.opportunities, self.catch_opportunities);
        set!(catch.settle_seconds, self.catch_settle_seconds);
        set!(catch.trials, self.catch_trials);

        let cfg = RunConfig {
            task,
            gains,
            ff: self.ff.unwrap_or(FeedforwardMode::Ff),
            reference_source: self.reference_source.unwrap_or_default(),
            train,
            tune,
            catch,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        self.tune.validate()?;
        self.catch.validate()
    }
}
