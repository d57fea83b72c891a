//! Task configuration, per-episode random draws and the stepping environment
//! shared by every controller.
//!
//! All randomness of an episode (reference parameters, initial state,
//! physical parameters) is drawn from a single stream seeded by the episode
//! seed, so two controllers evaluated on the same seed face the same episode.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::reward::{self, RewardParams, RewardTarget, StepRecord, TrackingError};
use crate::sim::{self, DynamicsFidelity, Plant, RigidBodyState, VehicleParams, Wrench};
use crate::so3::{self, Vec3};
use crate::trajectory::{self, FlatReference, InitRanges, LissajousParams, TaskRanges, TrajectoryKind, WaypointHorizon};

/// Position error (m) that aborts an episode.
pub const SAFETY_ABORT_DISTANCE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Hover,
    Lissajous,
    BallCatch,
}

impl TaskKind {
    pub fn label(&self) -> &'static str {
        match self {
            TaskKind::Hover => "Hover",
            TaskKind::Lissajous => "Lissajous",
            TaskKind::BallCatch => "BallCatch",
        }
    }

    /// Reference family used for sampling; ball catching starts from hover.
    pub fn trajectory_kind(&self) -> TrajectoryKind {
        match self {
            TaskKind::Lissajous => TrajectoryKind::Lissajous,
            TaskKind::Hover | TaskKind::BallCatch => TrajectoryKind::Hover,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Morphology {
    #[serde(rename = "quad")]
    Quadrotor,
    #[serde(rename = "am")]
    AerialManipulator,
}

impl Morphology {
    pub fn nominal_params(&self) -> VehicleParams {
        match self {
            Morphology::Quadrotor => VehicleParams::nominal_quadrotor(),
            Morphology::AerialManipulator => VehicleParams::nominal_manipulator(),
        }
    }
}

/// Named random streams, so training, tuning and evaluation never share
/// episode seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedStream {
    Eval = 1,
    Tune = 2,
    Train = 3,
    Catch = 4,
    /// Held-out episodes for checkpoint selection during training.
    Validation = 5,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn episode_seed(base: u64, stream: SeedStream, index: u64) -> u64 {
    mix(mix(base ^ ((stream as u64) << 56)).wrapping_add(index))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub morphology: Morphology,
    pub fidelity: DynamicsFidelity,
    /// Domain randomization half-width as a fraction (0, 0.2, 0.4).
    pub dr_pct: f64,
    pub episode_seconds: f64,
    pub control_dt: f64,
    pub sim_dt: f64,
    pub horizon_len: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Nominal vehicle; the plant may be randomized around it.
    pub vehicle: VehicleParams,
}

impl TaskConfig {
    pub fn new(kind: TaskKind, morphology: Morphology) -> Self {
        Self {
            kind,
            morphology,
            fidelity: DynamicsFidelity::Simple,
            dr_pct: 0.0,
            episode_seconds: 10.0,
            control_dt: 0.02,
            sim_dt: 0.01,
            horizon_len: trajectory::DEFAULT_HORIZON,
            episodes: 1000,
            seed: 0,
            vehicle: morphology.nominal_params(),
        }
    }

    pub fn substeps(&self) -> usize {
        (self.control_dt / self.sim_dt).round() as usize
    }

    pub fn steps(&self) -> usize {
        (self.episode_seconds / self.control_dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sim_dt > 0.0 && self.control_dt > 0.0 && self.episode_seconds > 0.0) {
            return Err(Error::Config("time steps and episode length must be positive".into()));
        }
        let ratio = self.control_dt / self.sim_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "control_dt ({}) must be an integer multiple of sim_dt ({})",
                self.control_dt, self.sim_dt
            )));
        }
        if !(0.0..1.0).contains(&self.dr_pct) {
            return Err(Error::Config(format!("dr_pct must be in [0, 1), got {}", self.dr_pct)));
        }
        self.vehicle.validate()
    }
}

/// Everything random about one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDraw {
    pub seed: u64,
    /// Reference of the tracked frame.
    pub lissajous: LissajousParams,
    /// Initial state of the tracked frame.
    pub initial: RigidBodyState,
    /// Physical parameters of the plant.
    pub params: VehicleParams,
}

impl EpisodeDraw {
    pub fn sample(cfg: &TaskConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = cfg.kind.trajectory_kind();
        let lissajous = trajectory::sample_task(&TaskRanges::for_kind(kind), &mut rng);
        let goal = trajectory::sample(&lissajous, 0.0);
        let initial = trajectory::sample_initial_state(&InitRanges::for_kind(kind), &goal, &mut rng);
        let params = sim::randomize_params(&cfg.vehicle, cfg.dr_pct, &mut rng)?;
        Ok(Self { seed, lissajous, initial, params })
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable draw");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// COM state of a vehicle whose frame at body offset `r` is in `frame`.
pub fn com_from_offset_frame(frame: &RigidBodyState, r: &Vec3) -> RigidBodyState {
    RigidBodyState {
        position: frame.position - frame.rotation * r,
        rotation: frame.rotation,
        velocity: frame.velocity - frame.rotation * frame.angular_velocity.cross(r),
        angular_velocity: frame.angular_velocity,
    }
}

/// What a controller hands back each control step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlInput {
    Wrench(Wrench),
    /// Place the tracked frame exactly on the reference (reward-ceiling oracle).
    Teleport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub record: StepRecord,
    pub done: bool,
    /// Set on the step that aborted the episode.
    pub aborted: bool,
}

/// One running episode.
#[derive(Clone, Debug)]
pub struct Episode {
    pub cfg: TaskConfig,
    pub draw: EpisodeDraw,
    pub plant: Plant,
    /// Reference of the tracked frame; may be replaced mid-episode (ball catch).
    pub lissajous: LissajousParams,
    pub reward_params: RewardParams,
    /// Reference time is `time - time_offset`.
    pub time_offset: f64,
    step: usize,
    n_steps: usize,
    failed: bool,
    last_error: Vec3,
}

impl Episode {
    pub fn new(cfg: &TaskConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let draw = EpisodeDraw::sample(cfg, seed)?;
        Ok(Self::from_draw(cfg, draw))
    }

    pub fn from_draw(cfg: &TaskConfig, draw: EpisodeDraw) -> Self {
        let com = com_from_offset_frame(&draw.initial, &draw.params.ee_offset);
        let plant = Plant::new(draw.params.clone(), cfg.fidelity, com);
        Self {
            cfg: cfg.clone(),
            lissajous: draw.lissajous,
            draw,
            plant,
            reward_params: RewardParams::evaluation(cfg.control_dt),
            time_offset: 0.0,
            step: 0,
            n_steps: cfg.steps(),
            failed: false,
            last_error: Vec3::zeros(),
        }
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.control_dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.n_steps
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    /// Nominal model available to controllers.
    pub fn nominal(&self) -> &VehicleParams {
        &self.cfg.vehicle
    }

    pub fn com_state(&self) -> &RigidBodyState {
        &self.plant.state
    }

    /// State of the frame being scored (COM for a quadrotor, end effector
    /// for a manipulator).
    pub fn tracked_state(&self) -> RigidBodyState {
        self.plant.end_effector()
    }

    pub fn reference_at(&self, t: f64) -> FlatReference {
        trajectory::sample(&self.lissajous, t - self.time_offset)
    }

    pub fn reference(&self) -> FlatReference {
        self.reference_at(self.time())
    }

    pub fn target(&self) -> RewardTarget {
        RewardTarget::from(&self.reference())
    }

    /// Future waypoints of the tracked frame.
    pub fn horizon(&self) -> WaypointHorizon {
        let dt = self.cfg.control_dt;
        let t = self.time();
        let points = (1..=self.cfg.horizon_len.max(1))
            .map(|k| trajectory::Waypoint::from(&self.reference_at(t + k as f64 * dt)))
            .collect();
        WaypointHorizon { t0: t, dt, points }
    }

    fn teleport(&mut self, t: f64) {
        let r = self.reference_at(t);
        let rot = so3::rot_z(r.yaw);
        let frame = RigidBodyState {
            position: r.position,
            rotation: rot,
            velocity: r.velocity,
            angular_velocity: rot.transpose() * r.angular_velocity_world(),
        };
        self.plant.state = com_from_offset_frame(&frame, &self.plant.params.ee_offset);
        self.plant.motors = sim::MotorState::hover(&self.plant.params);
    }

    fn abort_record(&self, t: f64) -> StepRecord {
        let dir = if self.last_error.norm() > 0.0 { self.last_error.normalize() } else { Vec3::x() };
        let err = TrackingError {
            position: dir * SAFETY_ABORT_DISTANCE,
            yaw: PI,
            velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        };
        StepRecord {
            t,
            pos_error: err.position,
            yaw_error: PI,
            reward: reward::reward_from_error(&err, &self.reward_params),
            wrench: Wrench::default(),
        }
    }

    /// Advance one control step (zero-order hold over the sim substeps) and
    /// score the tracked frame at the new time.
    pub fn step(&mut self, input: ControlInput) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::InvalidParameter("episode already finished".into()));
        }
        let t_next = (self.step + 1) as f64 * self.cfg.control_dt;
        if self.failed {
            self.step += 1;
            return Ok(StepOutcome { record: self.abort_record(t_next), done: self.is_done(), aborted: false });
        }
        let mut applied = Wrench::default();
        let mut diverged = false;
        match input {
            ControlInput::Teleport => self.teleport(t_next),
            ControlInput::Wrench(w) => {
                for _ in 0..self.cfg.substeps() {
                    match self.plant.step(&w, self.cfg.sim_dt) {
                        Ok(a) => applied = a,
                        Err(_) => {
                            diverged = true;
                            break;
                        }
                    }
                }
            }
        }
        self.step += 1;
        let target = RewardTarget::from(&self.reference_at(t_next));
        let body = self.tracked_state();
        let err = TrackingError::between(&body, &target);
        if diverged || !body.is_finite() || err.position.norm() > SAFETY_ABORT_DISTANCE {
            self.failed = true;
            return Ok(StepOutcome { record: self.abort_record(t_next), done: self.is_done(), aborted: true });
        }
        self.last_error = err.position;
        let record = StepRecord {
            t: t_next,
            pos_error: err.position,
            yaw_error: err.yaw,
            reward: reward::reward_from_error(&err, &self.reward_params),
            wrench: applied,
        };
        Ok(StepOutcome { record, done: self.is_done(), aborted: false })
    }
}
