//! Controllers behind a common interface, episode rollout and aggregate
//! statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{episode_seed, ControlInput, Episode, SeedStream, TaskConfig};
use crate::error::{Error, Result};
use crate::gc::{FeedforwardMode, GcController, GcGains};
use crate::policy::{observe, ActionScaler, PolicyNet};
use crate::reward::{self, EvalSummary, StepRecord};
use crate::trajectory::{self, FlatReference, Waypoint};

/// A controller that can be run inside an [`Episode`].
pub trait Controller {
    fn name(&self) -> String;
    /// Called once before the first step of each episode.
    fn reset(&mut self, episode: &Episode);
    fn control(&mut self, episode: &Episode) -> Result<ControlInput>;
    /// True if the episode should be flagged (e.g. a controller singularity).
    fn flagged(&self) -> bool {
        false
    }
}

/// Where the GC gets reference derivatives from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSource {
    /// Exact derivatives of the reference.
    Analytic,
    /// Finite differences over the waypoint horizon, the information the
    /// policy observes.
    #[default]
    Horizon,
}

/// Geometric controller driven by the COM state and a COM reference derived
/// from the tracked-frame reference.
#[derive(Clone, Debug)]
pub struct GcAgent {
    pub gc: GcController,
    pub source: ReferenceSource,
    pub label: String,
}

impl GcAgent {
    pub fn new(gains: GcGains, mode: FeedforwardMode, source: ReferenceSource, cfg: &TaskConfig) -> Self {
        Self {
            gc: GcController::new(gains, mode, cfg.vehicle.clone(), cfg.control_dt),
            source,
            label: format!("GC-{}", mode.label()),
        }
    }

    /// Reference handed to the GC at the current step.
    pub fn com_reference(&self, episode: &Episode) -> Result<FlatReference> {
        let tracked = match self.source {
            ReferenceSource::Analytic => episode.reference(),
            ReferenceSource::Horizon => {
                let current = Waypoint::from(&episode.reference());
                trajectory::fd_reference(&episode.horizon(), &current, episode.cfg.control_dt)?
            }
        };
        Ok(tracked.shifted_by_yawed_offset(&episode.nominal().ee_offset))
    }
}

impl Controller for GcAgent {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self, _episode: &Episode) {
        self.gc.reset();
    }

    fn control(&mut self, episode: &Episode) -> Result<ControlInput> {
        let r = self.com_reference(episode)?;
        Ok(ControlInput::Wrench(self.gc.control(episode.com_state(), &r)))
    }

    fn flagged(&self) -> bool {
        self.gc.singular_steps() > 0
    }
}

/// Which frame the policy observes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservedFrame {
    /// The scored frame (end effector on a manipulator).
    #[default]
    Tracked,
    /// The center of mass, with the reference shifted accordingly.
    Com,
}

/// Deterministic (mean-action) policy.
#[derive(Clone, Debug)]
pub struct PolicyAgent {
    pub net: PolicyNet,
    pub scaler: ActionScaler,
    pub use_horizon: bool,
    pub frame: ObservedFrame,
    pub label: String,
}

impl PolicyAgent {
    pub fn new(net: PolicyNet, cfg: &TaskConfig, use_horizon: bool) -> Self {
        Self {
            net,
            scaler: ActionScaler::from_params(&cfg.vehicle),
            use_horizon,
            frame: ObservedFrame::Tracked,
            label: format!("RL-{}", if use_horizon { "FF" } else { "None" }),
        }
    }
}

/// Observation of `episode` as seen by a policy.
pub fn episode_observation(episode: &Episode, use_horizon: bool, frame: ObservedFrame) -> Vec<f64> {
    let g = episode.nominal().gravity;
    let horizon = use_horizon.then(|| episode.horizon());
    match frame {
        ObservedFrame::Tracked => observe(&episode.tracked_state(), &episode.target(), g, horizon.as_ref()),
        ObservedFrame::Com => {
            let off = episode.nominal().ee_offset;
            let r = episode.reference().shifted_by_yawed_offset(&off);
            let h = horizon.map(|h| {
                let mut shifted = h.clone();
                for (k, w) in shifted.points.iter_mut().enumerate() {
                    let full = episode.reference_at(h.time(k)).shifted_by_yawed_offset(&off);
                    *w = Waypoint::from(&full);
                }
                shifted
            });
            observe(episode.com_state(), &(&r).into(), g, h.as_ref())
        }
    }
}

impl Controller for PolicyAgent {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self, _episode: &Episode) {}

    fn control(&mut self, episode: &Episode) -> Result<ControlInput> {
        let obs = episode_observation(episode, self.use_horizon, self.frame);
        Ok(ControlInput::Wrench(self.net.act::<ChaCha8Rng>(&obs, &self.scaler, None)?))
    }
}

/// Uniformly random raw actions in [-1, 1]; seeded per episode.
#[derive(Clone, Debug)]
pub struct RandomAgent {
    pub scaler: ActionScaler,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(cfg: &TaskConfig) -> Self {
        Self { scaler: ActionScaler::from_params(&cfg.vehicle), rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Controller for RandomAgent {
    fn name(&self) -> String {
        "Random".into()
    }

    fn reset(&mut self, episode: &Episode) {
        self.rng = ChaCha8Rng::seed_from_u64(episode.draw.seed ^ 0xA5A5_A5A5);
    }

    fn control(&mut self, _episode: &Episode) -> Result<ControlInput> {
        let raw: Vec<f64> = (0..4).map(|_| self.rng.random_range(-1.0..=1.0)).collect();
        Ok(ControlInput::Wrench(self.scaler.scale(&raw)))
    }
}

/// Places the tracked frame on the reference every step.
#[derive(Clone, Debug, Default)]
pub struct TeleportOracle;

impl Controller for TeleportOracle {
    fn name(&self) -> String {
        "Oracle".into()
    }

    fn reset(&mut self, _episode: &Episode) {}

    fn control(&mut self, _episode: &Episode) -> Result<ControlInput> {
        Ok(ControlInput::Teleport)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub draw_hash: String,
    pub summary: EvalSummary,
    pub failed: bool,
    pub flagged: bool,
    pub trace: Vec<StepRecord>,
}

/// Drive an already constructed episode to the end.
pub fn run_prepared<C: Controller + ?Sized>(mut episode: Episode, controller: &mut C) -> Result<EpisodeResult> {
    controller.reset(&episode);
    let mut trace = Vec::with_capacity(episode.n_steps());
    while !episode.is_done() {
        let input = if episode.failed() {
            ControlInput::Wrench(Default::default())
        } else {
            controller.control(&episode)?
        };
        trace.push(episode.step(input)?.record);
    }
    let summary = reward::summarize(&trace, episode.cfg.control_dt)?;
    Ok(EpisodeResult {
        seed: episode.draw.seed,
        draw_hash: episode.draw.hash(),
        summary,
        failed: episode.failed(),
        flagged: controller.flagged(),
        trace,
    })
}

pub fn run_episode<C: Controller + ?Sized>(cfg: &TaskConfig, controller: &mut C, seed: u64) -> Result<EpisodeResult> {
    run_prepared(Episode::new(cfg, seed)?, controller)
}

/// Evaluation seeds: `cfg.episodes` seeds of the given stream.
pub fn seeds(cfg: &TaskConfig, stream: SeedStream, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| episode_seed(cfg.seed, stream, i)).collect()
}

/// Run `controller` on every seed in parallel; results come back sorted by
/// input order.
pub fn run_many<C: Controller + Clone + Send + Sync>(cfg: &TaskConfig, controller: &C, seeds: &[u64]) -> Result<Vec<EpisodeResult>> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut c = controller.clone();
            run_episode(cfg, &mut c, s)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Stats {
    /// Population standard deviation; quantiles by linear interpolation.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { mean, std, median: quantile(&s, 0.5), q25: quantile(&s, 0.25), q75: quantile(&s, 0.75) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub avg_reward: Stats,
    pub pos_rmse: Stats,
    pub yaw_rmse: Stats,
    pub gap: Stats,
    pub failures: usize,
    pub flagged: usize,
}

pub fn aggregate(results: &[EpisodeResult]) -> Result<Aggregate> {
    let col = |f: fn(&EvalSummary) -> f64| -> Vec<f64> { results.iter().map(|r| f(&r.summary)).collect() };
    Ok(Aggregate {
        episodes: results.len(),
        avg_reward: Stats::of(&col(|s| s.avg_reward))?,
        pos_rmse: Stats::of(&col(|s| s.pos_rmse))?,
        yaw_rmse: Stats::of(&col(|s| s.yaw_rmse))?,
        gap: Stats::of(&col(|s| s.gap))?,
        failures: results.iter().filter(|r| r.failed).count(),
        flagged: results.iter().filter(|r| r.flagged).count(),
    })
}

/// Evaluate on `n` seeds of the evaluation stream.
pub fn evaluate<C: Controller + Clone + Send + Sync>(cfg: &TaskConfig, controller: &C, n: usize) -> Result<(Aggregate, Vec<EpisodeResult>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one episode".into()));
    }
    let results = run_many(cfg, controller, &seeds(cfg, SeedStream::Eval, n))?;
    Ok((aggregate(&results)?, results))
}
