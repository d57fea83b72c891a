//! Ball catching with the end effector.
//!
//! Each trial hovers the vehicle at a home point and throws a sequence of
//! balls from a horizontal ring below it. A throw is built backwards from its
//! time-to-catch: the ball leaves the ring and passes, on its way down,
//! through an intercept point on the catch plane exactly that many seconds
//! later. At launch the intercept is commanded once as a step reference (no
//! replanning), and the throw counts as caught if the end effector is within
//! the catch radius of the ball when the ball crosses the plane.
//!
//! Throw geometry depends only on the trial seed, so all time-to-catch levels
//! see the same launch directions and intercept points.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{episode_seed, ControlInput, Episode, EpisodeDraw, SeedStream, TaskConfig};
use crate::error::{Error, Result};
use crate::harness::Controller;
use crate::so3::Vec3;
use crate::trajectory::{self, LissajousParams};

pub const TIMES_TO_CATCH: [f64; 4] = [0.79, 1.09, 1.53, 1.99];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallCatchConfig {
    pub times_to_catch: Vec<f64>,
    /// End-effector hover point; its height is the catch plane.
    pub home: Vec3,
    pub launch_radius: f64,
    pub launch_height: f64,
    /// Intercepts are drawn uniformly from a disc of this radius around home.
    pub intercept_radius: f64,
    /// Sampling box half-width for intercepts before the disc check.
    pub workspace_half_width: f64,
    pub catch_radius: f64,
    pub opportunities: usize,
    pub settle_seconds: f64,
    pub trials: usize,
}

impl Default for BallCatchConfig {
    fn default() -> Self {
        Self {
            times_to_catch: TIMES_TO_CATCH.to_vec(),
            home: Vec3::new(0.0, 0.0, 1.5),
            launch_radius: 2.0,
            launch_height: 0.5,
            intercept_radius: 1.0,
            workspace_half_width: 1.2,
            catch_radius: 0.10,
            opportunities: 5,
            settle_seconds: 3.0,
            trials: 100,
        }
    }
}

impl BallCatchConfig {
    pub fn plane_height(&self) -> f64 {
        self.home.z
    }

    pub fn validate(&self) -> Result<()> {
        if self.times_to_catch.is_empty() || self.times_to_catch.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("times_to_catch must be non-empty and positive".into()));
        }
        if self.launch_height >= self.plane_height() {
            return Err(Error::Config("launch height must lie below the catch plane".into()));
        }
        if !(self.catch_radius > 0.0 && self.intercept_radius >= 0.0 && self.launch_radius > 0.0) {
            return Err(Error::Config("radii must be positive".into()));
        }
        if self.workspace_half_width < self.intercept_radius / 2f64.sqrt() {
            return Err(Error::Config("workspace box cannot contain any intercept disc point".into()));
        }
        if self.opportunities == 0 || self.trials == 0 || self.settle_seconds < 0.0 {
            return Err(Error::Config("need opportunities > 0, trials > 0 and settle_seconds >= 0".into()));
        }
        Ok(())
    }
}

/// Geometry of one throw, independent of its timing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throw {
    pub origin: Vec3,
    pub intercept: Vec3,
}

/// Shortest time-to-catch whose plane crossing happens on the way down.
pub fn min_time_to_catch(cfg: &BallCatchConfig, gravity: f64) -> f64 {
    (2.0 * (cfg.plane_height() - cfg.launch_height) / gravity).sqrt()
}

impl Throw {
    /// Launch velocity that reaches `intercept` on the way down after `t` seconds.
    pub fn launch_velocity(&self, t: f64, gravity: f64) -> Vec3 {
        let d = self.intercept - self.origin;
        Vec3::new(d.x / t, d.y / t, (d.z + 0.5 * gravity * t * t) / t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl Ball {
    /// Exact constant-acceleration update.
    pub fn step(&mut self, dt: f64, gravity: f64) {
        let g = Vec3::new(0.0, 0.0, -gravity);
        self.position += self.velocity * dt + 0.5 * g * dt * dt;
        self.velocity += g * dt;
    }
}

pub fn ballistic(p0: &Vec3, v0: &Vec3, gravity: f64, t: f64) -> Vec3 {
    p0 + v0 * t + Vec3::new(0.0, 0.0, -0.5 * gravity * t * t)
}

/// Throws of one trial, plus the number of intercepts rejected for lying
/// outside the reachable disc.
pub fn sample_throws(cfg: &BallCatchConfig, seed: u64) -> (Vec<Throw>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0BA1_1CA7);
    let mut rejected = 0;
    let throws = (0..cfg.opportunities)
        .map(|_| {
            let a = rng.random_range(0.0..TAU);
            let origin = Vec3::new(
                cfg.home.x + cfg.launch_radius * a.cos(),
                cfg.home.y + cfg.launch_radius * a.sin(),
                cfg.launch_height,
            );
            let w = cfg.workspace_half_width;
            let offset = loop {
                let o = Vec3::new(rng.random_range(-w..=w), rng.random_range(-w..=w), 0.0);
                if o.norm() <= cfg.intercept_radius {
                    break o;
                }
                rejected += 1;
            };
            Throw { origin, intercept: cfg.home + offset }
        })
        .collect();
    (throws, rejected)
}

/// Outcome of one throw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatchAttempt {
    pub caught: bool,
    /// End-effector distance to the ball at the plane crossing.
    pub miss_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub time_to_catch: f64,
    pub draw_hash: String,
    pub attempts: Vec<CatchAttempt>,
    pub rejected_intercepts: usize,
}

fn trial_task(task: &TaskConfig, cfg: &BallCatchConfig, t_catch: f64) -> TaskConfig {
    let mut t = task.clone();
    t.episode_seconds = cfg.opportunities as f64 * (cfg.settle_seconds + t_catch + 1.0) + 1.0;
    t
}

/// Episode draw for a catch trial: the sampled hover task moved to `home`.
pub fn trial_draw(task: &TaskConfig, cfg: &BallCatchConfig, seed: u64) -> Result<EpisodeDraw> {
    let mut draw = EpisodeDraw::sample(task, seed)?;
    let goal = trajectory::sample(&draw.lissajous, 0.0);
    draw.initial.position += cfg.home - goal.position;
    draw.lissajous = LissajousParams::hover(cfg.home, goal.yaw);
    Ok(draw)
}

fn advance<C: Controller + ?Sized>(ep: &mut Episode, controller: &mut C) -> Result<()> {
    let input = if ep.failed() { ControlInput::Wrench(Default::default()) } else { controller.control(ep)? };
    ep.step(input)?;
    Ok(())
}

/// Run one trial: settle, throw, check; repeated for every opportunity.
pub fn run_trial<C: Controller + ?Sized>(
    task: &TaskConfig,
    cfg: &BallCatchConfig,
    controller: &mut C,
    seed: u64,
    t_catch: f64,
    throws: &[Throw],
) -> Result<TrialResult> {
    let task = trial_task(task, cfg, t_catch);
    let draw = trial_draw(&task, cfg, seed)?;
    let draw_hash = draw.hash();
    let home = draw.lissajous;
    let mut ep = Episode::from_draw(&task, draw);
    let dt = task.control_dt;
    let g = ep.nominal().gravity;
    let plane = cfg.plane_height();
    controller.reset(&ep);
    let settle_steps = (cfg.settle_seconds / dt).round() as usize;
    let mut attempts = Vec::with_capacity(throws.len());
    for throw in throws {
        ep.lissajous = home;
        for _ in 0..settle_steps {
            advance(&mut ep, controller)?;
        }
        let yaw = ep.tracked_state().yaw();
        ep.lissajous = LissajousParams::hover(throw.intercept, yaw);
        let mut ball = Ball { position: throw.origin, velocity: throw.launch_velocity(t_catch, g) };
        let max_steps = (t_catch / dt).ceil() as usize + 2;
        let mut attempt = None;
        for _ in 0..max_steps {
            let (ee0, b0) = (ep.tracked_state().position, ball.position);
            advance(&mut ep, controller)?;
            ball.step(dt, g);
            let (ee1, b1) = (ep.tracked_state().position, ball.position);
            if ball.velocity.z < 0.0 && b0.z >= plane && b1.z < plane {
                let s = (b0.z - plane) / (b0.z - b1.z);
                let ee = ee0 + (ee1 - ee0) * s;
                let b = b0 + (b1 - b0) * s;
                let miss = if ep.failed() { f64::INFINITY } else { (ee - b).norm() };
                attempt = Some(CatchAttempt { caught: miss <= cfg.catch_radius, miss_distance: miss });
                break;
            }
        }
        attempts.push(attempt.ok_or_else(|| Error::Diverged("ball never crossed the catch plane".into()))?);
    }
    Ok(TrialResult { seed, time_to_catch: t_catch, draw_hash, attempts, rejected_intercepts: 0 })
}

/// Success statistics for one time-to-catch level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatchLevel {
    pub time_to_catch: f64,
    pub trials: usize,
    pub attempts: usize,
    pub catches: usize,
    pub success_rate: f64,
    pub rejected_intercepts: usize,
}

/// Run `cfg.trials` trials at every time-to-catch level. Trial `i` uses the
/// same seed, draw and throw geometry at every level.
pub fn run_ball_catch<C: Controller + Clone + Send + Sync>(
    task: &TaskConfig,
    cfg: &BallCatchConfig,
    controller: &C,
) -> Result<(Vec<CatchLevel>, Vec<TrialResult>)> {
    cfg.validate()?;
    let t_min = min_time_to_catch(cfg, task.vehicle.gravity);
    if let Some(t) = cfg.times_to_catch.iter().find(|t| **t <= t_min) {
        return Err(Error::Config(format!("time-to-catch {t} s is below the {t_min:.3} s needed to cross the plane descending")));
    }
    let seeds: Vec<u64> = (0..cfg.trials as u64).map(|i| episode_seed(task.seed, SeedStream::Catch, i)).collect();
    let mut levels = Vec::new();
    let mut all = Vec::new();
    for &t_catch in &cfg.times_to_catch {
        let trials: Vec<TrialResult> = seeds
            .par_iter()
            .map(|&s| {
                let (throws, rejected) = sample_throws(cfg, s);
                let mut c = controller.clone();
                let mut r = run_trial(task, cfg, &mut c, s, t_catch, &throws)?;
                r.rejected_intercepts = rejected;
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let attempts: usize = trials.iter().map(|t| t.attempts.len()).sum();
        let catches: usize = trials.iter().map(|t| t.attempts.iter().filter(|a| a.caught).count()).sum();
        levels.push(CatchLevel {
            time_to_catch: t_catch,
            trials: trials.len(),
            attempts,
            catches,
            success_rate: catches as f64 / attempts as f64,
            rejected_intercepts: trials.iter().map(|t| t.rejected_intercepts).sum(),
        });
        all.extend(trials);
    }
    Ok((levels, all))
}
