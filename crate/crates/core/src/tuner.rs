//! Black-box tuning of the eight GC gains against the tracking reward.
//!
//! The search runs in log-gain space inside a log-uniform box. An exploration
//! phase samples the box uniformly (trial 0 is the starting gains), then a
//! (1+1) evolution strategy refines the incumbent: each trial perturbs the
//! best gains so far with isotropic Gaussian noise whose scale grows after an
//! improvement and shrinks after a failure (one-fifth success rule). Every
//! candidate is scored on the same episode seeds.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{SeedStream, TaskConfig};
use crate::error::{Error, Result};
use crate::gc::{FeedforwardMode, GcGains};
use crate::harness::{self, GcAgent, ReferenceSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneSettings {
    pub trials: usize,
    pub rollouts: usize,
    /// Uniform exploration trials before refinement starts.
    pub explore: usize,
    pub lower: f64,
    pub upper: f64,
    /// Initial step size of the refinement phase (log units).
    pub sigma0: f64,
    pub min_sigma: f64,
    pub seed: u64,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self { trials: 200, rollouts: 64, explore: 10, lower: 0.1, upper: 40.0, sigma0: 0.5, min_sigma: 1e-3, seed: 0 }
    }
}

impl TuneSettings {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 20 {
            return Err(Error::InvalidParameter(format!("tuning needs at least 20 trials, got {}", self.trials)));
        }
        if self.explore == 0 || self.explore > self.trials {
            return Err(Error::InvalidParameter("need 0 < explore <= trials".into()));
        }
        if !(self.lower > 0.0 && self.upper > self.lower) {
            return Err(Error::InvalidParameter("need 0 < lower < upper".into()));
        }
        if !(self.sigma0 > 0.0 && self.min_sigma > 0.0) {
            return Err(Error::InvalidParameter("step sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub gains: GcGains,
    /// `None` encodes the minus-infinity sentinel.
    pub objective: Option<f64>,
    pub seed: u64,
}

impl Trial {
    pub fn score(&self) -> f64 {
        self.objective.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TuneStudy {
    pub history: Vec<Trial>,
}

impl TuneStudy {
    pub fn best(&self) -> Option<&Trial> {
        self.history.iter().fold(None, |best: Option<&Trial>, t| match best {
            Some(b) if b.score() >= t.score() => Some(b),
            _ => Some(t),
        })
    }

    /// Best objective after each trial.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.history
            .iter()
            .map(|t| {
                best = best.max(t.score());
                best
            })
            .collect()
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let mut history = Vec::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                history.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { history })
    }
}

/// Sequential proposal state, rebuilt deterministically from the history.
struct Proposer<'a> {
    settings: &'a TuneSettings,
    initial: GcGains,
    rng: ChaCha8Rng,
    sigma: f64,
}

impl<'a> Proposer<'a> {
    fn new(settings: &'a TuneSettings, initial: &GcGains) -> Self {
        Self { settings, initial: *initial, rng: ChaCha8Rng::seed_from_u64(settings.seed), sigma: settings.sigma0 }
    }

    fn next(&mut self, history: &[Trial]) -> GcGains {
        let s = self.settings;
        let (lo, hi) = (s.lower.ln(), s.upper.ln());
        let idx = history.len();
        if idx == 0 {
            return GcGains::from_array(self.initial.to_array().map(|g| g.clamp(s.lower, s.upper)));
        }
        if idx < s.explore {
            return GcGains::from_array(std::array::from_fn(|_| self.rng.random_range(lo..=hi).exp()));
        }
        let best = history.iter().map(Trial::score).fold(f64::NEG_INFINITY, f64::max);
        let incumbent = history.iter().find(|t| t.score() == best).unwrap_or(&history[0]);
        let center = incumbent.gains.to_array().map(f64::ln);
        let sigma = self.sigma;
        GcGains::from_array(std::array::from_fn(|i| {
            let z: f64 = self.rng.sample(StandardNormal);
            (center[i] + sigma * z).clamp(lo, hi).exp()
        }))
    }

    /// Step-size update after a refinement trial.
    fn observe(&mut self, history_before: &[Trial], trial: &Trial) {
        if history_before.len() < self.settings.explore {
            return;
        }
        let best = history_before.iter().map(Trial::score).fold(f64::NEG_INFINITY, f64::max);
        let factor = if trial.score() > best { 1.5 } else { 1.5f64.powf(-0.25) };
        self.sigma = (self.sigma * factor).clamp(self.settings.min_sigma, hi_sigma(self.settings));
    }
}

fn hi_sigma(s: &TuneSettings) -> f64 {
    (s.upper.ln() - s.lower.ln()) / 2.0
}

/// Run (or resume) a study against an arbitrary objective. Trials already in
/// `log_path` are replayed instead of re-evaluated; new trials are appended.
pub fn tune_with<F>(settings: &TuneSettings, initial: &GcGains, objective: F, log_path: Option<&Path>) -> Result<TuneStudy>
where
    F: Fn(&GcGains) -> f64,
{
    settings.validate()?;
    let previous = match log_path {
        Some(p) => TuneStudy::load_jsonl(p)?,
        None => TuneStudy::default(),
    };
    let mut log = match log_path {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut proposer = Proposer::new(settings, initial);
    let mut study = TuneStudy::default();
    while study.history.len() < settings.trials {
        let idx = study.history.len();
        let gains = proposer.next(&study.history);
        let trial = match previous.history.get(idx) {
            Some(old) => {
                if old.gains != gains || old.seed != settings.seed {
                    return Err(Error::Config(format!("study log diverges from the proposal sequence at trial {idx}")));
                }
                old.clone()
            }
            None => {
                let v = objective(&gains);
                let trial = Trial { trial: idx, gains, objective: v.is_finite().then_some(v), seed: settings.seed };
                if let Some(f) = log.as_mut() {
                    writeln!(f, "{}", serde_json::to_string(&trial)?)?;
                }
                trial
            }
        };
        proposer.observe(&study.history, &trial);
        study.history.push(trial);
    }
    Ok(study)
}

/// Mean evaluation reward of `gains` over fixed seeds; minus infinity when
/// every rollout hit a controller singularity.
pub fn evaluate_gains(gains: &GcGains, mode: FeedforwardMode, source: ReferenceSource, cfg: &TaskConfig, seeds: &[u64]) -> Result<f64> {
    let agent = GcAgent::new(*gains, mode, source, cfg);
    let results = harness::run_many(cfg, &agent, seeds)?;
    if results.is_empty() || results.iter().all(|r| r.flagged) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(results.iter().map(|r| r.summary.avg_reward).sum::<f64>() / results.len() as f64)
}

/// Tune GC gains on the task distribution of `cfg`.
pub fn tune(
    cfg: &TaskConfig,
    mode: FeedforwardMode,
    source: ReferenceSource,
    settings: &TuneSettings,
    log_path: Option<&Path>,
) -> Result<(GcGains, TuneStudy)> {
    let seeds = harness::seeds(cfg, SeedStream::Tune, settings.rollouts);
    let objective = |g: &GcGains| evaluate_gains(g, mode, source, cfg, &seeds).unwrap_or(f64::NEG_INFINITY);
    let study = tune_with(settings, &GcGains::manual(), objective, log_path)?;
    let best = study.best().map(|t| t.gains).ok_or_else(|| Error::Config("empty study".into()))?;
    Ok((best, study))
}
