//! Ablation grid over controller class, optimization, optimization data and
//! feedforward mode, each evaluated on Hover and Lissajous.
//!
//! Cells are named `{GC|RL}-{Man|Opt}-{Hover|Lissajous}-{FF|None|PID}`, where
//! the third field is the task the parameters were optimized on. Artifacts
//! are looked up in one directory:
//!
//! - `gc-opt-<source>-<ff>.json`: tuned gains (as written by `tune`)
//! - `rl-<source>-<ff>.json`: policy checkpoint (as written by `train`)
//!
//! with `<source>` in `hover|lissajous` and `<ff>` in `ff|none|pid`. A
//! missing artifact marks its rows absent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{TaskConfig, TaskKind};
use crate::error::{Error, Result};
use crate::gc::{FeedforwardMode, GcGains};
use crate::harness::{self, Aggregate, EpisodeResult, GcAgent, PolicyAgent, ReferenceSource};
use crate::io::{self, SummaryRow};
use crate::policy::PolicyNet;

pub const EVAL_TASKS: [TaskKind; 2] = [TaskKind::Hover, TaskKind::Lissajous];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerClass {
    #[serde(rename = "GC")]
    Gc,
    #[serde(rename = "RL")]
    Rl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub class: ControllerClass,
    /// Hand-set (`false`) or optimized on the objective (`true`).
    pub optimized: bool,
    pub source: TaskKind,
    pub ff: FeedforwardMode,
}

impl Variant {
    pub fn name(&self) -> String {
        let class = match self.class {
            ControllerClass::Gc => "GC",
            ControllerClass::Rl => "RL",
        };
        let opt = if self.optimized { "Opt" } else { "Man" };
        format!("{class}-{opt}-{}-{}", self.source.label(), self.ff.label())
    }

    /// Whether the variant forgoes one of the corrections available for
    /// `eval`: optimization, matching data, or feedforward where it matters.
    pub fn suboptimal(&self, eval: TaskKind) -> bool {
        !self.optimized
            || self.source != eval
            || self.ff == FeedforwardMode::Pid
            || (self.ff == FeedforwardMode::None && eval != TaskKind::Hover)
    }

    pub fn artifact(&self, dir: &Path) -> Option<PathBuf> {
        if !self.optimized {
            return None;
        }
        let class = match self.class {
            ControllerClass::Gc => "gc-opt",
            ControllerClass::Rl => "rl",
        };
        let source = self.source.label().to_lowercase();
        let ff = self.ff.label().to_lowercase();
        Some(dir.join(format!("{class}-{source}-{ff}.json")))
    }
}

/// The grid rows in output order: `(variant, eval task)`.
pub fn grid() -> Vec<(Variant, TaskKind)> {
    let mut out = Vec::new();
    let gc = |optimized, source, ff| Variant { class: ControllerClass::Gc, optimized, source, ff };
    let rl = |source, ff| Variant { class: ControllerClass::Rl, optimized: true, source, ff };
    for eval in EVAL_TASKS {
        for ff in [FeedforwardMode::Ff, FeedforwardMode::None] {
            out.push((gc(false, eval, ff), eval));
        }
        for source in EVAL_TASKS {
            for ff in [FeedforwardMode::Ff, FeedforwardMode::None, FeedforwardMode::Pid] {
                out.push((gc(true, source, ff), eval));
            }
        }
        for source in EVAL_TASKS {
            for ff in [FeedforwardMode::Ff, FeedforwardMode::None] {
                out.push((rl(source, ff), eval));
            }
        }
    }
    out
}

/// One row of `sweep.csv`; statistics are empty for absent cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub controller: ControllerClass,
    pub optimization: String,
    pub data_source: String,
    pub ff: String,
    pub eval_task: String,
    pub suboptimal: bool,
    pub status: String,
    pub episodes: usize,
    pub avg_reward_mean: Option<f64>,
    pub avg_reward_std: Option<f64>,
    pub gap_median: Option<f64>,
    pub gap_q25: Option<f64>,
    pub gap_q75: Option<f64>,
    pub pos_rmse_mean: Option<f64>,
    pub yaw_rmse_mean: Option<f64>,
}

fn evaluate_variant(v: &Variant, task: &TaskConfig, dir: &Path, source: ReferenceSource, n: usize) -> Result<Vec<EpisodeResult>> {
    let seeds = harness::seeds(task, crate::env::SeedStream::Eval, n);
    match v.class {
        ControllerClass::Gc => {
            let gains = match v.artifact(dir) {
                Some(p) => io::read_json::<GcGains>(&p)?,
                None => GcGains::manual(),
            };
            gains.validate()?;
            harness::run_many(task, &GcAgent::new(gains, v.ff, source, task), &seeds)
        }
        ControllerClass::Rl => {
            let path = v.artifact(dir).ok_or_else(|| Error::Config("RL variants are always optimized".into()))?;
            let net = PolicyNet::load(&path)?;
            let agent = PolicyAgent::new(net, task, v.ff.uses_feedforward());
            harness::run_many(task, &agent, &seeds)
        }
    }
}

fn row(v: &Variant, eval: TaskKind, agg: Option<&Aggregate>) -> SweepRow {
    SweepRow {
        name: v.name(),
        controller: v.class,
        optimization: if v.optimized { "Opt" } else { "Man" }.into(),
        data_source: v.source.label().into(),
        ff: v.ff.label().into(),
        eval_task: eval.label().into(),
        suboptimal: v.suboptimal(eval),
        status: if agg.is_some() { "ok" } else { "absent" }.into(),
        episodes: agg.map_or(0, |a| a.episodes),
        avg_reward_mean: agg.map(|a| a.avg_reward.mean),
        avg_reward_std: agg.map(|a| a.avg_reward.std),
        gap_median: agg.map(|a| a.gap.median),
        gap_q25: agg.map(|a| a.gap.q25),
        gap_q75: agg.map(|a| a.gap.q75),
        pos_rmse_mean: agg.map(|a| a.pos_rmse.mean),
        yaw_rmse_mean: agg.map(|a| a.yaw_rmse.mean),
    }
}

/// Evaluate every grid cell on `episodes` shared seeds. Per-episode rows
/// carry the cell name as the controller.
pub fn run_sweep(base: &TaskConfig, artifacts: &Path, source: ReferenceSource, episodes: usize) -> Result<(Vec<SweepRow>, Vec<SummaryRow>)> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (v, eval) in grid() {
        let mut task = base.clone();
        task.kind = eval;
        match evaluate_variant(&v, &task, artifacts, source, episodes) {
            Ok(results) => {
                let agg = harness::aggregate(&results)?;
                summary.extend(results.iter().map(|r| SummaryRow::from_result(r, &v.name(), eval.label())));
                rows.push(row(&v, eval, Some(&agg)));
            }
            Err(Error::MissingArtifact(_)) => rows.push(row(&v, eval, None)),
            Err(e) => return Err(e),
        }
    }
    Ok((rows, summary))
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Morphology;

    #[test]
    fn grid_has_24_uniquely_named_cells() {
        let g = grid();
        assert_eq!(g.len(), 24);
        let mut keys: Vec<String> = g.iter().map(|(v, e)| format!("{}@{}", v.name(), e.label())).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 24);
        assert!(g.iter().any(|(v, _)| v.name() == "GC-Opt-Lissajous-FF"));
        assert!(g.iter().any(|(v, _)| v.name() == "RL-Opt-Hover-None"));
        assert!(g.iter().any(|(v, _)| v.name() == "GC-Man-Hover-FF"));
    }

    #[test]
    fn suboptimal_flags() {
        let v = |optimized, source, ff| Variant { class: ControllerClass::Gc, optimized, source, ff };
        assert!(!v(true, TaskKind::Lissajous, FeedforwardMode::Ff).suboptimal(TaskKind::Lissajous));
        assert!(v(true, TaskKind::Hover, FeedforwardMode::Ff).suboptimal(TaskKind::Lissajous));
        assert!(v(true, TaskKind::Lissajous, FeedforwardMode::None).suboptimal(TaskKind::Lissajous));
        assert!(!v(true, TaskKind::Hover, FeedforwardMode::None).suboptimal(TaskKind::Hover));
        assert!(v(true, TaskKind::Hover, FeedforwardMode::Pid).suboptimal(TaskKind::Hover));
        assert!(v(false, TaskKind::Hover, FeedforwardMode::Ff).suboptimal(TaskKind::Hover));
    }

    #[test]
    fn missing_artifacts_are_absent_and_reruns_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = TaskConfig::new(TaskKind::Hover, Morphology::Quadrotor);
        base.episode_seconds = 0.5;
        let gains = GcGains { kp_xy: 7.0, ..GcGains::manual() };
        io::write_json(&dir.path().join("gc-opt-hover-ff.json"), &gains).unwrap();
        let (rows, summary) = run_sweep(&base, dir.path(), ReferenceSource::Horizon, 2).unwrap();
        assert_eq!(rows.len(), 24);
        let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.status == "ok").collect();
        // 2 manual cells and 1 tuned cell per eval task
        assert_eq!(ok.len(), 6);
        assert!(rows.iter().filter(|r| r.status == "absent").all(|r| r.avg_reward_mean.is_none()));
        assert_eq!(summary.len(), 12);

        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_sweep(&a, &rows).unwrap();
        write_sweep(&b, &run_sweep(&base, dir.path(), ReferenceSource::Horizon, 2).unwrap().0).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text.lines().count(), 25);
        assert!(text.lines().next().unwrap().contains("suboptimal"));
    }
}
