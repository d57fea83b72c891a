//! CSV and JSON artifacts with fixed column orders.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::EpisodeResult;
use crate::ppo::CurveRow;
use crate::reward::StepRecord;

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub controller: String,
    pub task: String,
    pub avg_reward: f64,
    pub pos_rmse: f64,
    pub yaw_rmse: f64,
    pub gap: f64,
    pub failed: bool,
}

impl SummaryRow {
    pub fn from_result(r: &EpisodeResult, controller: &str, task: &str) -> Self {
        Self {
            seed: r.seed,
            controller: controller.into(),
            task: task.into(),
            avg_reward: r.summary.avg_reward,
            pos_rmse: r.summary.pos_rmse,
            yaw_rmse: r.summary.yaw_rmse,
            gap: r.summary.gap,
            failed: r.failed,
        }
    }
}

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    ex: f64,
    ey: f64,
    ez: f64,
    e_yaw: f64,
    reward: f64,
    #[serde(rename = "f_T")]
    f_t: f64,
    #[serde(rename = "Mx")]
    mx: f64,
    #[serde(rename = "My")]
    my: f64,
    #[serde(rename = "Mz")]
    mz: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows are written sorted by seed, then controller.
pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.seed.cmp(&b.seed).then_with(|| a.controller.cmp(&b.controller)));
    write_rows(path, sorted, &["seed", "controller", "task", "avg_reward", "pos_rmse", "yaw_rmse", "gap", "failed"])
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_trace(path: &Path, trace: &[StepRecord]) -> Result<()> {
    let rows = trace.iter().map(|s| TraceRow {
        t: s.t,
        ex: s.pos_error.x,
        ey: s.pos_error.y,
        ez: s.pos_error.z,
        e_yaw: s.yaw_error,
        reward: s.reward,
        f_t: s.wrench.thrust,
        mx: s.wrench.moment.x,
        my: s.wrench.moment.y,
        mz: s.wrench.moment.z,
    });
    write_rows(path, rows, &["t", "ex", "ey", "ez", "e_yaw", "reward", "f_T", "Mx", "My", "Mz"])
}

pub fn write_learning_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    write_rows(path, rows, &["update", "global_step", "mean_batch_reward", "eval_avg_reward"])
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(crate::Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
