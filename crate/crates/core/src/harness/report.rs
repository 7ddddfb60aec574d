//! Report files written at the end of a run.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::RunReport;
use crate::data_io::{RunConfig, Variant};
use crate::error::{Error, Result};

/// `run.json`: everything except the per-step trace and update log.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<'a> {
    pub method: &'a str,
    pub variant: Option<Variant>,
    pub seed: u64,
    pub original_score: f64,
    pub best_score: f64,
    pub best_episode: usize,
    pub best_step: usize,
    pub test_score_topk: f64,
    pub test_score_full: f64,
    pub original_test_score: f64,
    pub best_features: &'a [String],
    pub best_selected: &'a [usize],
    pub eval_calls: usize,
    pub episodes_run: usize,
    pub trace_rows: usize,
    pub wall_time_secs: f64,
    pub config: &'a RunConfig,
}

impl<'a> RunSummary<'a> {
    pub fn of(r: &'a RunReport) -> Self {
        Self {
            method: &r.method,
            variant: r.variant,
            seed: r.seed,
            original_score: r.original_score,
            best_score: r.best_score,
            best_episode: r.best_episode,
            best_step: r.best_step,
            test_score_topk: r.test_score_topk,
            test_score_full: r.test_score_full,
            original_test_score: r.original_test_score,
            best_features: &r.best_features,
            best_selected: &r.best_selected,
            eval_calls: r.eval_calls,
            episodes_run: r.episodes_run,
            trace_rows: r.trace.len(),
            wall_time_secs: r.wall_time_secs,
            config: &r.config,
        }
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes `run.json`, `trace.jsonl`, `curve.csv`, `train_log.jsonl`,
/// `best_features.csv` and `provenance.json` into `out_dir`. The trace holds
/// no timing data, so identical runs produce identical bytes.
pub fn emit_reports(report: &RunReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let run = out_dir.join("run.json");
    let mut text = serde_json::to_string_pretty(&RunSummary::of(report))?;
    text.push('\n');
    fs::write(&run, text).map_err(|e| Error::io(&run, e))?;
    write_jsonl(&out_dir.join("trace.jsonl"), &report.trace)?;
    write_jsonl(&out_dir.join("train_log.jsonl"), &report.updates)?;

    let curve = out_dir.join("curve.csv");
    let mut w = csv::Writer::from_path(&curve)?;
    w.write_record(["episode", "episode_best", "running_best", "mean_reward"])?;
    for c in &report.curve {
        w.write_record([
            c.episode.to_string(),
            c.episode_best.to_string(),
            c.running_best.to_string(),
            c.mean_reward.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&curve, e))?;

    if let Some(pool) = &report.best_pool {
        pool.export_csv(&out_dir.join("best_features.csv"), None)?;
        pool.provenance(None).write(&out_dir.join("provenance.json"))?;
    }
    Ok(())
}
