//! Stable artifact names and their readers and writers.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::diffcore::checkpoint;
use crate::error::{Error, Result};
use crate::ft_engine::GuideModel;
use crate::ncfm::RoundStats;
use crate::representation::PolicyNet;

pub const CONFIG: &str = "config.toml";
pub const DATASET: &str = "dataset.jsonl";
pub const TEST_SET: &str = "test.jsonl";
pub const EVAL_SET: &str = "eval.jsonl";
pub const GUIDE: &str = "guide.ckpt";
pub const INFLUENCE: &str = "influence.csv";
pub const CORESET: &str = "coreset.jsonl";
pub const DISCREPANCY: &str = "discrepancy.csv";
pub const REPORT: &str = "report.json";
pub const TIMINGS: &str = "timings.json";
pub const ABLATION: &str = "ablation.json";
pub const BETA_SWEEP: &str = "beta_sweep.csv";
pub const PROJECTION: &str = "projection.csv";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn policy_file(method: &str) -> String {
    format!("policy_{method}.ckpt")
}

pub fn metrics_file(method: &str) -> String {
    format!("metrics_{method}.json")
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_guide(guide: &GuideModel, path: &Path) -> Result<()> {
    checkpoint::save(&guide.params, path)
}

/// Rebuilds a guide from its checkpoint. The step count is not stored, so
/// the caller supplies the schedule that produced it.
pub fn load_guide(net: &PolicyNet, path: &Path, training_fraction: f64, steps: usize) -> Result<GuideModel> {
    let params = checkpoint::load(path)?;
    if **params.layout() != **net.layout() {
        return Err(Error::format("guide checkpoint", "layout does not match the configured model"));
    }
    Ok(GuideModel {
        net: net.clone(),
        params,
        training_fraction,
        steps,
    })
}

pub fn write_rounds(path: &Path, rounds: &[RoundStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "start", "after_sampler", "after_generator"])?;
    for (i, r) in rounds.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:?}", r.start),
            format!("{:?}", r.after_sampler),
            format!("{:?}", r.after_generator),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rounds(path: &Path) -> Result<Vec<RoundStats>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let field = |k: usize| -> Result<f64> {
            row.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format("discrepancy csv", format!("row {i} column {k}")))
        };
        out.push(RoundStats {
            start: field(1)?,
            after_sampler: field(2)?,
            after_generator: field(3)?,
        });
    }
    Ok(out)
}
