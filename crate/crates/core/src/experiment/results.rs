//! Per-trial records, aggregate statistics and the on-disk results bundle.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::config::ExperimentConfig;
use crate::nn::ParamSnapshot;
use crate::train::History;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub model: String,
    pub nmse: Option<f64>,
    pub accuracy: Option<f64>,
    pub train_time_s: f64,
    pub inference_time_s: f64,
    pub wall_time_s: f64,
    pub param_count: usize,
    pub best_epoch: Option<usize>,
}

/// Summary of one metric across trials. `std` uses the population
/// convention (ddof = 0); quartiles interpolate linearly between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Aggregate {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            count,
            mean,
            std: var.sqrt(),
            median: quantile(&sorted, 0.5),
            q25: quantile(&sorted, 0.25),
            q75: quantile(&sorted, 0.75),
        })
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

type MetricFn = fn(&TrialRecord) -> Option<f64>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub histories: Vec<History>,
    pub params: Vec<Option<ParamSnapshot>>,
    pub wall_time_s: f64,
}

impl ResultsBundle {
    fn metric(&self, f: impl Fn(&TrialRecord) -> Option<f64>) -> Option<Aggregate> {
        let v: Vec<f64> = self.trials.iter().filter_map(f).collect();
        Aggregate::of(&v)
    }

    /// `(metric name, aggregate)` for every metric present in the trials.
    pub fn aggregates(&self) -> Vec<(&'static str, Aggregate)> {
        let mut out = Vec::new();
        let metrics: [(&'static str, MetricFn); 5] = [
            ("nmse", |t| t.nmse),
            ("accuracy", |t| t.accuracy),
            ("train_time_s", |t| Some(t.train_time_s)),
            ("inference_time_s", |t| Some(t.inference_time_s)),
            ("wall_time_s", |t| Some(t.wall_time_s)),
        ];
        for (name, f) in metrics {
            if let Some(a) = self.metric(f) {
                out.push((name, a));
            }
        }
        out
    }

    pub fn aggregate(&self, name: &str) -> Option<Aggregate> {
        self.aggregates()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, a)| a)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.trials.iter().map(|t| t.seed).collect()
    }

    /// Human-readable table of per-trial rows and aggregates.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "task {:?}, model {}, {} trial(s)",
            self.config.task,
            self.config.model.kind.as_str(),
            self.trials.len()
        );
        let _ = writeln!(
            s,
            "{:>5} {:>20} {:>12} {:>10} {:>10} {:>9}",
            "trial", "seed", "nmse", "accuracy", "time_s", "params"
        );
        for t in &self.trials {
            let _ = writeln!(
                s,
                "{:>5} {:>20} {:>12} {:>10} {:>10.3} {:>9}",
                t.trial,
                t.seed,
                fmt_opt(t.nmse),
                fmt_opt(t.accuracy),
                t.wall_time_s,
                t.param_count
            );
        }
        let _ = writeln!(
            s,
            "\n{:<18} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "metric", "mean", "std", "median", "q25", "q75"
        );
        for (name, a) in self.aggregates() {
            let _ = writeln!(
                s,
                "{:<18} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e}",
                name, a.mean, a.std, a.median, a.q25, a.q75
            );
        }
        s
    }

    /// Writes the bundle into `dir`: `config.toml`, `trials.csv`,
    /// `aggregate.csv`, `history.csv`, `params/trial_<t>.json`,
    /// `metadata.json` and `summary.txt`. Every file is written to a
    /// temporary name and renamed into place.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("config.toml"), self.config.to_toml().as_bytes())?;

        let mut w = csv::Writer::from_writer(Vec::new());
        for t in &self.trials {
            w.serialize(t)?;
        }
        write_atomic(&dir.join("trials.csv"), &into_bytes(w)?)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "count", "mean", "std", "median", "q25", "q75"])?;
        for (name, a) in self.aggregates() {
            w.write_record([
                name.to_string(),
                a.count.to_string(),
                a.mean.to_string(),
                a.std.to_string(),
                a.median.to_string(),
                a.q25.to_string(),
                a.q75.to_string(),
            ])?;
        }
        write_atomic(&dir.join("aggregate.csv"), &into_bytes(w)?)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial", "epoch", "train_loss", "val_loss"])?;
        for (t, h) in self.histories.iter().enumerate() {
            for e in &h.epochs {
                w.write_record([
                    t.to_string(),
                    e.epoch.to_string(),
                    e.train_loss.to_string(),
                    e.val_loss.to_string(),
                ])?;
            }
        }
        write_atomic(&dir.join("history.csv"), &into_bytes(w)?)?;

        let pdir = dir.join("params");
        fs::create_dir_all(&pdir)?;
        for (t, p) in self.params.iter().enumerate() {
            if let Some(p) = p {
                let json = serde_json::to_vec_pretty(p)?;
                write_atomic(&pdir.join(format!("trial_{t}.json")), &json)?;
            }
        }

        let meta = serde_json::json!({
            "seeds": self.seeds(),
            "wall_time_s": self.wall_time_s,
            "weight_decay": "decoupled",
            "sf_attachment": "degree+1",
            "std": "population (ddof=0)",
            "quantiles": "linear interpolation",
            "regression_metric_target": "noise-free outputs",
        });
        write_atomic(&dir.join("metadata.json"), &serde_json::to_vec_pretty(&meta)?)?;
        write_atomic(&dir.join("summary.txt"), self.summary_table().as_bytes())?;
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.5}"))
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()).into())
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One point of a parameter sweep: quartile band of a metric over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub param: String,
    pub x: String,
    pub metric: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    write_atomic(path, &into_bytes(w)?)
}
