use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::HarnessError;
use crate::datasets::Provenance;
use crate::modelzoo::ArchitectureSpec;
use crate::tilengine::{mean, SequenceReport};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Mean and sample standard deviation (zero for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let m = mean(values);
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
        };
        MeanStd { mean: m, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub name: String,
    pub task_names: Vec<String>,
    pub class_ids: Vec<Vec<usize>>,
    pub train_pool: usize,
    pub test_pool: usize,
    pub train_provenance: Provenance,
    pub test_provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_accuracy: MeanStd,
    /// Final accuracy of each task across seeds.
    pub final_accuracies: Vec<MeanStd>,
    pub param_count: usize,
    pub megabytes: f64,
}

/// Everything a `run` produces; serialized verbatim to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub architecture: ArchitectureSpec,
    pub benchmark: BenchmarkSummary,
    pub runs: Vec<SequenceReport>,
    pub aggregate: Aggregate,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn new(config: RunConfig, architecture: ArchitectureSpec, benchmark: BenchmarkSummary, runs: Vec<SequenceReport>, wall_clock_secs: f64) -> Self {
        let aggregate = aggregate(&runs);
        RunReport { config, architecture, benchmark, runs, aggregate, wall_clock_secs }
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let path = dir.join(REPORT_FILE);
        fs::write(&path, json + "\n").map_err(|e| HarnessError::io(&path, e))?;
        let path = dir.join(SUMMARY_FILE);
        fs::write(&path, self.summary_csv()?).map_err(|e| HarnessError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
    }

    /// One row per seed per task with the task's final accuracy.
    pub fn summary_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| HarnessError::Runtime(e.to_string());
        w.write_record(["seed", "task", "name", "classes", "accuracy", "param_count", "megabytes"]).map_err(err)?;
        for run in &self.runs {
            let size = run.sizes.last().copied().unwrap_or_default();
            for (t, acc) in run.final_accuracies.iter().enumerate() {
                let classes = run.class_ids[t].iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
                w.write_record([
                    run.seed.to_string(),
                    t.to_string(),
                    run.task_names[t].clone(),
                    classes,
                    format!("{acc:.6}"),
                    size.param_count.to_string(),
                    format!("{:.6}", size.megabytes),
                ])
                .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Table-1 style console rendering: accuracies in percent.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let a = &self.aggregate;
        let _ = writeln!(
            s,
            "{} on {} ({} tasks, {} seed(s)): {:.2} ± {:.2} % ({:.2} MB)",
            self.config.strategy.name(),
            self.benchmark.name,
            self.benchmark.task_names.len(),
            self.runs.len(),
            100.0 * a.mean_accuracy.mean,
            100.0 * a.mean_accuracy.std,
            a.megabytes
        );
        for run in &self.runs {
            let _ = writeln!(s, "seed {}: mean {:.2} %", run.seed, 100.0 * run.mean_accuracy);
            for (t, row) in run.forgetting.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{:6.2}", 100.0 * v)).collect();
                let _ = writeln!(s, "  after {:>8}: {}", run.task_names[t], cells.join(" "));
            }
        }
        s
    }
}

fn aggregate(runs: &[SequenceReport]) -> Aggregate {
    let means: Vec<f64> = runs.iter().map(|r| r.mean_accuracy).collect();
    let tasks = runs.first().map_or(0, |r| r.final_accuracies.len());
    let final_accuracies = (0..tasks).map(|t| MeanStd::of(&runs.iter().map(|r| r.final_accuracies[t]).collect::<Vec<_>>())).collect();
    let size = runs.first().and_then(|r| r.sizes.last().copied()).unwrap_or_default();
    Aggregate { mean_accuracy: MeanStd::of(&means), final_accuracies, param_count: size.param_count, megabytes: size.megabytes }
}

/// `report.json` text with every wall-clock field zeroed, for comparing runs.
pub fn without_wall_clock(json: &str) -> Result<String, HarnessError> {
    let mut value: serde_json::Value = serde_json::from_str(json).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    strip(&mut value);
    Ok(serde_json::to_string_pretty(&value).expect("value serializes"))
}

fn strip(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if k == "wall_clock_secs" {
                    *v = serde_json::Value::from(0.0);
                } else {
                    strip(v);
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip),
        _ => {}
    }
}
