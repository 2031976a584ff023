//! Seeded batch runs on a worker pool. Each run is isolated: an error or a
//! panic is recorded against its seed and the others carry on.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::run::{run_loaded, RunOptions, RunSummary};
use lunarsim::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub runs: usize,
    pub succeeded: usize,
    pub success_rate: f64,
    pub failures: Vec<RunFailure>,
    pub metrics: BTreeMap<String, MetricStats>,
    /// Per-run summaries in seed order.
    pub summaries: Vec<RunSummary>,
}

/// Runs `run(seed)` for `runs` consecutive seeds on `parallel` workers
/// (sequentially without the `parallel` feature) and
/// aggregates in seed order, so the report does not depend on scheduling.
pub fn batch_with<F>(runs: usize, seed_base: u64, parallel: usize, run: F) -> BatchReport
where
    F: Fn(u64) -> Result<RunSummary, String> + Sync,
{
    let seeds: Vec<u64> = (0..runs as u64).map(|k| seed_base + k).collect();
    let one = |seed: u64| -> Result<RunSummary, String> {
        match catch_unwind(AssertUnwindSafe(|| run(seed))) {
            Ok(r) => r,
            Err(panic) => {
                let text = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                Err(format!("panicked: {text}"))
            }
        }
    };
    let results = lunarsim::par::map_range_with_threads(seeds.len(), parallel.max(1), |k| one(seeds[k]));
    aggregate(&seeds, results)
}

fn aggregate(seeds: &[u64], results: Vec<Result<RunSummary, String>>) -> BatchReport {
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (&seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(s) => summaries.push(s),
            Err(message) => failures.push(RunFailure { seed, message }),
        }
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in &summaries {
        for (k, v) in &s.metrics {
            columns.entry(k.clone()).or_default().push(*v);
        }
    }
    let metrics = columns
        .into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (k, MetricStats { mean, std, min, max })
        })
        .collect();
    let succeeded = summaries.iter().filter(|s| s.completed).count();
    BatchReport {
        runs: seeds.len(),
        succeeded,
        success_rate: succeeded as f64 / seeds.len().max(1) as f64,
        failures,
        metrics,
        summaries,
    }
}

/// Batch over a scenario file. With `record_dir` each run writes
/// `run_<seed>.jsonl` there.
pub fn batch_run(path: &Path, runs: usize, seed_base: u64, parallel: usize, opts: &RunOptions, record_dir: Option<&Path>) -> BatchReport {
    batch_with(runs, seed_base, parallel, |seed| {
        let scenario = Scenario::load(path, Some(seed)).map_err(|e| e.to_string())?;
        let record: Option<PathBuf> = record_dir.map(|d| d.join(format!("run_{seed}.jsonl")));
        let opts = RunOptions { seed: Some(seed), record, ..opts.clone() };
        run_loaded(&scenario, &opts).map_err(|e| e.to_string())
    })
}
