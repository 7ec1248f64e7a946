//! Run orchestration: dispatch, output files, manifest, exit codes.

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use std::path::Path;
use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::experiments;
use crate::output::{write_atomic, Check};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub seed: u64,
    pub version: String,
    pub wall_time_seconds: f64,
    pub checks_passed: usize,
    pub checks_failed: usize,
    pub checks: Vec<Check>,
    pub outputs: Vec<String>,
    /// False when the experiment aborted and outputs are partial.
    pub complete: bool,
    pub error: Option<String>,
    pub config: serde_json::Value,
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub all_passed: bool,
}

/// Execute a validated config, writing `results.csv`, `results.json`, and
/// `manifest.json` into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let start = Instant::now();
    let experiment = config.params.experiment_id().to_string();

    let result = experiments::dispatch(config);
    let (checks, outputs, error, complete) = match result {
        Ok(output) => {
            write_atomic(&out_dir.join("results.csv"), &output.table.to_csv())?;
            let results_json = json!({
                "experiment": experiment,
                "seed": config.seed,
                "data": output.json,
                "checks": output.checks,
            });
            write_atomic(
                &out_dir.join("results.json"),
                &serde_json::to_string_pretty(&results_json)?,
            )?;
            (
                output.checks,
                vec!["results.csv".to_string(), "results.json".to_string()],
                None,
                true,
            )
        }
        Err(e) => (Vec::new(), Vec::new(), Some(format!("{e:#}")), false),
    };

    let checks_passed = checks.iter().filter(|c| c.passed).count();
    let checks_failed = checks.len() - checks_passed;
    let manifest = RunManifest {
        experiment,
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        checks_passed,
        checks_failed,
        checks,
        outputs,
        complete,
        error,
        config: config.raw.clone(),
    };
    write_atomic(
        &out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    let all_passed = manifest.complete && checks_failed == 0;
    Ok(RunOutcome {
        manifest,
        all_passed,
    })
}
