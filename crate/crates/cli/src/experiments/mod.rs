pub mod algebra;
pub mod bell;
pub mod darwinism;
pub mod ensembles;

use crate::config::{ExperimentConfig, Params};
use crate::output::ExperimentOutput;
use anyhow::Result;

/// Dispatch a validated config to its experiment.
pub fn dispatch(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let seed = config.seed;
    let tol = &config.tolerances;
    match &config.params {
        Params::Chsh(p) => bell::run_chsh(p, seed, tol),
        Params::BellFeasibility(p) => bell::run_feasibility(p, seed, tol),
        Params::DarwinismDecay(p) => darwinism::run_decay(p, seed, tol),
        Params::VisibilityScan(p) => darwinism::run_scan(p, seed, tol),
        Params::AlgebraVerify(p) => algebra::run_verify(p, seed, tol),
        Params::RecordSwap(p) => algebra::run_swap(p, seed, tol),
        Params::EnsembleVerify(p) => ensembles::run_verify(p, seed, tol),
        Params::MeasurementCheck(p) => ensembles::run_measurement(p, seed, tol),
    }
}
