//! The `chsh` and `bell-feasibility` experiments.

use anyhow::{Context, Result};
use nalgebra::DVector;
use serde_json::json;

use qdesk_core::bell::{
    chsh_value, deterministic_assignments, deterministic_vertex_bound,
    fine_graining_feasibility, singlet, Certificate, ChshSetting, CorrelationTable, Feasibility,
};
use qdesk_core::{QuantumState, SplitMix64, C64};

use crate::config::{ChshParams, FeasibilityParams, StateSpec, Tolerances};
use crate::output::{Cell, Check, ExperimentOutput, Table};

const SQRT8: f64 = 2.828427124746190;

fn build_state(spec: &StateSpec) -> Result<QuantumState> {
    match spec {
        StateSpec::Singlet => Ok(singlet()),
        StateSpec::Amps(pairs) => {
            let amps = DVector::from_iterator(
                pairs.len(),
                pairs.iter().map(|[re, im]| C64::new(*re, *im)),
            );
            QuantumState::from_unnormalized(amps, vec![2, 2]).context("invalid state amplitudes")
        }
    }
}

pub fn run_chsh(params: &ChshParams, seed: u64, tol: &Tolerances) -> Result<ExperimentOutput> {
    let state = build_state(&params.state)?;
    let setting = ChshSetting::new(state.clone(), params.angles)?;
    let (s, table) = chsh_value(&setting)?;
    let vertex = deterministic_vertex_bound();
    let feasibility = fine_graining_feasibility(&table, tol.feasibility)?;

    let mut checks = vec![Check::new(
        "deterministic_vertex_bound",
        vertex == 2,
        format!("max over 16 assignments = {vertex}"),
    )];
    if let Some(expect) = params.expect_abs_s {
        checks.push(Check::bound(
            "chsh_value",
            (s.abs() - expect).abs(),
            tol.chsh,
        ));
    }
    if let Some(expect_feasible) = params.expect_feasible {
        checks.push(Check::new(
            "fine_graining_verdict",
            feasibility.is_feasible() == expect_feasible,
            format!(
                "expected feasible = {expect_feasible}, got {}",
                feasibility.is_feasible()
            ),
        ));
    }

    // Random-angle sweep: Tsirelson bound rows.
    let mut csv = Table::new(&["sample", "a0", "a1", "b0", "b1", "s"]);
    let mut rng = SplitMix64::derive(seed, 0);
    let mut sweep_max: f64 = 0.0;
    for i in 0..params.sweep_samples {
        let angles = [
            rng.next_f64() * std::f64::consts::TAU,
            rng.next_f64() * std::f64::consts::TAU,
            rng.next_f64() * std::f64::consts::TAU,
            rng.next_f64() * std::f64::consts::TAU,
        ];
        let (s_i, _) = chsh_value(&ChshSetting::new(state.clone(), angles)?)?;
        sweep_max = sweep_max.max(s_i.abs());
        csv.push(vec![
            Cell::U(i as u64),
            Cell::F(angles[0]),
            Cell::F(angles[1]),
            Cell::F(angles[2]),
            Cell::F(angles[3]),
            Cell::F(s_i),
        ]);
    }
    if params.sweep_samples > 0 {
        checks.push(Check::bound("tsirelson_sweep_max", sweep_max, SQRT8 + 1e-9));
    }

    let json = json!({
        "angles": params.angles,
        "s": s,
        "abs_s": s.abs(),
        "table": table,
        "vertex_bound": vertex,
        "feasibility": feasibility_json(&feasibility),
        "sweep_samples": params.sweep_samples,
        "sweep_max_abs_s": sweep_max,
    });
    Ok(ExperimentOutput {
        table: csv,
        json,
        checks,
    })
}

fn feasibility_json(f: &Feasibility) -> serde_json::Value {
    match f {
        Feasibility::Feasible { witness } => json!({
            "verdict": "feasible",
            "witness": witness,
        }),
        Feasibility::Infeasible { certificate } => json!({
            "verdict": "infeasible",
            "certificate": certificate,
        }),
    }
}

pub fn run_feasibility(
    params: &FeasibilityParams,
    _seed: u64,
    tol: &Tolerances,
) -> Result<ExperimentOutput> {
    let table = match params.table {
        Some(e) => CorrelationTable::new(e)?,
        None => {
            let setting = ChshSetting::new(
                singlet(),
                [
                    std::f64::consts::FRAC_PI_2,
                    0.0,
                    std::f64::consts::FRAC_PI_4,
                    3.0 * std::f64::consts::FRAC_PI_4,
                ],
            )?;
            chsh_value(&setting)?.1
        }
    };
    let feasibility = fine_graining_feasibility(&table, tol.feasibility)?;

    let mut checks = Vec::new();
    let assignments = deterministic_assignments();
    let mut csv = Table::new(&["vertex", "a0", "a1", "b0", "b1", "weight"]);
    match &feasibility {
        Feasibility::Feasible { witness } => {
            let sum: f64 = witness.iter().sum();
            checks.push(Check::bound("witness_weight_sum", (sum - 1.0).abs(), 1e-12));
            // Witness reproduces the table within tolerance.
            let mut worst: f64 = 0.0;
            let mut e = [[0.0f64; 2]; 2];
            for (w, a) in witness.iter().zip(&assignments) {
                e[0][0] += w * (a[0] * a[2]) as f64;
                e[0][1] += w * (a[0] * a[3]) as f64;
                e[1][0] += w * (a[1] * a[2]) as f64;
                e[1][1] += w * (a[1] * a[3]) as f64;
            }
            for i in 0..2 {
                for j in 0..2 {
                    worst = worst.max((e[i][j] - table.e[i][j]).abs());
                }
            }
            checks.push(Check::bound(
                "witness_reproduces_table",
                worst,
                tol.feasibility + 1e-12,
            ));
            for (v, (w, a)) in witness.iter().zip(&assignments).enumerate() {
                csv.push(vec![
                    Cell::U(v as u64),
                    Cell::I(a[0]),
                    Cell::I(a[1]),
                    Cell::I(a[2]),
                    Cell::I(a[3]),
                    Cell::F(*w),
                ]);
            }
        }
        Feasibility::Infeasible { certificate } => {
            let ok = match certificate {
                Certificate::Chsh { value, .. } => *value > 2.0 + 4.0 * tol.feasibility,
                Certificate::Box { value, .. } => value.abs() > 1.0 + tol.feasibility,
            };
            checks.push(Check::new(
                "certificate_is_violated_functional",
                ok,
                format!("{certificate:?}"),
            ));
            for (v, a) in assignments.iter().enumerate() {
                csv.push(vec![
                    Cell::U(v as u64),
                    Cell::I(a[0]),
                    Cell::I(a[1]),
                    Cell::I(a[2]),
                    Cell::I(a[3]),
                    Cell::F(0.0),
                ]);
            }
        }
    }
    if let Some(expect) = params.expect_feasible {
        checks.push(Check::new(
            "fine_graining_verdict",
            feasibility.is_feasible() == expect,
            format!(
                "expected feasible = {expect}, got {}",
                feasibility.is_feasible()
            ),
        ));
    }

    let json = json!({
        "table": table,
        "chsh": table.chsh(),
        "tol": tol.feasibility,
        "feasibility": feasibility_json(&feasibility),
    });
    Ok(ExperimentOutput {
        table: csv,
        json,
        checks,
    })
}
