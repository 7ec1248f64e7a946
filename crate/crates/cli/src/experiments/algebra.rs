//! The `algebra-verify` and `record-swap` experiments.

use anyhow::{anyhow, Result};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use qdesk_core::linalg::{random_projector, random_state};
use qdesk_core::malg::{
    generate_algebra, metric_contraction_check, record_swap_error, stone_space, MeasureAlgebra,
};
use qdesk_core::spacetime::{LatticePoint, Region};
use qdesk_core::statements::{ProjectionStatement, SiteMap};
use qdesk_core::{QuantumState, SplitMix64, C64};

use crate::config::{AlgebraParams, FixtureSpec, RecordSpec, SwapParams, Tolerances};
use crate::output::{Cell, Check, ExperimentOutput, Table};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn ket_proj(digit: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(2, 2);
    m[(digit, digit)] = c(1.0, 0.0);
    m
}

fn plus_proj() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0.5, 0.), c(0.5, 0.), c(0.5, 0.)])
}

fn build_fixture(spec: &FixtureSpec, rng: &mut SplitMix64) -> Result<QuantumState> {
    Ok(match spec {
        FixtureSpec::Ghz { n } => QuantumState::ghz(*n)?,
        FixtureSpec::ProductPlus { n } => {
            let factors = vec![QuantumState::plus(); *n];
            QuantumState::product(&factors)?
        }
        FixtureSpec::Random { dims } => random_state(dims, rng)?,
    })
}

fn build_record(
    spec: &RecordSpec,
    index: usize,
    dims: &[usize],
    map: &SiteMap,
    rng: &mut SplitMix64,
) -> Result<ProjectionStatement> {
    let region = match (&spec.region, spec.site) {
        (Some(points), _) => Region::new(points.iter().map(|[x, t]| LatticePoint::new(*x, *t)))?,
        (None, Some(site)) => Region::point(site as i64, 0),
        (None, None) => return Err(anyhow!("record {index} needs a site or region")),
    };
    let sites = map.sites_of(&region)?;
    let d: usize = sites.iter().map(|&s| dims[s]).product();
    let local = match spec.kind.as_str() {
        "z0" => ket_proj(0),
        "z1" => ket_proj(1),
        "plus" => plus_proj(),
        "random" => random_projector(d, 1 + rng.next_range(d.saturating_sub(1).max(1)), rng)?,
        other => return Err(anyhow!("unknown record kind `{other}`")),
    };
    if local.nrows() != d {
        return Err(anyhow!(
            "record {index}: kind `{}` is single-qubit but the region spans dim {d}",
            spec.kind
        ));
    }
    Ok(ProjectionStatement::new(
        format!("r{index}"),
        local,
        region,
        dims,
        map,
    )?)
}

pub fn run_verify(
    params: &AlgebraParams,
    seed: u64,
    tol: &Tolerances,
) -> Result<ExperimentOutput> {
    let mut rng = SplitMix64::derive(seed, 1);
    let psi = build_fixture(&params.state, &mut rng)?;
    let dims = psi.dims().to_vec();
    let map = SiteMap::chain(dims.len());
    let records: Vec<ProjectionStatement> = params
        .records
        .iter()
        .enumerate()
        .map(|(i, spec)| build_record(spec, i, &dims, &map, &mut rng))
        .collect::<Result<_>>()?;
    let alg = generate_algebra(records, &psi, params.null_tol)?;
    let report = alg.report().clone();

    let contraction = metric_contraction_check(&alg, params.contraction_trials, &mut rng)?;

    // Probability-space extraction matches the measure everywhere.
    let space = stone_space(&alg);
    let mut worst_stone: f64 = 0.0;
    let elements = if alg.n_atoms() <= 10 {
        alg.all_elements(1 << 10)?
    } else {
        (0..512).map(|_| alg.random_element(&mut rng)).collect()
    };
    for e in &elements {
        worst_stone = worst_stone.max((space.event_measure(e) - alg.measure(e)?).abs());
    }

    let mut csv = Table::new(&["atom", "label", "mask", "mu"]);
    for k in 0..alg.n_atoms() {
        csv.push(vec![
            Cell::U(k as u64),
            Cell::S(alg.atom_label(k)),
            Cell::U(alg.atom_sign_mask(k) as u64),
            Cell::F(alg.atom_mu(k)),
        ]);
    }

    let checks = vec![
        Check::bound("phi_additivity", report.worst_additivity, tol.algebra),
        Check::bound("phi_orthogonality", report.worst_orthogonality, tol.algebra),
        Check::bound("phi_top_matches_psi", report.top_defect, tol.algebra),
        Check::bound(
            "meet_contraction",
            contraction.worst_meet_slack.max(0.0),
            1e-10,
        ),
        Check::bound(
            "join_contraction",
            contraction.worst_join_slack.max(0.0),
            1e-10,
        ),
        Check::new(
            "negation_isometry_exact",
            contraction.negation_exact,
            format!("worst defect {:.3e}", contraction.worst_negation_defect),
        ),
        Check::bound("stone_space_measure_match", worst_stone, tol.algebra),
    ];

    let json = json!({
        "algebra": alg.dump(),
        "contraction": contraction,
        "stone_points": space.points,
        "stone_mu": space.mu,
        "stone_total": space.total(),
        "elements_checked": elements.len(),
    });
    Ok(ExperimentOutput {
        table: csv,
        json,
        checks,
    })
}

fn noisy_ghz(n: usize, delta: f64) -> Result<QuantumState> {
    let total = 1usize << n;
    let mut amps = DVector::zeros(total);
    amps[0] = c(1.0, 0.0);
    amps[total - 1] = c(1.0, 0.0);
    if delta > 0.0 {
        // Deterministic perturbation pattern off the record subspace.
        amps[total / 2 + 1] = c(delta, 0.0);
        amps[5 % total] = c(delta, 0.0);
    }
    Ok(QuantumState::from_unnormalized(amps, vec![2; n])?)
}

fn site_records(
    sites: &[usize],
    prefix: &str,
    dims: &[usize],
    map: &SiteMap,
) -> Result<Vec<ProjectionStatement>> {
    sites
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            Ok(ProjectionStatement::new(
                format!("{prefix}{i}"),
                ket_proj(0),
                Region::point(s as i64, 0),
                dims,
                map,
            )?)
        })
        .collect()
}

pub fn run_swap(params: &SwapParams, _seed: u64, _tol: &Tolerances) -> Result<ExperimentOutput> {
    let psi = noisy_ghz(params.n, params.delta)?;
    let dims = psi.dims().to_vec();
    let map = SiteMap::chain(dims.len());
    let recs_a = site_records(&params.records_a, "a", &dims, &map)?;
    let recs_b = site_records(&params.records_b, "b", &dims, &map)?;
    let alg_a: MeasureAlgebra = generate_algebra(recs_a, &psi, params.null_tol)?;
    let alg_b: MeasureAlgebra = generate_algebra(recs_b, &psi, params.null_tol)?;
    let pairing: Vec<usize> = (0..params.records_a.len()).collect();
    let report = record_swap_error(&alg_a, &alg_b, &pairing)?;
    let back = record_swap_error(&alg_b, &alg_a, &pairing)?;

    let mut csv = Table::new(&["atom_count", "max_err"]);
    for &(k, e) in &report.error_by_size {
        csv.push(vec![Cell::U(k as u64), Cell::F(e)]);
    }

    let mut checks = vec![
        Check::new(
            "swap_error_subadditive",
            report.subadditivity_holds,
            format!(
                "worst violation {:.3e} over {} pairs",
                report.worst_subadditivity_violation, report.pairs_checked
            ),
        ),
        Check::bound(
            "swap_error_symmetric",
            (report.max_error - back.max_error).abs(),
            1e-12,
        ),
    ];
    if params.delta == 0.0 {
        checks.push(Check::bound(
            "exact_redundancy_zero_error",
            report.max_error,
            1e-12,
        ));
    } else {
        checks.push(Check::new(
            "noisy_error_tracks_delta",
            report.max_error > 0.0 && report.max_error < 10.0 * params.delta,
            format!("max error {:.3e} for delta {}", report.max_error, params.delta),
        ));
    }

    let json = json!({
        "n": params.n,
        "delta": params.delta,
        "records_a": params.records_a,
        "records_b": params.records_b,
        "report": report,
    });
    Ok(ExperimentOutput {
        table: csv,
        json,
        checks,
    })
}
