//! The `ensemble-verify` and `measurement-check` experiments.

use anyhow::Result;
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use qdesk_core::ensembles::{
    density_of, ensemble_from_algebra, fine_grain_entropy_drop, linear_entropy,
    measurement_model_check, mixing_identity_check, pure_approximation, purity_bounds_check,
    DensityMatrix, FiniteEnsemble, SystemSplit,
};
use qdesk_core::malg::generate_algebra;
use qdesk_core::spacetime::Region;
use qdesk_core::statements::{ProjectionStatement, SiteMap};
use qdesk_core::{QuantumState, SplitMix64, C64};

use crate::config::{EnsembleParams, MeasurementParams, Tolerances};
use crate::output::{Cell, Check, ExperimentOutput, Table};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_density(dim: usize, rng: &mut SplitMix64) -> Result<DensityMatrix> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.complex_gaussian());
    let psd = &g * g.adjoint();
    let tr: f64 = psd.diagonal().iter().map(|z| z.re).sum();
    Ok(DensityMatrix::new(psd / c(tr, 0.0))?)
}

fn random_weights(k: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| rng.next_f64() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub fn run_verify(
    params: &EnsembleParams,
    seed: u64,
    tol: &Tolerances,
) -> Result<ExperimentOutput> {
    let mut csv = Table::new(&["trial", "kind", "lhs", "rhs", "defect"]);
    let mut checks = Vec::new();

    // Mixing identity on random ensembles.
    let mut worst_mixing: f64 = 0.0;
    for trial in 0..params.mixing_trials {
        let mut rng = SplitMix64::derive(seed, 10_000 + trial as u64);
        let dim = params.min_dim + rng.next_range(params.max_dim - params.min_dim + 1);
        let k = 1 + rng.next_range(params.max_components);
        let rhos: Vec<DensityMatrix> = (0..k)
            .map(|_| random_density(dim, &mut rng))
            .collect::<Result<_>>()?;
        let weights = random_weights(k, &mut rng);
        let report = mixing_identity_check(&weights, &rhos)?;
        worst_mixing = worst_mixing.max(report.defect);
        csv.push(vec![
            Cell::U(trial as u64),
            Cell::S("mixing".into()),
            Cell::F(report.lhs),
            Cell::F(report.rhs),
            Cell::F(report.defect),
        ]);
    }
    checks.push(Check::bound("mixing_identity", worst_mixing, tol.identity));

    // Purity bounds on random densities.
    let mut purity_ok = true;
    let mut worst_identity: f64 = 0.0;
    for trial in 0..params.purity_trials {
        let mut rng = SplitMix64::derive(seed, 20_000 + trial as u64);
        let dim = params.min_dim + rng.next_range(params.max_dim - params.min_dim + 1);
        let rho = random_density(dim, &mut rng)?;
        let report = purity_bounds_check(&rho)?;
        purity_ok &= report.lambda_bound_holds
            && report.identity_holds
            && report.pure_bound_holds
            && report.entropy_order_holds;
        let identity_defect =
            (report.pure_distance_sq - (2.0 * (1.0 - report.top_eigenvalue) - report.linear_entropy))
                .abs();
        worst_identity = worst_identity.max(identity_defect);
        csv.push(vec![
            Cell::U(trial as u64),
            Cell::S("purity".into()),
            Cell::F(1.0 - report.top_eigenvalue),
            Cell::F(report.linear_entropy),
            Cell::F(identity_defect),
        ]);
    }
    checks.push(Check::new(
        "purity_bounds",
        purity_ok,
        format!("worst identity defect {worst_identity:.3e}"),
    ));

    // Entropy drop across random two-level refinements, with the pure
    // approximation bound on the fine ensemble.
    let mut worst_drop: f64 = 0.0;
    let mut pure_ok = true;
    for trial in 0..params.refinement_trials {
        let mut rng = SplitMix64::derive(seed, 30_000 + trial as u64);
        let dim = params.min_dim + rng.next_range(params.max_dim - params.min_dim + 1);
        let fine_k = 2 + rng.next_range(params.max_components.max(2) - 1);
        let fine_rhos: Vec<DensityMatrix> = (0..fine_k)
            .map(|_| random_density(dim, &mut rng))
            .collect::<Result<_>>()?;
        let fine_w = random_weights(fine_k, &mut rng);
        let refinement: Vec<usize> = (0..fine_k).map(|j| j % 2).collect();
        let mut coarse_rhos = Vec::new();
        let mut coarse_w = Vec::new();
        for cls in 0..2 {
            let fiber: Vec<usize> = (0..fine_k).filter(|&j| refinement[j] == cls).collect();
            let wsum: f64 = fiber.iter().map(|&j| fine_w[j]).sum();
            let mut avg = DMatrix::<C64>::zeros(dim, dim);
            for &j in &fiber {
                avg += fine_rhos[j].matrix() * c(fine_w[j] / wsum, 0.0);
            }
            coarse_rhos.push(DensityMatrix::new(avg)?);
            coarse_w.push(wsum);
        }
        let fine = FiniteEnsemble::new(
            (0..fine_k).map(|j| format!("f{j}")).collect(),
            fine_w,
            fine_rhos,
        )?;
        let coarse = FiniteEnsemble::new(vec!["c0".into(), "c1".into()], coarse_w, coarse_rhos)?;
        let report = fine_grain_entropy_drop(&coarse, &fine, &refinement)?;
        worst_drop = worst_drop.max(report.defect);
        csv.push(vec![
            Cell::U(trial as u64),
            Cell::S("entropy_drop".into()),
            Cell::F(report.distance_sq),
            Cell::F(report.entropy_drop),
            Cell::F(report.defect),
        ]);
        let (_, pure_report) = pure_approximation(&fine)?;
        pure_ok &= pure_report.holds;
        csv.push(vec![
            Cell::U(trial as u64),
            Cell::S("pure_approx".into()),
            Cell::F(pure_report.distance),
            Cell::F(pure_report.bound),
            Cell::F((pure_report.distance - pure_report.bound).max(0.0)),
        ]);
    }
    checks.push(Check::bound("entropy_drop_identity", worst_drop, tol.identity));
    checks.push(Check::new(
        "pure_approximation_bound",
        pure_ok,
        "distance^2 <= average linear entropy on every trial",
    ));

    // Fixture: the maximally entangled pair with an environment record
    // gives the two-point pure ensemble and the convexity identity.
    let bell = QuantumState::ghz(2)?;
    let dims = [2usize, 2];
    let map = SiteMap::chain(2);
    let record = ProjectionStatement::new(
        "z1",
        DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]),
        Region::point(1, 0),
        &dims,
        &map,
    )?;
    let alg = generate_algebra(vec![record], &bell, 1e-10)?;
    let split = SystemSplit::new([0], 2)?;
    let (ensemble, report) = ensemble_from_algebra(&alg, &split)?;
    checks.push(Check::bound(
        "fixture_convexity_identity",
        report.convexity_defect,
        tol.identity,
    ));
    checks.push(Check::bound(
        "fixture_expectation_identity",
        report.worst_expectation_defect,
        tol.identity,
    ));
    let fixture_pure = ensemble
        .rhos
        .iter()
        .map(linear_entropy)
        .fold(0.0f64, f64::max);
    checks.push(Check::bound("fixture_atoms_pure", fixture_pure, 1e-10));

    let json = json!({
        "mixing_trials": params.mixing_trials,
        "purity_trials": params.purity_trials,
        "refinement_trials": params.refinement_trials,
        "worst_mixing_defect": worst_mixing,
        "worst_purity_identity_defect": worst_identity,
        "worst_entropy_drop_defect": worst_drop,
        "fixture": {
            "ensemble": ensemble.dump(),
            "report": report,
        },
    });
    Ok(ExperimentOutput {
        table: csv,
        json,
        checks,
    })
}

pub fn run_measurement(
    params: &MeasurementParams,
    _seed: u64,
    tol: &Tolerances,
) -> Result<ExperimentOutput> {
    // Premeasured state sum_i lambda_i s_i (x) a_i on two qubits; the
    // pointer states overlap by the configured amount.
    let l1 = params.weights[0].sqrt();
    let l2 = params.weights[1].sqrt();
    let overlap = params.pointer_overlap;
    let beta = (1.0 - overlap * overlap).sqrt();
    let dims = [2usize, 2];
    // s_1 = |0>, a_1 = |0>; s_2 = |1>, a_2 = overlap|0> + beta|1>.
    let amps = DVector::from_vec(vec![
        c(l1, 0.0),
        c(0.0, 0.0),
        c(l2 * overlap, 0.0),
        c(l2 * beta, 0.0),
    ]);
    let psi = QuantumState::from_unnormalized(amps, dims.to_vec())?;
    let map = SiteMap::chain(2);
    let record = ProjectionStatement::new(
        "a1",
        DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]),
        Region::point(1, 0),
        &dims,
        &map,
    )?;
    let alg = generate_algebra(vec![record], &psi, 1e-12)?;
    let split = SystemSplit::new([0], 2)?;

    let ket0 = DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]);
    let ket1 = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]);
    let pvm: Vec<DMatrix<C64>> = (0..alg.n_atoms())
        .map(|k| {
            if alg.atom_sign_mask(k) & 1 == 1 {
                ket0.clone()
            } else {
                ket1.clone()
            }
        })
        .collect();

    let report = measurement_model_check(&alg, &pvm, &split, tol.measurement)?;

    let mut csv = Table::new(&["atom", "label", "mu", "delta"]);
    for k in 0..alg.n_atoms() {
        csv.push(vec![
            Cell::U(k as u64),
            Cell::S(alg.atom_label(k)),
            Cell::F(alg.atom_mu(k)),
            Cell::F(report.atom_deltas[k]),
        ]);
    }

    let mut checks = vec![Check::new(
        "born_weights_within_delta_tolerance",
        report.born_consistent,
        format!("worst excess {:.3e}", report.worst_born_excess),
    )];
    if overlap == 0.0 {
        checks.push(Check::bound(
            "ideal_premeasurement_delta",
            report.worst_delta,
            tol.measurement,
        ));
        // Relative probabilities are the Born weights |lambda_i|^2.
        let mut worst_prob: f64 = 0.0;
        for k in 0..alg.n_atoms() {
            let expect = if alg.atom_sign_mask(k) & 1 == 1 {
                params.weights[0]
            } else {
                params.weights[1]
            };
            worst_prob = worst_prob.max((alg.atom_mu(k) - expect).abs());
        }
        checks.push(Check::bound("outcome_probabilities", worst_prob, 1e-10));
    }

    // Conditional densities of the outcomes (reported).
    let conditionals: Vec<f64> = (0..alg.n_atoms())
        .map(|k| {
            let atom = qdesk_core::malg::Element::from_atoms(alg.n_atoms(), [k]);
            density_of(&alg, &atom, &split).map(|rho| linear_entropy(&rho))
        })
        .collect::<qdesk_core::Result<_>>()?;

    let json = json!({
        "weights": params.weights,
        "pointer_overlap": overlap,
        "report": report,
        "outcome_linear_entropies": conditionals,
    });
    Ok(ExperimentOutput {
        table: csv,
        json,
        checks,
    })
}
