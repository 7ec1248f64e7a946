//! Density matrices and statistical ensembles built from measure
//! algebras: partial-trace densities, entropies, the exact mixing
//! identity, entropy-drop distances for refinements, pure approximations,
//! and the projective measurement-model check.
//!
//! Distances between density matrices use the Frobenius (trace) inner
//! product `<f, g> = Tr(f* g)` throughout.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::linalg::{split_offsets, C64};
use crate::malg::{Element, MeasureAlgebra};

/// Tolerances for density-matrix validity.
pub const DENSITY_TOL: f64 = 1e-10;

/// Hermitian, positive semidefinite, trace-one operator.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch(
                "density matrix must be square".into(),
            ));
        }
        let herm = crate::linalg::hermitian_deviation(&matrix);
        if herm > DENSITY_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let trace: f64 = matrix.diagonal().iter().map(|z| z.re).sum();
        if (trace - 1.0).abs() > DENSITY_TOL {
            return Err(Error::invalid(format!(
                "density trace {trace} differs from 1"
            )));
        }
        let min_eig = matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -DENSITY_TOL {
            return Err(Error::invalid(format!(
                "density has negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(DensityMatrix { matrix })
    }

    /// Pure state `|v><v| / ||v||^2`.
    pub fn pure(v: &DVector<C64>) -> Result<Self> {
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let u = v / C64::new(n, 0.0);
        DensityMatrix::new(&u * u.adjoint())
    }

    /// Normalized partial trace of `|v><v|` onto `keep`.
    pub fn from_vector_partial_trace(
        v: &DVector<C64>,
        dims: &[usize],
        keep: &[usize],
    ) -> Result<Self> {
        let n2 = v.norm_squared();
        if n2 == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let (keep_off, rest_off) = split_offsets(dims, keep);
        let mut a = DMatrix::<C64>::zeros(keep_off.len(), rest_off.len());
        for (i, &ki) in keep_off.iter().enumerate() {
            for (j, &rj) in rest_off.iter().enumerate() {
                a[(i, j)] = v[ki + rj];
            }
        }
        DensityMatrix::new(&a * a.adjoint() / C64::new(n2, 0.0))
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    }

    /// Top eigenvalue with its eigenvector (ties broken by the stable
    /// eigensolver ordering).
    pub fn top_eigenpair(&self) -> (f64, DVector<C64>) {
        let eig = self.matrix.clone().symmetric_eigen();
        let mut best = 0usize;
        for i in 1..eig.eigenvalues.len() {
            if eig.eigenvalues[i] > eig.eigenvalues[best] {
                best = i;
            }
        }
        (eig.eigenvalues[best], eig.eigenvectors.column(best).into_owned())
    }

    /// Frobenius distance.
    pub fn distance(&self, other: &DensityMatrix) -> f64 {
        (&self.matrix - &other.matrix).norm()
    }
}

/// `S_L(rho) = 1 - Tr rho^2`.
pub fn linear_entropy(rho: &DensityMatrix) -> f64 {
    1.0 - (rho.matrix() * rho.matrix())
        .diagonal()
        .iter()
        .map(|z| z.re)
        .sum::<f64>()
}

/// `S(rho) = -Tr(rho ln rho)`, dropping eigenvalues below 1e-15.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    rho.eigenvalues()
        .iter()
        .filter(|&&l| l > 1e-15)
        .map(|&l| -l * l.ln())
        .sum()
}

/// System/environment split of the site list.
#[derive(Debug, Clone)]
pub struct SystemSplit {
    system: Vec<usize>,
    environment: Vec<usize>,
}

impl SystemSplit {
    pub fn new(system: impl IntoIterator<Item = usize>, n_sites: usize) -> Result<Self> {
        let sys: BTreeSet<usize> = system.into_iter().collect();
        if sys.is_empty() {
            return Err(Error::InvalidSiteSet("system is empty".into()));
        }
        if sys.iter().any(|&s| s >= n_sites) {
            return Err(Error::InvalidSiteSet(format!(
                "system sites {sys:?} out of range for {n_sites} sites"
            )));
        }
        if sys.len() == n_sites {
            return Err(Error::InvalidSiteSet("environment is empty".into()));
        }
        let environment: Vec<usize> = (0..n_sites).filter(|s| !sys.contains(s)).collect();
        Ok(SystemSplit {
            system: sys.into_iter().collect(),
            environment,
        })
    }

    pub fn system(&self) -> &[usize] {
        &self.system
    }

    pub fn environment(&self) -> &[usize] {
        &self.environment
    }
}

/// `rho(b)`: normalized partial trace of `|phi(b)><phi(b)|` onto the
/// system sites.
pub fn density_of(alg: &MeasureAlgebra, b: &Element, split: &SystemSplit) -> Result<DensityMatrix> {
    let mu = alg.measure(b)?;
    if mu <= alg.null_tol() {
        return Err(Error::NullConditioning(mu));
    }
    let phi = alg.phi(b)?;
    DensityMatrix::from_vector_partial_trace(&phi, alg.psi().dims(), split.system())
}

/// Per-generator support overlap with the system sites.
#[derive(Debug, Clone, Serialize)]
pub struct SeparatenessReport {
    pub separate: bool,
    /// `(generator label, system sites it touches)`.
    pub overlaps: Vec<(String, Vec<usize>)>,
}

/// An algebra is separate from the system when every generator acts as
/// identity on the system sites; every partition is then separate.
pub fn separateness_check(alg: &MeasureAlgebra, split: &SystemSplit) -> SeparatenessReport {
    let mut overlaps = Vec::new();
    for g in alg.generators() {
        let touched: Vec<usize> = g
            .support()
            .iter()
            .copied()
            .filter(|s| split.system().contains(s))
            .collect();
        if !touched.is_empty() {
            overlaps.push((g.label().to_string(), touched));
        }
    }
    SeparatenessReport {
        separate: overlaps.is_empty(),
        overlaps,
    }
}

/// Weighted family of density matrices.
#[derive(Debug, Clone)]
pub struct FiniteEnsemble {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
    pub rhos: Vec<DensityMatrix>,
}

impl FiniteEnsemble {
    pub fn new(labels: Vec<String>, weights: Vec<f64>, rhos: Vec<DensityMatrix>) -> Result<Self> {
        if labels.len() != weights.len() || weights.len() != rhos.len() {
            return Err(Error::InvalidWeights("length mismatch".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeights("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(FiniteEnsemble {
            labels,
            weights,
            rhos,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weighted average density.
    pub fn average(&self) -> Result<DensityMatrix> {
        let d = self.rhos[0].dim();
        let mut avg = DMatrix::<C64>::zeros(d, d);
        for (w, rho) in self.weights.iter().zip(&self.rhos) {
            avg += rho.matrix() * C64::new(*w, 0.0);
        }
        DensityMatrix::new(avg)
    }

    /// Average linear entropy `sum_i w_i S_L(rho_i)`.
    pub fn average_linear_entropy(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.rhos)
            .map(|(w, r)| w * linear_entropy(r))
            .sum()
    }

    pub fn dump(&self) -> EnsembleDump {
        EnsembleDump {
            points: self
                .labels
                .iter()
                .zip(self.weights.iter().zip(&self.rhos))
                .map(|(label, (w, rho))| EnsemblePointDump {
                    label: label.clone(),
                    weight: *w,
                    rho: rho
                        .matrix()
                        .row_iter()
                        .flat_map(|row| row.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>())
                        .collect(),
                    linear_entropy: linear_entropy(rho),
                })
                .collect(),
            average_linear_entropy: self.average_linear_entropy(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleDump {
    pub points: Vec<EnsemblePointDump>,
    pub average_linear_entropy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsemblePointDump {
    pub label: String,
    pub weight: f64,
    /// Row-major re/im pairs.
    pub rho: Vec<[f64; 2]>,
    pub linear_entropy: f64,
}

/// Verification collected while building the canonical ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    /// Worst `||rho(b) - E[rho | atoms <= b]||` over checked elements.
    pub worst_expectation_defect: f64,
    /// `||rho_psi - sum_i mu(b_i) rho(b_i)||` over the atoms.
    pub convexity_defect: f64,
    pub elements_checked: usize,
    pub exhaustive: bool,
}

/// Canonical statistical ensemble of a separate algebra: one point per
/// kept atom, weighted by its measure, carrying its normalized density.
pub fn ensemble_from_algebra(
    alg: &MeasureAlgebra,
    split: &SystemSplit,
) -> Result<(FiniteEnsemble, EnsembleReport)> {
    let sep = separateness_check(alg, split);
    if !sep.separate {
        let (label, sites) = &sep.overlaps[0];
        return Err(Error::NotSeparate(label.clone(), sites.clone()));
    }
    let n = alg.n_atoms();
    let mut labels = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut rhos = Vec::with_capacity(n);
    for k in 0..n {
        let atom = Element::from_atoms(n, [k]);
        labels.push(alg.atom_label(k));
        weights.push(alg.atom_mu(k));
        rhos.push(density_of(alg, &atom, split)?);
    }
    // The weights are atom measures; they sum to mu(1) = 1 up to null
    // merging. Normalize defensively for the ensemble contract.
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let ensemble = FiniteEnsemble::new(labels, weights, rhos)?;

    // rho(b) is the conditional expectation of rho over atoms below b.
    let exhaustive = n <= 10;
    let elements: Vec<Element> = if exhaustive {
        alg.all_elements(1 << 10)?
    } else {
        let mut rng = crate::rng::SplitMix64::new(0x454e53);
        (0..256).map(|_| alg.random_element(&mut rng)).collect()
    };
    let mut worst_defect: f64 = 0.0;
    for b in &elements {
        if alg.measure(b)? <= alg.null_tol() {
            continue;
        }
        let rho_b = density_of(alg, b, split)?;
        let mut avg = DMatrix::<C64>::zeros(rho_b.dim(), rho_b.dim());
        let mut wsum = 0.0;
        for k in b.atoms() {
            avg += ensemble.rhos[k].matrix() * C64::new(alg.atom_mu(k), 0.0);
            wsum += alg.atom_mu(k);
        }
        avg /= C64::new(wsum, 0.0);
        worst_defect = worst_defect.max((rho_b.matrix() - avg).norm());
    }

    // Convexity: rho_psi = sum_i mu(b_i) rho(b_i).
    let rho_psi =
        DensityMatrix::from_vector_partial_trace(alg.psi().amps(), alg.psi().dims(), split.system())?;
    let mut mix = DMatrix::<C64>::zeros(rho_psi.dim(), rho_psi.dim());
    for k in 0..n {
        mix += ensemble.rhos[k].matrix() * C64::new(alg.atom_mu(k), 0.0);
    }
    let convexity_defect = (rho_psi.matrix() - mix).norm();

    Ok((
        ensemble,
        EnsembleReport {
            worst_expectation_defect: worst_defect,
            convexity_defect,
            elements_checked: elements.len(),
            exhaustive,
        },
    ))
}

/// Bayesian update of the canonical ensemble: conditioning on `observer`
/// rescales the weights of atoms below it and drops the rest; the
/// densities are untouched.
pub fn ensemble_conditioned(
    alg: &MeasureAlgebra,
    split: &SystemSplit,
    observer: &Element,
) -> Result<FiniteEnsemble> {
    let mu_o = alg.measure(observer)?;
    if mu_o <= alg.null_tol() {
        return Err(Error::NullConditioning(mu_o));
    }
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    let mut rhos = Vec::new();
    for k in observer.atoms() {
        let atom = Element::from_atoms(alg.n_atoms(), [k]);
        labels.push(alg.atom_label(k));
        weights.push(alg.atom_mu(k) / mu_o);
        rhos.push(density_of(alg, &atom, split)?);
    }
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    FiniteEnsemble::new(labels, weights, rhos)
}

/// Both sides of the exact mixing identity
/// `sum_i a_i ||rho - rho_i||^2 = S_L(rho) - sum_i a_i S_L(rho_i)`.
#[derive(Debug, Clone, Serialize)]
pub struct MixingIdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
    pub holds: bool,
}

pub fn mixing_identity_check(weights: &[f64], rhos: &[DensityMatrix]) -> Result<MixingIdentityReport> {
    if weights.len() != rhos.len() || weights.is_empty() {
        return Err(Error::InvalidWeights(
            "need matching nonempty weights and densities".into(),
        ));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidWeights("negative weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeights(format!("weights sum to {total}")));
    }
    let d = rhos[0].dim();
    let mut avg = DMatrix::<C64>::zeros(d, d);
    for (w, rho) in weights.iter().zip(rhos) {
        avg += rho.matrix() * C64::new(*w, 0.0);
    }
    let avg = DensityMatrix::new(avg)?;
    let lhs: f64 = weights
        .iter()
        .zip(rhos)
        .map(|(w, rho)| w * avg.distance(rho).powi(2))
        .sum();
    let rhs = linear_entropy(&avg)
        - weights
            .iter()
            .zip(rhos)
            .map(|(w, rho)| w * linear_entropy(rho))
            .sum::<f64>();
    let defect = (lhs - rhs).abs();
    Ok(MixingIdentityReport {
        lhs,
        rhs,
        defect,
        holds: defect <= 1e-10,
    })
}

/// Purity bounds around the top eigenvalue.
#[derive(Debug, Clone, Serialize)]
pub struct PurityBoundsReport {
    pub top_eigenvalue: f64,
    pub linear_entropy: f64,
    pub von_neumann_entropy: f64,
    /// `||rho - |a1><a1|||^2`.
    pub pure_distance_sq: f64,
    /// `1 - l1 <= S_L` within tolerance.
    pub lambda_bound_holds: bool,
    /// `||rho - pure||^2 = 2(1 - l1) - S_L` within tolerance.
    pub identity_holds: bool,
    /// `||rho - pure||^2 <= S_L` within tolerance.
    pub pure_bound_holds: bool,
    /// `S >= S_L` within tolerance.
    pub entropy_order_holds: bool,
}

pub fn purity_bounds_check(rho: &DensityMatrix) -> Result<PurityBoundsReport> {
    let (lambda1, top_vec) = rho.top_eigenpair();
    let s_l = linear_entropy(rho);
    let s = von_neumann_entropy(rho);
    let pure = DensityMatrix::pure(&top_vec)?;
    let dist_sq = rho.distance(&pure).powi(2);
    let identity = 2.0 * (1.0 - lambda1) - s_l;
    Ok(PurityBoundsReport {
        top_eigenvalue: lambda1,
        linear_entropy: s_l,
        von_neumann_entropy: s,
        pure_distance_sq: dist_sq,
        lambda_bound_holds: 1.0 - lambda1 <= s_l + 1e-10,
        identity_holds: (dist_sq - identity).abs() <= 1e-10,
        pure_bound_holds: dist_sq <= s_l + 1e-10,
        entropy_order_holds: s >= s_l - 1e-10,
    })
}

/// Entropy-drop identity for a refinement of ensembles.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyDropReport {
    /// `int ||rho(pi(x)) - rho'(x)||^2 dmu'`.
    pub distance_sq: f64,
    /// `S_L(coarse) - S_L(fine)` (average linear entropies).
    pub entropy_drop: f64,
    pub defect: f64,
    pub holds: bool,
}

/// Verify `||rho - rho'||_2^2 = S_L(coarse) - S_L(fine)` for a
/// weight-preserving refinement. `refinement[j]` names the coarse point
/// that fine point `j` maps onto.
pub fn fine_grain_entropy_drop(
    coarse: &FiniteEnsemble,
    fine: &FiniteEnsemble,
    refinement: &[usize],
) -> Result<EntropyDropReport> {
    if refinement.len() != fine.len() {
        return Err(Error::NotRefinement(format!(
            "map covers {} of {} fine points",
            refinement.len(),
            fine.len()
        )));
    }
    if refinement.iter().any(|&c| c >= coarse.len()) {
        return Err(Error::NotRefinement("map exits the coarse index set".into()));
    }
    // Weight preservation and conditional-average consistency.
    for c in 0..coarse.len() {
        let fiber: Vec<usize> = (0..fine.len()).filter(|&j| refinement[j] == c).collect();
        let w: f64 = fiber.iter().map(|&j| fine.weights[j]).sum();
        if (w - coarse.weights[c]).abs() > 1e-10 {
            return Err(Error::NotRefinement(format!(
                "coarse point {c} has weight {} but its fiber sums to {w}",
                coarse.weights[c]
            )));
        }
        if w > 0.0 {
            let d = coarse.rhos[c].dim();
            let mut avg = DMatrix::<C64>::zeros(d, d);
            for &j in &fiber {
                avg += fine.rhos[j].matrix() * C64::new(fine.weights[j] / w, 0.0);
            }
            if (coarse.rhos[c].matrix() - avg).norm() > 1e-8 {
                return Err(Error::NotRefinement(format!(
                    "coarse density {c} is not the average of its fiber"
                )));
            }
        }
    }
    let distance_sq: f64 = (0..fine.len())
        .map(|j| fine.weights[j] * coarse.rhos[refinement[j]].distance(&fine.rhos[j]).powi(2))
        .sum();
    let entropy_drop = coarse.average_linear_entropy() - fine.average_linear_entropy();
    let defect = (distance_sq - entropy_drop).abs();
    Ok(EntropyDropReport {
        distance_sq,
        entropy_drop,
        defect,
        holds: defect <= 1e-10,
    })
}

/// Pure-state approximation of an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct PureApproximationReport {
    /// `sqrt(sum_i w_i ||rho_i - pure_i||^2)`.
    pub distance: f64,
    /// `sqrt(average S_L)`.
    pub bound: f64,
    pub holds: bool,
}

/// Replace every density by its top-eigenvector projector and measure the
/// L2 distance; at finite scale the bound `sqrt(avg S_L)` holds with no
/// epsilon slack.
pub fn pure_approximation(
    ensemble: &FiniteEnsemble,
) -> Result<(FiniteEnsemble, PureApproximationReport)> {
    let mut pure_rhos = Vec::with_capacity(ensemble.len());
    let mut dist_sq = 0.0;
    for (w, rho) in ensemble.weights.iter().zip(&ensemble.rhos) {
        let (_, top_vec) = rho.top_eigenpair();
        let pure = DensityMatrix::pure(&top_vec)?;
        dist_sq += w * rho.distance(&pure).powi(2);
        pure_rhos.push(pure);
    }
    let distance = dist_sq.sqrt();
    let bound = ensemble.average_linear_entropy().sqrt();
    let pure_ensemble = FiniteEnsemble::new(
        ensemble.labels.clone(),
        ensemble.weights.clone(),
        pure_rhos,
    )?;
    Ok((
        pure_ensemble,
        PureApproximationReport {
            distance,
            bound,
            holds: distance <= bound + 1e-10,
        },
    ))
}

/// Result of checking a projection-valued measure against the algebra.
#[derive(Debug, Clone, Serialize)]
pub struct MeasurementModelReport {
    /// `delta(M) = ||pi(M) phi(E) - phi(M)|| / ||phi(E)||` per element
    /// checked (worst case).
    pub worst_delta: f64,
    /// Per-atom deltas.
    pub atom_deltas: Vec<f64>,
    /// Worst difference between `mu(M)/mu(E)` and the Born weight
    /// `<phi(E), pi(M) phi(E)> / ||phi(E)||^2`, relative to the
    /// delta-derived tolerance.
    pub worst_born_excess: f64,
    pub born_consistent: bool,
    pub passes: bool,
    pub threshold: f64,
}

/// Check a measurement model: `pvm[k]` is the system-side projector for
/// kept atom `k`. The projectors must be system-only, mutually
/// orthogonal, and sum to the identity on the system factor.
pub fn measurement_model_check(
    alg: &MeasureAlgebra,
    pvm: &[DMatrix<C64>],
    split: &SystemSplit,
    threshold: f64,
) -> Result<MeasurementModelReport> {
    let n = alg.n_atoms();
    if pvm.len() != n {
        return Err(Error::InvalidPvm(format!(
            "{} projectors for {} atoms",
            pvm.len(),
            n
        )));
    }
    let d_sys: usize = split
        .system()
        .iter()
        .map(|&s| alg.psi().dims()[s])
        .product();
    let mut sum = DMatrix::<C64>::zeros(d_sys, d_sys);
    for (k, p) in pvm.iter().enumerate() {
        if p.nrows() != d_sys {
            return Err(Error::InvalidPvm(format!(
                "projector {k} is {}x{}, system dim {d_sys}",
                p.nrows(),
                p.ncols()
            )));
        }
        if !crate::linalg::is_projector(p, 1e-9) {
            return Err(Error::InvalidPvm(format!("element {k} is not a projector")));
        }
        sum += p;
    }
    if (sum - DMatrix::<C64>::identity(d_sys, d_sys)).norm() > 1e-9 {
        return Err(Error::InvalidPvm(
            "projectors do not sum to the system identity".into(),
        ));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (&pvm[i] * &pvm[j]).norm() > 1e-9 {
                return Err(Error::InvalidPvm(format!(
                    "projectors {i} and {j} are not orthogonal (pvm not additive)"
                )));
            }
        }
    }

    let phi_e = alg.phi(&alg.top())?;
    let norm_e = phi_e.norm();
    let dims = alg.psi().dims();

    // pi(M) phi(E) for M built additively from atoms.
    let apply_pvm = |b: &Element, v: &DVector<C64>| -> Result<DVector<C64>> {
        let mut out = DVector::<C64>::zeros(v.len());
        for k in b.atoms() {
            out += crate::linalg::apply_local(&pvm[k], split.system(), v, dims)?;
        }
        Ok(out)
    };

    let elements = alg.all_elements(1 << 12)?;
    let mut worst_delta: f64 = 0.0;
    let mut worst_born_excess = f64::NEG_INFINITY;
    let mut atom_deltas = vec![0.0; n];
    for b in &elements {
        let lhs = apply_pvm(b, &phi_e)?;
        let phi_b = alg.phi(b)?;
        let delta = (&lhs - &phi_b).norm() / norm_e;
        worst_delta = worst_delta.max(delta);
        if b.count() == 1 {
            let k = b.atoms().next().unwrap();
            atom_deltas[k] = delta;
        }
        // Born weight vs relative probability within the delta-derived
        // tolerance: | ||phi(M)||^2 - <phi(E), pi phi(E)> | <=
        // delta ||phi(E)|| (||phi(M)|| + ||pi phi(E)||).
        let born = phi_e.dotc(&lhs).re / norm_e.powi(2);
        let rel = phi_b.norm_squared() / norm_e.powi(2);
        let tol_m = delta * (phi_b.norm() + lhs.norm()) / norm_e + 1e-12;
        worst_born_excess = worst_born_excess.max((born - rel).abs() - tol_m);
    }

    Ok(MeasurementModelReport {
        worst_delta,
        atom_deltas,
        worst_born_excess,
        born_consistent: worst_born_excess <= 0.0,
        passes: worst_delta <= threshold,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_state, random_unit_vector, tensor, QuantumState};
    use crate::malg::{generate_algebra, observer_context, NULL_TOL};
    use crate::rng::SplitMix64;
    use crate::spacetime::Region;
    use crate::statements::{ProjectionStatement, SiteMap};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn ket0_proj() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)])
    }

    fn record_at(
        label: &str,
        local: DMatrix<C64>,
        site: usize,
        dims: &[usize],
    ) -> ProjectionStatement {
        let map = SiteMap::chain(dims.len());
        ProjectionStatement::new(label, local, Region::point(site as i64, 0), dims, &map)
            .unwrap()
    }

    fn random_density(dim: usize, rng: &mut SplitMix64) -> DensityMatrix {
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.complex_gaussian());
        let psd = &g * g.adjoint();
        let tr: f64 = psd.diagonal().iter().map(|z| z.re).sum();
        DensityMatrix::new(psd / C64::new(tr, 0.0)).unwrap()
    }

    #[test]
    fn entropies_of_known_states() {
        let pure = DensityMatrix::pure(&DVector::from_vec(vec![c(1., 0.), c(0., 0.)])).unwrap();
        assert_abs_diff_eq!(linear_entropy(&pure), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(von_neumann_entropy(&pure), 0.0, epsilon = 1e-12);

        let mixed = DensityMatrix::new(DMatrix::identity(2, 2) * c(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(linear_entropy(&mixed), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            von_neumann_entropy(&mixed),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn von_neumann_dominates_linear_entropy() {
        let mut rng = SplitMix64::new(20);
        for _ in 0..50 {
            let rho = random_density(4, &mut rng);
            assert!(von_neumann_entropy(&rho) >= linear_entropy(&rho) - 1e-10);
            let s_l = linear_entropy(&rho);
            assert!((0.0..=0.75 + 1e-12).contains(&s_l));
        }
    }

    fn bell_algebra() -> (MeasureAlgebra, SystemSplit) {
        let dims = [2usize, 2];
        let bell = QuantumState::ghz(2).unwrap();
        let alg = generate_algebra(
            vec![record_at("z1", ket0_proj(), 1, &dims)],
            &bell,
            NULL_TOL,
        )
        .unwrap();
        let split = SystemSplit::new([0], 2).unwrap();
        (alg, split)
    }

    #[test]
    fn density_of_examples() {
        let (alg, split) = bell_algebra();
        // b = 1 on the Bell state: maximally mixed system.
        let rho = density_of(&alg, &alg.top(), &split).unwrap();
        assert!((rho.matrix() - DMatrix::identity(2, 2) * c(0.5, 0.0)).norm() < 1e-12);

        // Atoms give pure conditional states.
        for k in 0..alg.n_atoms() {
            let atom = Element::from_atoms(alg.n_atoms(), [k]);
            let rho_k = density_of(&alg, &atom, &split).unwrap();
            assert_abs_diff_eq!(linear_entropy(&rho_k), 0.0, epsilon = 1e-10);
        }

        // Null conditioning is rejected.
        assert!(matches!(
            density_of(&alg, &alg.bottom(), &split),
            Err(Error::NullConditioning(_))
        ));
    }

    #[test]
    fn density_trace_one_on_random_algebras() {
        let mut rng = SplitMix64::new(30);
        let dims = [2usize, 2, 2];
        let psi = random_state(&dims, &mut rng).unwrap();
        let alg = generate_algebra(
            vec![
                record_at("q1", crate::linalg::random_projector(2, 1, &mut rng).unwrap(), 1, &dims),
                record_at("q2", crate::linalg::random_projector(2, 1, &mut rng).unwrap(), 2, &dims),
            ],
            &psi,
            NULL_TOL,
        )
        .unwrap();
        let split = SystemSplit::new([0], 3).unwrap();
        for b in alg.all_elements(1 << 10).unwrap() {
            if alg.measure(&b).unwrap() > NULL_TOL {
                let rho = density_of(&alg, &b, &split).unwrap();
                let tr: f64 = rho.matrix().diagonal().iter().map(|z| z.re).sum();
                assert_abs_diff_eq!(tr, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn separateness_flags_system_generators() {
        let dims = [2usize, 2, 2];
        let ghz = QuantumState::ghz(3).unwrap();
        let alg = generate_algebra(
            vec![
                record_at("e1", ket0_proj(), 1, &dims),
                record_at("e2", ket0_proj(), 2, &dims),
            ],
            &ghz,
            NULL_TOL,
        )
        .unwrap();
        let split = SystemSplit::new([0], 3).unwrap();
        assert!(separateness_check(&alg, &split).separate);

        let alg_bad = generate_algebra(
            vec![
                record_at("sys", ket0_proj(), 0, &dims),
                record_at("e2", ket0_proj(), 2, &dims),
            ],
            &ghz,
            NULL_TOL,
        )
        .unwrap();
        let report = separateness_check(&alg_bad, &split);
        assert!(!report.separate);
        assert_eq!(report.overlaps[0].0, "sys");
        assert!(matches!(
            ensemble_from_algebra(&alg_bad, &split),
            Err(Error::NotSeparate(_, _))
        ));
    }

    #[test]
    fn bell_state_gives_two_point_pure_ensemble() {
        let (alg, split) = bell_algebra();
        let (ensemble, report) = ensemble_from_algebra(&alg, &split).unwrap();
        assert_eq!(ensemble.len(), 2);
        for (w, rho) in ensemble.weights.iter().zip(&ensemble.rhos) {
            assert_abs_diff_eq!(*w, 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(linear_entropy(rho), 0.0, epsilon = 1e-10);
        }
        assert!(report.convexity_defect <= 1e-10, "{report:?}");
        assert!(report.worst_expectation_defect <= 1e-10);
    }

    #[test]
    fn product_state_ensemble_is_constant() {
        let dims = [2usize, 2];
        let psi = tensor(&QuantumState::plus(), &QuantumState::plus()).unwrap();
        let alg = generate_algebra(
            vec![record_at("e", ket0_proj(), 1, &dims)],
            &psi,
            NULL_TOL,
        )
        .unwrap();
        let split = SystemSplit::new([0], 2).unwrap();
        let (ensemble, _) = ensemble_from_algebra(&alg, &split).unwrap();
        assert_eq!(ensemble.len(), 2);
        assert!(ensemble.rhos[0].distance(&ensemble.rhos[1]) < 1e-10);
        assert_abs_diff_eq!(linear_entropy(&ensemble.rhos[0]), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn bayesian_update_rescales_weights_keeps_densities() {
        let mut rng = SplitMix64::new(31);
        let dims = [2usize, 2, 2];
        let psi = random_state(&dims, &mut rng).unwrap();
        let alg = generate_algebra(
            vec![
                record_at("q1", crate::linalg::random_projector(2, 1, &mut rng).unwrap(), 1, &dims),
                record_at("q2", crate::linalg::random_projector(2, 1, &mut rng).unwrap(), 2, &dims),
            ],
            &psi,
            NULL_TOL,
        )
        .unwrap();
        let split = SystemSplit::new([0], 3).unwrap();
        let (full, _) = ensemble_from_algebra(&alg, &split).unwrap();
        let observer = alg.generator_element(0);
        let conditioned = ensemble_conditioned(&alg, &split, &observer).unwrap();
        let ctx = observer_context(&alg, &observer).unwrap();
        let mut idx = 0;
        for k in observer.atoms() {
            let atom = Element::from_atoms(alg.n_atoms(), [k]);
            assert_abs_diff_eq!(
                conditioned.weights[idx],
                ctx.conditional(&atom).unwrap(),
                epsilon = 1e-12
            );
            assert!(conditioned.rhos[idx].distance(&full.rhos[k]) < 1e-12);
            idx += 1;
        }
    }

    #[test]
    fn mixing_identity_orthogonal_pure_pair() {
        let rho1 = DensityMatrix::pure(&DVector::from_vec(vec![c(1., 0.), c(0., 0.)])).unwrap();
        let rho2 = DensityMatrix::pure(&DVector::from_vec(vec![c(0., 0.), c(1., 0.)])).unwrap();
        let report = mixing_identity_check(&[0.5, 0.5], &[rho1, rho2]).unwrap();
        assert_abs_diff_eq!(report.lhs, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rhs, 0.5, epsilon = 1e-12);
        assert!(report.holds);
    }

    #[test]
    fn mixing_identity_single_component_vanishes() {
        let mut rng = SplitMix64::new(8);
        let rho = random_density(3, &mut rng);
        let report = mixing_identity_check(&[1.0], &[rho]).unwrap();
        assert_abs_diff_eq!(report.lhs, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rhs, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mixing_identity_random_qutrits() {
        let mut rng = SplitMix64::new(9);
        for _ in 0..20 {
            let k = 2 + rng.next_range(4);
            let rhos: Vec<DensityMatrix> =
                (0..k).map(|_| random_density(3, &mut rng)).collect();
            let mut weights: Vec<f64> = (0..k).map(|_| rng.next_f64() + 1e-3).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let report = mixing_identity_check(&weights, &rhos).unwrap();
            assert!(report.defect <= 1e-12, "{report:?}");
        }
    }

    #[test]
    fn purity_bounds_edge_cases_and_random() {
        // Pure state: everything zero.
        let pure = DensityMatrix::pure(&DVector::from_vec(vec![c(0.6, 0.0), c(0.8, 0.0)]))
            .unwrap();
        let r = purity_bounds_check(&pure).unwrap();
        assert!(r.pure_distance_sq < 1e-10 && r.linear_entropy < 1e-10);
        assert!(r.lambda_bound_holds && r.identity_holds && r.pure_bound_holds);

        // Maximally mixed qubit: the bound is tight.
        let mixed = DensityMatrix::new(DMatrix::identity(2, 2) * c(0.5, 0.0)).unwrap();
        let r = purity_bounds_check(&mixed).unwrap();
        assert_abs_diff_eq!(r.pure_distance_sq, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(r.linear_entropy, 0.5, epsilon = 1e-12);
        assert!(r.pure_bound_holds && r.identity_holds);

        let mut rng = SplitMix64::new(10);
        for _ in 0..50 {
            let rho = random_density(4, &mut rng);
            let r = purity_bounds_check(&rho).unwrap();
            assert!(r.lambda_bound_holds && r.identity_holds && r.pure_bound_holds);
            assert!(r.entropy_order_holds);
        }
    }

    #[test]
    fn entropy_drop_identity_for_refinements() {
        // Identical ensembles: zero drop.
        let mut rng = SplitMix64::new(11);
        let rhos: Vec<DensityMatrix> = (0..3).map(|_| random_density(2, &mut rng)).collect();
        let ens = FiniteEnsemble::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.2, 0.3, 0.5],
            rhos.clone(),
        )
        .unwrap();
        let report = fine_grain_entropy_drop(&ens, &ens, &[0, 1, 2]).unwrap();
        assert_abs_diff_eq!(report.distance_sq, 0.0, epsilon = 1e-12);
        assert!(report.holds);

        // Bell-state ensemble refined from the trivial one-point ensemble.
        let (alg, split) = bell_algebra();
        let (fine, _) = ensemble_from_algebra(&alg, &split).unwrap();
        let coarse = FiniteEnsemble::new(
            vec!["top".into()],
            vec![1.0],
            vec![density_of(&alg, &alg.top(), &split).unwrap()],
        )
        .unwrap();
        let report = fine_grain_entropy_drop(&coarse, &fine, &[0, 0]).unwrap();
        assert_abs_diff_eq!(report.distance_sq, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(report.entropy_drop, 0.5, epsilon = 1e-10);
        assert!(report.holds);

        // Non-refining map is rejected.
        let bad = FiniteEnsemble::new(
            vec!["x".into()],
            vec![1.0],
            vec![random_density(2, &mut rng)],
        )
        .unwrap();
        assert!(fine_grain_entropy_drop(&bad, &fine, &[0, 0]).is_err());
    }

    #[test]
    fn random_two_level_refinement_satisfies_identity() {
        let mut rng = SplitMix64::new(12);
        for _ in 0..20 {
            // Fine ensemble of 4 random qubit densities; coarse groups
            // pairs and averages.
            let fine_rhos: Vec<DensityMatrix> =
                (0..4).map(|_| random_density(2, &mut rng)).collect();
            let mut w: Vec<f64> = (0..4).map(|_| rng.next_f64() + 0.1).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            let fine = FiniteEnsemble::new(
                (0..4).map(|i| format!("f{i}")).collect(),
                w.clone(),
                fine_rhos.clone(),
            )
            .unwrap();
            let refinement = [0usize, 0, 1, 1];
            let mut coarse_rhos = Vec::new();
            let mut coarse_w = Vec::new();
            for c_idx in 0..2 {
                let fiber: Vec<usize> =
                    (0..4).filter(|&j| refinement[j] == c_idx).collect();
                let wsum: f64 = fiber.iter().map(|&j| w[j]).sum();
                let mut avg = DMatrix::<C64>::zeros(2, 2);
                for &j in &fiber {
                    avg += fine_rhos[j].matrix() * C64::new(w[j] / wsum, 0.0);
                }
                coarse_rhos.push(DensityMatrix::new(avg).unwrap());
                coarse_w.push(wsum);
            }
            let coarse = FiniteEnsemble::new(
                vec!["c0".into(), "c1".into()],
                coarse_w,
                coarse_rhos,
            )
            .unwrap();
            let report = fine_grain_entropy_drop(&coarse, &fine, &refinement).unwrap();
            assert!(report.defect <= 1e-12, "{report:?}");
        }
    }

    #[test]
    fn pure_approximation_bounds() {
        // Ensemble of pure states: distance zero.
        let p1 = DensityMatrix::pure(&DVector::from_vec(vec![c(1., 0.), c(0., 0.)])).unwrap();
        let p2 = DensityMatrix::pure(&DVector::from_vec(vec![c(0., 0.), c(1., 0.)])).unwrap();
        let ens = FiniteEnsemble::new(
            vec!["a".into(), "b".into()],
            vec![0.4, 0.6],
            vec![p1, p2],
        )
        .unwrap();
        let (_, report) = pure_approximation(&ens).unwrap();
        assert_abs_diff_eq!(report.distance, 0.0, epsilon = 1e-10);

        // Single-point maximally mixed: bound is tight.
        let mixed = DensityMatrix::new(DMatrix::identity(2, 2) * c(0.5, 0.0)).unwrap();
        let ens = FiniteEnsemble::new(vec!["m".into()], vec![1.0], vec![mixed]).unwrap();
        let (_, report) = pure_approximation(&ens).unwrap();
        assert_abs_diff_eq!(report.distance.powi(2), 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(report.bound.powi(2), 0.5, epsilon = 1e-10);
        assert!(report.holds);

        // Random qutrit ensembles: bound with slack.
        let mut rng = SplitMix64::new(14);
        for _ in 0..20 {
            let rhos: Vec<DensityMatrix> =
                (0..3).map(|_| random_density(3, &mut rng)).collect();
            let ens = FiniteEnsemble::new(
                vec!["a".into(), "b".into(), "c".into()],
                vec![0.3, 0.3, 0.4],
                rhos,
            )
            .unwrap();
            let (pure_ens, report) = pure_approximation(&ens).unwrap();
            assert!(report.holds, "{report:?}");
            for rho in &pure_ens.rhos {
                assert!(linear_entropy(rho) < 1e-10);
            }
        }
    }

    #[test]
    fn ensemble_refinement_is_functorial() {
        // Refining the one-generator algebra by adding a second record
        // and averaging back over fibers returns the coarse densities.
        let dims = [2usize, 2, 2];
        let mut rng = SplitMix64::new(15);
        let psi = random_state(&dims, &mut rng).unwrap();
        let r1 = record_at("r1", ket0_proj(), 1, &dims);
        let r2 = record_at("r2", ket0_proj(), 2, &dims);
        let coarse_alg = generate_algebra(vec![r1.clone()], &psi, NULL_TOL).unwrap();
        let fine_alg = generate_algebra(vec![r1, r2], &psi, NULL_TOL).unwrap();
        let split = SystemSplit::new([0], 3).unwrap();
        let (coarse, _) = ensemble_from_algebra(&coarse_alg, &split).unwrap();
        let (fine, _) = ensemble_from_algebra(&fine_alg, &split).unwrap();
        // Fine atom k maps to the coarse atom with the same sign of r1.
        let refinement: Vec<usize> = (0..fine_alg.n_atoms())
            .map(|k| {
                let sign1 = fine_alg.atom_sign_mask(k) & 1;
                (0..coarse_alg.n_atoms())
                    .find(|&c| coarse_alg.atom_sign_mask(c) & 1 == sign1)
                    .unwrap()
            })
            .collect();
        let report = fine_grain_entropy_drop(&coarse, &fine, &refinement).unwrap();
        assert!(report.holds, "{report:?}");
    }

    #[test]
    fn ideal_premeasurement_passes_measurement_check() {
        // E psi = sum_i lambda_i s_i (x) a_i with orthonormal a_i:
        // pvm(M_i) = |s_i><s_i| has delta = 0 and Born weights
        // |lambda_i|^2.
        let l1: f64 = 0.3f64.sqrt();
        let l2: f64 = 0.7f64.sqrt();
        let dims = [2usize, 2];
        let amps = DVector::from_vec(vec![c(l1, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(l2, 0.0)]);
        let psi = QuantumState::new(amps, dims.to_vec()).unwrap();
        let alg = generate_algebra(
            vec![record_at("a", ket0_proj(), 1, &dims)],
            &psi,
            NULL_TOL,
        )
        .unwrap();
        let split = SystemSplit::new([0], 2).unwrap();
        // Atom 0 is the complement (sign 0 = a_2 branch), atom 1 asserts
        // the record; align the pvm with atom labels.
        let one_proj =
            DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]);
        let pvm: Vec<DMatrix<C64>> = (0..alg.n_atoms())
            .map(|k| {
                if alg.atom_sign_mask(k) & 1 == 1 {
                    ket0_proj()
                } else {
                    one_proj.clone()
                }
            })
            .collect();
        let report = measurement_model_check(&alg, &pvm, &split, 1e-6).unwrap();
        assert!(report.passes, "{report:?}");
        assert!(report.worst_delta < 1e-10);
        assert!(report.born_consistent);
    }

    #[test]
    fn partially_overlapping_pointers_report_delta() {
        // Pointer states with overlap 0.1: delta = O(0.1), reported.
        let overlap = 0.1f64;
        let l = std::f64::consts::FRAC_1_SQRT_2;
        let dims = [2usize, 2];
        // a_1 = |0>, a_2 = overlap |0> + sqrt(1-overlap^2) |1>.
        let beta = (1.0 - overlap * overlap).sqrt();
        let amps = DVector::from_vec(vec![
            c(l, 0.0),
            c(0.0, 0.0),
            c(l * overlap, 0.0),
            c(l * beta, 0.0),
        ]);
        let psi = QuantumState::new(amps, dims.to_vec()).unwrap();
        let alg = generate_algebra(
            vec![record_at("a", ket0_proj(), 1, &dims)],
            &psi,
            NULL_TOL,
        )
        .unwrap();
        let split = SystemSplit::new([0], 2).unwrap();
        let one_proj =
            DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]);
        let pvm: Vec<DMatrix<C64>> = (0..alg.n_atoms())
            .map(|k| {
                if alg.atom_sign_mask(k) & 1 == 1 {
                    ket0_proj()
                } else {
                    one_proj.clone()
                }
            })
            .collect();
        let report = measurement_model_check(&alg, &pvm, &split, 1e-6).unwrap();
        assert!(!report.passes);
        assert!(report.worst_delta > overlap / 10.0);
        assert!(report.worst_delta < 3.0 * overlap);
        // The Born comparison stays within its delta-derived tolerance.
        assert!(report.born_consistent, "{report:?}");
    }

    #[test]
    fn pvm_validation_rejects_bad_inputs() {
        let (alg, split) = bell_algebra();
        // Not summing to identity.
        let pvm = vec![ket0_proj(), ket0_proj()];
        assert!(matches!(
            measurement_model_check(&alg, &pvm, &split, 1e-6),
            Err(Error::InvalidPvm(_))
        ));
        // Wrong count.
        assert!(measurement_model_check(&alg, &[ket0_proj()], &split, 1e-6).is_err());
    }

    #[test]
    fn haar_states_give_valid_densities() {
        let mut rng = SplitMix64::new(40);
        for _ in 0..10 {
            let v = random_unit_vector(8, &mut rng).unwrap();
            let rho =
                DensityMatrix::from_vector_partial_trace(v.amps(), &[2, 2, 2], &[0, 2])
                    .unwrap();
            let r = purity_bounds_check(&rho).unwrap();
            assert!(r.lambda_bound_holds && r.identity_holds && r.pure_bound_holds);
        }
    }
}
