//! Star-coupled pointer-state model and observer branching.
//!
//! The model couples one system site to `n` environment sites through
//! `H = sum_k M (x) H_k`, each term acting on sites `{0, k}`. Because
//! every term commutes with the spectral projectors of `M`, the evolution
//! is exactly branch-diagonal: a product initial state
//! `a (x) x_1 (x) ... (x) x_n` evolves to
//! `sum_i lambda_i a_i (x) x_{1,i} (x) ... (x) x_{n,i}` with
//! `lambda_i = <a_i, a>` and `x_{k,i} = exp(-i m_i H_k t) x_k`, which the
//! code exploits for exact branch extraction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeSet;

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::linalg::{
    apply_local, embed_op, span_projector, HermitianEigen, QuantumState, C64, HERM_TOL,
};
use crate::spacetime::Region;
use crate::statements::{ProjectionStatement, SiteMap, VisibilityBound, RESIDUAL_FLOOR};
use crate::MAX_TOTAL_DIM;

/// Minimum eigenvalue gap for the pointer observable.
pub const POINTER_GAP: f64 = 1e-8;

/// Star geometry: system at x = 0, environment sites alternating at
/// x = 1, -1, 2, -2, ..., all on one slice.
pub fn star_site_map(n_env: usize) -> SiteMap {
    let mut positions = vec![0i64];
    for k in 1..=n_env {
        let magnitude = k.div_ceil(2) as i64;
        positions.push(if k % 2 == 1 { magnitude } else { -magnitude });
    }
    SiteMap::new(positions).expect("star positions are distinct")
}

/// Star-coupled system-environment model with cached eigendecompositions.
pub struct DarwinismModel {
    dims: Vec<usize>,
    m_op: DMatrix<C64>,
    h_ks: Vec<DMatrix<C64>>,
    site_map: SiteMap,
    /// Pointer eigenvalues (ascending) and eigenvectors of `M`.
    m_values: Vec<f64>,
    m_vectors: Vec<DVector<C64>>,
    /// Per-site eigendecompositions of the `H_k`.
    h_eigs: Vec<HermitianEigen>,
    h_total: DMatrix<C64>,
    evolution: HermitianEigen,
    /// Physical time per lattice step for the Dynamics impl.
    time_step: f64,
}

/// Assemble and verify the star model.
pub fn build_star_model(
    n_env: usize,
    d_sys: usize,
    d_env: usize,
    m_op: DMatrix<C64>,
    h_ks: Vec<DMatrix<C64>>,
    site_map: Option<SiteMap>,
) -> Result<DarwinismModel> {
    if n_env == 0 || d_sys < 2 || d_env < 2 {
        return Err(Error::invalid(
            "need at least one environment site and qubit-sized sites",
        ));
    }
    if h_ks.len() != n_env {
        return Err(Error::DimensionMismatch(format!(
            "{} environment couplings for {} sites",
            h_ks.len(),
            n_env
        )));
    }
    let total = d_sys * d_env.pow(n_env as u32);
    if total > MAX_TOTAL_DIM {
        return Err(Error::DimensionOverflow(total, MAX_TOTAL_DIM));
    }
    if m_op.nrows() != d_sys {
        return Err(Error::DimensionMismatch(format!(
            "pointer observable is {}x{}, system dim {}",
            m_op.nrows(),
            m_op.ncols(),
            d_sys
        )));
    }
    let m_eig = HermitianEigen::new(&m_op)?;
    let gap = m_eig.min_gap();
    if gap <= POINTER_GAP {
        return Err(Error::DegenerateSpectrum(gap));
    }
    let mut order: Vec<usize> = (0..d_sys).collect();
    order.sort_by(|&i, &j| m_eig.values[i].partial_cmp(&m_eig.values[j]).unwrap());
    let m_values: Vec<f64> = order.iter().map(|&i| m_eig.values[i]).collect();
    let m_vectors: Vec<DVector<C64>> = order
        .iter()
        .map(|&i| m_eig.vectors.column(i).into_owned())
        .collect();

    let mut dims = vec![d_sys];
    dims.extend(std::iter::repeat_n(d_env, n_env));
    let mut h_total = DMatrix::<C64>::zeros(total, total);
    let mut h_eigs = Vec::with_capacity(n_env);
    for (k, h_k) in h_ks.iter().enumerate() {
        if h_k.nrows() != d_env {
            return Err(Error::DimensionMismatch(format!(
                "environment coupling {k} is {}x{}, site dim {}",
                h_k.nrows(),
                h_k.ncols(),
                d_env
            )));
        }
        h_eigs.push(HermitianEigen::new(h_k)?);
        let term = m_op.kronecker(h_k);
        h_total += embed_op(&term, &[0, k + 1], &dims)?;
    }
    let dev = crate::linalg::hermitian_deviation(&h_total);
    if dev > HERM_TOL {
        return Err(Error::NotHermitian(dev));
    }
    let evolution = HermitianEigen::new(&h_total)?;

    let site_map = site_map.unwrap_or_else(|| star_site_map(n_env));
    if site_map.n_sites() != dims.len() {
        return Err(Error::DimensionMismatch(format!(
            "geometry has {} sites, model has {}",
            site_map.n_sites(),
            dims.len()
        )));
    }

    let model = DarwinismModel {
        dims,
        m_op,
        h_ks,
        site_map,
        m_values,
        m_vectors,
        h_eigs,
        h_total,
        evolution,
        time_step: 1.0,
    };
    // Interaction commutes with every pointer projector.
    for i in 0..model.n_branches() {
        let dev = model.pointer_commutator_norm(i)?;
        if dev > 1e-12 {
            return Err(Error::invalid(format!(
                "[H, P_{i} (x) 1] = {dev:.3e}, interaction does not preserve the pointer basis"
            )));
        }
    }
    Ok(model)
}

impl DarwinismModel {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_env(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn d_sys(&self) -> usize {
        self.dims[0]
    }

    pub fn d_env(&self) -> usize {
        self.dims[1]
    }

    pub fn n_branches(&self) -> usize {
        self.d_sys()
    }

    pub fn site_map(&self) -> &SiteMap {
        &self.site_map
    }

    pub fn h_total(&self) -> &DMatrix<C64> {
        &self.h_total
    }

    pub fn pointer_observable(&self) -> &DMatrix<C64> {
        &self.m_op
    }

    pub fn environment_couplings(&self) -> &[DMatrix<C64>] {
        &self.h_ks
    }

    pub fn pointer_values(&self) -> &[f64] {
        &self.m_values
    }

    pub fn pointer_vector(&self, i: usize) -> &DVector<C64> {
        &self.m_vectors[i]
    }

    /// Spectral projector of `M` for branch `i`, on the system site.
    pub fn system_projector(&self, i: usize) -> DMatrix<C64> {
        &self.m_vectors[i] * self.m_vectors[i].adjoint()
    }

    /// `|| [H, P_i (x) 1] ||_F`.
    pub fn pointer_commutator_norm(&self, i: usize) -> Result<f64> {
        let p_full = embed_op(&self.system_projector(i), &[0], &self.dims)?;
        Ok((&self.h_total * &p_full - &p_full * &self.h_total).norm())
    }

    /// Spectral-range statement `P_I = sum_{i in I} |a_i><a_i|` on the
    /// system site, localized at lattice time `t`.
    pub fn spectral_statement(
        &self,
        indices: &BTreeSet<usize>,
        label: impl Into<String>,
        t: i64,
    ) -> Result<ProjectionStatement> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.n_branches()) {
            return Err(Error::invalid(format!(
                "spectral indices {indices:?} outside 0..{}",
                self.n_branches()
            )));
        }
        let mut local = DMatrix::<C64>::zeros(self.d_sys(), self.d_sys());
        for &i in indices {
            local += self.system_projector(i);
        }
        let x0 = self.site_map.position(0)?;
        ProjectionStatement::new(
            label,
            local,
            Region::point(x0, t),
            &self.dims,
            &self.site_map,
        )
    }

    /// Evolve a product initial state and extract the exact branch
    /// decomposition.
    pub fn evolve(&self, psi0: &QuantumState, t: f64) -> Result<BranchEvolution> {
        if psi0.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "state dims {:?} vs model dims {:?}",
                psi0.dims(),
                self.dims
            )));
        }
        // Product check: Schmidt rank 1 across every single-site cut.
        let mut factors: Vec<DVector<C64>> = Vec::with_capacity(self.dims.len());
        for site in 0..self.dims.len() {
            let a = psi0.split_matrix(&[site])?;
            let svd = a.svd(true, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
            if sv.len() > 1 && sv[1] > 1e-10 {
                return Err(Error::NotProductState(sv[1], site));
            }
            let u = svd.u.as_ref().unwrap();
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&i, &j| {
                svd.singular_values[j]
                    .partial_cmp(&svd.singular_values[i])
                    .unwrap()
            });
            factors.push(u.column(order[0]).into_owned());
        }
        // Distribute the global phase into the system factor.
        let mut product = factors[0].clone();
        for f in &factors[1..] {
            product = product.kronecker(f);
        }
        let phase = product.dotc(psi0.amps());
        let system_factor = &factors[0] * phase;

        let psi_t = QuantumState::from_unnormalized(
            self.evolution.evolve(t, psi0.amps()),
            self.dims.clone(),
        )?;

        let mut branches = Vec::with_capacity(self.n_branches());
        for i in 0..self.n_branches() {
            let weight = self.m_vectors[i].dotc(&system_factor);
            let env_factors: Vec<DVector<C64>> = (0..self.n_env())
                .map(|k| self.h_eigs[k].evolve(self.m_values[i] * t, &factors[k + 1]))
                .collect();
            branches.push(Branch {
                index: i,
                weight,
                system: self.m_vectors[i].clone(),
                env_factors,
            });
        }
        // Exactness of the toy model: the branch sum reproduces psi(t).
        let mut sum = DVector::<C64>::zeros(psi_t.dim());
        for b in &branches {
            let mut v = &b.system * b.weight;
            for f in &b.env_factors {
                v = v.kronecker(f);
            }
            sum += v;
        }
        let residual = (psi_t.amps() - sum).norm();
        Ok(BranchEvolution {
            state: psi_t,
            branches,
            residual,
            t,
        })
    }

    /// Record projectors `X_k` onto `span{x_{k,i} : i in I}` per
    /// environment site.
    pub fn record_projectors(
        &self,
        evolution: &BranchEvolution,
        indices: &BTreeSet<usize>,
    ) -> Result<Vec<DMatrix<C64>>> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.n_branches()) {
            return Err(Error::invalid(format!(
                "spectral indices {indices:?} outside 0..{}",
                self.n_branches()
            )));
        }
        Ok((0..self.n_env())
            .map(|k| {
                let vectors: Vec<DVector<C64>> = indices
                    .iter()
                    .map(|&i| evolution.branches[i].env_factors[k].clone())
                    .collect();
                span_projector(&vectors, self.d_env(), 1e-12)
            })
            .collect())
    }
}

impl Dynamics for DarwinismModel {
    fn unitary_at(&self, t: i64) -> Result<DMatrix<C64>> {
        Ok(self.evolution.unitary(t as f64 * self.time_step))
    }

    fn dim(&self) -> usize {
        self.dims.iter().product()
    }
}

/// One pointer branch of the evolved state.
#[derive(Debug, Clone)]
pub struct Branch {
    pub index: usize,
    /// `lambda_i = <a_i, a>`.
    pub weight: C64,
    pub system: DVector<C64>,
    pub env_factors: Vec<DVector<C64>>,
}

/// Evolved state together with its exact branch decomposition.
#[derive(Debug, Clone)]
pub struct BranchEvolution {
    pub state: QuantumState,
    pub branches: Vec<Branch>,
    /// `||psi(t) - sum_i lambda_i a_i (x) x_{1,i} (x) ...||`.
    pub residual: f64,
    pub t: f64,
}

impl BranchEvolution {
    /// `<x_{k,i}, x_{k,j}>` for environment site `k`.
    pub fn branch_overlap(&self, k: usize, i: usize, j: usize) -> C64 {
        self.branches[i].env_factors[k].dotc(&self.branches[j].env_factors[k])
    }
}

/// Record error per fragment size with a log-linear fit.
#[derive(Debug, Clone, Serialize)]
pub struct DecayCurve {
    /// `(fragment size m, ||X_1...X_m psi - P psi||)`.
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of `ln err` vs `m` over points with
    /// `err > 1e-12`.
    pub fit_slope: Option<f64>,
    pub fit_intercept: Option<f64>,
    pub monotone: bool,
}

/// Error of the composed records against the system statement for each
/// fragment size.
pub fn record_error_curve(
    model: &DarwinismModel,
    evolution: &BranchEvolution,
    indices: &BTreeSet<usize>,
    fragment_sizes: &[usize],
) -> Result<DecayCurve> {
    let records = model.record_projectors(evolution, indices)?;
    let mut p_sys = DMatrix::<C64>::zeros(model.d_sys(), model.d_sys());
    for &i in indices {
        p_sys += model.system_projector(i);
    }
    let psi = evolution.state.amps();
    let p_psi = apply_local(&p_sys, &[0], psi, model.dims())?;

    let mut points = Vec::with_capacity(fragment_sizes.len());
    for &m in fragment_sizes {
        if m > model.n_env() {
            return Err(Error::invalid(format!(
                "fragment size {m} exceeds environment size {}",
                model.n_env()
            )));
        }
        let mut v = psi.clone();
        for (k, x_k) in records.iter().take(m).enumerate() {
            v = apply_local(x_k, &[k + 1], &v, model.dims())?;
        }
        points.push((m, (&v - &p_psi).norm()));
    }
    let monotone = points.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let (fit_slope, fit_intercept) = log_linear_fit(&points);
    Ok(DecayCurve {
        points,
        fit_slope,
        fit_intercept,
        monotone,
    })
}

/// Least squares of `ln err` against `m`, ignoring points at or below the
/// residual floor.
fn log_linear_fit(points: &[(usize, f64)]) -> (Option<f64>, Option<f64>) {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| *e > 1e-12)
        .map(|&(m, e)| (m as f64, e.ln()))
        .collect();
    if usable.len() < 2 {
        return (None, None);
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|(x, _)| x).sum();
    let sy: f64 = usable.iter().map(|(_, y)| y).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return (None, None);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (Some(slope), Some(intercept))
}

/// One row of the visibility scan.
#[derive(Debug, Clone, Serialize)]
pub struct VisibilityScanRow {
    pub fragment: usize,
    /// Area analogue: the number of sites in the region.
    pub area: usize,
    pub visibility_lb: f64,
    pub residual: f64,
    pub capped: bool,
}

/// Visibility lower bounds over a growing family of environment
/// fragments, with the growth rate and the weight-offset term.
#[derive(Debug, Clone, Serialize)]
pub struct VisibilityScan {
    pub rows: Vec<VisibilityScanRow>,
    /// Fitted visibility growth per site over uncapped rows.
    pub k_hat: Option<f64>,
    pub fit_intercept: Option<f64>,
    /// `ln ||P psi|| - ln ||(1-P) psi||`.
    pub offset_term: f64,
    /// Largest deviation of uncapped rows from the linear fit.
    pub max_fit_deviation: f64,
    /// Visibility grows at most linearly: no uncapped row exceeds the
    /// fit by more than half a nat.
    pub linear_ok: bool,
}

/// Scan visibility lower bounds using the record candidates over nested
/// fragments `1..=max_fragment`.
pub fn visibility_bound_scan(
    model: &DarwinismModel,
    evolution: &BranchEvolution,
    indices: &BTreeSet<usize>,
    fragment_sizes: &[usize],
) -> Result<VisibilityScan> {
    if fragment_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "fragment sizes must be strictly increasing (nested regions)",
        ));
    }
    let curve = record_error_curve(model, evolution, indices, fragment_sizes)?;
    let mut p_sys = DMatrix::<C64>::zeros(model.d_sys(), model.d_sys());
    for &i in indices {
        p_sys += model.system_projector(i);
    }
    let psi = evolution.state.amps();
    let p_psi = apply_local(&p_sys, &[0], psi, model.dims())?;
    let p_norm = p_psi.norm();
    let not_p_norm = (psi - &p_psi).norm();
    let offset_term = p_norm.ln() - not_p_norm.max(RESIDUAL_FLOOR).ln();

    let mut rows = Vec::with_capacity(curve.points.len());
    for &(m, err) in &curve.points {
        // The record candidate X_1...X_m certifies residual err(m), so
        // the whole curve is ln||P psi|| - ln err(m) up to the cap.
        let capped = err < RESIDUAL_FLOOR;
        rows.push(VisibilityScanRow {
            fragment: m,
            area: m,
            visibility_lb: p_norm.ln() - err.max(RESIDUAL_FLOOR).ln(),
            residual: err,
            capped,
        });
    }
    let usable: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| !r.capped)
        .map(|r| (r.area, r.visibility_lb.exp()))
        .collect();
    // Reuse the log-linear fit on exp(vis) so the fit runs on vis itself.
    let (k_hat, fit_intercept) = log_linear_fit(&usable);
    let max_fit_deviation = match (k_hat, fit_intercept) {
        (Some(k), Some(b)) => rows
            .iter()
            .filter(|r| !r.capped)
            .map(|r| (r.visibility_lb - (k * r.area as f64 + b)).abs())
            .fold(0.0, f64::max),
        _ => 0.0,
    };
    Ok(VisibilityScan {
        rows,
        k_hat,
        fit_intercept,
        offset_term,
        max_fit_deviation,
        linear_ok: max_fit_deviation <= 0.5,
    })
}

/// Visibility of a statement in a fragment region via the record
/// candidate, as a [`VisibilityBound`]-compatible value.
pub fn fragment_visibility(
    model: &DarwinismModel,
    evolution: &BranchEvolution,
    indices: &BTreeSet<usize>,
    fragment: usize,
) -> Result<VisibilityBound> {
    let scan = visibility_bound_scan(model, evolution, indices, &[fragment])?;
    let row = &scan.rows[0];
    let records = model.record_projectors(evolution, indices)?;
    let mut cert = DMatrix::<C64>::identity(1, 1);
    for x_k in records.iter().take(fragment) {
        cert = cert.kronecker(x_k);
    }
    let mut p_sys = DMatrix::<C64>::zeros(model.d_sys(), model.d_sys());
    for &i in indices {
        p_sys += model.system_projector(i);
    }
    let p_psi_norm =
        apply_local(&p_sys, &[0], evolution.state.amps(), model.dims())?.norm();
    Ok(VisibilityBound {
        lower_bound: row.visibility_lb,
        residual: row.residual,
        capped: row.capped,
        p_psi_norm,
        certificate: cert,
        certificate_sites: (1..=fragment).collect(),
    })
}

/// Observer read-out coupling: a second star interaction
/// `sum_{k in read} M_k (x) H_obs` between environment sites and a new
/// observer site.
pub struct ObserverModel {
    /// Environment site indices being read (in 1..=n_env).
    pub read_sites: Vec<usize>,
    /// Per-read-site Hermitian couplings `M_k` (dim `d_env`).
    pub couplings: Vec<DMatrix<C64>>,
    /// Hamiltonian on the observer site.
    pub h_obs: DMatrix<C64>,
    /// Initial observer state.
    pub initial: DVector<C64>,
}

impl ObserverModel {
    /// Ideal two-branch read-out: `M_k = |x_{k,1}><x_{k,1}|` projects the
    /// second branch's record, `H_obs = X` rotates a qubit pointer, and
    /// the read duration `pi / (2 n_read)` makes the pointer states
    /// orthogonal.
    pub fn ideal_two_branch(
        model: &DarwinismModel,
        evolution: &BranchEvolution,
        read_sites: Vec<usize>,
    ) -> Result<(Self, f64)> {
        if model.n_branches() != 2 {
            return Err(Error::invalid("ideal read-out expects a two-branch model"));
        }
        if read_sites.is_empty()
            || read_sites.iter().any(|&k| k == 0 || k > model.n_env())
        {
            return Err(Error::invalid(
                "read sites must be nonempty environment sites",
            ));
        }
        let mut couplings = Vec::with_capacity(read_sites.len());
        for &k in &read_sites {
            let x1 = &evolution.branches[1].env_factors[k - 1];
            couplings.push(x1 * x1.adjoint());
        }
        let h_obs = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
            ],
        );
        let initial = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let t_read = std::f64::consts::FRAC_PI_2 / read_sites.len() as f64;
        Ok((
            ObserverModel {
                read_sites,
                couplings,
                h_obs,
                initial,
            },
            t_read,
        ))
    }
}

/// Outcome of the observer read-out.
#[derive(Debug, Clone, Serialize)]
pub struct BranchingReport {
    /// Per branch: `(||O_i psi||^2, |lambda_i|^2)`.
    pub branch_weights: Vec<(f64, f64)>,
    /// `||O_i O psi - O_i psi||` per branch (the pre-read statement is in
    /// each updated observer's filter).
    pub knowledge_errors: Vec<f64>,
    /// `|<O_i psi, O_j psi>|` for `i < j`.
    pub pairwise_overlaps: Vec<f64>,
    /// Largest pointer-state overlap `|<o_i, o_j>|`, `i != j`; 1 means
    /// the read-out failed to distinguish branches.
    pub pointer_overlap_max: f64,
    /// Set when the read-out produced no distinguishability (e.g.
    /// `t_read = 0`).
    pub zero_distinguishability: bool,
    pub t_read: f64,
}

/// Evolve the read interaction and report branch weights, knowledge
/// errors, and branch distinctness.
pub fn observer_branching(
    model: &DarwinismModel,
    evolution: &BranchEvolution,
    observer: &ObserverModel,
    t_read: f64,
) -> Result<BranchingReport> {
    let n_read = observer.read_sites.len();
    if n_read == 0 || observer.couplings.len() != n_read {
        return Err(Error::invalid("observer must read at least one site"));
    }
    let d_obs = observer.h_obs.nrows();
    let mut ext_dims = model.dims().to_vec();
    ext_dims.push(d_obs);
    let obs_site = ext_dims.len() - 1;
    let total: usize = ext_dims.iter().product();
    if total > MAX_TOTAL_DIM {
        return Err(Error::DimensionOverflow(total, MAX_TOTAL_DIM));
    }

    // State after decoherence, tensored with the observer.
    let mut psi_mid = evolution.state.amps().clone();
    psi_mid = psi_mid.kronecker(&observer.initial);

    // Read interaction.
    let mut h_read = DMatrix::<C64>::zeros(total, total);
    for (idx, &k) in observer.read_sites.iter().enumerate() {
        let term = observer.couplings[idx].kronecker(&observer.h_obs);
        h_read += embed_op(&term, &[k, obs_site], &ext_dims)?;
    }
    let read_eig = HermitianEigen::new(&h_read)?;
    let psi_fin = read_eig.evolve(t_read, &psi_mid);

    // Pointer states o_i from the per-branch expectation of the read
    // couplings (exact for ideal couplings diagonal in the records).
    let h_obs_eig = HermitianEigen::new(&observer.h_obs)?;
    let n_branches = model.n_branches();
    let pointer_states: Vec<DVector<C64>> = (0..n_branches)
        .map(|i| {
            let nu: f64 = observer
                .read_sites
                .iter()
                .zip(&observer.couplings)
                .map(|(&k, m_k)| {
                    let x = &evolution.branches[i].env_factors[k - 1];
                    x.dotc(&(m_k * x)).re
                })
                .sum();
            h_obs_eig.evolve(nu * t_read, &observer.initial)
        })
        .collect();
    let mut pointer_overlap_max: f64 = 0.0;
    for i in 0..n_branches {
        for j in (i + 1)..n_branches {
            pointer_overlap_max =
                pointer_overlap_max.max(pointer_states[i].dotc(&pointer_states[j]).norm());
        }
    }
    let zero_distinguishability = pointer_overlap_max > 1.0 - 1e-9;

    // O_i: branch pointer projectors, orthonormalized in branch order so
    // they are mutually orthogonal even for imperfect read-outs.
    let basis = crate::linalg::orthonormal_span(&pointer_states, 1e-9);
    let observer_projectors: Vec<DMatrix<C64>> = (0..n_branches)
        .map(|i| {
            if i < basis.len() {
                &basis[i] * basis[i].adjoint()
            } else {
                DMatrix::zeros(d_obs, d_obs)
            }
        })
        .collect();

    // Pre-read observer statement, pushed to the final frame.
    let o_proj = &observer.initial * observer.initial.adjoint();
    let o_full = embed_op(&o_proj, &[obs_site], &ext_dims)?;
    let u_read = read_eig.unitary(t_read);
    let o_final = &u_read * &o_full * u_read.adjoint();
    let o_psi = &o_final * &psi_fin;

    let mut branch_weights = Vec::with_capacity(n_branches);
    let mut knowledge_errors = Vec::with_capacity(n_branches);
    let mut branch_vectors = Vec::with_capacity(n_branches);
    for proj in &observer_projectors {
        let oi_psi = apply_local(proj, &[obs_site], &psi_fin, &ext_dims)?;
        let oi_o_psi = apply_local(proj, &[obs_site], &o_psi, &ext_dims)?;
        knowledge_errors.push((&oi_o_psi - &oi_psi).norm());
        branch_vectors.push(oi_psi);
    }
    for (i, v) in branch_vectors.iter().enumerate() {
        let lambda2 = evolution.branches[i].weight.norm_sqr();
        branch_weights.push((v.norm_squared(), lambda2));
    }
    let mut pairwise_overlaps = Vec::new();
    for i in 0..n_branches {
        for j in (i + 1)..n_branches {
            pairwise_overlaps.push(branch_vectors[i].dotc(&branch_vectors[j]).norm());
        }
    }

    Ok(BranchingReport {
        branch_weights,
        knowledge_errors,
        pairwise_overlaps,
        pointer_overlap_max,
        zero_distinguishability,
        t_read,
    })
}
