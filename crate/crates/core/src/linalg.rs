//! Dense complex linear algebra over tensor products of finite-dimensional
//! sites.
//!
//! Site ordering is big-endian: site 0 is the slowest-varying tensor index,
//! so for qubits the basis state `|d0 d1 ... d_{n-1}>` lives at flat index
//! `d0*2^(n-1) + d1*2^(n-2) + ... + d_{n-1}`. This convention is pinned by
//! tests and shared by every module in the crate.

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::MAX_TOTAL_DIM;

pub type C64 = num_complex::Complex<f64>;

pub const NORM_TOL: f64 = 1e-12;
pub const HERM_TOL: f64 = 1e-10;
pub const PROJ_TOL: f64 = 1e-10;

/// Mixed-radix strides for big-endian site ordering.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Flat-index offsets contributed by a subset of sites.
///
/// Returns `(sub_offsets, rest_offsets)` such that every flat index on the
/// full space decomposes uniquely as `sub_offsets[a] + rest_offsets[c]`,
/// where `a` enumerates the subset's joint digits (big-endian over the
/// subset sites in ascending order) and `c` enumerates the complement's.
pub(crate) fn split_offsets(dims: &[usize], subset: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let st = strides(dims);
    let in_subset: Vec<bool> = {
        let mut v = vec![false; dims.len()];
        for &s in subset {
            v[s] = true;
        }
        v
    };
    let rest: Vec<usize> = (0..dims.len()).filter(|s| !in_subset[*s]).collect();
    (offsets_for(dims, &st, subset), offsets_for(dims, &st, &rest))
}

fn offsets_for(dims: &[usize], strides: &[usize], sites: &[usize]) -> Vec<usize> {
    let total: usize = sites.iter().map(|&s| dims[s]).product();
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut offset = 0usize;
        for &s in sites.iter().rev() {
            offset += (idx % dims[s]) * strides[s];
            idx /= dims[s];
        }
        out.push(offset);
    }
    out
}

/// Frobenius distance from Hermiticity, `||M - M^dagger||_F`.
pub fn hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    (m - m.adjoint()).norm()
}

pub fn is_hermitian(m: &DMatrix<C64>, tol: f64) -> bool {
    m.is_square() && hermitian_deviation(m) <= tol
}

/// True iff `m` is Hermitian and idempotent within `tol` in Frobenius norm.
pub fn is_projector(m: &DMatrix<C64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    hermitian_deviation(m) <= tol && (m * m - m).norm() <= tol
}

/// Normalized state vector over a tensor product of sites.
#[derive(Debug, Clone)]
pub struct QuantumState {
    amps: DVector<C64>,
    dims: Vec<usize>,
}

impl QuantumState {
    /// Wrap an already-normalized amplitude vector.
    pub fn new(amps: DVector<C64>, dims: Vec<usize>) -> Result<Self> {
        let total: usize = dims.iter().product();
        if total != amps.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::DimensionMismatch(format!(
                "amplitude length {} vs site dims {:?}",
                amps.len(),
                dims
            )));
        }
        if total > MAX_TOTAL_DIM {
            return Err(Error::DimensionOverflow(total, MAX_TOTAL_DIM));
        }
        let norm = amps.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized((norm - 1.0).abs()));
        }
        Ok(QuantumState { amps, dims })
    }

    /// Normalize a raw vector (an unnormalized intermediate result).
    pub fn from_unnormalized(amps: DVector<C64>, dims: Vec<usize>) -> Result<Self> {
        let norm = amps.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        QuantumState::new(amps.map(|a| a / C64::new(norm, 0.0)), dims)
    }

    /// Computational basis state with the given per-site digits.
    pub fn basis(dims: &[usize], digits: &[usize]) -> Result<Self> {
        if digits.len() != dims.len() || digits.iter().zip(dims).any(|(&d, &n)| d >= n) {
            return Err(Error::DimensionMismatch(format!(
                "digits {:?} vs dims {:?}",
                digits, dims
            )));
        }
        let st = strides(dims);
        let idx: usize = digits.iter().zip(&st).map(|(&d, &s)| d * s).sum();
        let total: usize = dims.iter().product();
        let mut amps = DVector::zeros(total);
        amps[idx] = C64::new(1.0, 0.0);
        QuantumState::new(amps, dims.to_vec())
    }

    /// Single qubit `alpha|0> + beta|1>`, normalized.
    pub fn qubit(alpha: C64, beta: C64) -> Result<Self> {
        QuantumState::from_unnormalized(DVector::from_vec(vec![alpha, beta]), vec![2])
    }

    /// `|+>` on one qubit.
    pub fn plus() -> Self {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        QuantumState::new(DVector::from_vec(vec![h, h]), vec![2]).unwrap()
    }

    /// n-qubit GHZ state `(|0...0> + |1...1>)/sqrt(2)`.
    pub fn ghz(n_sites: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::EmptyRegion);
        }
        let total = 1usize << n_sites;
        if total > MAX_TOTAL_DIM {
            return Err(Error::DimensionOverflow(total, MAX_TOTAL_DIM));
        }
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let mut amps = DVector::zeros(total);
        amps[0] = h;
        amps[total - 1] = h;
        QuantumState::new(amps, vec![2; n_sites])
    }

    /// Tensor product of a list of factors.
    pub fn product(factors: &[QuantumState]) -> Result<Self> {
        let mut it = factors.iter();
        let first = it.next().ok_or(Error::EmptyRegion)?.clone();
        it.try_fold(first, |acc, f| tensor(&acc, f))
    }

    pub fn amps(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn inner(&self, other: &QuantumState) -> C64 {
        self.amps.dotc(&other.amps)
    }

    /// Reshape the amplitudes into a `left x rest` matrix, rows indexed by
    /// the joint digits of `left_sites` (ascending), columns by the rest.
    pub fn split_matrix(&self, left_sites: &[usize]) -> Result<DMatrix<C64>> {
        check_sites(left_sites, self.n_sites())?;
        let (left_off, rest_off) = split_offsets(&self.dims, left_sites);
        let mut m = DMatrix::zeros(left_off.len(), rest_off.len());
        for (a, &la) in left_off.iter().enumerate() {
            for (c, &rc) in rest_off.iter().enumerate() {
                m[(a, c)] = self.amps[la + rc];
            }
        }
        Ok(m)
    }

    /// Schmidt coefficients (singular values) across the cut
    /// `left_sites | rest`.
    pub fn schmidt_coefficients(&self, left_sites: &[usize]) -> Result<Vec<f64>> {
        let m = self.split_matrix(left_sites)?;
        let svd = m.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(sv)
    }
}

fn check_sites(sites: &[usize], n_sites: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &s in sites {
        if s >= n_sites {
            return Err(Error::SiteOutOfRange { site: s, n_sites });
        }
        if !seen.insert(s) {
            return Err(Error::InvalidSiteSet(format!("duplicate site {s}")));
        }
    }
    Ok(())
}

/// Kronecker product of two states; dims are concatenated.
pub fn tensor(a: &QuantumState, b: &QuantumState) -> Result<QuantumState> {
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    let total = a.dim() * b.dim();
    if total > MAX_TOTAL_DIM {
        return Err(Error::DimensionOverflow(total, MAX_TOTAL_DIM));
    }
    let mut amps = DVector::zeros(total);
    for i in 0..a.dim() {
        for j in 0..b.dim() {
            amps[i * b.dim() + j] = a.amps[i] * b.amps[j];
        }
    }
    QuantumState::new(amps, dims)
}

/// Operator acting nontrivially on a subset of sites.
///
/// The matrix lives on the support subspace: its dimension is the product
/// of `site_dims`, which lists the dimensions of `support` in ascending
/// site order.
#[derive(Debug, Clone)]
pub struct LinearOp {
    pub matrix: DMatrix<C64>,
    pub site_dims: Vec<usize>,
    pub support: Vec<usize>,
}

impl LinearOp {
    pub fn new(matrix: DMatrix<C64>, site_dims: Vec<usize>, support: Vec<usize>) -> Result<Self> {
        let d: usize = site_dims.iter().product();
        if !matrix.is_square() || matrix.nrows() != d || site_dims.len() != support.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix {}x{} vs site dims {:?}",
                matrix.nrows(),
                matrix.ncols(),
                site_dims
            )));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSiteSet(
                "support must be strictly ascending".into(),
            ));
        }
        Ok(LinearOp {
            matrix,
            site_dims,
            support,
        })
    }

    /// Single-site operator.
    pub fn on_site(matrix: DMatrix<C64>, site: usize) -> Result<Self> {
        let d = matrix.nrows();
        LinearOp::new(matrix, vec![d], vec![site])
    }
}

/// Embed a local operator as `op (x) identity` on the full space, acting on
/// `target_support` with the standard big-endian site ordering.
///
/// Embeddings of operators with disjoint supports commute with exactly zero
/// commutator: off-support entries are exact zeros and ones, so the single
/// surviving term in each product entry is the same scalar product on both
/// sides.
pub fn embed_op(
    local: &DMatrix<C64>,
    target_support: &[usize],
    full_dims: &[usize],
) -> Result<DMatrix<C64>> {
    check_sites(target_support, full_dims.len())?;
    if target_support.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSiteSet(
            "target support must be strictly ascending".into(),
        ));
    }
    let m: usize = target_support.iter().map(|&s| full_dims[s]).product();
    if local.nrows() != m || local.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "local operator is {}x{}, support dims give {}",
            local.nrows(),
            local.ncols(),
            m
        )));
    }
    let total: usize = full_dims.iter().product();
    if total > MAX_TOTAL_DIM {
        return Err(Error::DimensionOverflow(total, MAX_TOTAL_DIM));
    }
    let (sup_off, rest_off) = split_offsets(full_dims, target_support);
    let mut full = DMatrix::zeros(total, total);
    for a in 0..m {
        for b in 0..m {
            let v = local[(a, b)];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            for &rc in &rest_off {
                full[(sup_off[a] + rc, sup_off[b] + rc)] = v;
            }
        }
    }
    Ok(full)
}

/// Apply a local operator to a state without materializing the embedding.
pub fn apply_local(
    local: &DMatrix<C64>,
    target_support: &[usize],
    psi: &DVector<C64>,
    full_dims: &[usize],
) -> Result<DVector<C64>> {
    check_sites(target_support, full_dims.len())?;
    let m: usize = target_support.iter().map(|&s| full_dims[s]).product();
    let total: usize = full_dims.iter().product();
    if local.nrows() != m || local.ncols() != m || psi.len() != total {
        return Err(Error::DimensionMismatch(format!(
            "local {}x{} on support {:?} of dims {:?}",
            local.nrows(),
            local.ncols(),
            target_support,
            full_dims
        )));
    }
    let (sup_off, rest_off) = split_offsets(full_dims, target_support);
    let mut out = DVector::zeros(psi.len());
    for (a, &oa) in sup_off.iter().enumerate() {
        for (b, &ob) in sup_off.iter().enumerate() {
            let v = local[(a, b)];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            for &rc in &rest_off {
                out[oa + rc] += v * psi[ob + rc];
            }
        }
    }
    Ok(out)
}

/// Partial trace of a pure state `|psi><psi|` onto `keep`.
///
/// The result is Hermitian and positive semidefinite by construction
/// (it is `A A^dagger` for the reshaped amplitude matrix `A`), with trace
/// equal to `||psi||^2`.
pub fn partial_trace(psi: &QuantumState, keep: &[usize]) -> Result<DMatrix<C64>> {
    if keep.is_empty() {
        return Err(Error::InvalidSiteSet("keep set is empty".into()));
    }
    let a = psi.split_matrix(keep)?;
    Ok(&a * a.adjoint())
}

/// Partial trace of an operator on the full space onto `keep`.
pub fn partial_trace_matrix(
    rho: &DMatrix<C64>,
    dims: &[usize],
    keep: &[usize],
) -> Result<DMatrix<C64>> {
    if keep.is_empty() {
        return Err(Error::InvalidSiteSet("keep set is empty".into()));
    }
    check_sites(keep, dims.len())?;
    let total: usize = dims.iter().product();
    if rho.nrows() != total || rho.ncols() != total {
        return Err(Error::DimensionMismatch(format!(
            "operator {}x{} vs dims {:?}",
            rho.nrows(),
            rho.ncols(),
            dims
        )));
    }
    let (keep_off, rest_off) = split_offsets(dims, keep);
    let mut out = DMatrix::zeros(keep_off.len(), keep_off.len());
    for (i, &ki) in keep_off.iter().enumerate() {
        for (j, &kj) in keep_off.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &rc in &rest_off {
                acc += rho[(ki + rc, kj + rc)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Cached Hermitian eigendecomposition, used for matrix exponentials.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn new(h: &DMatrix<C64>) -> Result<Self> {
        let dev = hermitian_deviation(h);
        if dev > HERM_TOL {
            return Err(Error::NotHermitian(dev));
        }
        let eig = h.clone().symmetric_eigen();
        Ok(HermitianEigen {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        })
    }

    /// `exp(-i H t) v`.
    pub fn evolve(&self, t: f64, v: &DVector<C64>) -> DVector<C64> {
        let coeffs = self.vectors.adjoint() * v;
        let phased = DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(self.values.iter())
                .map(|(c, &e)| c * C64::from_polar(1.0, -e * t)),
        );
        &self.vectors * phased
    }

    /// The full unitary `exp(-i H t)`.
    pub fn unitary(&self, t: f64) -> DMatrix<C64> {
        let mut phased = self.vectors.clone();
        for (j, mut col) in phased.column_iter_mut().enumerate() {
            let ph = C64::from_polar(1.0, -self.values[j] * t);
            for x in col.iter_mut() {
                *x *= ph;
            }
        }
        phased * self.vectors.adjoint()
    }

    /// Smallest gap between consecutive sorted eigenvalues.
    pub fn min_gap(&self) -> f64 {
        let mut v: Vec<f64> = self.values.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// `exp(-i H t) psi` via Hermitian eigendecomposition.
pub fn hermitian_evolve(h: &DMatrix<C64>, t: f64, psi: &QuantumState) -> Result<QuantumState> {
    if h.nrows() != psi.dim() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, state has dim {}",
            h.nrows(),
            h.ncols(),
            psi.dim()
        )));
    }
    let eig = HermitianEigen::new(h)?;
    let out = eig.evolve(t, psi.amps());
    QuantumState::from_unnormalized(out, psi.dims().to_vec())
}

/// Haar-distributed unit vector: i.i.d. complex Gaussian entries,
/// normalized. Deterministic given the generator state.
pub fn random_unit_vector(dim: usize, rng: &mut SplitMix64) -> Result<QuantumState> {
    if dim == 0 {
        return Err(Error::DimensionMismatch("dim = 0".into()));
    }
    let amps = DVector::from_iterator(dim, (0..dim).map(|_| rng.complex_gaussian()));
    QuantumState::from_unnormalized(amps, vec![dim])
}

/// Haar state over explicit site dimensions.
pub fn random_state(dims: &[usize], rng: &mut SplitMix64) -> Result<QuantumState> {
    let total: usize = dims.iter().product();
    let v = random_unit_vector(total, rng)?;
    QuantumState::new(v.amps().clone(), dims.to_vec())
}

/// Random rank-`rank` projector: the span of `rank` Haar vectors,
/// orthonormalized.
pub fn random_projector(dim: usize, rank: usize, rng: &mut SplitMix64) -> Result<DMatrix<C64>> {
    if rank > dim {
        return Err(Error::DimensionMismatch(format!(
            "rank {rank} exceeds dim {dim}"
        )));
    }
    if rank == 0 {
        return Ok(DMatrix::zeros(dim, dim));
    }
    let g = DMatrix::from_fn(dim, rank, |_, _| rng.complex_gaussian());
    let qr = g.qr();
    let q = qr.q();
    Ok(&q * q.adjoint())
}

/// Random unitary from the QR decomposition of a Gaussian matrix.
pub fn random_unitary(dim: usize, rng: &mut SplitMix64) -> DMatrix<C64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.complex_gaussian());
    g.qr().q()
}

/// Orthonormal basis for the span of the given columns, dropping directions
/// with weight below `tol` (modified Gram-Schmidt).
pub fn orthonormal_span(vectors: &[DVector<C64>], tol: f64) -> Vec<DVector<C64>> {
    let mut basis: Vec<DVector<C64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let c = b.dotc(&w);
            w -= b * c;
        }
        let n = w.norm();
        if n > tol {
            basis.push(w / C64::new(n, 0.0));
        }
    }
    basis
}

/// Projector onto the span of the given vectors.
pub fn span_projector(vectors: &[DVector<C64>], dim: usize, tol: f64) -> DMatrix<C64> {
    let basis = orthonormal_span(vectors, tol);
    let mut p = DMatrix::zeros(dim, dim);
    for b in &basis {
        p += b * b.adjoint();
    }
    p
}
