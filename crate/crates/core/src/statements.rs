//! Projection statements localized in spacetime, their logical
//! combinations, probabilities, visibility, and record-replacement bounds.
//!
//! A statement is an orthogonal projector together with the lattice region
//! where it is localized; the operator acts as identity away from the
//! region's spatial sites. Logical combinations are evaluated by writing
//! the expression with NOT and AND, expanding into the canonical sum over
//! truth assignments, and composing each term with later statements to the
//! left. Spacelike statements have disjoint supports, so their projectors
//! commute with exactly zero commutator and every logical combination is
//! again a projector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::linalg::{
    apply_local, embed_op, is_projector, span_projector, split_offsets, QuantumState, C64,
    PROJ_TOL,
};
use crate::rng::SplitMix64;
use crate::spacetime::{region_relation, CausalRelation, Region};

/// Residual floor: exact records would give infinite visibility, so
/// residuals below this floor report the capped value
/// `ln ||P psi|| - ln RESIDUAL_FLOOR`.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// Cap on the number of distinct leaves in a logical expression (the
/// canonical expansion has `2^n` terms).
pub const EXPANSION_CAP: usize = 16;

/// Mapping from site indices to spatial lattice coordinates.
///
/// The default chain puts site `i` at `x = i`; model geometries (e.g. the
/// star model) may place sites elsewhere on a single slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteMap {
    positions: Vec<i64>,
}

impl SiteMap {
    pub fn new(positions: Vec<i64>) -> Result<Self> {
        let distinct: BTreeSet<i64> = positions.iter().copied().collect();
        if distinct.len() != positions.len() {
            return Err(Error::InvalidSiteSet(
                "site positions must be distinct".into(),
            ));
        }
        Ok(SiteMap { positions })
    }

    /// Chain geometry: site `i` at `x = i`.
    pub fn chain(n_sites: usize) -> Self {
        SiteMap {
            positions: (0..n_sites as i64).collect(),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, site: usize) -> Result<i64> {
        self.positions
            .get(site)
            .copied()
            .ok_or(Error::SiteOutOfRange {
                site,
                n_sites: self.positions.len(),
            })
    }

    pub fn site_at(&self, x: i64) -> Option<usize> {
        self.positions.iter().position(|&p| p == x)
    }

    /// Sites for a region's spatial projection; errors if any coordinate
    /// has no site.
    pub fn sites_of(&self, region: &Region) -> Result<Vec<usize>> {
        let mut sites = BTreeSet::new();
        for x in region.spatial_sites() {
            let site = self
                .site_at(x)
                .ok_or_else(|| Error::InvalidSiteSet(format!("no site at x = {x}")))?;
            sites.insert(site);
        }
        Ok(sites.into_iter().collect())
    }

    /// Single-slice region covering the given sites at time `t`.
    pub fn region_of_sites(&self, sites: &[usize], t: i64) -> Result<Region> {
        let xs: Result<Vec<i64>> = sites.iter().map(|&s| self.position(s)).collect();
        Region::time_slice(xs?, t)
    }
}

impl Default for SiteMap {
    fn default() -> Self {
        SiteMap::chain(0)
    }
}

/// A projection operator localized in a spacetime region.
///
/// The operator is stored on its support (the spatial projection of the
/// region); [`ProjectionStatement::projector`] materializes the full-space
/// embedding.
#[derive(Debug, Clone)]
pub struct ProjectionStatement {
    label: String,
    local: DMatrix<C64>,
    support: Vec<usize>,
    region: Region,
    dims: Vec<usize>,
}

impl ProjectionStatement {
    /// Build a statement from a local projector acting on the spatial
    /// sites of `region` (in ascending site order).
    pub fn new(
        label: impl Into<String>,
        local: DMatrix<C64>,
        region: Region,
        dims: &[usize],
        site_map: &SiteMap,
    ) -> Result<Self> {
        let support = site_map.sites_of(&region)?;
        Self::with_support(label, local, support, region, dims)
    }

    /// Build a statement with an explicit support (already matching the
    /// region's spatial projection).
    pub fn with_support(
        label: impl Into<String>,
        local: DMatrix<C64>,
        support: Vec<usize>,
        region: Region,
        dims: &[usize],
    ) -> Result<Self> {
        if !is_projector(&local, PROJ_TOL) {
            let dev = crate::linalg::hermitian_deviation(&local)
                .max((&local * &local - &local).norm());
            return Err(Error::NotProjector(dev));
        }
        let d: usize = support.iter().map(|&s| dims[s]).product();
        if local.nrows() != d {
            return Err(Error::DimensionMismatch(format!(
                "local projector is {}x{}, support {:?} gives dim {}",
                local.nrows(),
                local.ncols(),
                support,
                d
            )));
        }
        Ok(ProjectionStatement {
            label: label.into(),
            local,
            support,
            region,
            dims: dims.to_vec(),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn local(&self) -> &DMatrix<C64> {
        &self.local
    }

    /// Full-space projector (`local (x) identity`).
    pub fn projector(&self) -> Result<DMatrix<C64>> {
        embed_op(&self.local, &self.support, &self.dims)
    }

    /// Apply the statement to a raw state vector.
    pub fn apply(&self, v: &DVector<C64>) -> Result<DVector<C64>> {
        apply_local(&self.local, &self.support, v, &self.dims)
    }

    /// Apply the complement `1 - P`.
    pub fn apply_complement(&self, v: &DVector<C64>) -> Result<DVector<C64>> {
        Ok(v - self.apply(v)?)
    }

    /// `prob(P) = ||P psi||^2`.
    pub fn prob(&self, psi: &QuantumState) -> Result<f64> {
        Ok(self.apply(psi.amps())?.norm_squared())
    }

    /// `not P`: the projector `1 - P`, localized in the same region.
    pub fn negate(&self) -> Self {
        let id = DMatrix::<C64>::identity(self.local.nrows(), self.local.ncols());
        ProjectionStatement {
            label: format!("!{}", self.label),
            local: id - &self.local,
            support: self.support.clone(),
            region: self.region.clone(),
            dims: self.dims.clone(),
        }
    }

    pub fn relabeled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dump(&self) -> Result<StatementDump> {
        let full = self.projector()?;
        let n = full.nrows();
        let mut projector = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let z = full[(r, c)];
                projector.push([z.re, z.im]);
            }
        }
        Ok(StatementDump {
            label: self.label.clone(),
            support: self.support.clone(),
            region: self.region.clone(),
            projector,
        })
    }
}

/// Serialized statement: the full-space projector as row-major re/im pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatementDump {
    pub label: String,
    pub support: Vec<usize>,
    pub region: Region,
    pub projector: Vec<[f64; 2]>,
}

impl StatementDump {
    /// Rebuild a statement, verifying that the matrix is a projector that
    /// acts as identity off the declared support.
    pub fn restore(&self, dims: &[usize]) -> Result<ProjectionStatement> {
        let total: usize = dims.iter().product();
        if self.projector.len() != total * total {
            return Err(Error::DimensionMismatch(format!(
                "dump has {} entries, space wants {}",
                self.projector.len(),
                total * total
            )));
        }
        let full = DMatrix::from_fn(total, total, |r, c| {
            let [re, im] = self.projector[r * total + c];
            C64::new(re, im)
        });
        let (sup_off, rest_off) = split_offsets(dims, &self.support);
        let m = sup_off.len();
        let mut local = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                local[(a, b)] = full[(sup_off[a] + rest_off[0], sup_off[b] + rest_off[0])];
            }
        }
        let stmt = ProjectionStatement::with_support(
            self.label.clone(),
            local,
            self.support.clone(),
            self.region.clone(),
            dims,
        )?;
        let rebuilt = stmt.projector()?;
        if (&rebuilt - &full).norm() > 1e-9 {
            return Err(Error::invalid(format!(
                "dumped operator for `{}` does not act as identity off support {:?}",
                self.label, self.support
            )));
        }
        Ok(stmt)
    }
}

/// Immutable collection of registered statements over one site space.
#[derive(Debug, Clone, Default)]
pub struct StatementRegistry {
    dims: Vec<usize>,
    site_map: SiteMap,
    statements: BTreeMap<String, ProjectionStatement>,
}

impl StatementRegistry {
    pub fn new(dims: Vec<usize>, site_map: SiteMap) -> Self {
        StatementRegistry {
            dims,
            site_map,
            statements: BTreeMap::new(),
        }
    }

    pub fn chain(dims: Vec<usize>) -> Self {
        let n = dims.len();
        StatementRegistry::new(dims, SiteMap::chain(n))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn site_map(&self) -> &SiteMap {
        &self.site_map
    }

    pub fn insert(&mut self, stmt: ProjectionStatement) -> Result<()> {
        if stmt.dims != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "statement dims {:?} vs registry dims {:?}",
                stmt.dims, self.dims
            )));
        }
        if self.statements.contains_key(stmt.label()) {
            return Err(Error::invalid(format!(
                "duplicate statement label `{}`",
                stmt.label()
            )));
        }
        self.statements.insert(stmt.label().to_string(), stmt);
        Ok(())
    }

    pub fn get(&self, label: &str) -> Result<&ProjectionStatement> {
        self.statements
            .get(label)
            .ok_or_else(|| Error::UnknownStatement(label.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.statements.keys().map(|s| s.as_str())
    }

    pub fn dump(&self) -> Result<Vec<StatementDump>> {
        self.statements.values().map(|s| s.dump()).collect()
    }
}

/// Logical expression over registered statement labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogicalExpr {
    Leaf(String),
    Not(Box<LogicalExpr>),
    And(Box<LogicalExpr>, Box<LogicalExpr>),
    Or(Box<LogicalExpr>, Box<LogicalExpr>),
}

impl LogicalExpr {
    pub fn leaf(label: impl Into<String>) -> Self {
        LogicalExpr::Leaf(label.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: LogicalExpr) -> Self {
        LogicalExpr::Not(Box::new(e))
    }

    pub fn and(a: LogicalExpr, b: LogicalExpr) -> Self {
        LogicalExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: LogicalExpr, b: LogicalExpr) -> Self {
        LogicalExpr::Or(Box::new(a), Box::new(b))
    }

    /// Distinct leaf labels in first-occurrence order.
    pub fn leaves(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<String>) {
        match self {
            LogicalExpr::Leaf(l) => {
                if !out.iter().any(|x| x == l) {
                    out.push(l.clone());
                }
            }
            LogicalExpr::Not(e) => e.collect_leaves(out),
            LogicalExpr::And(a, b) | LogicalExpr::Or(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }

    pub fn eval(&self, assignment: &BTreeMap<&str, bool>) -> bool {
        match self {
            LogicalExpr::Leaf(l) => assignment[l.as_str()],
            LogicalExpr::Not(e) => !e.eval(assignment),
            LogicalExpr::And(a, b) => a.eval(assignment) && b.eval(assignment),
            LogicalExpr::Or(a, b) => a.eval(assignment) || b.eval(assignment),
        }
    }
}

/// Truth table of `expr` over `leaf_order`: entry `mask` is the value when
/// leaf `k` is true iff bit `k` of `mask` is set.
fn truth_table(expr: &LogicalExpr, leaf_order: &[String]) -> Result<Vec<bool>> {
    let n = leaf_order.len();
    if n > EXPANSION_CAP {
        return Err(Error::ExpansionCap(n, EXPANSION_CAP));
    }
    let mut table = Vec::with_capacity(1usize << n);
    for mask in 0u32..(1u32 << n) {
        let assignment: BTreeMap<&str, bool> = leaf_order
            .iter()
            .enumerate()
            .map(|(k, l)| (l.as_str(), mask >> k & 1 == 1))
            .collect();
        table.push(expr.eval(&assignment));
    }
    Ok(table)
}

/// Statements sorted into composition order (latest first), with their
/// effective operators (Heisenberg-conjugated when dynamics are supplied).
struct OrderedLeaves<'a> {
    stmts: Vec<&'a ProjectionStatement>,
    effective: Vec<LeafOp>,
}

enum LeafOp {
    /// Apply via the statement's own local operator.
    Plain,
    /// Full-space Heisenberg-conjugated matrix.
    Conjugated(DMatrix<C64>),
}

fn order_leaves<'a>(
    stmts: Vec<&'a ProjectionStatement>,
    dynamics: Option<&dyn Dynamics>,
) -> Result<OrderedLeaves<'a>> {
    for i in 0..stmts.len() {
        for j in (i + 1)..stmts.len() {
            let rel = region_relation(stmts[i].region(), stmts[j].region());
            if rel == CausalRelation::Mixed {
                return Err(Error::NotTimeOrderable(format!(
                    "`{}` and `{}` are neither spacelike nor time-ordered",
                    stmts[i].label(),
                    stmts[j].label()
                )));
            }
        }
    }
    let mut ordered = stmts;
    // Later statements compose to the left. Strictly-future regions have
    // min time above the other's max time, so sorting by min time gives a
    // consistent total order; spacelike ties commute and are broken by
    // label for determinism.
    ordered.sort_by(|a, b| {
        b.region()
            .min_time()
            .cmp(&a.region().min_time())
            .then_with(|| a.label().cmp(b.label()))
    });
    let effective = ordered
        .iter()
        .map(|s| match dynamics {
            None => Ok(LeafOp::Plain),
            Some(dyn_) => {
                let t = s.region().single_time().ok_or_else(|| {
                    Error::invalid(format!(
                        "statement `{}` spans multiple times; Heisenberg evaluation \
                         needs a single slice",
                        s.label()
                    ))
                })?;
                Ok(LeafOp::Conjugated(dyn_.heisenberg(&s.projector()?, t)?))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OrderedLeaves {
        stmts: ordered,
        effective,
    })
}

impl OrderedLeaves<'_> {
    fn apply_leaf(&self, k: usize, v: &DVector<C64>) -> Result<DVector<C64>> {
        match &self.effective[k] {
            LeafOp::Plain => self.stmts[k].apply(v),
            LeafOp::Conjugated(m) => Ok(m * v),
        }
    }

    /// Apply the canonical-expansion term for `mask` (bit k set = leaf k
    /// asserted), composing earliest factors first.
    fn apply_term(&self, mask: u32, psi: &DVector<C64>) -> Result<DVector<C64>> {
        let mut v = psi.clone();
        for k in (0..self.stmts.len()).rev() {
            let pv = self.apply_leaf(k, &v)?;
            v = if mask >> k & 1 == 1 { pv } else { v - pv };
        }
        Ok(v)
    }

    fn leaf_matrix(&self, k: usize) -> Result<DMatrix<C64>> {
        match &self.effective[k] {
            LeafOp::Plain => self.stmts[k].projector(),
            LeafOp::Conjugated(m) => Ok(m.clone()),
        }
    }
}

/// Operator associated to a logical combination: the canonical expansion
/// with later statements composed to the left.
#[derive(Debug, Clone)]
pub struct ExprOperator {
    pub matrix: DMatrix<C64>,
    /// Leaves in composition order, latest first.
    pub ordered_leaves: Vec<String>,
    /// True when the leaves are pairwise spacelike, in which case the
    /// operator is itself a projector.
    pub all_spacelike: bool,
}

/// Materialize the operator of a logical expression.
pub fn expr_operator(
    registry: &StatementRegistry,
    expr: &LogicalExpr,
    dynamics: Option<&dyn Dynamics>,
) -> Result<ExprOperator> {
    let labels = expr.leaves();
    let stmts: Vec<&ProjectionStatement> = labels
        .iter()
        .map(|l| registry.get(l))
        .collect::<Result<_>>()?;
    let all_spacelike = stmts.iter().enumerate().all(|(i, a)| {
        stmts[i + 1..]
            .iter()
            .all(|b| region_relation(a.region(), b.region()) == CausalRelation::Spacelike)
    });
    let ordered = order_leaves(stmts, dynamics)?;
    let ordered_labels: Vec<String> = ordered
        .stmts
        .iter()
        .map(|s| s.label().to_string())
        .collect();
    let table = truth_table(expr, &ordered_labels)?;
    let total: usize = registry.dims().iter().product();
    let mut matrix = DMatrix::<C64>::zeros(total, total);
    let n = ordered_labels.len();
    for (mask, &value) in table.iter().enumerate() {
        if !value {
            continue;
        }
        let mut term = DMatrix::<C64>::identity(total, total);
        for k in 0..n {
            let p = ordered.leaf_matrix(k)?;
            let factor = if mask >> k & 1 == 1 {
                p
            } else {
                DMatrix::identity(total, total) - p
            };
            term *= factor;
        }
        matrix += term;
    }
    Ok(ExprOperator {
        matrix,
        ordered_leaves: ordered_labels,
        all_spacelike,
    })
}

/// Apply the expression operator to a state without materializing it.
pub fn apply_expr(
    registry: &StatementRegistry,
    expr: &LogicalExpr,
    psi: &QuantumState,
    dynamics: Option<&dyn Dynamics>,
) -> Result<DVector<C64>> {
    let labels = expr.leaves();
    let stmts: Vec<&ProjectionStatement> = labels
        .iter()
        .map(|l| registry.get(l))
        .collect::<Result<_>>()?;
    let ordered = order_leaves(stmts, dynamics)?;
    let ordered_labels: Vec<String> = ordered
        .stmts
        .iter()
        .map(|s| s.label().to_string())
        .collect();
    let table = truth_table(expr, &ordered_labels)?;
    let mut out = DVector::zeros(psi.dim());
    for (mask, &value) in table.iter().enumerate() {
        if value {
            out += ordered.apply_term(mask as u32, psi.amps())?;
        }
    }
    Ok(out)
}

/// `prob(E) = ||E psi||^2`.
pub fn prob(
    registry: &StatementRegistry,
    expr: &LogicalExpr,
    psi: &QuantumState,
    dynamics: Option<&dyn Dynamics>,
) -> Result<f64> {
    Ok(apply_expr(registry, expr, psi, dynamics)?.norm_squared())
}

/// `prob(E | Q) = ||E and Q psi||^2 / ||Q psi||^2`.
pub fn cond_prob(
    registry: &StatementRegistry,
    expr: &LogicalExpr,
    given: &LogicalExpr,
    psi: &QuantumState,
    dynamics: Option<&dyn Dynamics>,
) -> Result<f64> {
    let denom = prob(registry, given, psi, dynamics)?;
    if denom <= 1e-14 {
        return Err(Error::NullConditioning(denom));
    }
    let joint = prob(
        registry,
        &LogicalExpr::and(expr.clone(), given.clone()),
        psi,
        dynamics,
    )?;
    Ok(joint / denom)
}

/// Result of conjoining two statements.
pub enum Conjunction {
    /// Spacelike case: a genuine projection statement on the union region.
    Statement(ProjectionStatement),
    /// Time-ordered case: the composition with the later factor on the
    /// left, which need not be a projector.
    Ordered(OrderedOperator),
}

/// Time-ordered composition of projection statements.
#[derive(Debug, Clone)]
pub struct OrderedOperator {
    pub matrix: DMatrix<C64>,
    /// Factor labels, later first.
    pub factors: Vec<String>,
    pub region: Region,
    pub is_projector: bool,
}

/// `P and Q`: spacelike statements compose into a statement on the union
/// region; time-ordered pairs compose later-left into an operator. Mixed
/// relations are not time-orderable and are rejected.
pub fn conjoin(p: &ProjectionStatement, q: &ProjectionStatement) -> Result<Conjunction> {
    match region_relation(p.region(), q.region()) {
        CausalRelation::Spacelike => {
            let union_support: Vec<usize> = p
                .support
                .iter()
                .chain(q.support.iter())
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if union_support.len() != p.support.len() + q.support.len() {
                return Err(Error::InvalidSiteSet(format!(
                    "spacelike statements `{}`, `{}` share support sites",
                    p.label(),
                    q.label()
                )));
            }
            let union_dims: Vec<usize> = union_support.iter().map(|&s| p.dims[s]).collect();
            let pos_in_union = |sup: &[usize]| -> Vec<usize> {
                sup.iter()
                    .map(|s| union_support.iter().position(|u| u == s).unwrap())
                    .collect()
            };
            let pe = embed_op(&p.local, &pos_in_union(&p.support), &union_dims)?;
            let qe = embed_op(&q.local, &pos_in_union(&q.support), &union_dims)?;
            let local = pe * qe;
            ProjectionStatement::with_support(
                format!("({}&{})", p.label(), q.label()),
                local,
                union_support,
                p.region().union(q.region()),
                &p.dims,
            )
            .map(Conjunction::Statement)
        }
        CausalRelation::StrictlyFuture | CausalRelation::StrictlyPast => {
            let (later, earlier) =
                if region_relation(p.region(), q.region()) == CausalRelation::StrictlyFuture {
                    (p, q)
                } else {
                    (q, p)
                };
            let matrix = later.projector()? * earlier.projector()?;
            let is_proj = is_projector(&matrix, PROJ_TOL);
            Ok(Conjunction::Ordered(OrderedOperator {
                matrix,
                factors: vec![later.label().to_string(), earlier.label().to_string()],
                region: p.region().union(q.region()),
                is_projector: is_proj,
            }))
        }
        CausalRelation::Mixed => Err(Error::NotTimeOrderable(format!(
            "`{}` and `{}` have mixed causal relation",
            p.label(),
            q.label()
        ))),
    }
}

/// Certified lower bound on the visibility of a statement in a region.
#[derive(Debug, Clone)]
pub struct VisibilityBound {
    /// `ln ||P psi|| - ln residual`, in nats (capped when the residual is
    /// below [`RESIDUAL_FLOOR`]).
    pub lower_bound: f64,
    pub residual: f64,
    pub capped: bool,
    pub p_psi_norm: f64,
    /// Best candidate found, as a local projector on `certificate_sites`.
    pub certificate: DMatrix<C64>,
    pub certificate_sites: Vec<usize>,
}

/// Candidate constructions for the visibility search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisibilityMethod {
    /// Spectral projectors of the reduced operator of `|P psi><P psi|`.
    Spectral,
    /// Span of left Schmidt vectors above a weight threshold.
    Schmidt,
    /// Exhaustive Bloch-sphere grid (single-qubit regions only).
    BlochGrid,
    /// All of the above.
    #[default]
    All,
}

/// Certified lower bound on `Vis_U(P)` from explicit candidate records in
/// `u`. Returns 0 with a zero certificate when `P psi = 0`.
pub fn visibility_lower_bound(
    p: &ProjectionStatement,
    u: &Region,
    psi: &QuantumState,
    site_map: &SiteMap,
    method: VisibilityMethod,
) -> Result<VisibilityBound> {
    if u.single_time().is_none() {
        return Err(Error::invalid(
            "visibility region must lie on a single time slice".to_string(),
        ));
    }
    let u_sites = site_map.sites_of(u)?;
    let dims = psi.dims();
    let d_u: usize = u_sites.iter().map(|&s| dims[s]).product();
    let target = p.apply(psi.amps())?;
    let p_norm = target.norm();
    if p_norm < 1e-14 {
        return Ok(VisibilityBound {
            lower_bound: 0.0,
            residual: 0.0,
            capped: false,
            p_psi_norm: p_norm,
            certificate: DMatrix::zeros(d_u, d_u),
            certificate_sites: u_sites,
        });
    }

    let mut candidates: Vec<DMatrix<C64>> =
        vec![DMatrix::zeros(d_u, d_u), DMatrix::identity(d_u, d_u)];

    let spectral = matches!(method, VisibilityMethod::Spectral | VisibilityMethod::All);
    let schmidt = matches!(method, VisibilityMethod::Schmidt | VisibilityMethod::All);
    let grid = matches!(method, VisibilityMethod::BlochGrid | VisibilityMethod::All);

    if spectral || schmidt {
        // Reshape P psi across the cut u_sites | rest.
        let (u_off, rest_off) = split_offsets(dims, &u_sites);
        let mut a = DMatrix::<C64>::zeros(u_off.len(), rest_off.len());
        for (i, &ui) in u_off.iter().enumerate() {
            for (j, &rj) in rest_off.iter().enumerate() {
                a[(i, j)] = target[ui + rj];
            }
        }
        if spectral {
            let rho_u = &a * a.adjoint();
            let eig = rho_u.symmetric_eigen();
            let mut order: Vec<usize> = (0..d_u).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
            for k in 1..=d_u {
                let vecs: Vec<DVector<C64>> = order[..k]
                    .iter()
                    .filter(|&&i| eig.eigenvalues[i] > 1e-15)
                    .map(|&i| eig.eigenvectors.column(i).into_owned())
                    .collect();
                if vecs.is_empty() {
                    continue;
                }
                candidates.push(span_projector(&vecs, d_u, 1e-12));
            }
        }
        if schmidt {
            let svd = a.svd(true, false);
            let u_mat = svd.u.as_ref().unwrap();
            let total_w: f64 = svd.singular_values.iter().map(|s| s * s).sum();
            for frac in [1e-1, 1e-2, 1e-4, 1e-8] {
                let thresh = total_w * frac;
                let vecs: Vec<DVector<C64>> = svd
                    .singular_values
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| *s * *s > thresh)
                    .map(|(i, _)| u_mat.column(i).into_owned())
                    .collect();
                if !vecs.is_empty() {
                    candidates.push(span_projector(&vecs, d_u, 1e-12));
                }
            }
        }
    }

    if grid && d_u == 2 {
        let steps = 100;
        for it in 0..steps {
            let theta = std::f64::consts::PI * (it as f64 + 0.5) / steps as f64;
            for ip in 0..steps {
                let phi = 2.0 * std::f64::consts::PI * ip as f64 / steps as f64;
                let v = DVector::from_vec(vec![
                    C64::new((theta / 2.0).cos(), 0.0),
                    C64::from_polar((theta / 2.0).sin(), phi),
                ]);
                candidates.push(&v * v.adjoint());
            }
        }
    }

    let mut best: Option<(f64, DMatrix<C64>)> = None;
    for cand in candidates {
        let cv = apply_local(&cand, &u_sites, psi.amps(), dims)?;
        let residual = (&target - cv).norm();
        if best.as_ref().map_or(true, |(r, _)| residual < *r) {
            best = Some((residual, cand));
        }
    }
    let (residual, certificate) = best.unwrap();
    let capped = residual < RESIDUAL_FLOOR;
    let lower_bound = p_norm.ln() - residual.max(RESIDUAL_FLOOR).ln();
    Ok(VisibilityBound {
        lower_bound,
        residual,
        capped,
        p_psi_norm: p_norm,
        certificate,
        certificate_sites: u_sites,
    })
}

/// Numerical check of the record-replacement bound for one expression.
#[derive(Debug, Clone, Serialize)]
pub struct ReplacementReport {
    /// `eps_i = ||(P_i - P'_i) psi||`.
    pub epsilons: Vec<f64>,
    /// Number of canonical-expansion terms each statement occurs in.
    pub multiplicities: Vec<u64>,
    /// `||(E - E') psi||`.
    pub observed_error: f64,
    /// `sum_i m_i eps_i`.
    pub bound_sharp: f64,
    /// `2^n sum_i eps_i`.
    pub bound_coarse: f64,
    /// Per-statement `(lhs, rhs)` for the alternate "robust evidence"
    /// hypothesis: `lhs = ||(P_j - P'_j) prod_{k>j} P'_k psi||`,
    /// `rhs = eps_j ||prod_{k>j} P'_k psi||`. Reported, not asserted.
    pub conditional_errors: Vec<(f64, f64)>,
    pub sharp_bound_holds: bool,
    pub coarse_dominates_sharp: bool,
}

/// Evaluate the replacement bound for statements listed latest-first
/// (index 0 is the latest, matching the composition order).
///
/// Structural hypotheses are checked and violations rejected: for `i < j`,
/// `P_j` must be in the past of `P_i` or spacelike to it, and `P'_j` must
/// be spacelike to both `P_i` and `P'_i`.
pub fn replacement_bound_report(
    originals: &[ProjectionStatement],
    replacements: &[ProjectionStatement],
    psi: &QuantumState,
    expr: &LogicalExpr,
) -> Result<ReplacementReport> {
    let n = originals.len();
    if replacements.len() != n || n == 0 {
        return Err(Error::invalid(
            "originals and replacements must be nonempty and of equal length".to_string(),
        ));
    }
    if n > EXPANSION_CAP {
        return Err(Error::ExpansionCap(n, EXPANSION_CAP));
    }
    let mut violations = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let rel = region_relation(originals[i].region(), originals[j].region());
            if !matches!(
                rel,
                CausalRelation::StrictlyFuture | CausalRelation::Spacelike
            ) {
                violations.push(format!(
                    "P[{i}] must be later than or spacelike to P[{j}], got {rel:?}"
                ));
            }
            for (other, name) in [(&originals[i], "P"), (&replacements[i], "P'")] {
                let rel = region_relation(replacements[j].region(), other.region());
                if rel != CausalRelation::Spacelike {
                    violations.push(format!(
                        "P'[{j}] must be spacelike to {name}[{i}], got {rel:?}"
                    ));
                }
            }
        }
    }
    if !violations.is_empty() {
        return Err(Error::StructuralViolation(violations.join("; ")));
    }

    let labels: Vec<String> = originals.iter().map(|s| s.label().to_string()).collect();
    let expr_leaves = expr.leaves();
    for leaf in &expr_leaves {
        if !labels.contains(leaf) {
            return Err(Error::UnknownStatement(leaf.clone()));
        }
    }
    for label in &labels {
        if !expr_leaves.contains(label) {
            return Err(Error::invalid(format!(
                "statement `{label}` does not occur in the expression"
            )));
        }
    }

    let epsilons: Vec<f64> = originals
        .iter()
        .zip(replacements)
        .map(|(p, q)| Ok((p.apply(psi.amps())? - q.apply(psi.amps())?).norm()))
        .collect::<Result<_>>()?;

    let table = truth_table(expr, &labels)?;
    let n_sat = table.iter().filter(|&&v| v).count() as u64;
    let multiplicities = vec![n_sat; n];

    let apply_side = |stmts: &[ProjectionStatement]| -> Result<DVector<C64>> {
        let mut out = DVector::zeros(psi.dim());
        for (mask, &value) in table.iter().enumerate() {
            if !value {
                continue;
            }
            let mut v = psi.amps().clone();
            for k in (0..n).rev() {
                let pv = stmts[k].apply(&v)?;
                v = if mask >> k & 1 == 1 { pv } else { v - pv };
            }
            out += v;
        }
        Ok(out)
    };
    let e_psi = apply_side(originals)?;
    let e_prime_psi = apply_side(replacements)?;
    let observed_error = (e_psi - e_prime_psi).norm();

    let bound_sharp: f64 = multiplicities
        .iter()
        .zip(&epsilons)
        .map(|(&m, &e)| m as f64 * e)
        .sum();
    let sum_eps: f64 = epsilons.iter().sum();
    let bound_coarse = (1u64 << n) as f64 * sum_eps;

    let mut conditional_errors = Vec::with_capacity(n);
    for j in 0..n {
        let mut tail = psi.amps().clone();
        for k in ((j + 1)..n).rev() {
            tail = replacements[k].apply(&tail)?;
        }
        let lhs = (originals[j].apply(&tail)? - replacements[j].apply(&tail)?).norm();
        conditional_errors.push((lhs, epsilons[j] * tail.norm()));
    }

    Ok(ReplacementReport {
        sharp_bound_holds: observed_error <= bound_sharp + 1e-9,
        coarse_dominates_sharp: bound_sharp <= bound_coarse + 1e-9,
        epsilons,
        multiplicities,
        observed_error,
        bound_sharp,
        bound_coarse,
        conditional_errors,
    })
}

/// Record-swap permutation check (ordered and permuted product bounds).
#[derive(Debug, Clone, Serialize)]
pub struct PermutationReport {
    pub epsilons: Vec<f64>,
    pub sum_eps: f64,
    /// `||(P_1...P_n - P'_1...P'_n) psi||`.
    pub ordered_error: f64,
    /// Worst `||(prod P_sigma - prod P) psi||` over checked permutations.
    pub max_permuted_error: f64,
    /// Worst `||prod P_sigma psi - prod P' psi||` over permutations.
    pub max_vs_replacement: f64,
    pub permutations_checked: usize,
    pub exhaustive: bool,
    pub ordered_bound_holds: bool,
    pub permuted_bound_holds: bool,
}

fn apply_product(stmts: &[&ProjectionStatement], psi: &DVector<C64>) -> Result<DVector<C64>> {
    let mut v = psi.clone();
    for s in stmts.iter().rev() {
        v = s.apply(&v)?;
    }
    Ok(v)
}

fn permutations_of(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let smaller = permutations_of(n - 1);
    let mut out = Vec::new();
    for perm in smaller {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Verify the ordered bound `sum eps_i` and the permuted bound
/// `2 sum eps_i`. All permutations are checked for `n <= 5`; larger `n`
/// samples `max_samples` permutations from `rng`.
pub fn record_permutation_check(
    originals: &[ProjectionStatement],
    replacements: &[ProjectionStatement],
    psi: &QuantumState,
    rng: &mut SplitMix64,
    max_samples: usize,
) -> Result<PermutationReport> {
    let n = originals.len();
    if replacements.len() != n || n == 0 {
        return Err(Error::invalid(
            "originals and replacements must be nonempty and of equal length".to_string(),
        ));
    }
    let mut violations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for (other, name) in [(&originals[j], "P"), (&replacements[j], "P'")] {
                let rel = region_relation(replacements[i].region(), other.region());
                if rel != CausalRelation::Spacelike {
                    violations.push(format!(
                        "P'[{i}] must be spacelike to {name}[{j}], got {rel:?}"
                    ));
                }
            }
        }
    }
    if !violations.is_empty() {
        return Err(Error::StructuralViolation(violations.join("; ")));
    }

    let epsilons: Vec<f64> = originals
        .iter()
        .zip(replacements)
        .map(|(p, q)| Ok((p.apply(psi.amps())? - q.apply(psi.amps())?).norm()))
        .collect::<Result<_>>()?;
    let sum_eps: f64 = epsilons.iter().sum();

    let orig_refs: Vec<&ProjectionStatement> = originals.iter().collect();
    let repl_refs: Vec<&ProjectionStatement> = replacements.iter().collect();
    let base = apply_product(&orig_refs, psi.amps())?;
    let primed = apply_product(&repl_refs, psi.amps())?;
    let ordered_error = (&base - &primed).norm();

    let (perms, exhaustive) = if n <= 5 {
        (permutations_of(n), true)
    } else {
        let mut sampled = Vec::with_capacity(max_samples);
        for _ in 0..max_samples {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.next_range(i + 1);
                p.swap(i, j);
            }
            sampled.push(p);
        }
        (sampled, false)
    };

    let mut max_permuted_error: f64 = 0.0;
    let mut max_vs_replacement: f64 = 0.0;
    for perm in &perms {
        let stmts: Vec<&ProjectionStatement> = perm.iter().map(|&i| orig_refs[i]).collect();
        let permuted = apply_product(&stmts, psi.amps())?;
        max_permuted_error = max_permuted_error.max((&permuted - &base).norm());
        max_vs_replacement = max_vs_replacement.max((&permuted - &primed).norm());
    }

    Ok(PermutationReport {
        sum_eps,
        ordered_error,
        ordered_bound_holds: ordered_error <= sum_eps + 1e-9,
        permuted_bound_holds: max_permuted_error <= 2.0 * sum_eps + 1e-9,
        max_permuted_error,
        max_vs_replacement,
        permutations_checked: perms.len(),
        exhaustive,
        epsilons,
    })
}

/// Visibility profile of a statement over a family of future regions.
#[derive(Debug, Clone)]
pub struct ClassicalityProfile {
    pub bounds: Vec<VisibilityBound>,
    /// Minimum visibility lower bound over the regions.
    pub score: f64,
    pub median: f64,
    /// Geometry warnings (regions not pairwise spacelike, or not strictly
    /// in the statement's future). Violations are flagged, not rejected.
    pub flags: Vec<String>,
}

/// Per-region visibility lower bounds for spatially separated regions in
/// the causal future of `p`.
pub fn classicality_profile(
    p: &ProjectionStatement,
    regions: &[Region],
    psi: &QuantumState,
    site_map: &SiteMap,
    method: VisibilityMethod,
) -> Result<ClassicalityProfile> {
    let mut flags = Vec::new();
    for (i, a) in regions.iter().enumerate() {
        if region_relation(a, p.region()) != CausalRelation::StrictlyFuture {
            flags.push(format!(
                "region {i} is not strictly future of `{}`",
                p.label()
            ));
        }
        for (j, b) in regions.iter().enumerate().skip(i + 1) {
            if region_relation(a, b) != CausalRelation::Spacelike {
                flags.push(format!("regions {i} and {j} are not spacelike"));
            }
        }
    }
    let bounds: Vec<VisibilityBound> = regions
        .iter()
        .map(|u| visibility_lower_bound(p, u, psi, site_map, method))
        .collect::<Result<_>>()?;
    let mut sorted: Vec<f64> = bounds.iter().map(|b| b.lower_bound).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let score = sorted.first().copied().unwrap_or(0.0);
    let median = if sorted.is_empty() {
        0.0
    } else {
        sorted[sorted.len() / 2]
    };
    Ok(ClassicalityProfile {
        bounds,
        score,
        median,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_projector, random_state, tensor};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn ket0_proj() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)])
    }

    fn ket1_proj() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.)])
    }

    fn plus_proj() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0.5, 0.), c(0.5, 0.), c(0.5, 0.)])
    }

    fn stmt_at(
        label: &str,
        local: DMatrix<C64>,
        site: usize,
        t: i64,
        dims: &[usize],
    ) -> ProjectionStatement {
        let map = SiteMap::chain(dims.len());
        let region = Region::point(site as i64, t);
        ProjectionStatement::new(label, local, region, dims, &map).unwrap()
    }

    #[test]
    fn negate_identity_gives_zero_projector() {
        let dims = [2usize, 2];
        let id = DMatrix::<C64>::identity(2, 2);
        let s = stmt_at("one", id, 0, 0, &dims);
        let neg = s.negate();
        assert!(neg.local().iter().all(|z| z.re == 0.0 && z.im == 0.0));
        assert_eq!(neg.region(), s.region());
    }

    #[test]
    fn double_negation_is_involution() {
        let dims = [2usize, 2];
        let s = stmt_at("p", plus_proj(), 0, 0, &dims);
        let back = s.negate().negate();
        // Entries of this projector are exactly representable halves.
        assert_eq!(back.local(), s.local());
    }

    #[test]
    fn prob_and_complement_sum_to_one() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..20 {
            let dims = [2usize, 2, 2];
            let psi = random_state(&dims, &mut rng).unwrap();
            let p = random_projector(2, 1, &mut rng).unwrap();
            let s = stmt_at("p", p, 1, 0, &dims);
            let total = s.prob(&psi).unwrap() + s.negate().prob(&psi).unwrap();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn conjoin_spacelike_z_projectors_on_plus_plus() {
        let dims = [2usize, 2];
        let psi = tensor(&QuantumState::plus(), &QuantumState::plus()).unwrap();
        let p = stmt_at("p", ket0_proj(), 0, 0, &dims);
        let q = stmt_at("q", ket0_proj(), 1, 0, &dims);
        match conjoin(&p, &q).unwrap() {
            Conjunction::Statement(s) => {
                assert_abs_diff_eq!(s.prob(&psi).unwrap(), 0.25, epsilon = 1e-12);
            }
            Conjunction::Ordered(_) => panic!("spacelike pair must give a statement"),
        }
    }

    #[test]
    fn conjoin_with_identity_is_original() {
        let dims = [2usize, 2];
        let p = stmt_at("p", plus_proj(), 0, 0, &dims);
        let one = stmt_at("one", DMatrix::identity(2, 2), 1, 0, &dims);
        match conjoin(&p, &one).unwrap() {
            Conjunction::Statement(s) => {
                assert_eq!(s.projector().unwrap(), p.projector().unwrap());
            }
            Conjunction::Ordered(_) => panic!("expected statement"),
        }
    }

    #[test]
    fn conjoin_time_ordered_is_order_sensitive() {
        // P = |0><0| later, Q = |+><+| earlier, psi = |0>:
        // ||PQ psi||^2 = 1/4 while the reversed reading gives 1/2.
        let dims = [2usize];
        let psi = QuantumState::basis(&dims, &[0]).unwrap();
        let p = stmt_at("p", ket0_proj(), 0, 1, &dims);
        let q = stmt_at("q", plus_proj(), 0, 0, &dims);
        match conjoin(&p, &q).unwrap() {
            Conjunction::Ordered(op) => {
                assert!(!op.is_projector);
                assert_eq!(op.factors, vec!["p".to_string(), "q".to_string()]);
                let v = &op.matrix * psi.amps();
                assert_abs_diff_eq!(v.norm_squared(), 0.25, epsilon = 1e-12);
            }
            Conjunction::Statement(_) => panic!("time-ordered pair must give an operator"),
        }
        // Reversed order: Q later.
        let p_early = stmt_at("p", ket0_proj(), 0, 0, &dims);
        let q_late = stmt_at("q", plus_proj(), 0, 1, &dims);
        match conjoin(&p_early, &q_late).unwrap() {
            Conjunction::Ordered(op) => {
                let v = &op.matrix * psi.amps();
                assert_abs_diff_eq!(v.norm_squared(), 0.5, epsilon = 1e-12);
            }
            Conjunction::Statement(_) => panic!(),
        }
    }

    #[test]
    fn conjoin_rejects_mixed_regions() {
        let dims = [2usize, 2];
        let map = SiteMap::chain(2);
        let p = ProjectionStatement::new(
            "p",
            ket0_proj(),
            Region::point(0, 2),
            &dims,
            &map,
        )
        .unwrap();
        // Region with one point in p's past cone and one spacelike to it.
        let q = ProjectionStatement::new(
            "q",
            DMatrix::identity(2, 2),
            Region::new([
                crate::spacetime::LatticePoint::new(1, 0),
                crate::spacetime::LatticePoint::new(1, 3),
            ])
            .unwrap(),
            &dims,
            &map,
        )
        .unwrap();
        assert!(matches!(
            conjoin(&p, &q),
            Err(Error::NotTimeOrderable(_))
        ));
    }

    fn registry_with(dims: &[usize], stmts: Vec<ProjectionStatement>) -> StatementRegistry {
        let mut reg = StatementRegistry::chain(dims.to_vec());
        for s in stmts {
            reg.insert(s).unwrap();
        }
        reg
    }

    #[test]
    fn expr_operator_or_is_inclusion_exclusion() {
        let dims = [2usize, 2];
        let p = stmt_at("p", plus_proj(), 0, 0, &dims);
        let q = stmt_at("q", ket0_proj(), 1, 0, &dims);
        let pm = p.projector().unwrap();
        let qm = q.projector().unwrap();
        let reg = registry_with(&dims, vec![p, q]);
        let or = expr_operator(
            &reg,
            &LogicalExpr::or(LogicalExpr::leaf("p"), LogicalExpr::leaf("q")),
            None,
        )
        .unwrap();
        let expect = &pm + &qm - &pm * &qm;
        assert!((or.matrix.clone() - expect).norm() < 1e-12);
        assert!(or.all_spacelike);
        assert!(is_projector(&or.matrix, 1e-10));
    }

    #[test]
    fn expr_operator_single_leaf_is_projector() {
        let dims = [2usize, 2];
        let p = stmt_at("p", plus_proj(), 0, 0, &dims);
        let pm = p.projector().unwrap();
        let reg = registry_with(&dims, vec![p]);
        let op = expr_operator(&reg, &LogicalExpr::leaf("p"), None).unwrap();
        assert_eq!(op.matrix, pm);
    }

    #[test]
    fn de_morgan_holds_at_matrix_level() {
        let mut rng = SplitMix64::new(6);
        let dims = [2usize, 2, 2];
        let p = stmt_at("p", random_projector(2, 1, &mut rng).unwrap(), 0, 0, &dims);
        let q = stmt_at("q", random_projector(2, 1, &mut rng).unwrap(), 2, 0, &dims);
        let reg = registry_with(&dims, vec![p, q]);
        let or = expr_operator(
            &reg,
            &LogicalExpr::or(LogicalExpr::leaf("p"), LogicalExpr::leaf("q")),
            None,
        )
        .unwrap();
        let demorgan = expr_operator(
            &reg,
            &LogicalExpr::not(LogicalExpr::and(
                LogicalExpr::not(LogicalExpr::leaf("p")),
                LogicalExpr::not(LogicalExpr::leaf("q")),
            )),
            None,
        )
        .unwrap();
        assert!((or.matrix - demorgan.matrix).norm() < 1e-12);
    }

    #[test]
    fn prob_examples() {
        let dims = [2usize, 2];
        let ghz = QuantumState::ghz(2).unwrap();
        let one = stmt_at("one", DMatrix::identity(2, 2), 0, 0, &dims);
        let p0 = stmt_at("p0", ket0_proj(), 0, 0, &dims);
        let reg = registry_with(&dims, vec![one, p0]);
        assert_abs_diff_eq!(
            prob(&reg, &LogicalExpr::leaf("one"), &ghz, None).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            prob(&reg, &LogicalExpr::leaf("p0"), &ghz, None).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn prob_is_additive_over_spacelike_complements() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..20 {
            let dims = [2usize, 2, 2];
            let psi = random_state(&dims, &mut rng).unwrap();
            let p = stmt_at("p", random_projector(2, 1, &mut rng).unwrap(), 0, 0, &dims);
            let q = stmt_at("q", random_projector(2, 1, &mut rng).unwrap(), 2, 0, &dims);
            let reg = registry_with(&dims, vec![p, q]);
            let ep = LogicalExpr::leaf("p");
            let eq = LogicalExpr::leaf("q");
            let joint = prob(&reg, &LogicalExpr::and(eq.clone(), ep.clone()), &psi, None)
                .unwrap();
            let joint_not = prob(
                &reg,
                &LogicalExpr::and(eq.clone(), LogicalExpr::not(ep.clone())),
                &psi,
                None,
            )
            .unwrap();
            let total = prob(&reg, &eq, &psi, None).unwrap();
            assert_abs_diff_eq!(joint + joint_not, total, epsilon = 1e-12);
        }
    }

    #[test]
    fn cond_prob_examples() {
        let dims = [2usize, 2];
        let ghz = QuantumState::ghz(2).unwrap();
        // The identity statement sits on site 1, spacelike to p0.
        let one = stmt_at("one", DMatrix::identity(2, 2), 1, 0, &dims);
        let p0 = stmt_at("p0", ket0_proj(), 0, 0, &dims);
        let q1 = stmt_at("q1", ket0_proj(), 1, 0, &dims);
        let reg = registry_with(&dims, vec![one, p0, q1]);
        // Conditioning on the identity is unconditional probability.
        assert_abs_diff_eq!(
            cond_prob(
                &reg,
                &LogicalExpr::leaf("p0"),
                &LogicalExpr::leaf("one"),
                &ghz,
                None
            )
            .unwrap(),
            prob(&reg, &LogicalExpr::leaf("p0"), &ghz, None).unwrap(),
            epsilon = 1e-12
        );
        // Perfect correlation on the entangled pair.
        assert_abs_diff_eq!(
            cond_prob(
                &reg,
                &LogicalExpr::leaf("p0"),
                &LogicalExpr::leaf("q1"),
                &ghz,
                None
            )
            .unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // Independence on a product state.
        let prod = tensor(&QuantumState::plus(), &QuantumState::plus()).unwrap();
        assert_abs_diff_eq!(
            cond_prob(
                &reg,
                &LogicalExpr::leaf("p0"),
                &LogicalExpr::leaf("q1"),
                &prod,
                None
            )
            .unwrap(),
            prob(&reg, &LogicalExpr::leaf("p0"), &prod, None).unwrap(),
            epsilon = 1e-12
        );
        // Conditioning on a null statement is an error.
        let zero = stmt_at("zero", DMatrix::zeros(2, 2), 1, 0, &dims);
        let mut reg2 = StatementRegistry::chain(dims.to_vec());
        reg2.insert(stmt_at("p0", ket0_proj(), 0, 0, &dims)).unwrap();
        reg2.insert(zero).unwrap();
        assert!(matches!(
            cond_prob(
                &reg2,
                &LogicalExpr::leaf("p0"),
                &LogicalExpr::leaf("zero"),
                &ghz,
                None
            ),
            Err(Error::NullConditioning(_))
        ));
    }

    #[test]
    fn visibility_perfect_record_is_capped() {
        let dims = [2usize, 2];
        let ghz = QuantumState::ghz(2).unwrap();
        let map = SiteMap::chain(2);
        let p = ProjectionStatement::new("p", ket0_proj(), Region::point(0, 0), &dims, &map)
            .unwrap();
        let u = Region::point(1, 1);
        let vb = visibility_lower_bound(&p, &u, &ghz, &map, VisibilityMethod::All).unwrap();
        assert!(vb.capped, "residual {}", vb.residual);
        let expect = (0.5f64).sqrt().ln() - RESIDUAL_FLOOR.ln();
        assert_abs_diff_eq!(vb.lower_bound, expect, epsilon = 1e-9);
    }

    #[test]
    fn visibility_partial_record_closed_form() {
        // psi = (|00> + |1>(sqrt(1-eta)|0> + sqrt(eta)|1>))/sqrt(2);
        // candidate |1><1| on site 1 leaves residual sqrt((1-eta)/2).
        let eta: f64 = 0.96;
        let dims = [2usize, 2];
        let amps = DVector::from_vec(vec![
            c(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            c(0.0, 0.0),
            c(((1.0 - eta) / 2.0).sqrt(), 0.0),
            c((eta / 2.0).sqrt(), 0.0),
        ]);
        let psi = QuantumState::new(amps, dims.to_vec()).unwrap();
        let map = SiteMap::chain(2);
        let p = ProjectionStatement::new("p", ket1_proj(), Region::point(0, 0), &dims, &map)
            .unwrap();
        let u = Region::point(1, 1);
        let vb = visibility_lower_bound(&p, &u, &psi, &map, VisibilityMethod::All).unwrap();
        // Candidate |1><1| leaves residual sqrt((1-eta)/2) ~ 0.1414 and
        // certifies visibility >= ln(0.7071) - ln(0.1414) ~ 1.609.
        let candidate_residual = ((1.0 - eta) / 2.0).sqrt();
        let candidate_bound = (0.5f64).sqrt().ln() - candidate_residual.ln();
        assert_abs_diff_eq!(candidate_bound, 1.6094, epsilon = 1e-3);
        assert!(vb.lower_bound >= candidate_bound - 1e-6);
        // The true rank-1 optimum over site-1 projectors has the closed
        // form residual sqrt(1/2 - a*c) with a = 1/sqrt(2), c =
        // sqrt(eta/2) (top eigenvalue of v v^dagger - a^2 |0><0|); the
        // dense search must find it to grid resolution and never beat it.
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let c_amp = (eta / 2.0).sqrt();
        let optimal_residual = (0.5 - a * c_amp).sqrt();
        assert!(vb.residual >= optimal_residual - 1e-9);
        assert!(vb.residual <= optimal_residual + 2e-3);
    }

    #[test]
    fn visibility_of_annihilated_statement_is_zero() {
        let dims = [2usize, 2];
        let psi = QuantumState::basis(&dims, &[0, 0]).unwrap();
        let map = SiteMap::chain(2);
        let p = ProjectionStatement::new("p", ket1_proj(), Region::point(0, 0), &dims, &map)
            .unwrap();
        let vb =
            visibility_lower_bound(&p, &Region::point(1, 1), &psi, &map, VisibilityMethod::All)
                .unwrap();
        assert_eq!(vb.lower_bound, 0.0);
    }

    #[test]
    fn visibility_region_must_be_single_slice() {
        let dims = [2usize, 2];
        let ghz = QuantumState::ghz(2).unwrap();
        let map = SiteMap::chain(2);
        let p = ProjectionStatement::new("p", ket0_proj(), Region::point(0, 0), &dims, &map)
            .unwrap();
        let bad = Region::new([
            crate::spacetime::LatticePoint::new(1, 0),
            crate::spacetime::LatticePoint::new(1, 1),
        ])
        .unwrap();
        assert!(visibility_lower_bound(&p, &bad, &ghz, &map, VisibilityMethod::All).is_err());
    }

    #[test]
    fn visibility_monotone_in_region() {
        // U <= V on the same slice: more sites can only help the search.
        let mut rng = SplitMix64::new(15);
        let dims = [2usize, 2, 2];
        let map = SiteMap::chain(3);
        for _ in 0..10 {
            let psi = random_state(&dims, &mut rng).unwrap();
            let p = ProjectionStatement::new(
                "p",
                random_projector(2, 1, &mut rng).unwrap(),
                Region::point(0, 0),
                &dims,
                &map,
            )
            .unwrap();
            let small = Region::time_slice([1], 1).unwrap();
            let large = Region::time_slice([1, 2], 1).unwrap();
            let vs = visibility_lower_bound(&p, &small, &psi, &map, VisibilityMethod::All)
                .unwrap();
            let vl = visibility_lower_bound(&p, &large, &psi, &map, VisibilityMethod::All)
                .unwrap();
            assert!(vl.lower_bound >= vs.lower_bound - 1e-9);
        }
    }

    #[test]
    fn replacement_single_statement_equality() {
        // n = 1, E = P: observed error is exactly eps_1 and m_1 = 1.
        let mut rng = SplitMix64::new(21);
        let dims = [2usize, 2, 2, 2];
        let psi = random_state(&dims, &mut rng).unwrap();
        let p = stmt_at("p", random_projector(2, 1, &mut rng).unwrap(), 0, 0, &dims);
        let p_rec = stmt_at("p", random_projector(2, 1, &mut rng).unwrap(), 3, 0, &dims);
        let report =
            replacement_bound_report(&[p.clone()], &[p_rec.clone()], &psi, &LogicalExpr::leaf("p"))
                .unwrap();
        assert_eq!(report.multiplicities, vec![1]);
        assert_abs_diff_eq!(report.observed_error, report.epsilons[0], epsilon = 1e-12);
        assert!(report.sharp_bound_holds);

        // E = not P: the difference of complements has the same norm.
        let report_neg = replacement_bound_report(
            &[p],
            &[p_rec],
            &psi,
            &LogicalExpr::not(LogicalExpr::leaf("p")),
        )
        .unwrap();
        assert_abs_diff_eq!(
            report_neg.observed_error,
            report_neg.epsilons[0],
            epsilon = 1e-12
        );
        assert_eq!(report_neg.multiplicities, vec![1]);
    }

    #[test]
    fn replacement_rejects_structural_violation() {
        let mut rng = SplitMix64::new(23);
        let dims = [2usize, 2];
        let psi = random_state(&dims, &mut rng).unwrap();
        // Replacement not spacelike to the original it replaces is fine,
        // but a second replacement timelike to the first original is not.
        let p1 = stmt_at("p1", ket0_proj(), 0, 1, &dims);
        let p2 = stmt_at("p2", plus_proj(), 0, 0, &dims);
        let r1 = stmt_at("r1", ket0_proj(), 1, 0, &dims);
        let r2 = stmt_at("r2", ket0_proj(), 0, 5, &dims); // future of p1: violation
        let expr = LogicalExpr::and(LogicalExpr::leaf("p1"), LogicalExpr::leaf("p2"));
        let err = replacement_bound_report(&[p1, p2], &[r1, r2], &psi, &expr);
        assert!(matches!(err, Err(Error::StructuralViolation(_))));
    }

    #[test]
    fn randomized_replacement_bounds_hold() {
        // Smaller version of the acceptance sweep: 3 statements, 6 qubits.
        let dims = [2usize; 6];
        for trial in 0..50 {
            let mut t_rng = SplitMix64::derive(1000, trial);
            let psi = random_state(&dims, &mut t_rng).unwrap();
            // Originals at descending times on the left half of the chain
            // (site choices keep every replacement spacelike to the
            // earlier-indexed statements); replacements on sites 3..5 at
            // t = 0.
            let p1 = stmt_at(
                "p1",
                random_projector(2, 1 + t_rng.next_range(2), &mut t_rng).unwrap(),
                t_rng.next_range(2),
                2,
                &dims,
            );
            let p2 = stmt_at("p2", random_projector(2, 1, &mut t_rng).unwrap(), t_rng.next_range(3), 1, &dims);
            let p3 = stmt_at("p3", random_projector(2, 1, &mut t_rng).unwrap(), t_rng.next_range(3), 0, &dims);
            let r1 = stmt_at("r1", random_projector(2, 1, &mut t_rng).unwrap(), 3, 0, &dims);
            let r2 = stmt_at("r2", random_projector(2, 1, &mut t_rng).unwrap(), 4, 0, &dims);
            let r3 = stmt_at("r3", random_projector(2, 1, &mut t_rng).unwrap(), 5, 0, &dims);
            let (e1, e2, e3) = (
                LogicalExpr::leaf("p1"),
                LogicalExpr::leaf("p2"),
                LogicalExpr::leaf("p3"),
            );
            let expr = match trial % 3 {
                0 => LogicalExpr::and(e1, LogicalExpr::and(e2, e3)),
                1 => LogicalExpr::or(e1, LogicalExpr::and(e2, LogicalExpr::not(e3))),
                _ => LogicalExpr::not(LogicalExpr::or(LogicalExpr::and(e1, e2), e3)),
            };
            let report =
                replacement_bound_report(&[p1, p2, p3], &[r1, r2, r3], &psi, &expr).unwrap();
            assert!(
                report.observed_error <= report.bound_sharp + 1e-9,
                "trial {trial}: observed {} > sharp {}",
                report.observed_error,
                report.bound_sharp
            );
            assert!(report.bound_sharp <= report.bound_coarse + 1e-9);
        }
    }

    #[test]
    fn permutation_check_exact_records_vanish() {
        let dims = [2usize; 4];
        let ghz = QuantumState::ghz(4).unwrap();
        // Records of the GHZ bit on distinct sites are exact.
        let p1 = stmt_at("p1", ket0_proj(), 0, 0, &dims);
        let p2 = stmt_at("p2", ket0_proj(), 1, 0, &dims);
        let r1 = stmt_at("r1", ket0_proj(), 2, 0, &dims);
        let r2 = stmt_at("r2", ket0_proj(), 3, 0, &dims);
        let mut rng = SplitMix64::new(1);
        let report = record_permutation_check(
            &[p1, p2],
            &[r1, r2],
            &ghz,
            &mut rng,
            10,
        )
        .unwrap();
        assert!(report.exhaustive);
        assert!(report.ordered_error < 1e-12);
        assert!(report.max_permuted_error < 1e-12);
        assert!(report.ordered_bound_holds && report.permuted_bound_holds);
    }

    #[test]
    fn permutation_check_randomized_two_statements() {
        let mut rng = SplitMix64::new(77);
        let dims = [2usize; 4];
        for _ in 0..30 {
            let psi = random_state(&dims, &mut rng).unwrap();
            // Originals may overlap (same site, different times on sites
            // 0..1); replacements spacelike to everything.
            let p1 = stmt_at("p1", random_projector(2, 1, &mut rng).unwrap(), 0, 0, &dims);
            let p2 = stmt_at("p2", random_projector(2, 1, &mut rng).unwrap(), 0, 1, &dims);
            let r1 = stmt_at("r1", random_projector(2, 1, &mut rng).unwrap(), 2, 0, &dims);
            let r2 = stmt_at("r2", random_projector(2, 1, &mut rng).unwrap(), 3, 0, &dims);
            let report =
                record_permutation_check(&[p1, p2], &[r1, r2], &psi, &mut rng, 10).unwrap();
            assert!(report.ordered_bound_holds, "{report:?}");
            assert!(report.permuted_bound_holds, "{report:?}");
        }
    }

    #[test]
    fn permutation_check_identity_replacements_commuting() {
        let mut rng = SplitMix64::new(5);
        let dims = [2usize; 4];
        let psi = random_state(&dims, &mut rng).unwrap();
        // P_i pairwise spacelike and each P'_i = P_i placed identically:
        // spacelike to the others, so hypotheses hold and errors vanish.
        let p1 = stmt_at("p1", random_projector(2, 1, &mut rng).unwrap(), 0, 0, &dims);
        let p2 = stmt_at("p2", random_projector(2, 1, &mut rng).unwrap(), 2, 0, &dims);
        let report = record_permutation_check(
            &[p1.clone(), p2.clone()],
            &[p1, p2],
            &psi,
            &mut rng,
            10,
        )
        .unwrap();
        assert!(report.ordered_error == 0.0);
        assert!(report.max_permuted_error < 1e-12);
    }

    #[test]
    fn classicality_profile_ghz_all_capped() {
        let dims = [2usize; 5];
        let ghz = QuantumState::ghz(5).unwrap();
        let map = SiteMap::chain(5);
        let p = ProjectionStatement::new("p", ket0_proj(), Region::point(0, 0), &dims, &map)
            .unwrap();
        // All regions on slice t = 4: inside the cone of (0,0) and
        // pairwise spacelike.
        let regions: Vec<Region> = (1..5).map(|s| Region::point(s as i64, 4)).collect();
        let profile =
            classicality_profile(&p, &regions, &ghz, &map, VisibilityMethod::All).unwrap();
        assert!(profile.flags.is_empty(), "{:?}", profile.flags);
        assert!(profile.bounds.iter().all(|b| b.capped));
        let cap = (0.5f64).sqrt().ln() - RESIDUAL_FLOOR.ln();
        assert_abs_diff_eq!(profile.score, cap, epsilon = 1e-9);
    }

    #[test]
    fn classicality_profile_product_state_scores_zero() {
        // No environment site carries a record of |+><+| on site 0 of
        // |0>|+>^4: every candidate leaves residual ||P psi||.
        let dims = [2usize; 5];
        let mut factors = vec![QuantumState::basis(&[2], &[0]).unwrap()];
        factors.extend(std::iter::repeat_n(QuantumState::plus(), 4));
        let psi = QuantumState::product(&factors).unwrap();
        let map = SiteMap::chain(5);
        let p = ProjectionStatement::new("p", plus_proj(), Region::point(0, 0), &dims, &map)
            .unwrap();
        let regions: Vec<Region> = (1..5).map(|s| Region::point(s as i64, 4)).collect();
        let profile =
            classicality_profile(&p, &regions, &psi, &map, VisibilityMethod::All).unwrap();
        assert!(profile.score.abs() < 1e-6, "score = {}", profile.score);
    }

    #[test]
    fn classicality_profile_single_region_matches_direct_call() {
        let dims = [2usize; 3];
        let ghz = QuantumState::ghz(3).unwrap();
        let map = SiteMap::chain(3);
        let p = ProjectionStatement::new("p", ket0_proj(), Region::point(0, 0), &dims, &map)
            .unwrap();
        let u = Region::time_slice([1, 2], 1).unwrap();
        let profile = classicality_profile(
            &p,
            std::slice::from_ref(&u),
            &ghz,
            &map,
            VisibilityMethod::All,
        )
        .unwrap();
        let direct = visibility_lower_bound(&p, &u, &ghz, &map, VisibilityMethod::All).unwrap();
        assert_eq!(profile.bounds.len(), 1);
        assert_abs_diff_eq!(profile.score, direct.lower_bound, epsilon = 1e-12);
    }

    #[test]
    fn statement_dump_roundtrip() {
        let dims = [2usize, 2];
        let p = stmt_at("p", plus_proj(), 0, 0, &dims);
        let dump = p.dump().unwrap();
        let json = serde_json::to_string(&dump).unwrap();
        let parsed: StatementDump = serde_json::from_str(&json).unwrap();
        let restored = parsed.restore(&dims).unwrap();
        assert_eq!(restored.label(), "p");
        assert!((restored.projector().unwrap() - p.projector().unwrap()).norm() < 1e-12);
    }

    #[test]
    fn heisenberg_evaluation_uses_conjugated_operators() {
        use crate::dynamics::{BrickworkCircuit, Dynamics};
        let mut rng = SplitMix64::new(3);
        let dims = [2usize; 4];
        let circuit = BrickworkCircuit::random(&dims, 2, &mut rng).unwrap();
        let psi = random_state(&dims, &mut rng).unwrap();
        let p_local = random_projector(2, 1, &mut rng).unwrap();
        let map = SiteMap::chain(4);
        let p_t2 = ProjectionStatement::new(
            "p",
            p_local.clone(),
            Region::point(0, 2),
            &dims,
            &map,
        )
        .unwrap();
        let mut reg = StatementRegistry::chain(dims.to_vec());
        reg.insert(p_t2.clone()).unwrap();
        let got = prob(&reg, &LogicalExpr::leaf("p"), &psi, Some(&circuit)).unwrap();
        // Oracle: evolve the state forward and apply the plain operator.
        let u = circuit.unitary_at(2).unwrap();
        let forward = &u * psi.amps();
        let expect = apply_local(&p_local, &[0], &forward, &dims).unwrap().norm_squared();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
    }
}
