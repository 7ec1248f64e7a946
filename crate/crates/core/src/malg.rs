//! Finite vector-valued measure algebras generated by commuting records.
//!
//! An algebra is generated by pairwise spacelike projection statements
//! (disjoint supports, hence exactly commuting). Its atoms are the 2^n
//! products of generators and complements applied to the reference state;
//! atoms whose image norm falls below `null_tol` are merged into the null
//! ideal, and the remaining atoms carry the whole structure: an element is
//! a set of kept atoms, and `phi` maps it to the sum of the atom vectors.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{QuantumState, C64};
use crate::rng::SplitMix64;
use crate::spacetime::{region_relation, CausalRelation};
use crate::statements::ProjectionStatement;

/// Cap on generator count (2^12 atoms).
pub const GENERATOR_CAP: usize = 12;

/// Default norm threshold below which an atom joins the null ideal.
pub const NULL_TOL: f64 = 1e-10;

/// Element of a finite Boolean algebra: a set of kept-atom indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Element {
    words: Vec<u64>,
    n_atoms: usize,
}

impl Element {
    fn n_words(n_atoms: usize) -> usize {
        n_atoms.div_ceil(64).max(1)
    }

    pub fn empty(n_atoms: usize) -> Self {
        Element {
            words: vec![0; Self::n_words(n_atoms)],
            n_atoms,
        }
    }

    pub fn full(n_atoms: usize) -> Self {
        let mut e = Element::empty(n_atoms);
        for i in 0..n_atoms {
            e.insert(i);
        }
        e
    }

    pub fn from_atoms(n_atoms: usize, atoms: impl IntoIterator<Item = usize>) -> Self {
        let mut e = Element::empty(n_atoms);
        for a in atoms {
            assert!(a < n_atoms, "atom index {a} out of range");
            e.insert(a);
        }
        e
    }

    fn insert(&mut self, idx: usize) {
        self.words[idx / 64] |= 1u64 << (idx % 64);
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn atoms(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_atoms).filter(|&i| self.contains(i))
    }

    pub fn and(&self, other: &Element) -> Element {
        self.zip(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Element) -> Element {
        self.zip(other, |a, b| a | b)
    }

    /// Set difference `self and not other`.
    pub fn minus(&self, other: &Element) -> Element {
        self.zip(other, |a, b| a & !b)
    }

    pub fn not(&self) -> Element {
        let mut out = Element {
            words: self.words.iter().map(|w| !w).collect(),
            n_atoms: self.n_atoms,
        };
        // Clear bits beyond n_atoms.
        let tail = self.n_atoms % 64;
        if tail != 0 {
            *out.words.last_mut().unwrap() &= (1u64 << tail) - 1;
        }
        if self.n_atoms == 0 {
            out.words = vec![0];
        }
        out
    }

    pub fn is_subset(&self, other: &Element) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    fn zip(&self, other: &Element, f: impl Fn(u64, u64) -> u64) -> Element {
        assert_eq!(self.n_atoms, other.n_atoms, "element size mismatch");
        Element {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            n_atoms: self.n_atoms,
        }
    }
}

/// Verification attached to a freshly generated algebra: worst-case
/// orthogonality and additivity defects over element pairs, and the
/// distances `phi(1) - psi`, `phi(0)`.
#[derive(Debug, Clone, Serialize)]
pub struct AlgebraReport {
    pub n_generators: usize,
    pub n_atoms_total: usize,
    pub n_atoms_kept: usize,
    pub null_tol: f64,
    /// `max |<phi(a and b), phi(a and not b)>|` over all atom pairs and
    /// the checked element pairs.
    pub worst_orthogonality: f64,
    /// `max ||phi(a) - phi(a and b) - phi(a and not b)||` over pairs.
    pub worst_additivity: f64,
    /// `||phi(1) - psi||` (nonzero only from null-merged atoms).
    pub top_defect: f64,
    /// Smallest kept-atom norm (injectivity margin of the quotient).
    pub min_kept_atom_norm: f64,
    /// Number of element pairs the check ran over.
    pub pairs_checked: usize,
    pub exhaustive: bool,
}

struct AtomData {
    vec: DVector<C64>,
    mu: f64,
    null: bool,
}

/// Finite vector-valued measure algebra over a reference state.
pub struct MeasureAlgebra {
    generators: Vec<ProjectionStatement>,
    psi: QuantumState,
    null_tol: f64,
    atoms_all: Vec<AtomData>,
    kept: Vec<usize>,
    report: AlgebraReport,
}

/// Build the algebra generated by pairwise spacelike records.
pub fn generate_algebra(
    records: Vec<ProjectionStatement>,
    psi: &QuantumState,
    null_tol: f64,
) -> Result<MeasureAlgebra> {
    let n = records.len();
    if n == 0 {
        return Err(Error::invalid("at least one record is required"));
    }
    if n > GENERATOR_CAP {
        return Err(Error::GeneratorCap(n, GENERATOR_CAP));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let rel = region_relation(records[i].region(), records[j].region());
            if rel != CausalRelation::Spacelike {
                return Err(Error::NotSpacelike(format!(
                    "`{}` vs `{}`: {:?}",
                    records[i].label(),
                    records[j].label(),
                    rel
                )));
            }
            if records[i]
                .support()
                .iter()
                .any(|s| records[j].support().contains(s))
            {
                return Err(Error::NotSpacelike(format!(
                    "`{}` and `{}` share support sites",
                    records[i].label(),
                    records[j].label()
                )));
            }
        }
    }

    let mut atoms_all = Vec::with_capacity(1 << n);
    for mask in 0u32..(1u32 << n) {
        let mut v = psi.amps().clone();
        for (i, rec) in records.iter().enumerate() {
            let pv = rec.apply(&v)?;
            v = if mask >> i & 1 == 1 { pv } else { v - pv };
        }
        let norm = v.norm();
        atoms_all.push(AtomData {
            mu: norm * norm,
            null: norm <= null_tol,
            vec: v,
        });
    }
    let kept: Vec<usize> = (0..atoms_all.len())
        .filter(|&i| !atoms_all[i].null)
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid("every atom is null; algebra is trivial"));
    }

    let mut alg = MeasureAlgebra {
        generators: records,
        psi: psi.clone(),
        null_tol,
        atoms_all,
        kept,
        report: AlgebraReport {
            n_generators: n,
            n_atoms_total: 1 << n,
            n_atoms_kept: 0,
            null_tol,
            worst_orthogonality: 0.0,
            worst_additivity: 0.0,
            top_defect: 0.0,
            min_kept_atom_norm: 0.0,
            pairs_checked: 0,
            exhaustive: false,
        },
    };
    alg.report = alg.verify()?;
    Ok(alg)
}

impl MeasureAlgebra {
    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[ProjectionStatement] {
        &self.generators
    }

    pub fn psi(&self) -> &QuantumState {
        &self.psi
    }

    pub fn null_tol(&self) -> f64 {
        self.null_tol
    }

    /// Number of kept (non-null) atoms.
    pub fn n_atoms(&self) -> usize {
        self.kept.len()
    }

    pub fn report(&self) -> &AlgebraReport {
        &self.report
    }

    /// Sign mask of kept atom `k`: bit `i` set when generator `i` is
    /// asserted.
    pub fn atom_sign_mask(&self, k: usize) -> u32 {
        self.kept[k] as u32
    }

    /// Label of kept atom `k`: one character per generator, `1` asserted,
    /// `0` complemented.
    pub fn atom_label(&self, k: usize) -> String {
        let mask = self.kept[k];
        (0..self.n_generators())
            .map(|i| if mask >> i & 1 == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn atom_vec(&self, k: usize) -> &DVector<C64> {
        &self.atoms_all[self.kept[k]].vec
    }

    pub fn atom_mu(&self, k: usize) -> f64 {
        self.atoms_all[self.kept[k]].mu
    }

    pub fn top(&self) -> Element {
        Element::full(self.kept.len())
    }

    pub fn bottom(&self) -> Element {
        Element::empty(self.kept.len())
    }

    /// The element of generator `i` (all kept atoms asserting it).
    pub fn generator_element(&self, i: usize) -> Element {
        Element::from_atoms(
            self.kept.len(),
            (0..self.kept.len()).filter(|&k| self.kept[k] >> i & 1 == 1),
        )
    }

    /// Uniformly random element.
    pub fn random_element(&self, rng: &mut SplitMix64) -> Element {
        Element::from_atoms(
            self.kept.len(),
            (0..self.kept.len()).filter(|_| rng.next_f64() < 0.5),
        )
    }

    fn check(&self, e: &Element) -> Result<()> {
        if e.n_atoms() != self.kept.len() {
            return Err(Error::ForeignElement);
        }
        Ok(())
    }

    /// `phi(b)`: sum of atom vectors in ascending atom order.
    pub fn phi(&self, b: &Element) -> Result<DVector<C64>> {
        self.check(b)?;
        let mut out = DVector::zeros(self.psi.dim());
        for k in b.atoms() {
            out += self.atom_vec(k);
        }
        Ok(out)
    }

    /// `phi(a) - phi(b)` accumulated in one pass over the symmetric
    /// difference, so that negation is an exact isometry: swapping `a`
    /// and `b` negates every summand and IEEE negation is exact.
    pub fn phi_diff(&self, a: &Element, b: &Element) -> Result<DVector<C64>> {
        self.check(a)?;
        self.check(b)?;
        let mut out = DVector::zeros(self.psi.dim());
        for k in 0..self.kept.len() {
            match (a.contains(k), b.contains(k)) {
                (true, false) => out += self.atom_vec(k),
                (false, true) => out -= self.atom_vec(k),
                _ => {}
            }
        }
        Ok(out)
    }

    /// `mu(b) = ||phi(b)||^2`.
    pub fn measure(&self, b: &Element) -> Result<f64> {
        Ok(self.phi(b)?.norm_squared())
    }

    /// `<phi(a), phi(b)>`.
    pub fn inner(&self, a: &Element, b: &Element) -> Result<C64> {
        Ok(self.phi(a)?.dotc(&self.phi(b)?))
    }

    /// Enumerate every element (up to `cap`); errors beyond the cap.
    pub fn all_elements(&self, cap: usize) -> Result<Vec<Element>> {
        let n = self.kept.len();
        if n >= 63 || (1usize << n) > cap {
            return Err(Error::invalid(format!(
                "algebra has 2^{n} elements, exceeding the enumeration cap {cap}"
            )));
        }
        Ok((0..(1usize << n))
            .map(|mask| Element::from_atoms(n, (0..n).filter(|&k| mask >> k & 1 == 1)))
            .collect())
    }

    /// Verify the measure-algebra axioms: pairwise atom orthogonality is
    /// always checked in full (additivity over arbitrary pairs reduces to
    /// it), and element pairs are checked exhaustively for up to 2^5
    /// elements, sampled otherwise.
    fn verify(&self) -> Result<AlgebraReport> {
        let n_kept = self.kept.len();
        let mut worst_orth: f64 = 0.0;
        for i in 0..n_kept {
            for j in (i + 1)..n_kept {
                worst_orth = worst_orth.max(self.atom_vec(i).dotc(self.atom_vec(j)).norm());
            }
        }
        let exhaustive = n_kept <= 5;
        let pairs: Vec<(Element, Element)> = if exhaustive {
            let all = self.all_elements(1 << 5)?;
            let mut v = Vec::new();
            for a in &all {
                for b in &all {
                    v.push((a.clone(), b.clone()));
                }
            }
            v
        } else {
            let mut rng = SplitMix64::new(0x414c47);
            (0..1024)
                .map(|_| (self.random_element(&mut rng), self.random_element(&mut rng)))
                .collect()
        };
        let mut worst_add: f64 = 0.0;
        for (a, b) in &pairs {
            let ab = a.and(b);
            let anb = a.minus(b);
            let orth = self.inner(&ab, &anb)?.norm();
            worst_orth = worst_orth.max(orth);
            let defect = (self.phi(a)? - self.phi(&ab)? - self.phi(&anb)?).norm();
            worst_add = worst_add.max(defect);
        }
        let top_defect = (self.phi(&self.top())? - self.psi.amps()).norm();
        let min_kept_atom_norm = self
            .kept
            .iter()
            .map(|&m| self.atoms_all[m].mu.sqrt())
            .fold(f64::INFINITY, f64::min);
        Ok(AlgebraReport {
            n_generators: self.generators.len(),
            n_atoms_total: self.atoms_all.len(),
            n_atoms_kept: n_kept,
            null_tol: self.null_tol,
            worst_orthogonality: worst_orth,
            worst_additivity: worst_add,
            top_defect,
            min_kept_atom_norm,
            pairs_checked: pairs.len(),
            exhaustive,
        })
    }

    /// JSON dump: generator labels and per-atom `(sign mask, mu)`.
    pub fn dump(&self) -> AlgebraDump {
        AlgebraDump {
            generators: self
                .generators
                .iter()
                .map(|g| g.label().to_string())
                .collect(),
            atoms: self
                .kept
                .iter()
                .map(|&m| AtomDump {
                    mask: m as u32,
                    mu: self.atoms_all[m].mu,
                })
                .collect(),
            report: self.report.clone(),
        }
    }

    /// Raw atom vector by generator sign mask (null atoms included);
    /// used by the record-swap comparison which works on the free
    /// algebra before null merging.
    pub(crate) fn raw_atom_vec(&self, sign_mask: usize) -> &DVector<C64> {
        &self.atoms_all[sign_mask].vec
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgebraDump {
    pub generators: Vec<String>,
    pub atoms: Vec<AtomDump>,
    pub report: AlgebraReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomDump {
    pub mask: u32,
    pub mu: f64,
}

/// Worst-case slacks from sampling the non-expansiveness of meet and join
/// and the exactness of the negation isometry.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub triples_checked: usize,
    /// max over triples of `||phi(b^c) - phi(b'^c)|| - ||phi(b)-phi(b')||`.
    pub worst_meet_slack: f64,
    pub worst_join_slack: f64,
    /// max absolute difference of the two norms under negation (exact 0).
    pub worst_negation_defect: f64,
    pub meet_ok: bool,
    pub join_ok: bool,
    pub negation_exact: bool,
}

/// Sample triples `(b, b', c)` and check that meet and join do not
/// increase `phi`-distances, and that negation is an exact isometry.
pub fn metric_contraction_check(
    alg: &MeasureAlgebra,
    trials: usize,
    rng: &mut SplitMix64,
) -> Result<ContractionReport> {
    let mut worst_meet: f64 = f64::NEG_INFINITY;
    let mut worst_join: f64 = f64::NEG_INFINITY;
    let mut worst_neg: f64 = 0.0;
    for _ in 0..trials {
        let b = alg.random_element(rng);
        let b2 = alg.random_element(rng);
        let c = alg.random_element(rng);
        let base = alg.phi_diff(&b, &b2)?.norm();
        let meet = alg.phi_diff(&b.and(&c), &b2.and(&c))?.norm();
        let join = alg.phi_diff(&b.or(&c), &b2.or(&c))?.norm();
        worst_meet = worst_meet.max(meet - base);
        worst_join = worst_join.max(join - base);
        let neg = alg.phi_diff(&b.not(), &b2.not())?.norm();
        worst_neg = worst_neg.max((neg - base).abs());
    }
    Ok(ContractionReport {
        triples_checked: trials,
        worst_meet_slack: worst_meet,
        worst_join_slack: worst_join,
        worst_negation_defect: worst_neg,
        meet_ok: worst_meet <= 1e-10,
        join_ok: worst_join <= 1e-10,
        negation_exact: worst_neg == 0.0,
    })
}

/// Finite probability space extracted from an algebra: points are the
/// kept atoms, the measure of a point is its atom's `mu`.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteProbabilitySpace {
    pub points: Vec<String>,
    pub mu: Vec<f64>,
}

impl FiniteProbabilitySpace {
    /// Points of the event `S_b`: the atoms below `b`.
    pub fn event_map(&self, b: &Element) -> Vec<usize> {
        b.atoms().collect()
    }

    /// `mu(S_b)`: the sum of point weights below `b`.
    pub fn event_measure(&self, b: &Element) -> f64 {
        b.atoms().map(|k| self.mu[k]).sum()
    }

    pub fn total(&self) -> f64 {
        self.mu.iter().sum()
    }
}

/// The probability space with `mu(S_b) = ||phi(b)||^2`.
pub fn stone_space(alg: &MeasureAlgebra) -> FiniteProbabilitySpace {
    FiniteProbabilitySpace {
        points: (0..alg.n_atoms()).map(|k| alg.atom_label(k)).collect(),
        mu: (0..alg.n_atoms()).map(|k| alg.atom_mu(k)).collect(),
    }
}

/// Observer statement with its ideal, filter, and conditional measure.
pub struct ObserverContext<'a> {
    alg: &'a MeasureAlgebra,
    observer: Element,
    mu_observer: f64,
}

/// Build the context for conditioning on `observer`.
pub fn observer_context<'a>(
    alg: &'a MeasureAlgebra,
    observer: &Element,
) -> Result<ObserverContext<'a>> {
    let mu = alg.measure(observer)?;
    if mu <= alg.null_tol() {
        return Err(Error::NullConditioning(mu));
    }
    Ok(ObserverContext {
        alg,
        observer: observer.clone(),
        mu_observer: mu,
    })
}

impl ObserverContext<'_> {
    pub fn observer(&self) -> &Element {
        &self.observer
    }

    pub fn mu_observer(&self) -> f64 {
        self.mu_observer
    }

    /// Is `b` in the ideal (possibilities): `b and O = b`.
    pub fn in_ideal(&self, b: &Element) -> bool {
        b.is_subset(&self.observer)
    }

    /// Is `b` in the filter (deductions): `b and O = O`.
    pub fn in_filter(&self, b: &Element) -> bool {
        self.observer.is_subset(b)
    }

    /// Every element of the ideal `I_O` (subsets of the observer).
    pub fn ideal_elements(&self, cap: usize) -> Result<Vec<Element>> {
        let atoms: Vec<usize> = self.observer.atoms().collect();
        let k = atoms.len();
        if k >= 63 || (1usize << k) > cap {
            return Err(Error::invalid(format!(
                "ideal has 2^{k} elements, exceeding the cap {cap}"
            )));
        }
        Ok((0..(1usize << k))
            .map(|mask| {
                Element::from_atoms(
                    self.observer.n_atoms(),
                    atoms
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, &a)| a),
                )
            })
            .collect())
    }

    /// Every element of the filter `T_O` (supersets of the observer).
    pub fn filter_elements(&self, cap: usize) -> Result<Vec<Element>> {
        let outside: Vec<usize> = self.observer.not().atoms().collect();
        let k = outside.len();
        if k >= 63 || (1usize << k) > cap {
            return Err(Error::invalid(format!(
                "filter has 2^{k} elements, exceeding the cap {cap}"
            )));
        }
        Ok((0..(1usize << k))
            .map(|mask| {
                let extra = Element::from_atoms(
                    self.observer.n_atoms(),
                    outside
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, &a)| a),
                );
                self.observer.or(&extra)
            })
            .collect())
    }

    /// Bayesian update: `mu(b and O) / mu(O)`.
    pub fn conditional(&self, b: &Element) -> Result<f64> {
        Ok(self.alg.measure(&b.and(&self.observer))? / self.mu_observer)
    }
}

/// Report of the classical-statement test for one element.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalCheckReport {
    /// `||P psi - phi(b)|| / ||phi(b)||` for the best candidate.
    pub r1: f64,
    /// `max_a ||phi(b and a) - P phi(a)|| / ||phi(b)||` for the best
    /// candidate.
    pub r2: f64,
    pub best_candidate: usize,
    pub classical: bool,
    pub eps: f64,
    /// True when `phi(b) = 0`; `b` is vacuously classical and the ratios
    /// are reported as zero.
    pub degenerate: bool,
    pub elements_checked: usize,
    pub exhaustive: bool,
}

/// Check whether `b` is classical at level `eps` against the supplied
/// candidate projection statements.
pub fn classical_statement_check(
    alg: &MeasureAlgebra,
    b: &Element,
    candidates: &[ProjectionStatement],
    eps: f64,
) -> Result<ClassicalCheckReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("candidate list is empty"));
    }
    let phi_b = alg.phi(b)?;
    let nb = phi_b.norm();
    if nb == 0.0 {
        return Ok(ClassicalCheckReport {
            r1: 0.0,
            r2: 0.0,
            best_candidate: 0,
            classical: true,
            eps,
            degenerate: true,
            elements_checked: 0,
            exhaustive: true,
        });
    }
    let exhaustive = alg.n_atoms() <= 10;
    let elements: Vec<Element> = if exhaustive {
        alg.all_elements(1 << 10)?
    } else {
        let mut rng = SplitMix64::new(0x434c53);
        (0..512).map(|_| alg.random_element(&mut rng)).collect()
    };
    let mut best: Option<(f64, f64, f64, usize)> = None;
    for (ci, cand) in candidates.iter().enumerate() {
        let r1 = (cand.apply(alg.psi().amps())? - &phi_b).norm() / nb;
        let mut r2: f64 = 0.0;
        for a in &elements {
            let lhs = alg.phi(&b.and(a))?;
            let rhs = cand.apply(&alg.phi(a)?)?;
            r2 = r2.max((lhs - rhs).norm() / nb);
        }
        let score = r1.max(r2);
        if best.as_ref().map_or(true, |(s, _, _, _)| score < *s) {
            best = Some((score, r1, r2, ci));
        }
    }
    let (score, r1, r2, best_candidate) = best.unwrap();
    Ok(ClassicalCheckReport {
        r1,
        r2,
        best_candidate,
        classical: score <= eps,
        eps,
        degenerate: false,
        elements_checked: elements.len(),
        exhaustive,
    })
}

/// Epsilon-density of the classical statements: for every element, the
/// `phi`-distance to the nearest classical element. Exhaustive only.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalDensityReport {
    pub n_elements: usize,
    pub n_classical: usize,
    /// `max_x min_{classical c} ||phi(x) - phi(c)||`.
    pub epsilon_density: f64,
    pub eps: f64,
}

pub fn classical_density(
    alg: &MeasureAlgebra,
    candidates: &[ProjectionStatement],
    eps: f64,
) -> Result<ClassicalDensityReport> {
    let elements = alg.all_elements(1 << 10)?;
    let mut classical = Vec::new();
    for e in &elements {
        let report = classical_statement_check(alg, e, candidates, eps)?;
        if report.classical {
            classical.push(e.clone());
        }
    }
    if classical.is_empty() {
        return Err(Error::invalid(
            "no classical statements at this eps; density undefined",
        ));
    }
    let mut density: f64 = 0.0;
    for x in &elements {
        let mut nearest = f64::INFINITY;
        for c in &classical {
            nearest = nearest.min(alg.phi_diff(x, c)?.norm());
            if nearest == 0.0 {
                break;
            }
        }
        density = density.max(nearest);
    }
    Ok(ClassicalDensityReport {
        n_elements: elements.len(),
        n_classical: classical.len(),
        epsilon_density: density,
        eps,
    })
}

/// Record-swap comparison between two algebras over the same state whose
/// generators record the same underlying statements.
#[derive(Debug, Clone, Serialize)]
pub struct SwapReport {
    /// Per-generator error `||phi_I(g) - phi_I'(f g)||`.
    pub generator_errors: Vec<f64>,
    pub max_error: f64,
    /// `(atom count, max error over elements with that many atoms)`:
    /// the error growth with logical-combination size.
    pub error_by_size: Vec<(usize, f64)>,
    /// Worst violation of `err(a and b) <= err(a) + err(b)` over checked
    /// pairs (negative when the inequality always holds).
    pub worst_subadditivity_violation: f64,
    pub subadditivity_holds: bool,
    pub elements_checked: usize,
    pub pairs_checked: usize,
    pub exhaustive: bool,
}

/// Compare the free Boolean algebras generated by two record collections
/// of the same statements. `pairing[i]` is the index in `other` of the
/// record matching generator `i` of `alg`. Elements are compared through
/// the generator-sign-mask representation, bypassing null merging, so the
/// Boolean isomorphism is total.
pub fn record_swap_error(
    alg: &MeasureAlgebra,
    other: &MeasureAlgebra,
    pairing: &[usize],
) -> Result<SwapReport> {
    let n = alg.n_generators();
    if other.n_generators() != n || pairing.len() != n {
        return Err(Error::invalid(format!(
            "generator count mismatch: {} vs {} (pairing {})",
            n,
            other.n_generators(),
            pairing.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in pairing {
        if p >= n || seen[p] {
            return Err(Error::invalid("pairing must be a permutation"));
        }
        seen[p] = true;
    }
    if (alg.psi().amps() - other.psi().amps()).norm() > 0.0 {
        return Err(Error::invalid(
            "record-swap algebras must share the same reference state",
        ));
    }

    // Map a sign mask over alg's generators to the paired mask.
    let map_mask = |mask: usize| -> usize {
        let mut out = 0usize;
        for i in 0..n {
            if mask >> i & 1 == 1 {
                out |= 1 << pairing[i];
            }
        }
        out
    };

    let n_masks = 1usize << n;
    let diffs: Vec<DVector<C64>> = (0..n_masks)
        .map(|m| alg.raw_atom_vec(m) - other.raw_atom_vec(map_mask(m)))
        .collect();

    let dim = alg.psi().dim();
    let err_of = |element_mask: u64| -> f64 {
        let mut acc = DVector::<C64>::zeros(dim);
        for (m, diff) in diffs.iter().enumerate() {
            if element_mask >> m & 1 == 1 {
                acc += diff;
            }
        }
        acc.norm()
    };

    let exhaustive = n <= 3;
    let element_masks: Vec<u64> = if exhaustive {
        (0..(1u64 << n_masks)).collect()
    } else {
        let mut rng = SplitMix64::new(0x535741);
        let mut v: Vec<u64> = (0..4096)
            .map(|_| {
                let mut m = 0u64;
                for b in 0..n_masks.min(64) {
                    if rng.next_f64() < 0.5 {
                        m |= 1 << b;
                    }
                }
                m
            })
            .collect();
        // Always include the top element.
        v.push(if n_masks >= 64 {
            u64::MAX
        } else {
            (1u64 << n_masks) - 1
        });
        v
    };

    let errs: Vec<f64> = element_masks.iter().map(|&m| err_of(m)).collect();
    let max_error = errs.iter().copied().fold(0.0, f64::max);

    let mut by_size: Vec<f64> = vec![0.0; n_masks + 1];
    for (&mask, &e) in element_masks.iter().zip(&errs) {
        let k = mask.count_ones() as usize;
        by_size[k] = by_size[k].max(e);
    }
    let error_by_size: Vec<(usize, f64)> = by_size.into_iter().enumerate().collect();

    let mut generator_errors = Vec::with_capacity(n);
    for i in 0..n {
        let mut gen_mask = 0u64;
        for m in 0..n_masks {
            if m >> i & 1 == 1 {
                gen_mask |= 1 << m;
            }
        }
        generator_errors.push(err_of(gen_mask));
    }

    // Subadditivity of the swap error under meets.
    let mut worst_violation = f64::NEG_INFINITY;
    let mut pairs_checked = 0usize;
    if exhaustive {
        for (i, &a) in element_masks.iter().enumerate() {
            for (j, &b) in element_masks.iter().enumerate() {
                let meet = a & b;
                worst_violation = worst_violation.max(errs[meet as usize] - errs[i] - errs[j]);
                pairs_checked += 1;
            }
        }
    } else {
        let mut rng = SplitMix64::new(0x535742);
        for _ in 0..4096 {
            let i = rng.next_range(element_masks.len());
            let j = rng.next_range(element_masks.len());
            let meet = element_masks[i] & element_masks[j];
            worst_violation = worst_violation.max(err_of(meet) - errs[i] - errs[j]);
            pairs_checked += 1;
        }
    }

    Ok(SwapReport {
        generator_errors,
        max_error,
        error_by_size,
        worst_subadditivity_violation: worst_violation,
        subadditivity_holds: worst_violation <= 1e-9,
        elements_checked: element_masks.len(),
        pairs_checked,
        exhaustive,
    })
}
