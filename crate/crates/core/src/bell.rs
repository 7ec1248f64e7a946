//! CHSH correlations, the deterministic-vertex bound, and feasibility of
//! a common local fine-graining for the four pairwise setting algebras.
//!
//! Observables live in the x-z plane: the spin projector along angle
//! `theta` is `(I + cos(theta) Z + sin(theta) X)/2`, so everything is real
//! and hand-checkable. Feasibility of a correlation table is decided over
//! the 16 deterministic assignments `(a0, a1, b0, b1) in {-1,+1}^4` with a
//! self-contained exact-rational phase-1 simplex; no inexact arithmetic
//! enters the decision.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{QuantumState, C64};

/// Two-qubit state with four measurement angles `a0, a1, b0, b1`.
#[derive(Debug, Clone)]
pub struct ChshSetting {
    pub state: QuantumState,
    pub angles: [f64; 4],
}

impl ChshSetting {
    pub fn new(state: QuantumState, angles: [f64; 4]) -> Result<Self> {
        if state.dims() != [2, 2] {
            return Err(Error::DimensionMismatch(format!(
                "CHSH needs a two-qubit state, got dims {:?}",
                state.dims()
            )));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("angles must be finite"));
        }
        Ok(ChshSetting { state, angles })
    }
}

/// The four correlations `E(a_i, b_j)`, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CorrelationTable {
    /// `e[i][j] = E(a_i, b_j)`.
    pub e: [[f64; 2]; 2],
}

impl CorrelationTable {
    pub fn new(e: [[f64; 2]; 2]) -> Result<Self> {
        for row in &e {
            for &v in row {
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(Error::invalid(format!("correlation {v} outside [-1, 1]")));
                }
            }
        }
        Ok(CorrelationTable { e })
    }

    /// `S = E(a0,b0) + E(a1,b0) + E(a0,b1) - E(a1,b1)`.
    pub fn chsh(&self) -> f64 {
        self.e[0][0] + self.e[1][0] + self.e[0][1] - self.e[1][1]
    }
}

/// `(|01> - |10>)/sqrt(2)`.
pub fn singlet() -> QuantumState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    QuantumState::new(
        DVector::from_vec(vec![
            C64::new(0.0, 0.0),
            C64::new(h, 0.0),
            C64::new(-h, 0.0),
            C64::new(0.0, 0.0),
        ]),
        vec![2, 2],
    )
    .unwrap()
}

/// Projector onto spin-up along angle `theta` in the x-z plane.
pub fn spin_projector(theta: f64) -> DMatrix<C64> {
    let c = theta.cos();
    let s = theta.sin();
    DMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new((1.0 + c) / 2.0, 0.0),
            C64::new(s / 2.0, 0.0),
            C64::new(s / 2.0, 0.0),
            C64::new((1.0 - c) / 2.0, 0.0),
        ],
    )
}

/// The +/-1-valued observable `2 P_theta - I = cos(theta) Z + sin(theta) X`.
pub fn spin_observable(theta: f64) -> DMatrix<C64> {
    let p = spin_projector(theta);
    p.map(|z| z * 2.0) - DMatrix::<C64>::identity(2, 2)
}

/// Evaluate the CHSH functional and the full correlation table.
pub fn chsh_value(setting: &ChshSetting) -> Result<(f64, CorrelationTable)> {
    let [a0, a1, b0, b1] = setting.angles;
    let psi = setting.state.amps();
    let mut e = [[0.0f64; 2]; 2];
    for (i, &a) in [a0, a1].iter().enumerate() {
        for (j, &b) in [b0, b1].iter().enumerate() {
            let op = spin_observable(a).kronecker(&spin_observable(b));
            e[i][j] = psi.dotc(&(&op * psi)).re;
        }
    }
    let table = CorrelationTable::new(e)?;
    Ok((table.chsh(), table))
}

/// Exhaustive maximum of `(a0 + a1) b0 + (a0 - a1) b1` over the 16
/// deterministic assignments; exact integer arithmetic, always 2.
pub fn deterministic_vertex_bound() -> i64 {
    let mut best = i64::MIN;
    for assignment in deterministic_assignments() {
        let [a0, a1, b0, b1] = assignment;
        best = best.max((a0 + a1) * b0 + (a0 - a1) * b1);
    }
    best
}

/// All 16 assignments `(a0, a1, b0, b1)` of +/-1.
pub fn deterministic_assignments() -> Vec<[i64; 4]> {
    let mut out = Vec::with_capacity(16);
    for mask in 0..16u8 {
        let sign = |bit: u8| if mask >> bit & 1 == 1 { 1i64 } else { -1 };
        out.push([sign(0), sign(1), sign(2), sign(3)]);
    }
    out
}

/// A Bell functional violated beyond its deterministic bound, certifying
/// that no local model reproduces the table within the tolerance.
#[derive(Debug, Clone, Serialize)]
pub enum Certificate {
    /// A CHSH-type functional `sum_{ij} sign[i][j] E(a_i, b_j)` with
    /// deterministic bound 2, exceeding `2 + 4 tol`.
    Chsh {
        signs: [[i8; 2]; 2],
        value: f64,
        bound: f64,
    },
    /// A single correlation outside `[-1 - tol, 1 + tol]` (bound 1 on
    /// deterministic assignments).
    Box { i: usize, j: usize, value: f64 },
}

/// Outcome of the fine-graining search.
#[derive(Debug, Clone, Serialize)]
pub enum Feasibility {
    /// Weights over the 16 deterministic assignments reproducing every
    /// correlation within the tolerance.
    Feasible { witness: Vec<f64> },
    Infeasible { certificate: Certificate },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

fn big(f: f64) -> Result<BigRational> {
    BigRational::from_float(f).ok_or_else(|| Error::invalid(format!("non-finite value {f}")))
}

/// Search for a probability distribution over the deterministic
/// assignments reproducing `table` within `tol` per correlation.
///
/// The decision runs in exact rational arithmetic; infeasibility is only
/// declared together with a violated Bell functional, and feasibility only
/// with an explicit witness.
pub fn fine_graining_feasibility(table: &CorrelationTable, tol: f64) -> Result<Feasibility> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::invalid("tolerance must be a nonnegative real"));
    }
    let assignments = deterministic_assignments();
    let tol_q = big(tol)?;
    let e_q: Vec<BigRational> = [
        table.e[0][0],
        table.e[0][1],
        table.e[1][0],
        table.e[1][1],
    ]
    .iter()
    .map(|&v| big(v))
    .collect::<Result<_>>()?;

    // Constraint rows over p in R^16 plus slack/surplus variables:
    //   sum_v p_v = 1
    //   sum_v p_v c_{v,k} + u_k = E_k + tol   (u_k >= 0)
    //   sum_v p_v c_{v,k} - w_k = E_k - tol   (w_k >= 0)
    // with c_{v,k} the k-th correlation coordinate of assignment v.
    let corr =
        |v: &[i64; 4]| -> [i64; 4] { [v[0] * v[2], v[0] * v[3], v[1] * v[2], v[1] * v[3]] };
    let n_p = assignments.len();
    let n_vars = n_p + 8;
    let mut rows: Vec<Vec<BigRational>> = Vec::new();
    let mut rhs: Vec<BigRational> = Vec::new();

    let mut row0 = vec![BigRational::zero(); n_vars];
    for cell in row0.iter_mut().take(n_p) {
        *cell = BigRational::from_integer(BigInt::from(1));
    }
    rows.push(row0);
    rhs.push(BigRational::from_integer(BigInt::from(1)));

    for k in 0..4 {
        let mut up = vec![BigRational::zero(); n_vars];
        let mut lo = vec![BigRational::zero(); n_vars];
        for (v, a) in assignments.iter().enumerate() {
            let cvk = BigRational::from_integer(BigInt::from(corr(a)[k]));
            up[v] = cvk.clone();
            lo[v] = cvk;
        }
        up[n_p + 2 * k] = BigRational::from_integer(BigInt::from(1)); // u_k
        lo[n_p + 2 * k + 1] = BigRational::from_integer(BigInt::from(-1)); // w_k
        rows.push(up);
        rhs.push(&e_q[k] + &tol_q);
        rows.push(lo);
        rhs.push(&e_q[k] - &tol_q);
    }

    match phase1_simplex(rows, rhs)? {
        Some(solution) => {
            let witness: Vec<f64> = solution[..n_p].iter().map(rational_to_f64).collect();
            Ok(Feasibility::Feasible { witness })
        }
        None => {
            let certificate = violated_functional(table, tol).ok_or_else(|| {
                Error::invalid("simplex reports infeasible but no Bell functional is violated")
            })?;
            Ok(Feasibility::Infeasible { certificate })
        }
    }
}

/// Find a violated facet (CHSH variant beyond `2 + 4 tol`, or a box bound
/// beyond `1 + tol`).
fn violated_functional(table: &CorrelationTable, tol: f64) -> Option<Certificate> {
    for i in 0..2 {
        for j in 0..2 {
            if table.e[i][j].abs() > 1.0 + tol {
                return Some(Certificate::Box {
                    i,
                    j,
                    value: table.e[i][j],
                });
            }
        }
    }
    // CHSH variants: one odd sign among the four terms, either overall
    // orientation.
    for odd in 0..4 {
        for flip in [1.0f64, -1.0] {
            let mut signs = [[0i8; 2]; 2];
            let mut value = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let s = flip * if i * 2 + j == odd { -1.0 } else { 1.0 };
                    signs[i][j] = s as i8;
                    value += s * table.e[i][j];
                }
            }
            if value > 2.0 + 4.0 * tol {
                return Some(Certificate::Chsh {
                    signs,
                    value,
                    bound: 2.0,
                });
            }
        }
    }
    None
}

fn rational_to_f64(q: &BigRational) -> f64 {
    match (i128::try_from(q.numer()), i128::try_from(q.denom())) {
        (Ok(n), Ok(d)) => n as f64 / d as f64,
        _ => {
            // Scale into the 53-bit window and truncate.
            let scaled = q * BigRational::from_integer(BigInt::from(1i64 << 53));
            let trunc = scaled.to_integer();
            i128::try_from(&trunc).map(|t| t as f64).unwrap_or(f64::NAN)
                / (1i64 << 53) as f64
        }
    }
}

/// Phase-1 simplex with Bland's rule over exact rationals. Returns a
/// feasible solution of `rows * x = rhs, x >= 0` or `None`.
fn phase1_simplex(
    rows: Vec<Vec<BigRational>>,
    mut rhs: Vec<BigRational>,
) -> Result<Option<Vec<BigRational>>> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    let mut rows = rows;
    // Normalize to rhs >= 0 and append artificial columns.
    for i in 0..m {
        if rhs[i] < BigRational::zero() {
            rhs[i] = -rhs[i].clone();
            for v in rows[i].iter_mut() {
                *v = -v.clone();
            }
        }
    }
    let total = n + m;
    let one = BigRational::from_integer(BigInt::from(1));
    let mut tab: Vec<Vec<BigRational>> = Vec::with_capacity(m);
    for (i, row) in rows.iter().enumerate() {
        let mut r = row.clone();
        r.extend((0..m).map(|j| if i == j { one.clone() } else { BigRational::zero() }));
        tab.push(r);
    }
    let mut basis: Vec<usize> = (n..total).collect();

    // Reduced costs for minimizing the artificial sum.
    let mut cost = vec![BigRational::zero(); total];
    let mut obj = BigRational::zero();
    for i in 0..m {
        for (j, value) in tab[i].iter().enumerate().take(n) {
            cost[j] -= value;
        }
        obj -= &rhs[i];
    }

    let max_iters = 100_000;
    for _ in 0..max_iters {
        let Some(enter) = (0..total).find(|&j| cost[j] < BigRational::zero()) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best: Option<BigRational> = None;
        for i in 0..m {
            if tab[i][enter] > BigRational::zero() {
                let ratio = &rhs[i] / &tab[i][enter];
                let better = match &best {
                    None => true,
                    Some(b) => ratio < *b || (ratio == *b && basis[i] < basis[leave.unwrap()]),
                };
                if better {
                    best = Some(ratio);
                    leave = Some(i);
                }
            }
        }
        let Some(leave) = leave else {
            return Err(Error::invalid("phase-1 simplex became unbounded"));
        };
        let pivot = tab[leave][enter].clone();
        for v in tab[leave].iter_mut() {
            *v /= &pivot;
        }
        rhs[leave] /= &pivot;
        for i in 0..m {
            if i != leave && !tab[i][enter].is_zero() {
                let factor = tab[i][enter].clone();
                let leave_row = tab[leave].clone();
                for (v, lv) in tab[i].iter_mut().zip(&leave_row) {
                    *v -= &factor * lv;
                }
                let sub = &factor * &rhs[leave];
                rhs[i] -= sub;
            }
        }
        if !cost[enter].is_zero() {
            let factor = cost[enter].clone();
            let leave_row = tab[leave].clone();
            for (c, lv) in cost.iter_mut().zip(&leave_row) {
                *c -= &factor * lv;
            }
            obj -= &factor * &rhs[leave];
        }
        basis[leave] = enter;
    }

    if !obj.is_zero() {
        return Ok(None);
    }
    let mut x = vec![BigRational::zero(); n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = rhs[i].clone();
        }
        // A basic artificial at level zero is harmless.
    }
    Ok(Some(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_state, random_unit_vector};
    use crate::rng::SplitMix64;
    use approx::assert_abs_diff_eq;

    const SQRT8: f64 = 2.828427124746190;

    /// The angle quadruple {0, pi/2, pi/4, 3pi/4} achieves the quantum
    /// maximum on the singlet with the assignment a0 = pi/2, a1 = 0.
    fn optimal_setting() -> ChshSetting {
        ChshSetting::new(
            singlet(),
            [
                std::f64::consts::FRAC_PI_2,
                0.0,
                std::f64::consts::FRAC_PI_4,
                3.0 * std::f64::consts::FRAC_PI_4,
            ],
        )
        .unwrap()
    }

    #[test]
    fn singlet_reaches_quantum_maximum() {
        let (s, table) = chsh_value(&optimal_setting()).unwrap();
        assert_abs_diff_eq!(s.abs(), SQRT8, epsilon = 1e-9);
        // Singlet correlations are -cos(a - b).
        for (i, a) in [std::f64::consts::FRAC_PI_2, 0.0].iter().enumerate() {
            for (j, b) in [
                std::f64::consts::FRAC_PI_4,
                3.0 * std::f64::consts::FRAC_PI_4,
            ]
            .iter()
            .enumerate()
            {
                assert_abs_diff_eq!(table.e[i][j], -(a - b).cos(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn product_state_stays_classical() {
        let mut rng = SplitMix64::new(17);
        let zero2 = QuantumState::basis(&[2, 2], &[0, 0]).unwrap();
        for _ in 0..2000 {
            let angles = [
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
            ];
            let (s, _) =
                chsh_value(&ChshSetting::new(zero2.clone(), angles).unwrap()).unwrap();
            assert!(s.abs() <= 2.0 + 1e-9, "product state gave S = {s}");
        }
    }

    #[test]
    fn equal_angles_collapse_to_twice_one_correlation() {
        let theta = 0.83;
        let (s, table) =
            chsh_value(&ChshSetting::new(singlet(), [theta; 4]).unwrap()).unwrap();
        assert_abs_diff_eq!(s, 2.0 * table.e[0][0], epsilon = 1e-12);
        assert!(s.abs() <= 2.0 + 1e-12);
    }

    #[test]
    fn tsirelson_bound_on_random_settings() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..2000 {
            let psi = random_state(&[2, 2], &mut rng).unwrap();
            let angles = [
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
            ];
            let (s, _) = chsh_value(&ChshSetting::new(psi, angles).unwrap()).unwrap();
            assert!(s.abs() <= SQRT8 + 1e-9, "S = {s} beats the quantum bound");
        }
    }

    #[test]
    fn vertex_bound_is_exactly_two() {
        assert_eq!(deterministic_vertex_bound(), 2);
        // Named assignments from the functional.
        let value = |a: [i64; 4]| (a[0] + a[1]) * a[2] + (a[0] - a[1]) * a[3];
        assert_eq!(value([1, 1, 1, 1]), 2);
        assert_eq!(value([1, -1, 1, 1]), 2);
    }

    #[test]
    fn zero_table_is_feasible_with_witness() {
        let table = CorrelationTable::new([[0.0; 2]; 2]).unwrap();
        match fine_graining_feasibility(&table, 1e-9).unwrap() {
            Feasibility::Feasible { witness } => {
                let sum: f64 = witness.iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
                assert!(witness.iter().all(|&w| w >= -1e-15));
                verify_witness(&witness, &table, 1e-9);
            }
            Feasibility::Infeasible { .. } => panic!("zero table must be feasible"),
        }
    }

    #[test]
    fn deterministic_table_is_feasible_with_point_mass() {
        // The all-plus assignment gives E = (1,1,1,1).
        let table = CorrelationTable::new([[1.0, 1.0], [1.0, 1.0]]).unwrap();
        match fine_graining_feasibility(&table, 1e-9).unwrap() {
            Feasibility::Feasible { witness } => {
                verify_witness(&witness, &table, 1e-9);
                // Mass concentrates on the two global-sign-equivalent
                // assignments.
                let max = witness.iter().cloned().fold(0.0, f64::max);
                assert!(max > 0.49, "witness too diffuse: {witness:?}");
            }
            Feasibility::Infeasible { .. } => panic!("vertex table must be feasible"),
        }
    }

    #[test]
    fn singlet_table_is_infeasible_with_chsh_certificate() {
        let (s, table) = chsh_value(&optimal_setting()).unwrap();
        match fine_graining_feasibility(&table, 1e-6).unwrap() {
            Feasibility::Infeasible { certificate } => match certificate {
                Certificate::Chsh { value, bound, .. } => {
                    assert_abs_diff_eq!(value, s.abs(), epsilon = 1e-9);
                    assert_eq!(bound, 2.0);
                }
                Certificate::Box { .. } => panic!("expected a CHSH certificate"),
            },
            Feasibility::Feasible { .. } => panic!("singlet table must be infeasible"),
        }
    }

    #[test]
    fn infeasibility_persists_up_to_the_tolerance_threshold() {
        // The approximate-homomorphism margin: infeasible for any tol
        // below (|S| - 2)/4, feasible above it.
        let (s, table) = chsh_value(&optimal_setting()).unwrap();
        let threshold = (s.abs() - 2.0) / 4.0;
        let below = fine_graining_feasibility(&table, threshold - 0.01).unwrap();
        assert!(!below.is_feasible());
        let above = fine_graining_feasibility(&table, threshold + 0.01).unwrap();
        assert!(above.is_feasible());
    }

    #[test]
    fn random_quantum_tables_resolve_consistently() {
        // Every outcome must carry its own proof: a witness reproducing
        // the table or a violated functional.
        let mut rng = SplitMix64::new(5);
        for _ in 0..40 {
            let psi = random_unit_vector(4, &mut rng).unwrap();
            let psi = QuantumState::new(psi.amps().clone(), vec![2, 2]).unwrap();
            let angles = [
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
                rng.next_f64() * std::f64::consts::TAU,
            ];
            let (s, table) = chsh_value(&ChshSetting::new(psi, angles).unwrap()).unwrap();
            match fine_graining_feasibility(&table, 1e-7).unwrap() {
                Feasibility::Feasible { witness } => verify_witness(&witness, &table, 2e-7),
                Feasibility::Infeasible { certificate } => match certificate {
                    Certificate::Chsh { value, .. } => {
                        assert!(value > 2.0, "bad certificate {value} for S = {s}")
                    }
                    Certificate::Box { value, .. } => assert!(value.abs() > 1.0),
                },
            }
        }
    }

    fn verify_witness(witness: &[f64], table: &CorrelationTable, tol: f64) {
        let assignments = deterministic_assignments();
        let mut e = [[0.0f64; 2]; 2];
        for (w, a) in witness.iter().zip(&assignments) {
            e[0][0] += w * (a[0] * a[2]) as f64;
            e[0][1] += w * (a[0] * a[3]) as f64;
            e[1][0] += w * (a[1] * a[2]) as f64;
            e[1][1] += w * (a[1] * a[3]) as f64;
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (e[i][j] - table.e[i][j]).abs() <= tol + 1e-12,
                    "witness misses E[{i}][{j}]: {} vs {}",
                    e[i][j],
                    table.e[i][j]
                );
            }
        }
    }
}
