//! Unitary time evolution suppliers.
//!
//! Statements at distinct lattice times are evaluated in the Heisenberg
//! picture: the projector of a statement at lattice time `t` is conjugated
//! by `U(t)` before composition. A [`Dynamics`] implementation provides
//! that unitary; [`StaticDynamics`] (the identity at all times) covers
//! equal-time experiments, and [`BrickworkCircuit`] provides a strictly
//! local circuit whose Heisenberg evolution respects the lattice light
//! cone.

use nalgebra::DMatrix;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::linalg::{embed_op, random_unitary, C64};
use crate::rng::SplitMix64;
use crate::spacetime::lightcone_grow;

/// Supplies the Schroedinger-picture unitary from lattice time 0 to `t`.
pub trait Dynamics {
    fn unitary_at(&self, t: i64) -> Result<DMatrix<C64>>;
    fn dim(&self) -> usize;

    /// Heisenberg-picture operator for a statement localized at lattice
    /// time `t`, expressed against the fixed reference state at time 0:
    /// `U(t)^dagger op U(t)`.
    fn heisenberg(&self, op: &DMatrix<C64>, t: i64) -> Result<DMatrix<C64>> {
        let u = self.unitary_at(t)?;
        Ok(u.adjoint() * op * &u)
    }
}

/// No dynamics: every statement acts directly, at any time.
#[derive(Debug, Clone)]
pub struct StaticDynamics {
    dim: usize,
}

impl StaticDynamics {
    pub fn new(dim: usize) -> Self {
        StaticDynamics { dim }
    }
}

impl Dynamics for StaticDynamics {
    fn unitary_at(&self, _t: i64) -> Result<DMatrix<C64>> {
        Ok(DMatrix::identity(self.dim, self.dim))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn heisenberg(&self, op: &DMatrix<C64>, _t: i64) -> Result<DMatrix<C64>> {
        Ok(op.clone())
    }
}

/// Brickwork circuit on a chain of qudits: layer `l` applies independent
/// two-site unitaries on pairs `(i, i+1)` with `i = l mod 2, l mod 2 + 2,
/// ...`. One layer advances one lattice time step, so operator supports
/// grow by at most one site per step on each side.
pub struct BrickworkCircuit {
    dims: Vec<usize>,
    layers: Vec<DMatrix<C64>>,
}

impl BrickworkCircuit {
    /// Random brickwork circuit with `n_layers` layers on qudit `dims`.
    pub fn random(dims: &[usize], n_layers: usize, rng: &mut SplitMix64) -> Result<Self> {
        let total: usize = dims.iter().product();
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let mut layer = DMatrix::<C64>::identity(total, total);
            let mut i = l % 2;
            while i + 1 < dims.len() {
                let d = dims[i] * dims[i + 1];
                let g = random_unitary(d, rng);
                layer = embed_op(&g, &[i, i + 1], dims)? * layer;
                i += 2;
            }
            layers.push(layer);
        }
        Ok(BrickworkCircuit {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Support bound after Heisenberg-evolving an operator on `sites`
    /// for `t` layers: the light cone grown by `t`.
    pub fn support_bound(&self, sites: &BTreeSet<usize>, t: usize) -> BTreeSet<usize> {
        lightcone_grow(sites, t, self.dims.len())
    }
}

impl Dynamics for BrickworkCircuit {
    fn unitary_at(&self, t: i64) -> Result<DMatrix<C64>> {
        if t < 0 || t as usize > self.layers.len() {
            return Err(Error::invalid(format!(
                "time {t} outside circuit depth 0..={}",
                self.layers.len()
            )));
        }
        let total = self.dim();
        let mut u = DMatrix::identity(total, total);
        for layer in &self.layers[..t as usize] {
            u = layer * u;
        }
        Ok(u)
    }

    fn dim(&self) -> usize {
        self.dims.iter().product()
    }
}
