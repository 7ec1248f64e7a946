//! Desk-scale quantum simulation on a 1+1D lattice.
//!
//! Everything here is dense, double-precision, and deliberately small:
//! total Hilbert-space dimension is capped at 2^12 so that every quantity
//! of interest is exactly computable. The crate provides
//!
//! - [`linalg`]: states and operators over tensor products of qudit sites,
//!   embeddings, partial traces, Hermitian evolution, seeded randomness;
//! - [`spacetime`]: a discrete Minkowski chain with unit light speed and
//!   causal relations between regions;
//! - [`dynamics`]: unitary time evolution suppliers (static, brickwork
//!   circuits, model Hamiltonians);
//! - [`statements`]: projection statements localized in spacetime, logical
//!   combinations with time-ordering, probabilities, visibility bounds,
//!   and record-replacement error reports;
//! - [`malg`]: finite vector-valued measure algebras generated by commuting
//!   records, with contraction checks, probability-space extraction,
//!   observer ideals/filters, and record-swap experiments;
//! - [`bell`]: CHSH values, the deterministic-vertex bound, and exact
//!   feasibility of local fine-grainings;
//! - [`darwinism`]: the star-coupled pointer-state model, record error
//!   decay, visibility scans, and observer branching;
//! - [`ensembles`]: density matrices, entropies, and statistical-ensemble
//!   identities.

pub mod bell;
pub mod darwinism;
pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod linalg;
pub mod malg;
pub mod rng;
pub mod spacetime;
pub mod statements;

pub use error::{Error, Result};
pub use linalg::{LinearOp, QuantumState, C64};
pub use rng::SplitMix64;
pub use spacetime::{CausalRelation, LatticePoint, Region};

/// Hard cap on the total Hilbert-space dimension (2^12).
pub const MAX_TOTAL_DIM: usize = 4096;
