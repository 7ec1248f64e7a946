//! Discrete 1+1-dimensional Minkowski lattice with unit light speed.
//!
//! Causal relations follow J+/J-: lightlike separation counts as causal.
//! The chronological (strict-interior, I+) variant is available through
//! [`Chronology::Chronological`].

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Lattice point; `x` is space, `t` is time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(i64, i64)", into = "(i64, i64)")]
pub struct LatticePoint {
    pub x: i64,
    pub t: i64,
}

impl LatticePoint {
    pub fn new(x: i64, t: i64) -> Self {
        LatticePoint { x, t }
    }
}

impl From<(i64, i64)> for LatticePoint {
    fn from((x, t): (i64, i64)) -> Self {
        LatticePoint { x, t }
    }
}

impl From<LatticePoint> for (i64, i64) {
    fn from(p: LatticePoint) -> Self {
        (p.x, p.t)
    }
}

/// Finite nonempty set of lattice points.
///
/// The config-file literal is a list of `[x, t]` integer pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    points: BTreeSet<LatticePoint>,
}

impl Region {
    pub fn new(points: impl IntoIterator<Item = LatticePoint>) -> Result<Self> {
        let points: BTreeSet<_> = points.into_iter().collect();
        if points.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(Region { points })
    }

    pub fn point(x: i64, t: i64) -> Self {
        Region {
            points: [LatticePoint::new(x, t)].into(),
        }
    }

    /// All given spatial positions at one time slice.
    pub fn time_slice(xs: impl IntoIterator<Item = i64>, t: i64) -> Result<Self> {
        Region::new(xs.into_iter().map(|x| LatticePoint::new(x, t)))
    }

    pub fn points(&self) -> impl Iterator<Item = &LatticePoint> {
        self.points.iter()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn union(&self, other: &Region) -> Region {
        Region {
            points: self.points.union(&other.points).copied().collect(),
        }
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.points.is_subset(&other.points)
    }

    /// Spatial projection: the set of x coordinates.
    pub fn spatial_sites(&self) -> BTreeSet<i64> {
        self.points.iter().map(|p| p.x).collect()
    }

    /// The single time coordinate, if the region lies on one slice.
    pub fn single_time(&self) -> Option<i64> {
        let mut ts = self.points.iter().map(|p| p.t);
        let first = ts.next()?;
        ts.all(|t| t == first).then_some(first)
    }

    pub fn max_time(&self) -> i64 {
        self.points.iter().map(|p| p.t).max().unwrap()
    }

    pub fn min_time(&self) -> i64 {
        self.points.iter().map(|p| p.t).min().unwrap()
    }
}

/// Causal relation between two points or regions.
///
/// `StrictlyFuture` means "the first argument is in the causal future of
/// the second". Equal points report `Mixed` (the distinguished equal case
/// is handled as neither future nor spacelike).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CausalRelation {
    StrictlyFuture,
    StrictlyPast,
    Spacelike,
    Mixed,
}

/// Which future to use for point relations: causal J+ (lightlike counts)
/// or chronological I+ (strict interior).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Chronology {
    #[default]
    Causal,
    Chronological,
}

/// Relation of `p` to `q` with the causal (J+) convention.
pub fn point_relation(p: LatticePoint, q: LatticePoint) -> CausalRelation {
    point_relation_with(p, q, Chronology::Causal)
}

pub fn point_relation_with(p: LatticePoint, q: LatticePoint, chron: Chronology) -> CausalRelation {
    if p == q {
        return CausalRelation::Mixed;
    }
    let dx = (p.x - q.x).abs();
    let dt = p.t - q.t;
    if dx > dt.abs() {
        return CausalRelation::Spacelike;
    }
    let causal = match chron {
        Chronology::Causal => dx <= dt.abs(),
        Chronology::Chronological => dx < dt.abs(),
    };
    if causal && dt > 0 {
        CausalRelation::StrictlyFuture
    } else if causal && dt < 0 {
        CausalRelation::StrictlyPast
    } else {
        // Lightlike under the chronological convention, or dt = 0 with
        // dx <= 0 (impossible for distinct points).
        CausalRelation::Mixed
    }
}

/// Relation of region `a` to region `b`: `Spacelike` iff all point pairs
/// are spacelike, `StrictlyFuture` iff every point of `a` is causally after
/// every point of `b`, symmetrically for `StrictlyPast`; otherwise `Mixed`.
pub fn region_relation(a: &Region, b: &Region) -> CausalRelation {
    region_relation_with(a, b, Chronology::Causal)
}

pub fn region_relation_with(a: &Region, b: &Region, chron: Chronology) -> CausalRelation {
    let mut all_space = true;
    let mut all_future = true;
    let mut all_past = true;
    for p in a.points() {
        for q in b.points() {
            match point_relation_with(*p, *q, chron) {
                CausalRelation::Spacelike => {
                    all_future = false;
                    all_past = false;
                }
                CausalRelation::StrictlyFuture => {
                    all_space = false;
                    all_past = false;
                }
                CausalRelation::StrictlyPast => {
                    all_space = false;
                    all_future = false;
                }
                CausalRelation::Mixed => {
                    all_space = false;
                    all_future = false;
                    all_past = false;
                }
            }
        }
    }
    if all_space {
        CausalRelation::Spacelike
    } else if all_future {
        CausalRelation::StrictlyFuture
    } else if all_past {
        CausalRelation::StrictlyPast
    } else {
        CausalRelation::Mixed
    }
}

/// Expand a site set by `dt` in each spatial direction, clipped to the
/// chain `0..chain_len`.
pub fn lightcone_grow(sites: &BTreeSet<usize>, dt: usize, chain_len: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for &s in sites {
        let lo = s.saturating_sub(dt);
        let hi = (s + dt).min(chain_len.saturating_sub(1));
        for x in lo..=hi {
            out.insert(x);
        }
    }
    out
}
