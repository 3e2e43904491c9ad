//! Precomputed LQR gains over the joint-angle space.
//!
//! Every table node is an equilibrium of the arm (rates pinned to zero,
//! gravity-holding torque), so each stored gain is the LQR gain of a true
//! linearization. Lookups interpolate the 16 surrounding corner gains
//! entrywise. [`GainTable`] is a regular grid; [`RefinedTable`] is a 16-ary
//! box tree refined where the gain varies quickly.

mod format;
mod refine;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::Arm;
use crate::error::{Error, Result};
use crate::kinematics::JointAngles;
use crate::linearization::{equilibrium_point, linearize, GainMatrix};
use crate::riccati::CostWeights;

pub use format::{AnyTable, FORMAT_VERSION, GRID_MAGIC, REFINED_MAGIC};
pub use refine::{refine, refine_with_threads, AngleBox, Cell, LeafView, RefinedTable};

/// Number of gridded dimensions (the four joint angles).
pub const DIMS: usize = 4;
/// Corners of a 4-D cell.
pub const CORNERS: usize = 1 << DIMS;

/// SHA-256 over the arm parameters and cost weights a table was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamDigest(pub [u8; 32]);

impl ParamDigest {
    pub fn of(arm: &Arm, weights: &CostWeights) -> Self {
        let mut h = Sha256::new();
        h.update(b"armlqr/params/v1");
        let g = &arm.geometry;
        let m = &arm.masses;
        let scalars = g
            .lengths()
            .into_iter()
            .chain(m.point_masses())
            .chain(m.link_masses())
            .chain([m.gravity()]);
        for v in scalars {
            h.update(v.to_le_bytes());
        }
        for mat in [weights.q(), weights.r()] {
            h.update((mat.nrows() as u32).to_le_bytes());
            // row-major
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    h.update(mat[(i, j)].to_le_bytes());
                }
            }
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        ParamDigest(out)
    }
}

/// Anything that maps joint angles to a gain: grid tables and refined trees.
pub trait GainSchedule: Sync {
    fn gain(&self, angles: &JointAngles) -> Result<GainMatrix>;
    fn digest(&self) -> &ParamDigest;
    /// Region in which [`GainSchedule::gain`] is defined.
    fn bounds(&self) -> AngleBox;
}

/// LQR gain of the equilibrium linearization at `theta`, solved directly.
pub fn direct_gain(arm: &Arm, weights: &CostWeights, theta: [f64; DIMS]) -> Result<GainMatrix> {
    let op = equilibrium_point(arm, &JointAngles::new(theta)?)?;
    linearize(arm, &op)?.lqr_gain(weights)
}

/// Largest singular value of a gain difference.
pub fn spectral_norm(m: &GainMatrix) -> f64 {
    let gram = m * m.transpose();
    gram.symmetric_eigenvalues().max().max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: u32,
}

impl Axis {
    fn validate(&self, dim: usize) -> Result<()> {
        let ok = self.min.is_finite()
            && self.max.is_finite()
            && self.min < self.max
            && self.min >= -PI
            && self.max <= PI
            && self.count >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "grid axis {dim} needs -π ≤ min < max ≤ π and count ≥ 2, got {self:?}"
            )))
        }
    }

    /// Coordinate of node `i`; the end nodes are exactly `min` and `max`.
    pub fn node(&self, i: usize) -> f64 {
        let t = i as f64 / (self.count - 1) as f64;
        (1.0 - t) * self.min + t * self.max
    }

    /// Cell index and fractional position of `x`. Cells are half-open
    /// `[lo, hi)` except the last, which is closed.
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= self.min && x <= self.max) {
            return None;
        }
        let last = self.count as usize - 2;
        let t = (x - self.min) / (self.max - self.min) * (self.count - 1) as f64;
        let mut i = (t.floor().max(0.0) as usize).min(last);
        while i > 0 && x < self.node(i) {
            i -= 1;
        }
        while i < last && x >= self.node(i + 1) {
            i += 1;
        }
        Some((i, cell_fraction(x, self.node(i), self.node(i + 1))))
    }
}

/// Position of `x` in `[lo, hi]`, exact at the ends.
pub(crate) fn cell_fraction(x: f64, lo: f64, hi: f64) -> f64 {
    if x == lo {
        0.0
    } else if x == hi {
        1.0
    } else {
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Multilinear blend of 16 corner gains. Corner `c` takes the upper end of
/// dimension `d` when bit `DIMS - 1 - d` of `c` is set (row-major order).
/// Zero-weight corners are skipped, so a lookup on a node returns it bit-for-bit.
pub(crate) fn blend(corners: impl Fn(usize) -> GainMatrix, frac: &[f64; DIMS]) -> GainMatrix {
    let mut acc: Option<GainMatrix> = None;
    for c in 0..CORNERS {
        let mut w = 1.0;
        for (d, f) in frac.iter().enumerate() {
            w *= if c >> (DIMS - 1 - d) & 1 == 1 { *f } else { 1.0 - f };
        }
        if w == 0.0 {
            continue;
        }
        let term = corners(c) * w;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    acc.expect("fractions in [0, 1] leave at least one corner with positive weight")
}

/// Per-dimension `(min, max, count)` for the four joint angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct GridSpec {
    axes: [Axis; DIMS],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    axes: [Axis; DIMS],
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        GridSpec::new(raw.axes)
    }
}

impl From<GridSpec> for RawGrid {
    fn from(g: GridSpec) -> Self {
        RawGrid { axes: g.axes }
    }
}

impl GridSpec {
    pub fn new(axes: [Axis; DIMS]) -> Result<Self> {
        for (d, axis) in axes.iter().enumerate() {
            axis.validate(d)?;
        }
        Ok(GridSpec { axes })
    }

    /// Same bounds and count on every axis given as `(min, max)` pairs.
    pub fn uniform(bounds: [(f64, f64); DIMS], count: u32) -> Result<Self> {
        GridSpec::new(bounds.map(|(min, max)| Axis { min, max, count }))
    }

    pub fn axes(&self) -> &[Axis; DIMS] {
        &self.axes
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.count as usize).product()
    }

    /// Multi-index of flat node `index`, last dimension fastest.
    pub fn unravel(&self, mut index: usize) -> [usize; DIMS] {
        let mut idx = [0; DIMS];
        for d in (0..DIMS).rev() {
            let n = self.axes[d].count as usize;
            idx[d] = index % n;
            index /= n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize; DIMS]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (i, a)| acc * a.count as usize + i)
    }

    pub fn node_angles(&self, index: usize) -> [f64; DIMS] {
        let idx = self.unravel(index);
        std::array::from_fn(|d| self.axes[d].node(idx[d]))
    }

    pub fn bounds(&self) -> AngleBox {
        AngleBox {
            lo: self.axes.map(|a| a.min),
            hi: self.axes.map(|a| a.max),
        }
    }
}

/// Regular-grid gain table.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    spec: GridSpec,
    digest: ParamDigest,
    entries: Vec<GainMatrix>,
}

impl GainTable {
    pub fn from_parts(spec: GridSpec, digest: ParamDigest, entries: Vec<GainMatrix>) -> Result<Self> {
        if entries.len() != spec.node_count() {
            return Err(Error::InvalidParameter(format!(
                "{} entries for a grid of {} nodes",
                entries.len(),
                spec.node_count()
            )));
        }
        Ok(GainTable { spec, digest, entries })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn entries(&self) -> &[GainMatrix] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Interpolates inside one cell, given its lower node multi-index.
    pub fn interpolate_cell(&self, cell: [usize; DIMS], frac: [f64; DIMS]) -> GainMatrix {
        blend(
            |c| {
                let idx: [usize; DIMS] =
                    std::array::from_fn(|d| cell[d] + (c >> (DIMS - 1 - d) & 1));
                self.entries[self.spec.ravel(&idx)]
            },
            &frac,
        )
    }

    pub fn lookup(&self, angles: &JointAngles) -> Result<GainMatrix> {
        let theta = angles.as_array();
        let mut cell = [0; DIMS];
        let mut frac = [0.0; DIMS];
        for d in 0..DIMS {
            let (i, f) = self.spec.axes[d]
                .locate(theta[d])
                .ok_or(Error::OutOfBounds { angles: theta })?;
            cell[d] = i;
            frac[d] = f;
        }
        Ok(self.interpolate_cell(cell, frac))
    }
}

impl GainSchedule for GainTable {
    fn gain(&self, angles: &JointAngles) -> Result<GainMatrix> {
        self.lookup(angles)
    }

    fn digest(&self) -> &ParamDigest {
        &self.digest
    }

    fn bounds(&self) -> AngleBox {
        self.spec.bounds()
    }
}

/// Solves every grid node on the current rayon pool.
pub fn precompute(arm: &Arm, weights: &CostWeights, spec: &GridSpec) -> Result<GainTable> {
    let results: Vec<Result<GainMatrix>> = (0..spec.node_count())
        .into_par_iter()
        .map(|i| {
            let theta = spec.node_angles(i);
            direct_gain(arm, weights, theta).map_err(|e| e.at_node(Some(i), theta))
        })
        .collect();
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    GainTable::from_parts(*spec, ParamDigest::of(arm, weights), entries)
}

/// [`precompute`] on a dedicated pool of `threads` workers.
pub fn precompute_with_threads(
    arm: &Arm,
    weights: &CostWeights,
    spec: &GridSpec,
    threads: usize,
) -> Result<GainTable> {
    with_pool(threads, || precompute(arm, weights, spec))
}

pub(crate) fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}
