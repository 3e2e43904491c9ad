//! Error-driven box refinement of the gain table.
//!
//! A cell stores the gains at its 16 corners. It is accepted when the
//! multilinear prediction at its center is within `ε` (spectral norm) of the
//! directly solved center gain; otherwise it is split in half along every
//! axis. Cells still failing at `max_depth` are kept and flagged.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;

use super::{blend, cell_fraction, direct_gain, spectral_norm, with_pool, GainSchedule, ParamDigest};
use super::{CORNERS, DIMS};
use crate::dynamics::Arm;
use crate::error::{Error, Result};
use crate::kinematics::JointAngles;
use crate::linearization::GainMatrix;
use crate::riccati::CostWeights;

/// Axis-aligned box in angle space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleBox {
    pub lo: [f64; DIMS],
    pub hi: [f64; DIMS],
}

impl AngleBox {
    pub fn new(lo: [f64; DIMS], hi: [f64; DIMS]) -> Result<Self> {
        for d in 0..DIMS {
            if !(lo[d].is_finite() && hi[d].is_finite() && lo[d] < hi[d]) {
                return Err(Error::InvalidParameter(format!(
                    "box dimension {d} needs finite lo < hi, got [{}, {}]",
                    lo[d], hi[d]
                )));
            }
        }
        Ok(AngleBox { lo, hi })
    }

    pub fn center(&self) -> [f64; DIMS] {
        std::array::from_fn(|d| 0.5 * (self.lo[d] + self.hi[d]))
    }

    pub fn corner(&self, c: usize) -> [f64; DIMS] {
        std::array::from_fn(|d| if c >> (DIMS - 1 - d) & 1 == 1 { self.hi[d] } else { self.lo[d] })
    }

    /// Child `c` of a 16-way split, using the same bit convention as corners.
    pub fn child(&self, c: usize) -> AngleBox {
        let mid = self.center();
        let mut b = *self;
        for d in 0..DIMS {
            if c >> (DIMS - 1 - d) & 1 == 1 {
                b.lo[d] = mid[d];
            } else {
                b.hi[d] = mid[d];
            }
        }
        b
    }

    pub fn contains(&self, theta: &[f64; DIMS]) -> bool {
        (0..DIMS).all(|d| theta[d] >= self.lo[d] && theta[d] <= self.hi[d])
    }

    /// Child holding `theta`; lower halves are half-open.
    fn child_index(&self, theta: &[f64; DIMS]) -> usize {
        let mid = self.center();
        (0..DIMS).fold(0, |c, d| c << 1 | usize::from(theta[d] >= mid[d]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Leaf {
        corners: Box<[GainMatrix; CORNERS]>,
        /// Center-point interpolation error; `None` when refinement was disabled.
        center_error: Option<f64>,
        /// Still above tolerance at the depth cap.
        flagged: bool,
    },
    Internal(Box<[Cell; CORNERS]>),
}

/// A leaf together with its box and depth (root = 1).
#[derive(Debug, Clone, Copy)]
pub struct LeafView<'a> {
    pub bounds: AngleBox,
    pub depth: usize,
    pub corners: &'a [GainMatrix; CORNERS],
    pub center_error: Option<f64>,
    pub flagged: bool,
}

impl LeafView<'_> {
    pub fn interpolate(&self, theta: &[f64; DIMS]) -> GainMatrix {
        let frac = std::array::from_fn(|d| cell_fraction(theta[d], self.bounds.lo[d], self.bounds.hi[d]));
        blend(|c| self.corners[c], &frac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedTable {
    pub(crate) bounds: AngleBox,
    pub(crate) epsilon: f64,
    pub(crate) max_depth: u32,
    pub(crate) digest: ParamDigest,
    pub(crate) root: Cell,
}

impl RefinedTable {
    pub fn bounds(&self) -> &AngleBox {
        &self.bounds
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn root(&self) -> &Cell {
        &self.root
    }

    /// Leaves in pre-order.
    pub fn leaves(&self) -> Vec<LeafView<'_>> {
        fn walk<'a>(cell: &'a Cell, bounds: AngleBox, depth: usize, out: &mut Vec<LeafView<'a>>) {
            match cell {
                Cell::Leaf { corners, center_error, flagged } => out.push(LeafView {
                    bounds,
                    depth,
                    corners,
                    center_error: *center_error,
                    flagged: *flagged,
                }),
                Cell::Internal(children) => {
                    for (c, child) in children.iter().enumerate() {
                        walk(child, bounds.child(c), depth + 1, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, self.bounds, 1, &mut out);
        out
    }

    pub fn depth(&self) -> usize {
        self.leaves().iter().map(|l| l.depth).max().unwrap_or(1)
    }

    pub fn flagged(&self) -> Vec<LeafView<'_>> {
        self.leaves().into_iter().filter(|l| l.flagged).collect()
    }

    /// Number of distinct corner gains stored.
    pub fn distinct_nodes(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        for leaf in self.leaves() {
            for c in 0..CORNERS {
                seen.insert(leaf.bounds.corner(c).map(f64::to_bits));
            }
        }
        seen.len()
    }

    pub fn lookup(&self, angles: &JointAngles) -> Result<GainMatrix> {
        let theta = angles.as_array();
        if !self.bounds.contains(&theta) {
            return Err(Error::OutOfBounds { angles: theta });
        }
        let mut cell = &self.root;
        let mut bounds = self.bounds;
        loop {
            match cell {
                Cell::Leaf { corners, .. } => {
                    let frac =
                        std::array::from_fn(|d| cell_fraction(theta[d], bounds.lo[d], bounds.hi[d]));
                    return Ok(blend(|c| corners[c], &frac));
                }
                Cell::Internal(children) => {
                    let c = bounds.child_index(&theta);
                    bounds = bounds.child(c);
                    cell = &children[c];
                }
            }
        }
    }
}

impl GainSchedule for RefinedTable {
    fn gain(&self, angles: &JointAngles) -> Result<GainMatrix> {
        self.lookup(angles)
    }

    fn digest(&self) -> &ParamDigest {
        &self.digest
    }

    fn bounds(&self) -> AngleBox {
        self.bounds
    }
}

struct Refiner<'a> {
    arm: &'a Arm,
    weights: &'a CostWeights,
    epsilon: f64,
    max_depth: u32,
    cache: Mutex<HashMap<[u64; DIMS], GainMatrix>>,
    solves: AtomicUsize,
}

impl Refiner<'_> {
    fn solve(&self, theta: [f64; DIMS]) -> Result<GainMatrix> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        direct_gain(self.arm, self.weights, theta).map_err(|e| e.at_node(None, theta))
    }

    fn corner_gain(&self, theta: [f64; DIMS]) -> Result<GainMatrix> {
        let key = theta.map(f64::to_bits);
        if let Some(k) = self.cache.lock().unwrap().get(&key) {
            return Ok(*k);
        }
        let k = self.solve(theta)?;
        self.cache.lock().unwrap().insert(key, k);
        Ok(k)
    }

    fn build(&self, bounds: AngleBox, depth: u32) -> Result<Cell> {
        let mut corners = Box::new([GainMatrix::zeros(); CORNERS]);
        for (c, slot) in corners.iter_mut().enumerate() {
            *slot = self.corner_gain(bounds.corner(c))?;
        }
        if self.epsilon.is_infinite() {
            return Ok(Cell::Leaf { corners, center_error: None, flagged: false });
        }
        let predicted = blend(|c| corners[c], &[0.5; DIMS]);
        let error = spectral_norm(&(predicted - self.solve(bounds.center())?));
        if error <= self.epsilon {
            return Ok(Cell::Leaf { corners, center_error: Some(error), flagged: false });
        }
        if depth >= self.max_depth {
            return Ok(Cell::Leaf { corners, center_error: Some(error), flagged: true });
        }
        let children: Vec<Cell> = (0..CORNERS)
            .into_par_iter()
            .map(|c| self.build(bounds.child(c), depth + 1))
            .collect::<Result<_>>()?;
        let children: Box<[Cell; CORNERS]> =
            children.into_boxed_slice().try_into().expect("16 children");
        Ok(Cell::Internal(children))
    }
}

/// Builds a refined table over `root` on the current rayon pool.
/// Returns the table and the number of direct LQR solves performed.
pub fn refine(
    arm: &Arm,
    weights: &CostWeights,
    root: AngleBox,
    epsilon: f64,
    max_depth: u32,
) -> Result<(RefinedTable, usize)> {
    if !(epsilon > 0.0) || max_depth < 1 {
        return Err(Error::InvalidParameter(format!(
            "refinement needs ε > 0 and max_depth ≥ 1, got ε = {epsilon}, max_depth = {max_depth}"
        )));
    }
    let refiner = Refiner {
        arm,
        weights,
        epsilon,
        max_depth,
        cache: Mutex::new(HashMap::new()),
        solves: AtomicUsize::new(0),
    };
    let root_cell = refiner.build(root, 1)?;
    let table = RefinedTable {
        bounds: root,
        epsilon,
        max_depth,
        digest: ParamDigest::of(arm, weights),
        root: root_cell,
    };
    Ok((table, refiner.solves.into_inner()))
}

pub fn refine_with_threads(
    arm: &Arm,
    weights: &CostWeights,
    root: AngleBox,
    epsilon: f64,
    max_depth: u32,
    threads: usize,
) -> Result<(RefinedTable, usize)> {
    with_pool(threads, || refine(arm, weights, root, epsilon, max_depth))
}
