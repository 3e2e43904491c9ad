//! Binary table files.
//!
//! Grid tables (`AGT1`), all integers and floats little-endian:
//!
//! ```text
//! magic "AGT1" | version u32 | dims u32
//! dims × (min f64 | max f64 | count u32)
//! digest [u8; 32]
//! entries, row-major over nodes (last dimension fastest),
//!   each 32 f64: the 4×8 gain row-major
//! ```
//!
//! Refined tables (`AGR1`) share the header layout up to the digest, with
//! per-dimension `(lo f64 | hi f64)` followed by `epsilon f64 | max_depth u32`.
//! Cells follow in pre-order, each led by a tag byte: `0` leaf, then
//! `flagged u8 | center_error f64 (NaN if unevaluated) | 16 × 32 f64`;
//! `1` internal, then its 16 children.

use super::{Axis, Cell, GainSchedule, GainTable, GridSpec, ParamDigest, RefinedTable};
use super::{AngleBox, CORNERS, DIMS};
use crate::error::{Error, Result};
use crate::kinematics::JointAngles;
use crate::linearization::GainMatrix;

pub const GRID_MAGIC: [u8; 4] = *b"AGT1";
pub const REFINED_MAGIC: [u8; 4] = *b"AGR1";
pub const FORMAT_VERSION: u32 = 1;

const GAIN_ROWS: usize = 4;
const GAIN_COLS: usize = 8;
/// Refined trees deeper than this are rejected on load.
const MAX_LOAD_DEPTH: usize = 64;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_gain(out: &mut Vec<u8>, k: &GainMatrix) {
    for i in 0..GAIN_ROWS {
        for j in 0..GAIN_COLS {
            put_f64(out, k[(i, j)]);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::TruncatedData(format!("need {n} bytes at offset {}, have {}", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn digest(&mut self) -> Result<ParamDigest> {
        Ok(ParamDigest(self.take(32)?.try_into().unwrap()))
    }

    fn gain(&mut self) -> Result<GainMatrix> {
        let mut k = GainMatrix::zeros();
        for i in 0..GAIN_ROWS {
            for j in 0..GAIN_COLS {
                k[(i, j)] = self.f64()?;
            }
        }
        Ok(k)
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        if self.take(4).map_err(|_| Error::BadMagic)? != magic {
            return Err(Error::BadMagic);
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let dims = self.u32()?;
        if dims as usize != DIMS {
            return Err(Error::TruncatedData(format!("expected {DIMS} dimensions, found {dims}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::TruncatedData(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}

fn invalid(e: Error) -> Error {
    Error::TruncatedData(e.to_string())
}

impl GainTable {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 + DIMS * 20 + 32 + self.len() * 256);
        out.extend_from_slice(&GRID_MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, DIMS as u32);
        for axis in self.spec.axes() {
            put_f64(&mut out, axis.min);
            put_f64(&mut out, axis.max);
            put_u32(&mut out, axis.count);
        }
        out.extend_from_slice(&self.digest.0);
        for k in &self.entries {
            put_gain(&mut out, k);
        }
        out
    }

    /// Parses a grid table without checking its digest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(GRID_MAGIC)?;
        let mut axes = [Axis { min: 0.0, max: 0.0, count: 0 }; DIMS];
        for axis in axes.iter_mut() {
            *axis = Axis { min: r.f64()?, max: r.f64()?, count: r.u32()? };
        }
        let spec = GridSpec::new(axes).map_err(invalid)?;
        let digest = r.digest()?;
        let n = spec.node_count();
        if bytes.len().saturating_sub(r.pos) / (GAIN_ROWS * GAIN_COLS * 8) < n {
            return Err(Error::TruncatedData(format!("expected {n} entries")));
        }
        let entries = (0..n).map(|_| r.gain()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        GainTable::from_parts(spec, digest, entries)
    }

    /// Parses and requires the table to have been built for `expected`.
    pub fn from_bytes_checked(bytes: &[u8], expected: &ParamDigest) -> Result<Self> {
        let t = GainTable::from_bytes(bytes)?;
        if t.digest != *expected {
            return Err(Error::DigestMismatch);
        }
        Ok(t)
    }
}

fn put_cell(out: &mut Vec<u8>, cell: &Cell) {
    match cell {
        Cell::Leaf { corners, center_error, flagged } => {
            out.push(0);
            out.push(u8::from(*flagged));
            put_f64(out, center_error.unwrap_or(f64::NAN));
            for k in corners.iter() {
                put_gain(out, k);
            }
        }
        Cell::Internal(children) => {
            out.push(1);
            for child in children.iter() {
                put_cell(out, child);
            }
        }
    }
}

fn read_cell(r: &mut Reader, depth: usize) -> Result<Cell> {
    if depth > MAX_LOAD_DEPTH {
        return Err(Error::TruncatedData("refined tree too deep".into()));
    }
    match r.u8()? {
        0 => {
            let flagged = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(Error::TruncatedData(format!("bad flag byte {other}"))),
            };
            let err = r.f64()?;
            let mut corners = Box::new([GainMatrix::zeros(); CORNERS]);
            for k in corners.iter_mut() {
                *k = r.gain()?;
            }
            Ok(Cell::Leaf { corners, center_error: (!err.is_nan()).then_some(err), flagged })
        }
        1 => {
            let children = (0..CORNERS)
                .map(|_| read_cell(r, depth + 1))
                .collect::<Result<Vec<_>>>()?;
            Ok(Cell::Internal(children.into_boxed_slice().try_into().expect("16 children")))
        }
        tag => Err(Error::TruncatedData(format!("bad cell tag {tag}"))),
    }
}

impl RefinedTable {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&REFINED_MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, DIMS as u32);
        for d in 0..DIMS {
            put_f64(&mut out, self.bounds.lo[d]);
            put_f64(&mut out, self.bounds.hi[d]);
        }
        put_f64(&mut out, self.epsilon);
        put_u32(&mut out, self.max_depth);
        out.extend_from_slice(&self.digest.0);
        put_cell(&mut out, &self.root);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(REFINED_MAGIC)?;
        let mut lo = [0.0; DIMS];
        let mut hi = [0.0; DIMS];
        for d in 0..DIMS {
            lo[d] = r.f64()?;
            hi[d] = r.f64()?;
        }
        let bounds = AngleBox::new(lo, hi).map_err(invalid)?;
        let epsilon = r.f64()?;
        let max_depth = r.u32()?;
        let digest = r.digest()?;
        let root = read_cell(&mut r, 1)?;
        r.finish()?;
        Ok(RefinedTable { bounds, epsilon, max_depth, digest, root })
    }

    pub fn from_bytes_checked(bytes: &[u8], expected: &ParamDigest) -> Result<Self> {
        let t = RefinedTable::from_bytes(bytes)?;
        if t.digest != *expected {
            return Err(Error::DigestMismatch);
        }
        Ok(t)
    }
}

/// Either kind of table file, told apart by its magic.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTable {
    Grid(GainTable),
    Refined(RefinedTable),
}

impl AnyTable {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes.get(..4) {
            Some(m) if m == GRID_MAGIC => GainTable::from_bytes(bytes).map(AnyTable::Grid),
            Some(m) if m == REFINED_MAGIC => RefinedTable::from_bytes(bytes).map(AnyTable::Refined),
            _ => Err(Error::BadMagic),
        }
    }

    pub fn from_bytes_checked(bytes: &[u8], expected: &ParamDigest) -> Result<Self> {
        let t = AnyTable::from_bytes(bytes)?;
        if t.digest() != expected {
            return Err(Error::DigestMismatch);
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyTable::Grid(t) => t.to_bytes(),
            AnyTable::Refined(t) => t.to_bytes(),
        }
    }
}

impl GainSchedule for AnyTable {
    fn gain(&self, angles: &JointAngles) -> Result<GainMatrix> {
        match self {
            AnyTable::Grid(t) => t.lookup(angles),
            AnyTable::Refined(t) => t.lookup(angles),
        }
    }

    fn digest(&self) -> &ParamDigest {
        match self {
            AnyTable::Grid(t) => t.digest(),
            AnyTable::Refined(t) => t.digest(),
        }
    }

    fn bounds(&self) -> AngleBox {
        match self {
            AnyTable::Grid(t) => t.bounds(),
            AnyTable::Refined(t) => t.bounds,
        }
    }
}
