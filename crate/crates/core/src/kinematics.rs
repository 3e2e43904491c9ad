//! Forward and inverse kinematics of the four-axis arm.
//!
//! Joints 2..4 rotate in a vertical "joint plane" and are measured from the
//! vertical, so a link at angle `s` points along `(sin s, cos s)` in planar
//! `(radial, height)` coordinates. Joint 1 yaws the joint plane about the
//! world Z axis, mapping planar `(x, y)` to world `(x sin θ1, x cos θ1, y)`.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Scalar;

/// Slack on the law-of-cosines argument before a target counts as unreachable.
const COSINE_SLACK: f64 = 1e-12;
/// Radial wrist offsets below this are treated as lying on the yaw axis.
const AXIS_TOL: f64 = 1e-12;

/// Link lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct ArmGeometry {
    lengths: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    l1: f64,
    l2: f64,
    l3: f64,
}

impl TryFrom<RawGeometry> for ArmGeometry {
    type Error = Error;
    fn try_from(raw: RawGeometry) -> Result<Self> {
        ArmGeometry::new(raw.l1, raw.l2, raw.l3)
    }
}

impl From<ArmGeometry> for RawGeometry {
    fn from(g: ArmGeometry) -> Self {
        RawGeometry { l1: g.lengths[0], l2: g.lengths[1], l3: g.lengths[2] }
    }
}

impl ArmGeometry {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Result<Self> {
        for (i, l) in [l1, l2, l3].into_iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "link length L{} must be finite and positive, got {l}",
                    i + 1
                )));
            }
        }
        Ok(ArmGeometry { lengths: [l1, l2, l3] })
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn l1(&self) -> f64 {
        self.lengths[0]
    }

    pub fn l2(&self) -> f64 {
        self.lengths[1]
    }

    pub fn l3(&self) -> f64 {
        self.lengths[2]
    }

    pub fn reach(&self) -> f64 {
        self.lengths.iter().sum()
    }
}

/// Wraps an angle into `(-π, π]`. Values already in range are returned untouched.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Joint angles `[θ1, θ2, θ3, θ4]` in radians, normalized to `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointAngles([f64; 4]);

impl JointAngles {
    pub fn new(angles: [f64; 4]) -> Result<Self> {
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter(format!("joint angles must be finite: {angles:?}")));
        }
        Ok(JointAngles(angles.map(normalize_angle)))
    }

    pub fn zero() -> Self {
        JointAngles([0.0; 4])
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    /// The three in-plane angles `[θ2, θ3, θ4]`.
    pub fn planar(&self) -> [f64; 3] {
        [self.0[1], self.0[2], self.0[3]]
    }
}

/// A point in the joint plane: `x` radial, `y` height.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const ORIGIN: PlanarPoint = PlanarPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Sub for PlanarPoint {
    type Output = PlanarPoint;
    fn sub(self, rhs: Self) -> Self {
        PlanarPoint { x: self.x - rhs.x, y: self.y - rhs.y }
    }
}

impl Add for PlanarPoint {
    type Output = PlanarPoint;
    fn add(self, rhs: Self) -> Self {
        PlanarPoint { x: self.x + rhs.x, y: self.y + rhs.y }
    }
}

/// World-frame point, Z vertical.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpatialPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SpatialPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        SpatialPoint { x, y, z }
    }

    pub fn max_abs_diff(&self, other: &SpatialPoint) -> f64 {
        (self.x - other.x).abs().max((self.y - other.y).abs()).max((self.z - other.z).abs())
    }
}

/// Planar joint positions `[p1, p2, p3, p4]` as `[x, y]` pairs, generic over the scalar.
pub(crate) fn planar_chain<T: Scalar>(geom: &ArmGeometry, planar: [T; 3]) -> [[T; 2]; 4] {
    let zero = T::constant(0.0);
    let mut points = [[zero, zero]; 4];
    let mut heading = zero;
    for k in 0..3 {
        heading = heading + planar[k];
        let (s, c) = heading.sin_cos();
        let len = T::constant(geom.lengths[k]);
        points[k + 1] = [points[k][0] + len * s, points[k][1] + len * c];
    }
    points
}

/// Joint positions in the joint plane for in-plane angles `θ2, θ3, θ4`.
pub fn fk_planar(geom: &ArmGeometry, theta2: f64, theta3: f64, theta4: f64) -> [PlanarPoint; 4] {
    planar_chain(geom, [theta2, theta3, theta4]).map(|[x, y]| PlanarPoint { x, y })
}

/// Lifts a joint-plane point into the world frame for base yaw `theta1`.
pub fn lift(p: PlanarPoint, theta1: f64) -> SpatialPoint {
    let (s, c) = theta1.sin_cos();
    SpatialPoint { x: p.x * s, y: p.x * c, z: p.y }
}

/// World positions of all four joints; `P4` is the end effector.
pub fn fk_spatial(geom: &ArmGeometry, angles: &JointAngles) -> [SpatialPoint; 4] {
    let [t1, t2, t3, t4] = angles.as_array();
    fk_planar(geom, t2, t3, t4).map(|p| lift(p, t1))
}

/// Closed-form inverse kinematics with the end link held at tool pitch
/// `pitch = θ2 + θ3 + θ4`. Always returns the elbow branch with `θ3 ≤ 0`.
pub fn ik(geom: &ArmGeometry, target: SpatialPoint, pitch: f64) -> Result<JointAngles> {
    let [l1, l2, l3] = geom.lengths;
    let r = target.x.hypot(target.y);
    let (sp, cp) = pitch.sin_cos();
    let wrist = PlanarPoint::new(r - l3 * sp, target.z - l3 * cp);

    let theta1 = if r == 0.0 {
        if (l3 * sp).abs() > AXIS_TOL {
            return Err(Error::SingularYaw);
        }
        0.0
    } else {
        target.x.atan2(target.y)
    };

    let cosine = (wrist.x * wrist.x + wrist.y * wrist.y - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !cosine.is_finite() || cosine.abs() > 1.0 + COSINE_SLACK {
        return Err(Error::Unreachable { cosine });
    }
    let theta3 = -cosine.clamp(-1.0, 1.0).acos();
    let (s3, c3) = theta3.sin_cos();
    let theta2 = wrist.x.atan2(wrist.y) - (l2 * s3).atan2(l1 + l2 * c3);
    let theta4 = pitch - theta2 - theta3;
    JointAngles::new([theta1, theta2, theta3, theta4])
}
