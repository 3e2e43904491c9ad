//! Mass model, energies and Euler–Lagrange forward dynamics.
//!
//! Kinetic energy uses the decoupled per-joint form `½ Σ I_k(θ) θ̇_k²`, where
//! `I_k` is the inertia of everything distal to joint `k` about that joint,
//! evaluated in the current configuration. `I1` is the moment of the whole
//! arm about the vertical yaw axis. There are no cross-velocity terms
//! between joints, so the mass matrix is diagonal.
//!
//! Gradients of `I_k` and of the potential energy come from forward-mode
//! differentiation of the closed-form expressions (see [`crate::jet`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, Scalar};
use crate::kinematics::{planar_chain, ArmGeometry, JointAngles, PlanarPoint};

/// Joint inertias at or below this are treated as unactuatable.
pub const DEGENERATE_INERTIA: f64 = 1e-12;

/// Point masses at joints P2..P4, uniform link masses and gravity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMasses", into = "RawMasses")]
pub struct MassModel {
    points: [f64; 3],
    links: [f64; 3],
    gravity: f64,
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMasses {
    m2: f64,
    m3: f64,
    m4: f64,
    M1: f64,
    M2: f64,
    M3: f64,
    g: f64,
}

impl TryFrom<RawMasses> for MassModel {
    type Error = Error;
    fn try_from(r: RawMasses) -> Result<Self> {
        MassModel::new([r.m2, r.m3, r.m4], [r.M1, r.M2, r.M3], r.g)
    }
}

impl From<MassModel> for RawMasses {
    fn from(m: MassModel) -> Self {
        let [m2, m3, m4] = m.points;
        let [l1, l2, l3] = m.links;
        RawMasses { m2, m3, m4, M1: l1, M2: l2, M3: l3, g: m.gravity }
    }
}

impl MassModel {
    /// `points` are `[m2, m3, m4]` at P2..P4; `links` are `[M1, M2, M3]`.
    pub fn new(points: [f64; 3], links: [f64; 3], gravity: f64) -> Result<Self> {
        let all = points.iter().chain(&links).chain(std::iter::once(&gravity));
        if all.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "masses and gravity must be finite and non-negative: points {points:?}, links {links:?}, g {gravity}"
            )));
        }
        Ok(MassModel { points, links, gravity })
    }

    pub fn point_masses(&self) -> [f64; 3] {
        self.points
    }

    pub fn link_masses(&self) -> [f64; 3] {
        self.links
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn with_gravity(mut self, gravity: f64) -> Result<Self> {
        self.gravity = gravity;
        MassModel::new(self.points, self.links, gravity)
    }
}

/// Geometry plus mass model: everything needed to evaluate the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub geometry: ArmGeometry,
    pub masses: MassModel,
}

impl Arm {
    pub fn new(geometry: ArmGeometry, masses: MassModel) -> Self {
        Arm { geometry, masses }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointRates(pub [f64; 4]);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TorqueVector(pub [f64; 4]);

/// Effective inertia seen by each joint, kg·m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaVector(pub [f64; 4]);

fn segment_inertia_t<T: Scalar>(a: [T; 2], b: [T; 2], m: f64) -> T {
    let [x1, y1] = a;
    let [x2, y2] = b;
    // Grouped so that swapping the endpoints is bit-exact.
    T::constant(m / 3.0) * ((x1 * x1 + x2 * x2) + x1 * x2 + ((y1 * y1 + y2 * y2) + y1 * y2))
}

fn point_inertia_t<T: Scalar>(p: [T; 2], m: f64) -> T {
    T::constant(m) * (p[0] * p[0] + p[1] * p[1])
}

/// Inertia of a uniform segment `pA`–`pB` of mass `m` about the origin.
pub fn segment_inertia(pa: PlanarPoint, pb: PlanarPoint, m: f64) -> f64 {
    segment_inertia_t([pa.x, pa.y], [pb.x, pb.y], m)
}

/// Inertia of a point mass about the origin.
pub fn point_inertia(p: PlanarPoint, m: f64) -> f64 {
    point_inertia_t([p.x, p.y], m)
}

fn rel<T: Scalar>(p: [T; 2], pivot: [T; 2]) -> [T; 2] {
    [p[0] - pivot[0], p[1] - pivot[1]]
}

/// Inertia about planar joint `pivot` (0 = P1, 1 = P2, 2 = P3) of the links and
/// point masses distal to it.
fn subtree_inertia<T: Scalar>(masses: &MassModel, points: &[[T; 2]; 4], pivot: usize) -> T {
    let origin = points[pivot];
    let mut total = T::constant(0.0);
    for link in pivot..3 {
        total = total
            + segment_inertia_t(
                rel(points[link], origin),
                rel(points[link + 1], origin),
                masses.links[link],
            );
    }
    for joint in (pivot + 1)..4 {
        total = total + point_inertia_t(rel(points[joint], origin), masses.points[joint - 1]);
    }
    total
}

/// Moment about the vertical axis: only radial (planar x) distances count.
fn yaw_inertia<T: Scalar>(masses: &MassModel, points: &[[T; 2]; 4]) -> T {
    let mut total = T::constant(0.0);
    for link in 0..3 {
        let (xa, xb) = (points[link][0], points[link + 1][0]);
        total = total + T::constant(masses.links[link] / 3.0) * (xa * xa + xa * xb + xb * xb);
    }
    for joint in 1..4 {
        let x = points[joint][0];
        total = total + T::constant(masses.points[joint - 1]) * x * x;
    }
    total
}

fn end_link_inertia(arm: &Arm) -> f64 {
    let l3 = arm.geometry.l3();
    arm.masses.points[2] * l3 * l3 + arm.masses.links[2] * l3 * l3 / 3.0
}

fn inertias_t<T: Scalar>(arm: &Arm, planar: [T; 3]) -> [T; 4] {
    let pts = planar_chain(&arm.geometry, planar);
    [
        yaw_inertia(&arm.masses, &pts),
        subtree_inertia(&arm.masses, &pts, 0),
        subtree_inertia(&arm.masses, &pts, 1),
        // The end link's inertia about P3 is configuration independent.
        T::constant(end_link_inertia(arm)),
    ]
}

fn potential_t<T: Scalar>(arm: &Arm, planar: [T; 3]) -> T {
    let pts = planar_chain(&arm.geometry, planar);
    let m = &arm.masses;
    let mut weighted = T::constant(0.0);
    for joint in 1..4 {
        weighted = weighted + T::constant(m.points[joint - 1]) * pts[joint][1];
    }
    for link in 0..3 {
        weighted = weighted + T::constant(m.links[link] * 0.5) * (pts[link][1] + pts[link + 1][1]);
    }
    T::constant(m.gravity) * weighted
}

pub fn joint_inertias(arm: &Arm, angles: &JointAngles) -> InertiaVector {
    InertiaVector(inertias_t(arm, angles.planar()))
}

pub fn potential_energy(arm: &Arm, angles: &JointAngles) -> f64 {
    potential_t(arm, angles.planar())
}

pub fn kinetic_energy(arm: &Arm, angles: &JointAngles, rates: &JointRates) -> f64 {
    let inertia = inertias_t(arm, angles.planar());
    0.5 * inertia.iter().zip(rates.0).map(|(i, w)| i * w * w).sum::<f64>()
}

/// Kinetic plus potential energy on raw (unnormalized) state coordinates.
pub(crate) fn total_energy_raw(arm: &Arm, theta: &[f64; 4], rates: &[f64; 4]) -> f64 {
    let planar = [theta[1], theta[2], theta[3]];
    let inertia = inertias_t(arm, planar);
    let ke = 0.5 * inertia.iter().zip(rates).map(|(i, w)| i * w * w).sum::<f64>();
    ke + potential_t(arm, planar)
}

pub fn total_energy(arm: &Arm, angles: &JointAngles, rates: &JointRates) -> f64 {
    total_energy_raw(arm, &angles.as_array(), &rates.0)
}

/// Configuration-dependent model terms and their gradients.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ModelTerms {
    pub inertia: [f64; 4],
    /// `d_inertia[k][j] = ∂I_k/∂θ_j`.
    pub d_inertia: [[f64; 4]; 4],
    /// `∂PE/∂θ_j`.
    pub d_potential: [f64; 4],
}

fn lift_grad(g: [f64; 3]) -> [f64; 4] {
    // Nothing depends on the base yaw.
    [0.0, g[0], g[1], g[2]]
}

pub(crate) fn model_terms(arm: &Arm, theta: &[f64; 4]) -> ModelTerms {
    let planar = [
        Jet::<3>::variable(theta[1], 0),
        Jet::variable(theta[2], 1),
        Jet::variable(theta[3], 2),
    ];
    let inertia = inertias_t(arm, planar);
    let pe = potential_t(arm, planar);
    ModelTerms {
        inertia: inertia.map(|j| j.value),
        d_inertia: inertia.map(|j| lift_grad(j.grad)),
        d_potential: lift_grad(pe.grad),
    }
}

/// Gravity-holding torque `∂PE/∂θ`: makes `θ̈ = 0` at rest.
pub fn equilibrium_torque(arm: &Arm, angles: &JointAngles) -> TorqueVector {
    TorqueVector(equilibrium_torque_raw(arm, &angles.as_array()))
}

pub(crate) fn equilibrium_torque_raw(arm: &Arm, theta: &[f64; 4]) -> [f64; 4] {
    let planar = [
        Jet::<3>::variable(theta[1], 0),
        Jet::variable(theta[2], 1),
        Jet::variable(theta[3], 2),
    ];
    lift_grad(potential_t(arm, planar).grad)
}

pub(crate) fn check_inertia(inertia: &[f64; 4]) -> Result<()> {
    match inertia.iter().position(|&i| !(i > DEGENERATE_INERTIA)) {
        Some(k) => Err(Error::DegenerateInertia { joint: k + 1, inertia: inertia[k] }),
        None => Ok(()),
    }
}

/// Euler–Lagrange accelerations on raw state coordinates.
pub(crate) fn accelerations(
    arm: &Arm,
    theta: &[f64; 4],
    rates: &[f64; 4],
    torque: &[f64; 4],
) -> Result<[f64; 4]> {
    let terms = model_terms(arm, theta);
    check_inertia(&terms.inertia)?;
    let mut acc = [0.0; 4];
    for i in 0..4 {
        // ∂L/∂θ_i = ½ Σ_k ∂I_k/∂θ_i θ̇_k² − ∂PE/∂θ_i
        let mut generalized = -terms.d_potential[i];
        for k in 0..4 {
            generalized += 0.5 * terms.d_inertia[k][i] * rates[k] * rates[k];
        }
        // d/dt (I_i θ̇_i) = I_i θ̈_i + (Σ_j ∂I_i/∂θ_j θ̇_j) θ̇_i
        let inertia_rate: f64 = (0..4).map(|j| terms.d_inertia[i][j] * rates[j]).sum();
        acc[i] = (generalized - inertia_rate * rates[i] + torque[i]) / terms.inertia[i];
    }
    Ok(acc)
}

/// Joint accelerations for the given state and applied torques.
pub fn forward_dynamics(
    arm: &Arm,
    angles: &JointAngles,
    rates: &JointRates,
    torque: &TorqueVector,
) -> Result<[f64; 4]> {
    accelerations(arm, &angles.as_array(), &rates.0, &torque.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::fk_planar;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_arm(points: [f64; 3], links: [f64; 3], g: f64) -> Arm {
        Arm::new(ArmGeometry::new(1.0, 1.0, 1.0).unwrap(), MassModel::new(points, links, g).unwrap())
    }

    fn sample_arm() -> Arm {
        Arm::new(
            ArmGeometry::new(0.5, 0.4, 0.2).unwrap(),
            MassModel::new([0.5, 0.4, 0.3], [0.8, 0.6, 0.3], 9.81).unwrap(),
        )
    }

    fn angles(a: [f64; 4]) -> JointAngles {
        JointAngles::new(a).unwrap()
    }

    #[test]
    fn segment_closed_forms() {
        let (m, l) = (2.5, 1.7);
        let about_end = segment_inertia(PlanarPoint::ORIGIN, PlanarPoint::new(l, 0.0), m);
        assert!((about_end - m * l * l / 3.0).abs() < 1e-12);
        let about_center =
            segment_inertia(PlanarPoint::new(-l / 2.0, 0.0), PlanarPoint::new(l / 2.0, 0.0), m);
        assert!((about_center - m * l * l / 12.0).abs() < 1e-12);
        let p = PlanarPoint::new(0.3, -1.1);
        assert!((segment_inertia(p, p, m) - m * (0.09 + 1.21)).abs() < 1e-12);
    }

    #[test]
    fn point_inertia_examples() {
        assert_eq!(point_inertia(PlanarPoint::new(1.0, 0.0), 2.0), 2.0);
        assert_eq!(point_inertia(PlanarPoint::ORIGIN, 7.0), 0.0);
        assert_eq!(point_inertia(PlanarPoint::new(3.0, 4.0), 1.0), 25.0);
    }

    #[test]
    fn end_link_inertia_matches_expanded_form() {
        let arm = sample_arm();
        let (m4, m3l, l3) = (0.3, 0.3, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = angles([0.0; 4].map(|_| rng.random_range(-3.0..3.0)));
            let i = joint_inertias(&arm, &a).0;
            assert_eq!(i[3], m4 * l3 * l3 + m3l * l3 * l3 / 3.0);
            // the general subtree sum agrees
            let pts = planar_chain(&arm.geometry, a.planar());
            let general = subtree_inertia(&arm.masses, &pts, 2);
            assert!((general - i[3]).abs() < 1e-14);
        }
    }

    #[test]
    fn vertical_arm_has_no_yaw_inertia() {
        let arm = sample_arm();
        assert_eq!(joint_inertias(&arm, &JointAngles::zero()).0[0], 0.0);
    }

    #[test]
    fn straight_elbow_inertia_expands_by_hand() {
        let (m3, m4, big2, big3) = (0.7, 0.4, 1.3, 0.9);
        let arm = Arm::new(
            ArmGeometry::new(0.6, 0.5, 0.3).unwrap(),
            MassModel::new([0.2, m3, m4], [1.1, big2, big3], 9.81).unwrap(),
        );
        let (l2, l3) = (0.5, 0.3);
        let want = m3 * l2 * l2
            + m4 * (l2 + l3) * (l2 + l3)
            + big2 * l2 * l2 / 3.0
            + big3 / 3.0 * (l2 * l2 + l2 * (l2 + l3) + (l2 + l3) * (l2 + l3));
        for theta2 in [-1.0, 0.0, 0.4, 2.9] {
            let i = joint_inertias(&arm, &angles([0.3, theta2, 0.0, 0.0])).0;
            assert!((i[2] - want).abs() < 1e-12, "{} vs {want}", i[2]);
        }
    }

    #[test]
    fn potential_examples() {
        let arm = unit_arm([1.0; 3], [0.0; 3], 9.81);
        assert!((potential_energy(&arm, &JointAngles::zero()) - 58.86).abs() < 1e-12);
        let a = angles([0.1, 0.7, -0.2, 1.0]);
        assert_eq!(potential_energy(&unit_arm([0.0; 3], [0.0; 3], 9.81), &a), 0.0);
        assert_eq!(potential_energy(&unit_arm([1.0; 3], [1.0; 3], 0.0), &a), 0.0);
    }

    #[test]
    fn kinetic_examples() {
        let arm = sample_arm();
        let a = angles([0.2, 0.5, -0.4, 0.3]);
        assert_eq!(kinetic_energy(&arm, &a, &JointRates::default()), 0.0);
        let ke = kinetic_energy(&arm, &a, &JointRates([0.0, 0.0, 0.0, 2.0]));
        let (m4, m3l, l3) = (0.3, 0.3, 0.2);
        assert!((ke - 0.5 * (m4 * l3 * l3 + m3l * l3 * l3 / 3.0) * 4.0).abs() < 1e-15);
        let massless = unit_arm([0.0; 3], [0.0; 3], 9.81);
        assert_eq!(kinetic_energy(&massless, &a, &JointRates([1.0, 2.0, 3.0, 4.0])), 0.0);
    }

    #[test]
    fn equilibrium_torque_examples() {
        let arm = sample_arm();
        let t = equilibrium_torque(&arm, &JointAngles::zero()).0;
        assert!(t.iter().all(|v| v.abs() < 1e-15), "{t:?}");
        let no_g = Arm::new(arm.geometry, arm.masses.with_gravity(0.0).unwrap());
        assert_eq!(equilibrium_torque(&no_g, &angles([0.3, 0.9, -1.2, 0.5])).0, [0.0; 4]);
    }

    #[test]
    fn equilibrium_torque_holds_the_arm() {
        let arm = sample_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 100 {
            let a = angles([0.0; 4].map(|_| rng.random_range(-3.0..3.0)));
            if joint_inertias(&arm, &a).0.iter().any(|&i| i < 1e-4) {
                continue;
            }
            let tau = equilibrium_torque(&arm, &a);
            let acc = forward_dynamics(&arm, &a, &JointRates::default(), &tau).unwrap();
            assert!(acc.iter().all(|v| v.abs() <= 1e-8), "{acc:?}");
            checked += 1;
        }
    }

    #[test]
    fn torque_only_response_without_gravity() {
        let arm = Arm::new(sample_arm().geometry, sample_arm().masses.with_gravity(0.0).unwrap());
        let a = angles([0.4, 0.6, -0.3, 0.8]);
        let rest = JointRates::default();
        assert_eq!(forward_dynamics(&arm, &a, &rest, &TorqueVector::default()).unwrap(), [0.0; 4]);
        let tau = [0.3, -1.2, 0.7, 2.0];
        let acc = forward_dynamics(&arm, &a, &rest, &TorqueVector(tau)).unwrap();
        let i = joint_inertias(&arm, &a).0;
        for k in 0..4 {
            assert!((acc[k] - tau[k] / i[k]).abs() <= 1e-14 * acc[k].abs().max(1.0));
        }
    }

    #[test]
    fn degenerate_inertia_is_an_error() {
        let arm = sample_arm();
        let err = forward_dynamics(
            &arm,
            &JointAngles::zero(),
            &JointRates::default(),
            &TorqueVector::default(),
        );
        assert!(matches!(err, Err(Error::DegenerateInertia { joint: 1, .. })));
        let massless_tip = unit_arm([1.0, 1.0, 0.0], [1.0, 1.0, 0.0], 9.81);
        let err = forward_dynamics(
            &massless_tip,
            &angles([0.0, 0.5, 0.5, 0.5]),
            &JointRates::default(),
            &TorqueVector::default(),
        );
        assert!(matches!(err, Err(Error::DegenerateInertia { joint: 4, .. })));
    }

    #[test]
    fn gradients_match_richardson_differences() {
        let arm = sample_arm();
        let theta = [0.3, 0.8, -0.6, 0.4];
        let terms = model_terms(&arm, &theta);
        let pe = |t: [f64; 4]| potential_t(&arm, [t[1], t[2], t[3]]);
        let inertia = |t: [f64; 4]| inertias_t(&arm, [t[1], t[2], t[3]]);
        let central = |f: &dyn Fn([f64; 4]) -> f64, j: usize, h: f64| {
            let (mut p, mut m) = (theta, theta);
            p[j] += h;
            m[j] -= h;
            (f(p) - f(m)) / (2.0 * h)
        };
        for j in 0..4 {
            let h = 1e-3;
            let rich = |f: &dyn Fn([f64; 4]) -> f64| (4.0 * central(f, j, h / 2.0) - central(f, j, h)) / 3.0;
            let d = rich(&pe);
            assert!((d - terms.d_potential[j]).abs() <= 1e-6 * d.abs().max(1.0));
            for k in 0..4 {
                let d = rich(&|t| inertia(t)[k]);
                assert!((d - terms.d_inertia[k][j]).abs() <= 1e-6 * d.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn inertias_ignore_base_yaw() {
        let arm = sample_arm();
        let a = joint_inertias(&arm, &angles([0.0, 0.5, 0.2, -0.3])).0;
        let b = joint_inertias(&arm, &angles([2.2, 0.5, 0.2, -0.3])).0;
        assert_eq!(a, b);
        let pts = fk_planar(&arm.geometry, 0.5, 0.2, -0.3);
        let yaw: f64 = pts[1..].iter().zip([0.5, 0.4, 0.3]).map(|(p, m)| m * p.x * p.x).sum::<f64>()
            + pts
                .windows(2)
                .zip([0.8, 0.6, 0.3])
                .map(|(w, m)| m / 3.0 * (w[0].x * w[0].x + w[0].x * w[1].x + w[1].x * w[1].x))
                .sum::<f64>();
        assert!((a[0] - yaw).abs() < 1e-14);
    }
}
