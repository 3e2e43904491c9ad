#![allow(dead_code)]

use armlqr::dynamics::{Arm, MassModel};
use armlqr::gain_table::{direct_gain, AngleBox, GainSchedule, ParamDigest};
use armlqr::kinematics::{ArmGeometry, JointAngles};
use armlqr::linearization::GainMatrix;
use armlqr::riccati::CostWeights;
use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const THETA_REF: [f64; 4] = [0.3, 0.6, -0.8, 0.4];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn arm() -> Arm {
    Arm::new(
        ArmGeometry::new(0.5, 0.4, 0.2).unwrap(),
        MassModel::new([0.5, 0.4, 0.3], [0.8, 0.6, 0.3], 9.81).unwrap(),
    )
}

pub fn unit_arm() -> ArmGeometry {
    ArmGeometry::new(1.0, 1.0, 1.0).unwrap()
}

/// Q = diag(100·1₄, 1₄), R = I₄.
pub fn weights() -> CostWeights {
    CostWeights::from_diagonals(&[100.0, 100.0, 100.0, 100.0, 1.0, 1.0, 1.0, 1.0], &[1.0; 4]).unwrap()
}

pub fn offset(base: [f64; 4], d: f64) -> [f64; 4] {
    base.map(|v| v + d)
}

/// Box `[θ_ref − below, θ_ref + above]` on every axis.
pub fn box_around(center: [f64; 4], below: f64, above: f64) -> AngleBox {
    AngleBox::new(offset(center, -below), offset(center, above)).unwrap()
}

/// Angles whose planar part keeps the arm well away from the yaw axis.
pub fn random_posture(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let theta = [
            rng.random_range(-3.0..3.0),
            rng.random_range(0.3..2.8),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        ];
        if oracle::inertias(&arm(), &theta)[0] > 1e-2 {
            return theta;
        }
    }
}

pub fn random_vec4(rng: &mut ChaCha8Rng, span: f64) -> [f64; 4] {
    std::array::from_fn(|_| rng.random_range(-span..span))
}

/// Gain schedule that solves the LQR problem at every query: the ε → 0
/// limit of any table.
pub struct ExactSchedule {
    pub arm: Arm,
    pub weights: CostWeights,
    pub digest: ParamDigest,
    pub bounds: AngleBox,
}

impl ExactSchedule {
    pub fn new(arm: Arm, weights: CostWeights, bounds: AngleBox) -> Self {
        let digest = ParamDigest::of(&arm, &weights);
        ExactSchedule { arm, weights, digest, bounds }
    }
}

impl GainSchedule for ExactSchedule {
    fn gain(&self, angles: &JointAngles) -> armlqr::Result<GainMatrix> {
        direct_gain(&self.arm, &self.weights, angles.as_array())
    }

    fn digest(&self) -> &ParamDigest {
        &self.digest
    }

    fn bounds(&self) -> AngleBox {
        self.bounds
    }
}

/// First-principles re-derivation of the model, sharing nothing with the
/// library but the parameters.
pub mod oracle {
    use super::*;

    type P = [f64; 2];

    pub fn joints(l: [f64; 3], theta: &[f64; 4]) -> [P; 4] {
        let mut p = [[0.0; 2]; 4];
        let mut heading = 0.0;
        for k in 0..3 {
            heading += theta[k + 1];
            p[k + 1] = [p[k][0] + l[k] * heading.sin(), p[k][1] + l[k] * heading.cos()];
        }
        p
    }

    /// `∫ f` along a uniform rod of mass `m` by Simpson's rule, exact for
    /// quadratics.
    fn rod(a: P, b: P, m: f64, f: impl Fn(P) -> f64) -> f64 {
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        m * (f(a) + 4.0 * f(mid) + f(b)) / 6.0
    }

    pub fn inertias(arm: &Arm, theta: &[f64; 4]) -> [f64; 4] {
        let p = joints(arm.geometry.lengths(), theta);
        let points = arm.masses.point_masses();
        let links = arm.masses.link_masses();
        let mut out = [0.0; 4];
        // Yaw: squared distance from the vertical axis is x².
        let yaw = |q: P| q[0] * q[0];
        for k in 0..3 {
            out[0] += points[k] * yaw(p[k + 1]) + rod(p[k], p[k + 1], links[k], yaw);
        }
        // Joint j+1 (j = 1..3) sits at p[j-1] and carries everything beyond it.
        for j in 1..4 {
            let pivot = p[j - 1];
            let about = |q: P| (q[0] - pivot[0]).powi(2) + (q[1] - pivot[1]).powi(2);
            for k in (j - 1)..3 {
                out[j] += points[k] * about(p[k + 1]) + rod(p[k], p[k + 1], links[k], about);
            }
        }
        out
    }

    pub fn potential(arm: &Arm, theta: &[f64; 4]) -> f64 {
        let p = joints(arm.geometry.lengths(), theta);
        let points = arm.masses.point_masses();
        let links = arm.masses.link_masses();
        let height = |q: P| q[1];
        (0..3)
            .map(|k| points[k] * p[k + 1][1] + rod(p[k], p[k + 1], links[k], height))
            .sum::<f64>()
            * arm.masses.gravity()
    }

    pub fn lagrangian(arm: &Arm, theta: &[f64; 4], rates: &[f64; 4]) -> f64 {
        let i = inertias(arm, theta);
        0.5 * (0..4).map(|k| i[k] * rates[k] * rates[k]).sum::<f64>() - potential(arm, theta)
    }

    fn bump(v: &[f64; 4], i: usize, h: f64) -> [f64; 4] {
        let mut w = *v;
        w[i] += h;
        w
    }

    fn axpy(v: &[f64; 4], a: f64, d: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| v[i] + a * d[i])
    }

    /// Accelerations from `d/dt ∂L/∂θ̇ − ∂L/∂θ = τ`, every derivative taken
    /// as a central difference quotient of `L`.
    pub fn accelerations(arm: &Arm, theta: &[f64; 4], rates: &[f64; 4], tau: &[f64; 4]) -> [f64; 4] {
        const HV: f64 = 1e-3;
        const HQ: f64 = 1e-5;
        const HT: f64 = 1e-5;
        let lag = |q: &[f64; 4], v: &[f64; 4]| lagrangian(arm, q, v);
        let momentum = |q: &[f64; 4], v: &[f64; 4], i: usize| {
            (lag(q, &bump(v, i, HV)) - lag(q, &bump(v, i, -HV))) / (2.0 * HV)
        };
        let mut mass = Matrix4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                let f = |a: f64, b: f64| lag(theta, &bump(&bump(rates, i, a), j, b));
                mass[(i, j)] = (f(HV, HV) - f(HV, -HV) - f(-HV, HV) + f(-HV, -HV)) / (4.0 * HV * HV);
            }
        }
        let mut rhs = Vector4::zeros();
        for i in 0..4 {
            let dl_dq = (lag(&bump(theta, i, HQ), rates) - lag(&bump(theta, i, -HQ), rates)) / (2.0 * HQ);
            // Rate of change of momentum along the flow with θ̈ frozen at zero.
            let drift = (momentum(&axpy(theta, HT, rates), rates, i)
                - momentum(&axpy(theta, -HT, rates), rates, i))
                / (2.0 * HT);
            rhs[i] = tau[i] + dl_dq - drift;
        }
        let acc = mass.lu().solve(&rhs).expect("oracle mass matrix is singular");
        [acc[0], acc[1], acc[2], acc[3]]
    }
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
