//! State-space linearization of the arm about an operating point.
//!
//! State `x = [θ, θ̇]` (8), input `u = τ` (4). The lower half of `A` is a
//! central-difference Jacobian of the forward dynamics; the lower half of `B`
//! is exact because torque enters as `τ_i / I_i(θ)`.

use nalgebra::{SMatrix, SVector};

use crate::dynamics::{
    accelerations, check_inertia, equilibrium_torque_raw, model_terms, Arm, JointRates,
    TorqueVector, DEGENERATE_INERTIA,
};
use crate::error::{Error, Result};
use crate::kinematics::JointAngles;

pub type StateVector = SVector<f64, 8>;
pub type StateMatrix = SMatrix<f64, 8, 8>;
pub type InputMatrix = SMatrix<f64, 8, 4>;
/// LQR feedback `u = -K x`, 4×8.
pub type GainMatrix = SMatrix<f64, 4, 8>;

/// Relative finite-difference step; the absolute step is `REL_STEP * max(1, |x_j|)`.
pub const REL_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub angles: JointAngles,
    pub rates: JointRates,
    pub torque: TorqueVector,
}

impl OperatingPoint {
    pub fn new(angles: JointAngles, rates: JointRates, torque: TorqueVector) -> Self {
        OperatingPoint { angles, rates, torque }
    }

    pub fn state(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<4>(0).copy_from_slice(&self.angles.as_array());
        x.fixed_rows_mut::<4>(4).copy_from_slice(&self.rates.0);
        x
    }

    /// `ẋ = [θ̇, θ̈]` at this point.
    pub fn state_derivative(&self, arm: &Arm) -> Result<StateVector> {
        let acc = accelerations(arm, &self.angles.as_array(), &self.rates.0, &self.torque.0)?;
        let mut dx = StateVector::zeros();
        dx.fixed_rows_mut::<4>(0).copy_from_slice(&self.rates.0);
        dx.fixed_rows_mut::<4>(4).copy_from_slice(&acc);
        Ok(dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub a: StateMatrix,
    pub b: InputMatrix,
}

pub fn linearize(arm: &Arm, op: &OperatingPoint) -> Result<LinearModel> {
    linearize_raw(arm, &op.angles.as_array(), &op.rates.0, &op.torque.0)
}

pub(crate) fn linearize_raw(
    arm: &Arm,
    theta: &[f64; 4],
    rates: &[f64; 4],
    torque: &[f64; 4],
) -> Result<LinearModel> {
    let inertia = model_terms(arm, theta).inertia;
    check_inertia(&inertia)?;

    let mut a = StateMatrix::zeros();
    for i in 0..4 {
        a[(i, 4 + i)] = 1.0;
    }
    for j in 0..8 {
        let (mut th_p, mut th_m) = (*theta, *theta);
        let (mut w_p, mut w_m) = (*rates, *rates);
        let x_j = if j < 4 { theta[j] } else { rates[j - 4] };
        let h = REL_STEP * x_j.abs().max(1.0);
        if j < 4 {
            th_p[j] += h;
            th_m[j] -= h;
        } else {
            w_p[j - 4] += h;
            w_m[j - 4] -= h;
        }
        let step = if j < 4 { th_p[j] - th_m[j] } else { w_p[j - 4] - w_m[j - 4] };
        let f_p = accelerations(arm, &th_p, &w_p, torque)?;
        let f_m = accelerations(arm, &th_m, &w_m, torque)?;
        for i in 0..4 {
            a[(4 + i, j)] = (f_p[i] - f_m[i]) / step;
        }
    }

    let mut b = InputMatrix::zeros();
    for k in 0..4 {
        b[(4 + k, k)] = 1.0 / inertia[k];
    }
    Ok(LinearModel { a, b })
}

/// Rest state at `reference` held by the gravity-compensating torque.
///
/// Only the planar joints' inertias are required to be non-degenerate here:
/// the yaw inertia legitimately vanishes with the arm straight up, and
/// [`linearize`] reports that case when it matters.
pub fn equilibrium_point(arm: &Arm, reference: &JointAngles) -> Result<OperatingPoint> {
    let theta = reference.as_array();
    let inertia = model_terms(arm, &theta).inertia;
    if let Some(k) = (1..4).find(|&k| !(inertia[k] > DEGENERATE_INERTIA)) {
        return Err(Error::DegenerateInertia { joint: k + 1, inertia: inertia[k] });
    }
    Ok(OperatingPoint {
        angles: *reference,
        rates: JointRates::default(),
        torque: TorqueVector(equilibrium_torque_raw(arm, &theta)),
    })
}
