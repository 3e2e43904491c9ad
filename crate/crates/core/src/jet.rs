//! Forward-mode differentiation for the closed-form arm expressions.
//!
//! Kinematics, inertia and potential energy are written once over [`Scalar`]
//! and evaluated either on plain `f64` or on a [`Jet`] carrying partial
//! derivatives with respect to the planar joint angles.

use std::ops::{Add, Mul, Neg, Sub};

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn sin_cos(self) -> (Self, Self);
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }

    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        f64::sin_cos(self)
    }
}

/// Value plus gradient with respect to `N` seeded variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
}

impl<const N: usize> Jet<N> {
    /// The `i`-th independent variable, evaluated at `value`.
    pub fn variable(value: f64, i: usize) -> Self {
        let mut grad = [0.0; N];
        grad[i] = 1.0;
        Jet { value, grad }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut grad = self.grad;
        for (g, r) in grad.iter_mut().zip(rhs.grad) {
            *g += r;
        }
        Jet { value: self.value + rhs.value, grad }
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut grad = self.grad;
        for (g, r) in grad.iter_mut().zip(rhs.grad) {
            *g -= r;
        }
        Jet { value: self.value - rhs.value, grad }
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = self.grad[i] * rhs.value + self.value * rhs.grad[i];
        }
        Jet { value: self.value * rhs.value, grad }
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Jet { value: -self.value, grad: self.grad.map(|g| -g) }
    }
}

impl<const N: usize> Scalar for Jet<N> {
    #[inline]
    fn constant(v: f64) -> Self {
        Jet { value: v, grad: [0.0; N] }
    }

    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.value.sin_cos();
        (
            Jet { value: s, grad: self.grad.map(|g| c * g) },
            Jet { value: c, grad: self.grad.map(|g| -s * g) },
        )
    }
}
