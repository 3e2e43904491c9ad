//! Continuous-time algebraic Riccati equation and infinite-horizon LQR gains.
//!
//! `solve_care` runs Newton–Kleinman iteration. The initial stabilizing gain
//! is zero when `A` is already Hurwitz. Otherwise it is taken from the matrix
//! sign function of the Hamiltonian `[[A, −G], [−Q, −Aᵀ]]`, `G = B R⁻¹ Bᵀ`,
//! whose stable invariant subspace spans `[I; P]`; Newton steps then polish
//! that `P` to full accuracy. Should the sign iteration fail, Bass's shifted
//! Lyapunov construction is the fallback: with `β > ρ(A)`, solve
//! `(A + βI) Z + Z (A + βI)ᵀ = 2G`; then `K₀ = R⁻¹ Bᵀ Z⁻¹` puts every
//! eigenvalue of `A − B K₀` on the line `Re s = −β`. That seed is stabilizing
//! but can be very large for weakly controllable pairs.
//!
//! Every Lyapunov solve exploits the symmetry of the unknown, so an `n`-state
//! problem is an `n(n+1)/2` dense linear system.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linearization::{GainMatrix, LinearModel};

/// Iteration budget for Newton–Kleinman.
pub const MAX_ITERATIONS: usize = 200;
const SIGN_ITERATIONS: usize = 100;
/// CARE residual contract: `‖Res‖_F ≤ RESIDUAL_TOL · max(1, ‖Q‖_F)`.
pub const RESIDUAL_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;

/// State and input weights of the quadratic cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= SYMMETRY_TOL * scale
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() || !r.is_square() || q.nrows() == 0 || r.nrows() == 0 {
            return Err(Error::InvalidParameter("Q and R must be non-empty square matrices".into()));
        }
        if q.iter().chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("Q and R must be finite".into()));
        }
        if !symmetric(&q) || !symmetric(&r) {
            return Err(Error::InvalidParameter("Q and R must be symmetric".into()));
        }
        let q_min = q.clone().symmetric_eigenvalues().min();
        if q_min < -SYMMETRY_TOL * q.amax().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "Q must be positive semidefinite (smallest eigenvalue {q_min:e})"
            )));
        }
        let r_min = r.clone().symmetric_eigenvalues().min();
        if !(r_min > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "R must be positive definite (smallest eigenvalue {r_min:e})"
            )));
        }
        Ok(CostWeights { q, r })
    }

    pub fn from_diagonals(q: &[f64], r: &[f64]) -> Result<Self> {
        CostWeights::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
        )
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Same weights multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        CostWeights::new(&self.q * c, &self.r * c)
    }
}

/// Solves `Mᵀ X + X M + C = 0` for symmetric `X`, given symmetric `C`.
pub(crate) fn lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let unknowns = n * (n + 1) / 2;
    let index = |i: usize, j: usize| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        lo * n - lo * (lo + 1) / 2 + hi
    };

    // Row (i, j), i ≤ j:  Σ_k M_ki X_kj + Σ_k X_ik M_kj = -C_ij
    let mut lhs = DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut rhs = DVector::<f64>::zeros(unknowns);
    for i in 0..n {
        for j in i..n {
            let row = index(i, j);
            for k in 0..n {
                lhs[(row, index(k, j))] += m[(k, i)];
                lhs[(row, index(i, k))] += m[(k, j)];
            }
            rhs[row] = -c[(i, j)];
        }
    }
    let sol = lhs.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(DMatrix::from_fn(n, n, |i, j| sol[index(i, j)]))
}

/// Largest real part among the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    spectral_abscissa(m) < 0.0
}

/// `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖_F`.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &CostWeights,
    p: &DMatrix<f64>,
) -> f64 {
    let r_inv = w.r.clone().try_inverse().expect("R is positive definite");
    let pb = p * b;
    (a.transpose() * p + p * a - &pb * r_inv * pb.transpose() + &w.q).norm()
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &CostWeights) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || w.q.nrows() != n || b.ncols() != w.r.nrows() {
        return Err(Error::InvalidParameter(format!(
            "dimension mismatch: A {}x{}, B {}x{}, Q {}x{}, R {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            w.q.nrows(),
            w.q.ncols(),
            w.r.nrows(),
            w.r.ncols()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("A and B must be finite".into()));
    }
    Ok(())
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// `P` from the stable invariant subspace of the Hamiltonian, via the
/// determinant-scaled Newton iteration `Z ← (cZ + (cZ)⁻¹) / 2`.
fn sign_function_solution(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(a);
    z.view_mut((0, n), (n, n)).copy_from(&-g);
    z.view_mut((n, 0), (n, n)).copy_from(&-q);
    z.view_mut((n, n), (n, n)).copy_from(&-a.transpose());
    let mut converged = false;
    for _ in 0..SIGN_ITERATIONS {
        let lu = z.clone().lu();
        let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
        let c = (-log_det / (2 * n) as f64).exp();
        let inv = lu.try_inverse()?;
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm();
        z = next;
        if !change.is_finite() {
            return None;
        }
        if change <= 1e-12 * z.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    // [W12; W22 + I] P = −[W11 + I; W21]
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(z.view((0, 0), (n, n)) + &eye));
    rhs.view_mut((n, 0), (n, n)).copy_from(&z.view((n, 0), (n, n)));
    let p = lhs.svd(true, true).solve(&-rhs, 1e-14).ok()?;
    p.iter().all(|v| v.is_finite()).then(|| symmetrize(&p))
}

/// Bass's seed; see the module docs.
fn bass_gain(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r_chol: &Cholesky<f64, nalgebra::Dyn>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let beta = a.norm() + 1.0;
    let shifted = a + DMatrix::identity(n, n) * beta;
    // (A + βI) Z + Z (A + βI)ᵀ − 2G = 0, i.e. Mᵀ Z + Z M + C = 0 with M = (A + βI)ᵀ
    let z = lyapunov(&shifted.transpose(), &(g * -2.0))
        .ok_or_else(|| Error::NotStabilizable("shifted Lyapunov equation is singular".into()))?;
    let z_chol = Cholesky::new(symmetrize(&z)).ok_or_else(|| {
        Error::NotStabilizable("(A, B) is not controllable enough for a stabilizing seed".into())
    })?;
    Ok(r_chol.solve(&(z_chol.solve(b)).transpose()))
}

/// Stabilizing initial gain for Newton–Kleinman.
fn initial_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_chol: &Cholesky<f64, nalgebra::Dyn>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if is_hurwitz(a) {
        return Ok(DMatrix::zeros(b.ncols(), n));
    }
    let g = b * r_chol.solve(&b.transpose());
    if let Some(p) = sign_function_solution(a, &g, q) {
        let k = r_chol.solve(&(b.transpose() * p));
        if is_hurwitz(&(a - b * &k)) {
            return Ok(k);
        }
    }
    let k0 = bass_gain(a, &g, b, r_chol)?;
    if !is_hurwitz(&(a - b * &k0)) {
        return Err(Error::NotStabilizable("initial gain does not stabilize A".into()));
    }
    Ok(k0)
}

/// Stabilizing solution `P` of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &CostWeights) -> Result<DMatrix<f64>> {
    check_dims(a, b, w)?;
    let r_chol = Cholesky::new(w.r.clone())
        .ok_or_else(|| Error::InvalidParameter("R is not positive definite".into()))?;
    let bound = RESIDUAL_TOL * w.q.norm().max(1.0);

    let mut k = initial_gain(a, b, &w.q, &r_chol)?;
    let mut p_prev: Option<DMatrix<f64>> = None;
    let mut last_change = f64::INFINITY;
    let mut converged = None;
    for _ in 0..MAX_ITERATIONS {
        let closed = a - b * &k;
        let c = &w.q + k.transpose() * &w.r * &k;
        let p = lyapunov(&closed, &c)
            .map(|p| symmetrize(&p))
            .ok_or_else(|| Error::NotStabilizable("Lyapunov step is singular".into()))?;
        k = r_chol.solve(&(b.transpose() * &p));
        let scale = p.norm().max(1.0);
        let change = p_prev.as_ref().map_or(f64::INFINITY, |prev| (&p - prev).norm());
        // Stop at full accuracy, or once the steps stall at rounding level;
        // the residual check below decides whether that is good enough.
        if change <= 1e-14 * scale
            || (change <= 1e-10 * scale && care_residual(a, b, w, &p) <= 1e-4 * bound)
            || (change <= 1e-8 * scale && change >= last_change)
        {
            converged = Some(p);
            break;
        }
        last_change = change;
        p_prev = Some(p);
    }
    let p = converged.ok_or_else(|| {
        Error::NotStabilizable(format!("no convergence within {MAX_ITERATIONS} iterations"))
    })?;

    let residual = care_residual(a, b, w, &p);
    if !(residual <= bound) {
        return Err(Error::IllConditioned { residual, bound });
    }
    if !is_hurwitz(&(a - b * &k)) {
        return Err(Error::NotStabilizable("solution is not stabilizing".into()));
    }
    Ok(p)
}

/// Optimal state feedback `K = R⁻¹ Bᵀ P`, applied as `u = −K x`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &CostWeights) -> Result<DMatrix<f64>> {
    let p = solve_care(a, b, w)?;
    let r_chol = Cholesky::new(w.r.clone())
        .ok_or_else(|| Error::InvalidParameter("R is not positive definite".into()))?;
    Ok(r_chol.solve(&(b.transpose() * p)))
}

impl LinearModel {
    /// LQR gain of this arm model; `w` must be 8×8 / 4×4.
    pub fn lqr_gain(&self, w: &CostWeights) -> Result<GainMatrix> {
        let a = DMatrix::from_column_slice(8, 8, self.a.as_slice());
        let b = DMatrix::from_column_slice(8, 4, self.b.as_slice());
        let k = lqr_gain(&a, &b, w)?;
        Ok(GainMatrix::from_column_slice(k.as_slice()))
    }
}
