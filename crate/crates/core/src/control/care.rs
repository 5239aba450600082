//! Continuous algebraic Riccati equation and LQR gain synthesis.
//!
//! The stabilizing solution is obtained from the matrix sign function of the
//! Hamiltonian, then polished with Newton-Kleinman iterations until the
//! residual meets the configured tolerance.

use nalgebra::{Complex, DMatrix, Matrix4};

use crate::error::{ensure, Error, Result};
use crate::plant::StateSpace;

use super::StateGain;

/// Quadratic cost weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrWeights {
    pub q: Matrix4<f64>,
    pub r: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q: Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 10.0, 0.1, 0.1)),
            r: 1.0,
        }
    }
}

impl LqrWeights {
    pub fn validate(&self) -> Result<()> {
        ensure(self.r.is_finite() && self.r > 0.0, "R > 0")?;
        validate_weight(&DMatrix::from_iterator(4, 4, self.q.iter().copied()))
    }
}

fn validate_weight(q: &DMatrix<f64>) -> Result<()> {
    ensure(q.iter().all(|v| v.is_finite()), "Q finite")?;
    ensure((q - q.transpose()).amax() <= 1e-12 * (1.0 + q.amax()), "Q = Q^T")?;
    let min_eig = q.clone().symmetric_eigenvalues().min();
    ensure(min_eig >= -1e-12 * (1.0 + q.amax()), "Q positive semidefinite")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CareOptions {
    /// Relative residual target: `max|res| < tol * (1 + ||P||_inf)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

/// `A'P + PA - P B R^-1 B' P + Q`.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let r_inv_bt = r
        .clone()
        .lu()
        .solve(&b.transpose())
        .unwrap_or_else(|| DMatrix::zeros(b.ncols(), b.nrows()));
    a.transpose() * p + p * a - p * b * r_inv_bt * p + q
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn failed(reason: impl Into<String>, residual: f64, iterations: usize) -> Error {
    Error::SynthesisFailed {
        reason: reason.into(),
        residual,
        iterations,
    }
}

/// Solves `X A + A' X = -M` for symmetric `M` via the Kronecker-sum linear system.
fn lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DMatrix::from_iterator(n * n, 1, m.iter().map(|v| -v));
    let x = op.lu().solve(&rhs)?;
    let x = DMatrix::from_iterator(n, n, x.iter().copied());
    Some((&x + x.transpose()) * 0.5)
}

fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    a.complex_eigenvalues().iter().all(|e| e.re < 0.0)
}

/// Stabilizing solution from the stable invariant subspace of the Hamiltonian,
/// located with the scaled matrix sign iteration.
fn sign_function_solution(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    max_iter: usize,
) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    for _ in 0..max_iter {
        let lu = z.clone().lu();
        let det = lu.determinant();
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let inv = lu.try_inverse()?;
        let c = det.abs().powf(1.0 / (2 * n) as f64);
        let next = (&z / c + inv * c) * 0.5;
        let change = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if change < 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }

    // (W + I) [I; P] = 0  =>  [W12; W22 + I] P = -[W11 + I; W21]
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::<f64>::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::<f64>::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(z.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let p = lhs.svd(true, true).solve(&rhs, 1e-14).ok()?;
    let p = (&p + p.transpose()) * 0.5;
    p.iter().all(|v| v.is_finite()).then_some(p)
}

/// A stabilizing starting gain by Bass's method, used when the sign iteration
/// does not deliver one.
fn bass_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let shift = a.norm() + 1.0;
    let shifted = a + DMatrix::<f64>::identity(n, n) * shift;
    // (A + sI) Z + Z (A + sI)' = 2 B B'
    let z = lyapunov(&shifted.transpose(), &(b * b.transpose() * -2.0))?;
    let z_inv = z.try_inverse()?;
    Some(b.transpose() * z_inv)
}

/// Stabilizing solution `P` of the continuous algebraic Riccati equation.
pub fn care_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &CareOptions,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    ensure(a.iter().chain(b.iter()).all(|v| v.is_finite()), "A, B finite")?;
    validate_weight(q)?;
    ensure(
        r.iter().all(|v| v.is_finite()) && (r - r.transpose()).amax() <= 1e-12 * (1.0 + r.amax()),
        "R = R^T",
    )?;
    ensure(r.clone().cholesky().is_some(), "R > 0")?;

    let r_inv_bt = r
        .clone()
        .lu()
        .solve(&b.transpose())
        .ok_or_else(|| failed("R is singular", f64::NAN, 0))?;
    let g = b * &r_inv_bt;
    let residual_of = |p: &DMatrix<f64>| care_residual(a, b, q, r, p).amax();
    let accept = |p: &DMatrix<f64>| residual_of(p) < opts.tol * (1.0 + inf_norm(p));

    let mut iterations = 0;
    let mut gain = match sign_function_solution(a, &g, q, opts.max_iter) {
        Some(p) if is_hurwitz(&(a - &g * &p)) => {
            if accept(&p) {
                return Ok(p);
            }
            &r_inv_bt * &p
        }
        _ => bass_gain(a, b)
            .ok_or_else(|| failed("no stabilizing initial gain: (A, B) not stabilizable", f64::NAN, 0))?,
    };

    let mut best = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let closed = a - b * &gain;
        if !is_hurwitz(&closed) {
            return Err(failed(
                "Newton iterate lost stability: (A, B) not stabilizable",
                best,
                iterations,
            ));
        }
        let cost = q + gain.transpose() * r * &gain;
        let p = lyapunov(&closed, &cost).ok_or_else(|| failed("singular Lyapunov operator", best, iterations))?;
        let res = residual_of(&p);
        best = best.min(res);
        if res < opts.tol * (1.0 + inf_norm(&p)) {
            return Ok(p);
        }
        gain = &r_inv_bt * &p;
    }
    Err(failed("iteration cap reached", best, iterations))
}

/// Result of an LQR design on an arbitrary-size system.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// `K = R^-1 B' P`; the optimal law is `u = -K x`.
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// `max |A'P + PA - P B R^-1 B' P + Q|`.
    pub residual: f64,
    /// Eigenvalues of `A - B K`.
    pub closed_loop: Vec<Complex<f64>>,
}

pub fn lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &CareOptions,
) -> Result<LqrSolution> {
    let p = care_solve(a, b, q, r, opts)?;
    let residual = care_residual(a, b, q, r, &p).amax();
    let k = r
        .clone()
        .lu()
        .solve(&(b.transpose() * &p))
        .ok_or_else(|| failed("R is singular", residual, 0))?;
    let closed_loop: Vec<_> = (a - b * &k).complex_eigenvalues().iter().copied().collect();
    if !closed_loop.iter().all(|e| e.re < 0.0) {
        return Err(failed("closed loop not stable", residual, 0));
    }
    Ok(LqrSolution {
        k,
        p,
        residual,
        closed_loop,
    })
}

/// LQR gain `K = R^-1 B' P` for the balancing robot's linear model.
pub fn lqr_gain(ss: &StateSpace, w: &LqrWeights) -> Result<StateGain> {
    w.validate()?;
    let a = DMatrix::from_iterator(4, 4, ss.a.iter().copied());
    let b = DMatrix::from_iterator(4, 1, ss.b.iter().copied());
    let q = DMatrix::from_iterator(4, 4, w.q.iter().copied());
    let r = DMatrix::from_element(1, 1, w.r);
    let sol = lqr(&a, &b, &q, &r, &CareOptions::default())?;
    Ok(StateGain::new([sol.k[0], sol.k[1], sol.k[2], sol.k[3]]))
}
