//! Stokes and Helmholtz operators, the trilinear form `b`, the rotational
//! bilinear operator `B~(u, v) = -P(u x curl v)` and the Galerkin drift.
//!
//! Nonlinear terms are evaluated by collocation on the `4N x 4N` quadrature
//! grid of the basis. Every product that appears has Fourier degree at most
//! `3N`, so the rectangle rule is exact and no dealiasing is needed.

use crate::basis::{project_on, SpectralField};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    /// Kinematic viscosity.
    pub nu: f64,
    /// Filter length; zero gives plain Navier-Stokes.
    pub alpha: f64,
    /// Box side length.
    pub length: f64,
}

impl PhysicalParams {
    pub fn new(nu: f64, alpha: f64, length: f64) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return invalid(format!("nu must be non-negative, got {nu}"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return invalid(format!("alpha must be non-negative, got {alpha}"));
        }
        if !(length > 0.0 && length.is_finite()) {
            return invalid(format!("L must be positive, got {length}"));
        }
        Ok(Self { nu, alpha, length })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Helmholtz {
    /// Multiply by `1 + alpha^2 lambda`.
    Apply,
    /// Divide by `1 + alpha^2 lambda`.
    Solve,
}

/// `A u`.
pub fn apply_stokes(u: &SpectralField) -> SpectralField {
    let lam = u.basis().eigenvalues();
    u.map(|j, c| lam[j] * c)
}

/// `(I + alpha^2 A) u` or its inverse.
pub fn helmholtz(u: &SpectralField, alpha: f64, mode: Helmholtz) -> SpectralField {
    let lam = u.basis().eigenvalues();
    let a2 = alpha * alpha;
    match mode {
        Helmholtz::Apply => u.map(|j, c| (1.0 + a2 * lam[j]) * c),
        Helmholtz::Solve => u.map(|j, c| c / (1.0 + a2 * lam[j])),
    }
}

/// `b(u, v, w) = <(u . grad) v, w>`.
pub fn b_form(u: &SpectralField, v: &SpectralField, w: &SpectralField) -> Result<f64> {
    u.check_same(v)?;
    u.check_same(w)?;
    let grid = u.basis().quadrature();
    let ug = u.eval_on_grid(grid);
    let wg = w.eval_on_grid(grid);
    let dv = v.gradient_on_grid(grid);
    let s: f64 = ug
        .values
        .iter()
        .zip(&wg.values)
        .zip(&dv)
        .map(|((uu, ww), g)| {
            (0..2)
                .map(|l| (uu[0] * g[0][l] + uu[1] * g[1][l]) * ww[l])
                .sum::<f64>()
        })
        .sum();
    Ok(s * grid.weight())
}

/// `B~_n(u, v) = -P_n (u x curl v)`, using the 2D reading
/// `u x curl v = (omega u2, -omega u1)` with `omega = d1 v2 - d2 v1`.
pub fn b_tilde(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.check_same(v)?;
    let basis = u.basis();
    let grid = basis.quadrature();
    let g = grid.points();
    let mut uv = vec![[0.0; 2]; g];
    let mut scratch = vec![0.0; g];
    let mut omega = vec![0.0; g];
    u.velocity_and_curl(grid, &mut uv, &mut scratch);
    let mut vv = vec![[0.0; 2]; g];
    v.velocity_and_curl(grid, &mut vv, &mut omega);
    let f: Vec<[f64; 2]> = uv
        .iter()
        .zip(&omega)
        .map(|(uu, &om)| [-om * uu[1], om * uu[0]])
        .collect();
    Ok(project_on(grid, &f, basis))
}

/// `B~_n(u, v)` through the matrix form `-P[(grad v - (grad v)^T) u]`,
/// with `(grad v)_{il} = d_i v_l`. Kept as an independent cross-check of
/// [`b_tilde`].
pub fn b_tilde_matrix(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.check_same(v)?;
    let basis = u.basis();
    let grid = basis.quadrature();
    let ug = u.eval_on_grid(grid);
    let dv = v.gradient_on_grid(grid);
    let f: Vec<[f64; 2]> = ug
        .values
        .iter()
        .zip(&dv)
        .map(|(uu, g)| {
            let mut out = [0.0; 2];
            for (i, o) in out.iter_mut().enumerate() {
                let mut s = 0.0;
                for l in 0..2 {
                    s += (g[i][l] - g[l][i]) * uu[l];
                }
                *o = -s;
            }
            out
        })
        .collect();
    Ok(project_on(grid, &f, basis))
}

/// Nonlinear part of the drift, `-(I + alpha^2 A)^{-1} B~_n(u, u + alpha^2 A u)`.
pub fn nonlinear_term(u: &SpectralField, p: &PhysicalParams) -> SpectralField {
    let v = helmholtz(u, p.alpha, Helmholtz::Apply);
    let b = b_tilde(u, &v).expect("a field shares its own basis");
    helmholtz(&b, p.alpha, Helmholtz::Solve).scaled(-1.0)
}

/// Full Galerkin drift `-nu A u - (I + alpha^2 A)^{-1} B~_n(u, u + alpha^2 A u)`.
pub fn drift(u: &SpectralField, p: &PhysicalParams) -> SpectralField {
    let lam = u.basis().eigenvalues();
    let n = nonlinear_term(u, p);
    n.map(|j, c| c - p.nu * lam[j] * u.coeffs()[j])
}

/// Derivative of [`nonlinear_term`] at `u` in direction `eta`:
/// `-(I + alpha^2 A)^{-1}[B~_n(eta, u + alpha^2 A u) + B~_n(u, eta + alpha^2 A eta)]`.
pub fn linearized_nonlinear_term(
    u: &SpectralField,
    eta: &SpectralField,
    p: &PhysicalParams,
) -> Result<SpectralField> {
    u.check_same(eta)?;
    let hu = helmholtz(u, p.alpha, Helmholtz::Apply);
    let he = helmholtz(eta, p.alpha, Helmholtz::Apply);
    let sum = b_tilde(eta, &hu)?.add_scaled(1.0, &b_tilde(u, &he)?)?;
    Ok(helmholtz(&sum, p.alpha, Helmholtz::Solve).scaled(-1.0))
}

/// Right-hand side of the first-variation equation along `u`.
pub fn linearized_drift(
    u: &SpectralField,
    eta: &SpectralField,
    p: &PhysicalParams,
) -> Result<SpectralField> {
    let lam = u.basis().eigenvalues();
    let n = linearized_nonlinear_term(u, eta, p)?;
    Ok(n.map(|j, c| c - p.nu * lam[j] * eta.coeffs()[j]))
}
