//! Divergence-free Fourier eigenbasis of the Stokes operator on the periodic
//! box `[0, L]^2`.
//!
//! Every wavevector `k` in the upper half-plane (`k1 > 0`, or `k1 == 0` and
//! `k2 > 0`) with `max(|k1|, |k2|) <= cutoff` contributes two real modes
//!
//! ```text
//! e(x) = sqrt(2) / L * {cos, sin}(2 pi k.x / L) * (-k2, k1) / |k|
//! ```
//!
//! which are orthonormal in `L^2`, pointwise divergence-free and mean-zero.
//! The Stokes operator is diagonal with eigenvalue `(2 pi / L)^2 |k|^2`.
//!
//! Modes are ordered by `(|k|^2, k1, k2, parity)` with cosine before sine.
//! The ordering is part of the snapshot format and must not change.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::{Arc, OnceLock};

use crate::error::{invalid, Error, Result};

/// Lattice index of a Fourier mode, stored in half-space representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WaveVector {
    pub k1: i32,
    pub k2: i32,
}

impl WaveVector {
    pub fn new(k1: i32, k2: i32) -> Result<Self> {
        if k1 > 0 || (k1 == 0 && k2 > 0) {
            Ok(Self { k1, k2 })
        } else {
            invalid(format!(
                "wavevector ({k1}, {k2}) is not a half-space representative"
            ))
        }
    }

    pub fn norm_sq(&self) -> i64 {
        let (a, b) = (self.k1 as i64, self.k2 as i64);
        a * a + b * b
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// Unit polarization `(-k2, k1) / |k|`.
    pub fn polarization(&self) -> [f64; 2] {
        let n = self.norm();
        [-(self.k2 as f64) / n, self.k1 as f64 / n]
    }

    /// Unnormalized integer polarization; `k . p == 0` in exact arithmetic.
    pub fn integer_polarization(&self) -> [i64; 2] {
        [-(self.k2 as i64), self.k1 as i64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parity {
    Cos,
    Sin,
}

impl Parity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parity::Cos => "cos",
            Parity::Sin => "sin",
        }
    }

    /// `(f(theta), f'(theta))` for this parity.
    #[inline]
    fn eval(&self, theta: f64) -> (f64, f64) {
        let (s, c) = theta.sin_cos();
        match self {
            Parity::Cos => (c, -s),
            Parity::Sin => (s, c),
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cos" => Ok(Parity::Cos),
            "sin" => Ok(Parity::Sin),
            other => invalid(format!("unknown parity '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub wave: WaveVector,
    pub parity: Parity,
}

/// Mode tables sampled on a uniform `m x m` grid.
///
/// `value[j * points + g]` is `sqrt(2)/L * f_j(theta_g)` and `slope[..]` the
/// same for `f_j'`, so that the velocity of mode `j` at grid point `g` is
/// `value * p_j` and its curl is `slope * (2 pi / L) |k_j|`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    m: usize,
    weight: f64,
    value: Vec<f64>,
    slope: Vec<f64>,
}

impl QuadratureGrid {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn points(&self) -> usize {
        self.m * self.m
    }

    /// Rectangle-rule weight `L^2 / m^2`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    #[inline]
    pub(crate) fn value_row(&self, j: usize) -> &[f64] {
        let g = self.points();
        &self.value[j * g..(j + 1) * g]
    }

    #[inline]
    pub(crate) fn slope_row(&self, j: usize) -> &[f64] {
        let g = self.points();
        &self.slope[j * g..(j + 1) * g]
    }
}

/// A vector field sampled on a uniform `m x m` grid, point `(i1, i2)` at
/// index `i1 * m + i2` and position `(i1 L / m, i2 L / m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub m: usize,
    pub values: Vec<[f64; 2]>,
}

impl GridField {
    pub fn from_fn(m: usize, length: f64, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let h = length / m as f64;
        let mut values = Vec::with_capacity(m * m);
        for i1 in 0..m {
            for i2 in 0..m {
                values.push(f([i1 as f64 * h, i2 as f64 * h]));
            }
        }
        Self { m, values }
    }
}

#[derive(Debug)]
pub struct Basis {
    length: f64,
    cutoff: u32,
    modes: Vec<Mode>,
    eigenvalues: Vec<f64>,
    /// `2 pi |k| / L` per mode (the square root of the eigenvalue).
    wavenumbers: Vec<f64>,
    polarizations: Vec<[f64; 2]>,
    quadrature: OnceLock<QuadratureGrid>,
}

impl Basis {
    pub fn new(length: f64, cutoff: u32) -> Result<Arc<Self>> {
        if !(length > 0.0 && length.is_finite()) {
            return invalid(format!("box length must be positive, got {length}"));
        }
        if cutoff == 0 {
            return invalid("cutoff must be at least 1");
        }
        let n = cutoff as i32;
        let mut waves = Vec::new();
        for k1 in 0..=n {
            for k2 in -n..=n {
                if let Ok(w) = WaveVector::new(k1, k2) {
                    waves.push(w);
                }
            }
        }
        waves.sort_by_key(|w| (w.norm_sq(), w.k1, w.k2));
        let modes: Vec<Mode> = waves
            .iter()
            .flat_map(|&wave| {
                [Parity::Cos, Parity::Sin]
                    .into_iter()
                    .map(move |parity| Mode { wave, parity })
            })
            .collect();

        let scale = 2.0 * PI / length;
        let eigenvalues = modes
            .iter()
            .map(|m| scale * scale * m.wave.norm_sq() as f64)
            .collect();
        let wavenumbers = modes.iter().map(|m| scale * m.wave.norm()).collect();
        let polarizations = modes.iter().map(|m| m.wave.polarization()).collect();
        Ok(Arc::new(Self {
            length,
            cutoff,
            modes,
            eigenvalues,
            wavenumbers,
            polarizations,
            quadrature: OnceLock::new(),
        }))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn polarizations(&self) -> &[[f64; 2]] {
        &self.polarizations
    }

    /// Smallest Stokes eigenvalue, `(2 pi / L)^2`.
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(0.0, f64::max)
    }

    pub fn index_of(&self, wave: WaveVector, parity: Parity) -> Option<usize> {
        self.modes
            .iter()
            .position(|m| m.wave == wave && m.parity == parity)
    }

    /// The exact quadrature grid with `m = 4 * cutoff` points per axis.
    pub fn quadrature(&self) -> &QuadratureGrid {
        self.quadrature
            .get_or_init(|| build_grid(&self.modes, self.length, 4 * self.cutoff as usize))
    }

    /// Mode tables on an arbitrary uniform grid.
    pub fn grid(&self, m: usize) -> QuadratureGrid {
        build_grid(&self.modes, self.length, m)
    }

    /// Two bases describe the same truncated space.
    pub fn same_space(&self, other: &Basis) -> bool {
        std::ptr::eq(self, other)
            || (self.cutoff == other.cutoff && self.length.to_bits() == other.length.to_bits())
    }

    /// Samples of mode `j` at a physical point.
    pub fn eval_mode(&self, j: usize, x: [f64; 2]) -> [f64; 2] {
        let mode = &self.modes[j];
        let theta = self.phase(mode.wave, x);
        let (f, _) = mode.parity.eval(theta);
        let amp = SQRT_2 / self.length * f;
        let p = self.polarizations[j];
        [amp * p[0], amp * p[1]]
    }

    fn phase(&self, wave: WaveVector, x: [f64; 2]) -> f64 {
        2.0 * PI / self.length * (wave.k1 as f64 * x[0] + wave.k2 as f64 * x[1])
    }
}

fn build_grid(modes: &[Mode], length: f64, m: usize) -> QuadratureGrid {
    let points = m * m;
    let h = length / m as f64;
    let amp = SQRT_2 / length;
    let mut value = Vec::with_capacity(modes.len() * points);
    let mut slope = Vec::with_capacity(modes.len() * points);
    for mode in modes {
        let (k1, k2) = (mode.wave.k1 as i64, mode.wave.k2 as i64);
        for i1 in 0..m as i64 {
            for i2 in 0..m as i64 {
                // reduce the integer phase first so large grids stay accurate
                let phase = (k1 * i1 + k2 * i2).rem_euclid(m as i64);
                let theta = 2.0 * PI * phase as f64 / m as f64;
                let (f, df) = mode.parity.eval(theta);
                value.push(amp * f);
                slope.push(amp * df);
            }
        }
    }
    QuadratureGrid {
        m,
        weight: h * h,
        value,
        slope,
    }
}

/// `|u|_2`, `|grad u|_2` and `|A u|_2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevNorms {
    pub l2: f64,
    pub grad: f64,
    pub stokes: f64,
}

/// A mean-zero divergence-free velocity field in the span of a [`Basis`].
#[derive(Debug, Clone)]
pub struct SpectralField {
    basis: Arc<Basis>,
    coeffs: Vec<f64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.basis.same_space(&other.basis) && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(basis: &Arc<Basis>) -> Self {
        Self {
            basis: Arc::clone(basis),
            coeffs: vec![0.0; basis.len()],
        }
    }

    pub fn from_coeffs(basis: &Arc<Basis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return invalid(format!(
                "expected {} coefficients, got {}",
                basis.len(),
                coeffs.len()
            ));
        }
        Ok(Self {
            basis: Arc::clone(basis),
            coeffs,
        })
    }

    /// The basis element `e_j`.
    pub fn unit(basis: &Arc<Basis>, j: usize) -> Self {
        let mut u = Self::zeros(basis);
        u.coeffs[j] = 1.0;
        u
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn check_same(&self, other: &SpectralField) -> Result<()> {
        if self.basis.same_space(&other.basis) {
            Ok(())
        } else {
            invalid("fields live on different bases")
        }
    }

    /// Same basis, coefficients replaced.
    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), self.coeffs.len());
        Self {
            basis: Arc::clone(&self.basis),
            coeffs,
        }
    }

    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        self.with_coeffs(self.coeffs.iter().enumerate().map(|(j, &c)| f(j, c)).collect())
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|_, c| a * c)
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &SpectralField) -> Result<Self> {
        self.check_same(other)?;
        Ok(self.with_coeffs(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| x + a * y)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    /// L^2 pairing; orthonormality reduces it to a coefficient dot product.
    pub fn inner(&self, other: &SpectralField) -> Result<f64> {
        self.check_same(other)?;
        Ok(dot(&self.coeffs, &other.coeffs))
    }

    pub fn norms(&self) -> SobolevNorms {
        let (mut l2, mut grad, mut stokes) = (0.0, 0.0, 0.0);
        for (c, lam) in self.coeffs.iter().zip(self.basis.eigenvalues()) {
            let c2 = c * c;
            l2 += c2;
            grad += lam * c2;
            stokes += lam * lam * c2;
        }
        SobolevNorms {
            l2: l2.sqrt(),
            grad: grad.sqrt(),
            stokes: stokes.sqrt(),
        }
    }

    /// `|u|^2 + alpha^2 |grad u|^2`.
    pub fn energy(&self, alpha: f64) -> f64 {
        let a2 = alpha * alpha;
        self.coeffs
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(c, lam)| c * c * (1.0 + a2 * lam))
            .sum()
    }

    /// `|grad u|^2 + alpha^2 |A u|^2`.
    pub fn dissipation(&self, alpha: f64) -> f64 {
        let a2 = alpha * alpha;
        self.coeffs
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(c, lam)| c * c * lam * (1.0 + a2 * lam))
            .sum()
    }

    /// Exact trigonometric sum at arbitrary points.
    pub fn eval(&self, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        points
            .iter()
            .map(|&x| {
                let mut out = [0.0; 2];
                for (j, &c) in self.coeffs.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let e = self.basis.eval_mode(j, x);
                    out[0] += c * e[0];
                    out[1] += c * e[1];
                }
                out
            })
            .collect()
    }

    /// Samples on the grid described by `grid` (which must come from this
    /// field's basis).
    pub fn eval_on_grid(&self, grid: &QuadratureGrid) -> GridField {
        let mut values = vec![[0.0; 2]; grid.points()];
        for (j, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let p = self.basis.polarizations[j];
            let (a, b) = (c * p[0], c * p[1]);
            for (v, &f) in values.iter_mut().zip(grid.value_row(j)) {
                v[0] += a * f;
                v[1] += b * f;
            }
        }
        GridField {
            m: grid.m(),
            values,
        }
    }

    /// Velocity and scalar curl on the quadrature grid, written into the
    /// provided buffers.
    pub(crate) fn velocity_and_curl(
        &self,
        grid: &QuadratureGrid,
        velocity: &mut [[f64; 2]],
        curl: &mut [f64],
    ) {
        velocity.fill([0.0; 2]);
        curl.fill(0.0);
        for (j, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let p = self.basis.polarizations[j];
            let (a, b) = (c * p[0], c * p[1]);
            let w = c * self.basis.wavenumbers[j];
            for ((v, &f), (om, &df)) in velocity
                .iter_mut()
                .zip(grid.value_row(j))
                .zip(curl.iter_mut().zip(grid.slope_row(j)))
            {
                v[0] += a * f;
                v[1] += b * f;
                *om += w * df;
            }
        }
    }

    /// Velocity gradient `g[i][l] = d_i u_l` on the quadrature grid.
    pub fn gradient_on_grid(&self, grid: &QuadratureGrid) -> Vec<[[f64; 2]; 2]> {
        let mut out = vec![[[0.0; 2]; 2]; grid.points()];
        let scale = 2.0 * PI / self.basis.length;
        for (j, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let mode = &self.basis.modes[j];
            let kappa = [scale * mode.wave.k1 as f64, scale * mode.wave.k2 as f64];
            let p = self.basis.polarizations[j];
            for (g, &df) in out.iter_mut().zip(grid.slope_row(j)) {
                for i in 0..2 {
                    for l in 0..2 {
                        g[i][l] += c * df * kappa[i] * p[l];
                    }
                }
            }
        }
        out
    }
}

/// Leray projection of grid samples onto the truncated divergence-free space.
///
/// The grid must have at least `4 * cutoff` points per axis; coarser grids
/// alias the cubic products that the nonlinear terms produce.
pub fn leray_project(samples: &GridField, basis: &Arc<Basis>) -> Result<SpectralField> {
    let need = 4 * basis.cutoff() as usize;
    if samples.m < need {
        return invalid(format!(
            "grid with {} points per axis is too coarse for cutoff {} (need {need})",
            samples.m,
            basis.cutoff()
        ));
    }
    if samples.values.len() != samples.m * samples.m {
        return invalid("grid sample count does not match m*m");
    }
    let owned;
    let grid = if samples.m == basis.quadrature().m() {
        basis.quadrature()
    } else {
        owned = basis.grid(samples.m);
        &owned
    };
    Ok(project_on(grid, &samples.values, basis))
}

pub(crate) fn project_on(
    grid: &QuadratureGrid,
    values: &[[f64; 2]],
    basis: &Arc<Basis>,
) -> SpectralField {
    let coeffs = (0..basis.len())
        .map(|j| {
            let p = basis.polarizations[j];
            let s: f64 = values
                .iter()
                .zip(grid.value_row(j))
                .map(|(v, &f)| (v[0] * p[0] + v[1] * p[1]) * f)
                .sum();
            s * grid.weight()
        })
        .collect();
    SpectralField {
        basis: Arc::clone(basis),
        coeffs,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const SNAPSHOT_MAGIC: &str = "lans-alpha-snapshot v1";

/// Writes the versioned text snapshot of a field.
pub fn write_snapshot<W: Write>(u: &SpectralField, mut out: W) -> std::io::Result<()> {
    let basis = u.basis();
    writeln!(out, "{SNAPSHOT_MAGIC}")?;
    writeln!(
        out,
        "L={} cutoff={} n={}",
        basis.length(),
        basis.cutoff(),
        basis.len()
    )?;
    for (mode, c) in basis.modes().iter().zip(u.coeffs()) {
        writeln!(
            out,
            "{} {} {} {:.16e}",
            mode.wave.k1, mode.wave.k2, mode.parity, c
        )?;
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`], rebuilding its basis.
pub fn read_snapshot<R: BufRead>(input: R) -> Result<SpectralField> {
    let bad = |msg: String| Error::Snapshot(msg);
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad(format!("missing {what}")))?
            .map_err(|e| bad(e.to_string()))
    };

    let magic = next("header")?;
    if magic.trim() != SNAPSHOT_MAGIC {
        return Err(bad(format!("unexpected header '{magic}'")));
    }
    let dims = next("dimensions line")?;
    let (mut length, mut cutoff, mut n) = (None, None, None);
    for tok in dims.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| bad(format!("bad token '{tok}'")))?;
        match key {
            "L" => length = value.parse::<f64>().ok(),
            "cutoff" => cutoff = value.parse::<u32>().ok(),
            "n" => n = value.parse::<usize>().ok(),
            _ => return Err(bad(format!("unknown key '{key}'"))),
        }
    }
    let (length, cutoff, n) = match (length, cutoff, n) {
        (Some(l), Some(c), Some(n)) => (l, c, n),
        _ => return Err(bad(format!("incomplete dimensions line '{dims}'"))),
    };
    let basis = Basis::new(length, cutoff).map_err(|e| bad(e.to_string()))?;
    if basis.len() != n {
        return Err(bad(format!(
            "n={n} does not match cutoff {cutoff} ({} modes)",
            basis.len()
        )));
    }

    let mut u = SpectralField::zeros(&basis);
    for (j, mode) in basis.modes().iter().enumerate() {
        let line = next("mode line")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad(format!("mode line {j}: expected 4 fields")));
        }
        let k1: i32 = fields[0].parse().map_err(|_| bad(format!("mode line {j}: k1")))?;
        let k2: i32 = fields[1].parse().map_err(|_| bad(format!("mode line {j}: k2")))?;
        let parity: Parity = fields[2].parse().map_err(|_| bad(format!("mode line {j}: parity")))?;
        if (k1, k2, parity) != (mode.wave.k1, mode.wave.k2, mode.parity) {
            return Err(bad(format!("mode line {j} out of canonical order")));
        }
        u.coeffs[j] = fields[3]
            .parse()
            .map_err(|_| bad(format!("mode line {j}: coefficient")))?;
    }
    Ok(u)
}
