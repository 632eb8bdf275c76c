//! Time stepping for the Galerkin SDE
//!
//! ```text
//! du + (nu A u + (I + alpha^2 A)^{-1} B~_n(u, u + alpha^2 A u)) dt = Q dW
//! ```
//!
//! and for its first variation along a frozen noise path.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::basis::{Basis, SpectralField};
use crate::error::{invalid, Error, Result};
use crate::noise::{standard_increment, NoiseRng, NoiseSpec};
use crate::operators::{linearized_nonlinear_term, nonlinear_term, PhysicalParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Linear part implicit, nonlinearity and noise explicit.
    SemiImplicitEm,
    /// Exact integration of the linear part, including the exact variance
    /// of the stochastic convolution over one step.
    ExponentialEm,
    /// Classical RK4 on the deterministic drift.
    Rk4Deterministic,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::SemiImplicitEm => "semi_implicit_em",
            Scheme::ExponentialEm => "exponential_em",
            Scheme::Rk4Deterministic => "rk4_deterministic",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi_implicit_em" => Ok(Scheme::SemiImplicitEm),
            "exponential_em" => Ok(Scheme::ExponentialEm),
            "rk4_deterministic" => Ok(Scheme::Rk4Deterministic),
            other => invalid(format!("unknown scheme '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// When false the nonlinear term is dropped and the dynamics reduce to
    /// the Ornstein-Uhlenbeck process `dZ = -nu A Z dt + Q dW`.
    pub nonlinear: bool,
    pub keep_snapshots: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::SemiImplicitEm,
            dt: 1e-3,
            t_end: 1.0,
            record_every: 10,
            nonlinear: true,
            keep_snapshots: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return invalid(format!("t_end must be non-negative, got {}", self.t_end));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return invalid(format!("dt = {} exceeds t_end = {}", self.dt, self.t_end));
        }
        if self.record_every == 0 {
            return invalid("record_every must be at least 1");
        }
        self.steps().map(|_| ())
    }

    /// Number of steps of size `dt` that reach `t_end`.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return invalid(format!(
                "t_end = {} is not a whole number of steps dt = {}",
                self.t_end, self.dt
            ));
        }
        Ok(n as usize)
    }
}

/// Quantities along one trajectory, sampled every `record_every` steps and
/// at the final time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// `F = |u|^2 + alpha^2 |grad u|^2`.
    pub energy: Vec<f64>,
    /// `|grad u|^2 + alpha^2 |A u|^2`.
    pub dissipation: Vec<f64>,
    /// Trapezoidal integral of the dissipation from time 0, accumulated at
    /// every step.
    pub dissipation_integral: Vec<f64>,
    /// Running Ito sum `sum_m <(I + alpha^2 A) u_m, Q dW_m>`.
    pub martingale: Vec<f64>,
    /// Running realized quadratic variation `sum_m |(I + alpha^2 A)^{1/2} Q dW_m|^2`.
    pub quadratic_variation: Vec<f64>,
    pub snapshots: Vec<SpectralField>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&SpectralField> {
        self.snapshots.last()
    }
}

/// Per-step hook, called with the state at every step index including 0.
pub trait Observer {
    fn observe(&mut self, step: usize, t: f64, u: &SpectralField);
}

impl<F: FnMut(usize, f64, &SpectralField)> Observer for F {
    fn observe(&mut self, step: usize, t: f64, u: &SpectralField) {
        self(step, t, u)
    }
}

fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

#[derive(Debug, Clone)]
pub struct Integrator {
    params: PhysicalParams,
    noise: NoiseSpec,
    cfg: IntegratorConfig,
    /// `1 / (1 + dt nu lambda)`.
    implicit: Vec<f64>,
    /// `exp(-nu lambda dt)`.
    decay: Vec<f64>,
    /// `dt phi1(-nu lambda dt)`.
    phi1_dt: Vec<f64>,
    /// Standard deviation of the one-step stochastic convolution divided
    /// by `sqrt(dt)`, so it multiplies a Wiener increment.
    conv_scale: Vec<f64>,
    helm: Vec<f64>,
}

impl Integrator {
    pub fn new(params: PhysicalParams, noise: NoiseSpec, cfg: IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = Arc::clone(noise.basis());
        if basis.length().to_bits() != params.length.to_bits() {
            return invalid(format!(
                "params L = {} does not match basis L = {}",
                params.length,
                basis.length()
            ));
        }
        if cfg.scheme == Scheme::Rk4Deterministic && noise.sigma != 0.0 {
            return invalid("rk4_deterministic requires sigma = 0");
        }
        let dt = cfg.dt;
        let lam = basis.eigenvalues();
        let q = noise.multipliers();
        let implicit = lam.iter().map(|l| 1.0 / (1.0 + dt * params.nu * l)).collect();
        let decay = lam.iter().map(|l| (-params.nu * l * dt).exp()).collect();
        let phi1_dt = lam.iter().map(|l| dt * phi1(-params.nu * l * dt)).collect();
        let conv_scale = lam
            .iter()
            .zip(q)
            .map(|(l, qj)| {
                let rate = params.nu * l;
                // (1 - e^{-2 r dt}) / (2 r dt), written to stay accurate as r dt -> 0
                let ratio = if rate * dt < 1e-12 {
                    1.0
                } else {
                    -(-2.0 * rate * dt).exp_m1() / (2.0 * rate * dt)
                };
                qj * ratio.sqrt()
            })
            .collect();
        let a2 = params.alpha * params.alpha;
        let helm = lam.iter().map(|l| 1.0 + a2 * l).collect();
        Ok(Self {
            params,
            noise,
            cfg,
            implicit,
            decay,
            phi1_dt,
            conv_scale,
            helm,
        })
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    pub fn basis(&self) -> &Arc<Basis> {
        self.noise.basis()
    }

    /// Same model with a different configuration.
    pub fn reconfigured(&self, cfg: IntegratorConfig) -> Result<Self> {
        Self::new(self.params, self.noise.clone(), cfg)
    }

    fn nonlinear(&self, u: &SpectralField) -> SpectralField {
        if self.cfg.nonlinear {
            nonlinear_term(u, &self.params)
        } else {
            SpectralField::zeros(u.basis())
        }
    }

    fn linearized_nonlinear(&self, u: &SpectralField, eta: &SpectralField) -> Result<SpectralField> {
        if self.cfg.nonlinear {
            linearized_nonlinear_term(u, eta, &self.params)
        } else {
            u.check_same(eta)?;
            Ok(SpectralField::zeros(u.basis()))
        }
    }

    /// The drift the integrator actually uses (honours `nonlinear`).
    pub fn drift(&self, u: &SpectralField) -> SpectralField {
        let lam = u.basis().eigenvalues();
        let nu = self.params.nu;
        self.nonlinear(u).map(|j, c| c - nu * lam[j] * u.coeffs()[j])
    }

    fn linearized_drift(&self, u: &SpectralField, eta: &SpectralField) -> Result<SpectralField> {
        let lam = u.basis().eigenvalues();
        let nu = self.params.nu;
        Ok(self
            .linearized_nonlinear(u, eta)?
            .map(|j, c| c - nu * lam[j] * eta.coeffs()[j]))
    }

    fn check_field(&self, u: &SpectralField) -> Result<()> {
        if self.basis().same_space(u.basis()) {
            Ok(())
        } else {
            invalid("field does not live on the integrator's basis")
        }
    }

    /// Standard Wiener increments for one step (empty for RK4, which uses no
    /// randomness).
    pub fn draw_increment(&self, rng: &mut NoiseRng) -> Vec<f64> {
        match self.cfg.scheme {
            Scheme::Rk4Deterministic => Vec::new(),
            _ => standard_increment(self.basis().len(), self.cfg.dt, rng),
        }
    }

    /// One step driven by fresh noise from `rng`.
    pub fn step(&self, u: &SpectralField, rng: &mut NoiseRng) -> Result<SpectralField> {
        let dw = self.draw_increment(rng);
        self.step_with_increment(u, &dw)
    }

    /// One step driven by the given standard Wiener increment `dw`
    /// (`N(0, dt)` per mode, before `Q` is applied).
    pub fn step_with_increment(&self, u: &SpectralField, dw: &[f64]) -> Result<SpectralField> {
        self.check_field(u)?;
        let dt = self.cfg.dt;
        let q = self.noise.multipliers();
        match self.cfg.scheme {
            Scheme::SemiImplicitEm => {
                self.check_increment(dw)?;
                let n = self.nonlinear(u);
                Ok(u.map(|j, c| self.implicit[j] * (c + dt * n.coeffs()[j] + q[j] * dw[j])))
            }
            Scheme::ExponentialEm => {
                self.check_increment(dw)?;
                let n = self.nonlinear(u);
                Ok(u.map(|j, c| {
                    self.decay[j] * c + self.phi1_dt[j] * n.coeffs()[j] + self.conv_scale[j] * dw[j]
                }))
            }
            Scheme::Rk4Deterministic => Ok(self.rk4(u)),
        }
    }

    fn check_increment(&self, dw: &[f64]) -> Result<()> {
        if dw.len() == self.basis().len() {
            Ok(())
        } else {
            invalid(format!(
                "increment has {} entries, basis has {}",
                dw.len(),
                self.basis().len()
            ))
        }
    }

    fn rk4(&self, u: &SpectralField) -> SpectralField {
        let dt = self.cfg.dt;
        let stage = |base: &SpectralField, k: &SpectralField, h: f64| {
            base.add_scaled(h, k).expect("same basis")
        };
        let k1 = self.drift(u);
        let k2 = self.drift(&stage(u, &k1, dt / 2.0));
        let k3 = self.drift(&stage(u, &k2, dt / 2.0));
        let k4 = self.drift(&stage(u, &k3, dt));
        u.map(|j, c| {
            c + dt / 6.0
                * (k1.coeffs()[j] + 2.0 * k2.coeffs()[j] + 2.0 * k3.coeffs()[j] + k4.coeffs()[j])
        })
    }

    /// Advances the first variation `eta` across the step that starts at
    /// `u`. The update is the derivative of the discrete step map, so it
    /// carries no noise.
    pub fn step_variation(&self, u: &SpectralField, eta: &SpectralField) -> Result<SpectralField> {
        self.check_field(u)?;
        u.check_same(eta)?;
        let dt = self.cfg.dt;
        match self.cfg.scheme {
            Scheme::SemiImplicitEm => {
                let dn = self.linearized_nonlinear(u, eta)?;
                Ok(eta.map(|j, c| self.implicit[j] * (c + dt * dn.coeffs()[j])))
            }
            Scheme::ExponentialEm => {
                let dn = self.linearized_nonlinear(u, eta)?;
                Ok(eta.map(|j, c| self.decay[j] * c + self.phi1_dt[j] * dn.coeffs()[j]))
            }
            Scheme::Rk4Deterministic => {
                // tangent of the RK4 map
                let k1 = self.drift(u);
                let l1 = self.linearized_drift(u, eta)?;
                let u2 = u.add_scaled(dt / 2.0, &k1)?;
                let e2 = eta.add_scaled(dt / 2.0, &l1)?;
                let k2 = self.drift(&u2);
                let l2 = self.linearized_drift(&u2, &e2)?;
                let u3 = u.add_scaled(dt / 2.0, &k2)?;
                let e3 = eta.add_scaled(dt / 2.0, &l2)?;
                let k3 = self.drift(&u3);
                let l3 = self.linearized_drift(&u3, &e3)?;
                let u4 = u.add_scaled(dt, &k3)?;
                let e4 = eta.add_scaled(dt, &l3)?;
                let l4 = self.linearized_drift(&u4, &e4)?;
                Ok(eta.map(|j, c| {
                    c + dt / 6.0
                        * (l1.coeffs()[j]
                            + 2.0 * l2.coeffs()[j]
                            + 2.0 * l3.coeffs()[j]
                            + l4.coeffs()[j])
                }))
            }
        }
    }

    /// Integrates from `x0` to `t_end` with noise drawn from `rng`.
    pub fn integrate(
        &self,
        x0: &SpectralField,
        rng: &mut NoiseRng,
        observers: &mut [&mut dyn Observer],
    ) -> Result<TrajectoryRecord> {
        self.integrate_driven(x0, &mut |_| self.draw_increment(rng), observers)
    }

    /// Integrates with increments supplied by `increments(step)`.
    pub fn integrate_driven(
        &self,
        x0: &SpectralField,
        increments: &mut dyn FnMut(usize) -> Vec<f64>,
        observers: &mut [&mut dyn Observer],
    ) -> Result<TrajectoryRecord> {
        self.check_field(x0)?;
        let steps = self.cfg.steps()?;
        let dt = self.cfg.dt;
        let alpha = self.params.alpha;
        let q = self.noise.multipliers();

        let mut rec = TrajectoryRecord::default();
        let mut u = x0.clone();
        let mut diss = u.dissipation(alpha);
        let mut diss_int = 0.0;
        let mut mart = 0.0;
        let mut qv = 0.0;

        let push = |rec: &mut TrajectoryRecord, t, u: &SpectralField, d, di, m, v| {
            rec.times.push(t);
            rec.energy.push(u.energy(alpha));
            rec.dissipation.push(d);
            rec.dissipation_integral.push(di);
            rec.martingale.push(m);
            rec.quadratic_variation.push(v);
            if self.cfg.keep_snapshots {
                rec.snapshots.push(u.clone());
            }
        };

        for obs in observers.iter_mut() {
            obs.observe(0, 0.0, &u);
        }
        push(&mut rec, 0.0, &u, diss, diss_int, mart, qv);

        for m in 0..steps {
            let dw = increments(m);
            let next = self.step_with_increment(&u, &dw)?;
            if !next.is_finite() {
                return Err(Error::BlowUp {
                    time: (m + 1) as f64 * dt,
                    step: m + 1,
                });
            }
            if !dw.is_empty() {
                for j in 0..dw.len() {
                    let xi = q[j] * dw[j];
                    mart += self.helm[j] * u.coeffs()[j] * xi;
                    qv += self.helm[j] * xi * xi;
                }
            }
            let next_diss = next.dissipation(alpha);
            diss_int += 0.5 * dt * (diss + next_diss);
            diss = next_diss;
            u = next;

            let t = (m + 1) as f64 * dt;
            for obs in observers.iter_mut() {
                obs.observe(m + 1, t, &u);
            }
            if (m + 1) % self.cfg.record_every == 0 || m + 1 == steps {
                push(&mut rec, t, &u, diss, diss_int, mart, qv);
            }
        }
        if !self.cfg.keep_snapshots {
            rec.snapshots.push(u);
        }
        Ok(rec)
    }

    /// Runs `u` and its first variation `eta` in lockstep on shared
    /// increments, returning both at `t_end`.
    pub fn integrate_with_variation(
        &self,
        x0: &SpectralField,
        h: &SpectralField,
        increments: &mut dyn FnMut(usize) -> Vec<f64>,
        mut on_step: impl FnMut(usize, &SpectralField, &SpectralField, &[f64]),
    ) -> Result<(SpectralField, SpectralField)> {
        self.check_field(x0)?;
        x0.check_same(h)?;
        let steps = self.cfg.steps()?;
        let mut u = x0.clone();
        let mut eta = h.clone();
        for m in 0..steps {
            let dw = increments(m);
            on_step(m, &u, &eta, &dw);
            let next_eta = self.step_variation(&u, &eta)?;
            let next = self.step_with_increment(&u, &dw)?;
            if !next.is_finite() || !next_eta.is_finite() {
                return Err(Error::BlowUp {
                    time: (m + 1) as f64 * self.cfg.dt,
                    step: m + 1,
                });
            }
            u = next;
            eta = next_eta;
        }
        Ok((u, eta))
    }
}
