//! Monte-Carlo checks of the energy structure of the Galerkin system: Ito
//! energy balance, polynomial and exponential moments, the Ornstein-Uhlenbeck
//! oracle, the Bismut-Elworthy derivative estimator and long-run averages.
//!
//! Ensemble member `i` is driven by `substream(seed, i)` and results are
//! reduced in member order, so every report is reproducible independently
//! of the number of worker threads.

use rayon::prelude::*;

use crate::basis::SpectralField;
use crate::error::{invalid, Error, Result};
use crate::integrator::{Integrator, IntegratorConfig};
use crate::noise::{standard_increment, substream, NoiseRng};
use crate::stats::{fit_line, BatchMeans, Summary};

/// Batches used for the batch-means error bars of time averages.
pub const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub t: f64,
    pub estimate: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub sample_count: usize,
    /// Value at the final time.
    pub estimate: f64,
    pub standard_error: f64,
    pub series: Vec<SeriesPoint>,
}

impl EnsembleReport {
    /// Builds the report from per-member series sampled on `times`.
    fn from_members(times: &[f64], members: &[Vec<f64>]) -> Result<Self> {
        if members.len() < 2 {
            return invalid("an ensemble needs at least two members");
        }
        let series: Vec<SeriesPoint> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let xs: Vec<f64> = members.iter().map(|m| m[i]).collect();
                let s = Summary::of(&xs);
                SeriesPoint {
                    t,
                    estimate: s.estimate,
                    standard_error: s.standard_error,
                }
            })
            .collect();
        let last = *series.last().expect("non-empty time grid");
        Ok(Self {
            sample_count: members.len(),
            estimate: last.estimate,
            standard_error: last.standard_error,
            series,
        })
    }

    pub fn final_summary(&self) -> Summary {
        Summary {
            estimate: self.estimate,
            standard_error: self.standard_error,
            sample_count: self.sample_count,
        }
    }
}

fn ensemble<T: Send>(members: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..members as u64).into_par_iter().map(f).collect()
}

fn check_members(m: usize) -> Result<()> {
    if m < 2 {
        invalid(format!("sample count must be at least 2, got {m}"))
    } else {
        Ok(())
    }
}

/// All standard increments of one trajectory, drawn up front so the same
/// path can drive several integrations.
fn draw_path(integ: &Integrator, steps: usize, rng: &mut NoiseRng) -> Vec<Vec<f64>> {
    (0..steps).map(|_| integ.draw_increment(rng)).collect()
}

/// Sums consecutive groups of `ratio` fine increments.
fn coarsen(path: &[Vec<f64>], ratio: usize) -> Vec<Vec<f64>> {
    path.chunks(ratio)
        .map(|chunk| {
            let mut acc = vec![0.0; chunk[0].len()];
            for dw in chunk {
                for (a, x) in acc.iter_mut().zip(dw) {
                    *a += x;
                }
            }
            acc
        })
        .collect()
}

/// Ito energy balance at every recording time:
///
/// * `residual`: `E[F(t) + 2 nu int D] - F(0) - Tr_alpha t`, the quantity whose
///   expectation vanishes in continuous time;
/// * `pathwise`: the same with twice the martingale sum subtracted per path;
/// * `discretization`: the pathwise residual with the realized quadratic
///   variation in place of `Tr_alpha t`. Its mean is the pure time-stepping
///   bias, free of the `O(sqrt(dt))` quadratic-variation fluctuation.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoBalanceReport {
    pub dt: f64,
    pub residual: EnsembleReport,
    pub pathwise: EnsembleReport,
    pub discretization: EnsembleReport,
}

pub fn ito_balance_report(integ: &Integrator, x0: &SpectralField, m: usize) -> Result<ItoBalanceReport> {
    check_members(m)?;
    let seed = integ.noise().seed;
    let runs = ensemble(m, |i| integ.integrate(x0, &mut substream(seed, i), &mut []))?;
    balance_from_runs(integ, &runs)
}

fn balance_from_runs(
    integ: &Integrator,
    runs: &[crate::integrator::TrajectoryRecord],
) -> Result<ItoBalanceReport> {
    let nu = integ.params().nu;
    let tr = integ.noise().trace_alpha(integ.params().alpha);
    let times = runs[0].times.clone();
    let mut residual = Vec::with_capacity(runs.len());
    let mut pathwise = Vec::with_capacity(runs.len());
    let mut discretization = Vec::with_capacity(runs.len());
    for rec in runs {
        let f0 = rec.energy[0];
        let base: Vec<f64> = (0..times.len())
            .map(|i| rec.energy[i] + 2.0 * nu * rec.dissipation_integral[i] - f0)
            .collect();
        residual.push(
            base.iter()
                .zip(&times)
                .map(|(b, t)| b - tr * t)
                .collect::<Vec<_>>(),
        );
        pathwise.push(
            (0..times.len())
                .map(|i| base[i] - tr * times[i] - 2.0 * rec.martingale[i])
                .collect::<Vec<_>>(),
        );
        discretization.push(
            (0..times.len())
                .map(|i| base[i] - rec.quadratic_variation[i] - 2.0 * rec.martingale[i])
                .collect::<Vec<_>>(),
        );
    }
    Ok(ItoBalanceReport {
        dt: integ.config().dt,
        residual: EnsembleReport::from_members(&times, &residual)?,
        pathwise: EnsembleReport::from_members(&times, &pathwise)?,
        discretization: EnsembleReport::from_members(&times, &discretization)?,
    })
}

/// Ito balance at `dt` and `dt/2` on common Brownian paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoBalanceStudy {
    pub coarse: ItoBalanceReport,
    pub fine: ItoBalanceReport,
    /// `C` in the bias model `R(dt) ~ C dt`, fitted from the pair of
    /// residuals.
    pub fitted_c: f64,
    /// `discretization(dt/2) / discretization(dt)`; close to 1/2 for a
    /// first-order bias.
    pub halving_ratio: f64,
}

impl ItoBalanceStudy {
    /// `|R(dt)| <= 3 se + |C| dt`.
    pub fn residual_within_budget(&self) -> bool {
        let r = &self.coarse.residual;
        r.estimate.abs() <= 3.0 * r.standard_error + self.fitted_c.abs() * self.coarse.dt
    }

    /// Halving `dt` halves the bias to within 30 %.
    pub fn halving_within(&self, tol: f64) -> bool {
        (self.halving_ratio - 0.5).abs() <= tol * 0.5
    }
}

pub fn ito_balance_study(integ: &Integrator, x0: &SpectralField, m: usize) -> Result<ItoBalanceStudy> {
    check_members(m)?;
    let cfg = integ.config().clone();
    let fine_cfg = IntegratorConfig {
        dt: cfg.dt / 2.0,
        record_every: cfg.record_every * 2,
        ..cfg.clone()
    };
    let fine = integ.reconfigured(fine_cfg)?;
    let steps = fine.config().steps()?;
    let seed = integ.noise().seed;
    let pairs = ensemble(m, |i| {
        let path = draw_path(&fine, steps, &mut substream(seed, i));
        let coarse_path = coarsen(&path, 2);
        let f = fine.integrate_driven(x0, &mut |s| path[s].clone(), &mut [])?;
        let c = integ.integrate_driven(x0, &mut |s| coarse_path[s].clone(), &mut [])?;
        Ok((c, f))
    })?;
    let (coarse_runs, fine_runs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let coarse = balance_from_runs(integ, &coarse_runs)?;
    let fine = balance_from_runs(&fine, &fine_runs)?;
    let fitted_c = 2.0 * (coarse.residual.estimate - fine.residual.estimate) / cfg.dt;
    let halving_ratio = fine.discretization.estimate / coarse.discretization.estimate;
    Ok(ItoBalanceStudy {
        coarse,
        fine,
        fitted_c,
        halving_ratio,
    })
}

/// Affine-growth envelope `f0 + c t`.
///
/// The slope is the smallest one that covers the first half of the series;
/// the check asks whether the whole series, including the second half it
/// was not fitted on, stays below the envelope within `3` standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineEnvelope {
    pub initial: f64,
    pub slope: f64,
    /// Least-squares line through the full series, for reference.
    pub ls_intercept: f64,
    pub ls_slope: f64,
    pub holds: bool,
}

/// `initial` is replaced by the ensemble value at `t = 0` when the series
/// has one, so the envelope starts exactly where the averaged data does.
fn affine_envelope(series: &[SeriesPoint], initial: f64) -> AffineEnvelope {
    let initial = match series.first() {
        Some(p) if p.t == 0.0 => p.estimate,
        _ => initial,
    };
    let horizon = series.last().map(|p| p.t).unwrap_or(0.0);
    let slope = series
        .iter()
        .filter(|p| p.t > 0.0 && p.t <= horizon / 2.0 + 1e-12)
        .map(|p| (p.estimate - initial) / p.t)
        .fold(0.0, f64::max);
    let holds = series.iter().all(|p| {
        p.estimate.is_finite() && p.estimate <= initial + slope * p.t + 3.0 * p.standard_error
    });
    let ts: Vec<f64> = series.iter().map(|p| p.t).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.estimate).collect();
    let (ls_intercept, ls_slope) = fit_line(&ts, &ys);
    AffineEnvelope {
        initial,
        slope,
        ls_intercept,
        ls_slope,
        holds,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub k: u32,
    /// `E[F^k(t)]` on the recording grid.
    pub series: EnsembleReport,
    /// `E[sup_{s <= T} F^k(s)]` over every step.
    pub sup: Summary,
    pub envelope: AffineEnvelope,
}

pub fn moment_report(integ: &Integrator, x0: &SpectralField, k: u32, m: usize) -> Result<MomentReport> {
    check_members(m)?;
    if k == 0 {
        return invalid("moment order k must be at least 1");
    }
    let alpha = integ.params().alpha;
    let seed = integ.noise().seed;
    let runs = ensemble(m, |i| {
        let mut sup = 0.0f64;
        let mut obs = |_: usize, _: f64, u: &SpectralField| {
            sup = sup.max(u.energy(alpha).powi(k as i32));
        };
        let rec = integ.integrate(x0, &mut substream(seed, i), &mut [&mut obs])?;
        let fk: Vec<f64> = rec.energy.iter().map(|f| f.powi(k as i32)).collect();
        Ok((rec.times, fk, sup))
    })?;
    let times = runs[0].0.clone();
    let members: Vec<Vec<f64>> = runs.iter().map(|r| r.1.clone()).collect();
    let sups: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let series = EnsembleReport::from_members(&times, &members)?;
    let envelope = affine_envelope(&series.series, x0.energy(alpha).powi(k as i32));
    Ok(MomentReport {
        k,
        series,
        sup: Summary::of(&sups),
        envelope,
    })
}

/// `-nu + 2 lambda_1^{-1} eps Tr[Q*(I + alpha^2 A)Q]`; exponential moments
/// are controlled only when this is negative.
pub fn exp_moment_margin(integ: &Integrator, eps_exp: f64) -> f64 {
    let p = integ.params();
    let lambda1 = integ.basis().lambda_min();
    -p.nu + 2.0 / lambda1 * eps_exp * integ.noise().trace_alpha(p.alpha)
}

fn check_exp_admissible(integ: &Integrator, eps_exp: f64) -> Result<()> {
    if !(eps_exp >= 0.0 && eps_exp.is_finite()) {
        return invalid(format!("eps_exp must be non-negative, got {eps_exp}"));
    }
    let margin = exp_moment_margin(integ, eps_exp);
    if margin < 0.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "exponential moment requires -nu + 2 lambda_1^-1 eps Tr[Q*(I+alpha^2 A)Q] < 0, \
             got -{} + 2 * {} * {} * {} = {} >= 0",
            integ.params().nu,
            1.0 / integ.basis().lambda_min(),
            eps_exp,
            integ.noise().trace_alpha(integ.params().alpha),
            margin
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpMomentReport {
    pub eps_exp: f64,
    pub margin: f64,
    /// `E[exp(eps F(t))]`.
    pub series: EnsembleReport,
    /// `E[int_0^t exp(eps F) (|grad u|^2 + alpha^2 |A u|^2) ds]`.
    pub weighted_dissipation: EnsembleReport,
    pub envelope: AffineEnvelope,
}

pub fn exp_moment_report(
    integ: &Integrator,
    x0: &SpectralField,
    eps_exp: f64,
    m: usize,
) -> Result<ExpMomentReport> {
    check_members(m)?;
    check_exp_admissible(integ, eps_exp)?;
    let alpha = integ.params().alpha;
    let dt = integ.config().dt;
    let every = integ.config().record_every;
    let steps = integ.config().steps()?;
    let seed = integ.noise().seed;
    let runs = ensemble(m, |i| {
        let mut integral = 0.0;
        let mut prev = None;
        let mut recorded = Vec::new();
        let mut obs = |step: usize, _: f64, u: &SpectralField| {
            let w = (eps_exp * u.energy(alpha)).exp() * u.dissipation(alpha);
            if let Some(p) = prev {
                integral += 0.5 * dt * (p + w);
            }
            prev = Some(w);
            if step.is_multiple_of(every) || step == steps {
                recorded.push(integral);
            }
        };
        let rec = integ.integrate(x0, &mut substream(seed, i), &mut [&mut obs])?;
        let e: Vec<f64> = rec.energy.iter().map(|f| (eps_exp * f).exp()).collect();
        Ok((rec.times, e, recorded))
    })?;
    let times = runs[0].0.clone();
    let series_members: Vec<Vec<f64>> = runs.iter().map(|r| r.1.clone()).collect();
    let weighted: Vec<Vec<f64>> = runs.iter().map(|r| r.2.clone()).collect();
    let series = EnsembleReport::from_members(&times, &series_members)?;
    let envelope = affine_envelope(&series.series, (eps_exp * x0.energy(alpha)).exp());
    Ok(ExpMomentReport {
        eps_exp,
        margin: exp_moment_margin(integ, eps_exp),
        series,
        weighted_dissipation: EnsembleReport::from_members(&times, &weighted)?,
        envelope,
    })
}

/// Stationary variance `q_j^2 / (2 nu lambda_j)` of each mode of the
/// linear equation `dZ = -nu A Z dt + Q dW`.
pub fn ou_stationary_oracle(integ: &Integrator) -> Result<Vec<f64>> {
    let nu = integ.params().nu;
    if !(nu > 0.0) {
        return invalid("the stationary Ornstein-Uhlenbeck law needs nu > 0");
    }
    Ok(integ
        .noise()
        .multipliers()
        .iter()
        .zip(integ.basis().eigenvalues())
        .map(|(q, lam)| q * q / (2.0 * nu * lam))
        .collect())
}

/// `E[F(t)]` for the linear equation started at zero.
pub fn ou_mean_energy(integ: &Integrator, t: f64) -> f64 {
    let nu = integ.params().nu;
    let a2 = integ.params().alpha.powi(2);
    integ
        .noise()
        .multipliers()
        .iter()
        .zip(integ.basis().eigenvalues())
        .map(|(q, lam)| (1.0 + a2 * lam) * q * q * (-(-2.0 * nu * lam * t).exp_m1()) / (2.0 * nu * lam))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuComparison {
    pub oracle: Vec<f64>,
    pub empirical: Vec<f64>,
    pub rel_error: Vec<f64>,
}

impl OuComparison {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Long-run per-mode variance from `paths` independent trajectories,
/// each averaged over `[burn_in, t_end]`, compared with the oracle.
///
/// Meant for the linear dynamics (`nonlinear = false`); with the
/// exponential scheme the chain is exact in law at any step size.
pub fn ou_empirical_variances(
    integ: &Integrator,
    x0: &SpectralField,
    burn_in: f64,
    paths: usize,
) -> Result<OuComparison> {
    let oracle = ou_stationary_oracle(integ)?;
    let t_end = integ.config().t_end;
    if !(burn_in >= 0.0 && burn_in < t_end) {
        return invalid(format!("burn_in must lie in [0, t_end), got {burn_in}"));
    }
    if paths == 0 {
        return invalid("need at least one path");
    }
    let n = integ.basis().len();
    let seed = integ.noise().seed;
    let per_path = ensemble(paths, |i| {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        let mut obs = |_: usize, t: f64, u: &SpectralField| {
            if t >= burn_in {
                for (j, &c) in u.coeffs().iter().enumerate() {
                    sum[j] += c;
                    sq[j] += c * c;
                }
                count += 1;
            }
        };
        integ.integrate(x0, &mut substream(seed, i), &mut [&mut obs])?;
        Ok((sum, sq, count))
    })?;
    let mut empirical = vec![0.0; n];
    let total: usize = per_path.iter().map(|p| p.2).sum();
    for j in 0..n {
        let s: f64 = per_path.iter().map(|p| p.0[j]).sum();
        let q: f64 = per_path.iter().map(|p| p.1[j]).sum();
        let mean = s / total as f64;
        empirical[j] = q / total as f64 - mean * mean;
    }
    let rel_error = empirical
        .iter()
        .zip(&oracle)
        .map(|(e, o)| ((e - o) / o).abs())
        .collect();
    Ok(OuComparison {
        oracle,
        empirical,
        rel_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    /// `<u, e_j>`.
    Linear(usize),
    /// `F(u) = |u|^2 + alpha^2 |grad u|^2`.
    Energy,
    /// `min(F(u), clip)`.
    ClippedEnergy(f64),
}

impl Observable {
    pub fn eval(&self, u: &SpectralField, alpha: f64) -> f64 {
        match *self {
            Observable::Linear(j) => u.coeffs()[j],
            Observable::Energy => u.energy(alpha),
            Observable::ClippedEnergy(clip) => u.energy(alpha).min(clip),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Observable::Linear(j) => format!("linear:{j}"),
            Observable::Energy => "energy".into(),
            Observable::ClippedEnergy(c) => format!("clipped_energy:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BEEstimate {
    pub observable: Observable,
    pub direction: SpectralField,
    pub t: f64,
    pub value: f64,
    pub standard_error: f64,
    /// Central finite difference `(P_t phi(x + dh) - P_t phi(x - dh)) / 2d`
    /// on common random numbers, with its standard error.
    pub fd_reference: Option<Summary>,
    pub sample_count: usize,
}

impl BEEstimate {
    pub fn summary(&self) -> Summary {
        Summary {
            estimate: self.value,
            standard_error: self.standard_error,
            sample_count: self.sample_count,
        }
    }
}

/// Bismut-Elworthy estimate of `D P_t phi(x) . h`,
///
/// ```text
/// (1/t) E[ phi(u(t, x)) sum_m <Q^{-1} eta^h(t_m), dW_m> ]
/// ```
///
/// with `u` and the first variation `eta^h` co-integrated on shared
/// increments. The integrator's `dt` and scheme are used; its `t_end` is
/// replaced by `t`.
pub fn bismut_elworthy(
    integ: &Integrator,
    observable: Observable,
    x: &SpectralField,
    h: &SpectralField,
    t: f64,
    m: usize,
    fd_delta: Option<f64>,
) -> Result<BEEstimate> {
    if !(t > 0.0) {
        return invalid(format!("evaluation time must be positive, got {t}"));
    }
    if !integ.noise().is_invertible() {
        return Err(Error::SingularOperator(
            "the Bismut-Elworthy weight needs Q^(-1), but sigma = 0".into(),
        ));
    }
    check_members(m)?;
    x.check_same(h)?;
    if let Observable::Linear(j) = observable {
        if j >= x.len() {
            return invalid(format!("mode index {j} out of range"));
        }
    }
    let integ = integ.reconfigured(IntegratorConfig {
        t_end: t,
        ..integ.config().clone()
    })?;
    let steps = integ.config().steps()?;
    let alpha = integ.params().alpha;
    let q = integ.noise().multipliers().to_vec();
    let seed = integ.noise().seed;
    let xp_xm = match fd_delta {
        Some(d) if d > 0.0 => Some((x.add_scaled(d, h)?, x.add_scaled(-d, h)?, d)),
        Some(d) => return invalid(format!("finite-difference step must be positive, got {d}")),
        None => None,
    };

    let samples = ensemble(m, |i| {
        let path = draw_path(&integ, steps, &mut substream(seed, i));
        let mut weight = 0.0;
        let (u, _) = integ.integrate_with_variation(
            x,
            h,
            &mut |s| path[s].clone(),
            |_, _, eta, dw| {
                for j in 0..dw.len() {
                    weight += eta.coeffs()[j] / q[j] * dw[j];
                }
            },
        )?;
        let be = observable.eval(&u, alpha) * weight / t;
        let fd = match &xp_xm {
            Some((xp, xm, d)) => {
                let up = integ.integrate_driven(xp, &mut |s| path[s].clone(), &mut [])?;
                let um = integ.integrate_driven(xm, &mut |s| path[s].clone(), &mut [])?;
                let fp = observable.eval(up.final_state().expect("final state"), alpha);
                let fm = observable.eval(um.final_state().expect("final state"), alpha);
                Some((fp - fm) / (2.0 * d))
            }
            None => None,
        };
        Ok((be, fd))
    })?;

    let be: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let s = Summary::of(&be);
    let fd_reference = if xp_xm.is_some() {
        let fd: Vec<f64> = samples.iter().filter_map(|s| s.1).collect();
        Some(Summary::of(&fd))
    } else {
        None
    };
    Ok(BEEstimate {
        observable,
        direction: h.clone(),
        t,
        value: s.estimate,
        standard_error: s.standard_error,
        fd_reference,
        sample_count: m,
    })
}

/// Time averages along one long trajectory, with batch-means error bars.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantStats {
    pub initial_energy: f64,
    pub energy: Summary,
    pub dissipation: Summary,
    /// Average of `exp(eps F) (|grad u|^2 + alpha^2 |A u|^2)`, when requested.
    pub exp_weighted_dissipation: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub stats: Vec<InvariantStats>,
    pub eps_exp: Option<f64>,
    /// `nu - eps lambda_1^{-1} Tr[Q*(I + alpha^2 A)Q]`.
    pub margin: Option<f64>,
}

impl InvariantReport {
    /// Every pair of initial conditions agrees on F and dissipation within
    /// `k` combined standard errors.
    pub fn mixing_agrees(&self, k: f64) -> bool {
        self.stats.iter().enumerate().all(|(i, a)| {
            self.stats[i + 1..].iter().all(|b| {
                a.energy.agrees_with(&b.energy, k) && a.dissipation.agrees_with(&b.dissipation, k)
            })
        })
    }
}

/// Long-run time averages from each initial condition in `x0_list`;
/// trajectory `i` uses noise substream `i`. Samples every step in
/// `[burn_in, t_long]`.
pub fn invariant_stats(
    integ: &Integrator,
    x0_list: &[SpectralField],
    t_long: f64,
    burn_in: f64,
    eps_exp: Option<f64>,
) -> Result<InvariantReport> {
    if !(burn_in >= 0.0 && burn_in < t_long) {
        return invalid(format!("burn_in = {burn_in} must lie in [0, T_long = {t_long})"));
    }
    if let Some(e) = eps_exp {
        check_exp_admissible(integ, e)?;
    }
    let integ = integ.reconfigured(IntegratorConfig {
        t_end: t_long,
        ..integ.config().clone()
    })?;
    let dt = integ.config().dt;
    let steps = integ.config().steps()?;
    let first = (burn_in / dt).ceil() as usize;
    let total = steps + 1 - first;
    if total < BATCHES {
        return invalid("averaging window shorter than the number of batches");
    }
    let alpha = integ.params().alpha;
    let seed = integ.noise().seed;

    let stats = x0_list
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut f = BatchMeans::new(BATCHES, total);
            let mut d = BatchMeans::new(BATCHES, total);
            let mut w = BatchMeans::new(BATCHES, total);
            let mut obs = |step: usize, _: f64, u: &SpectralField| {
                if step >= first {
                    let fe = u.energy(alpha);
                    let di = u.dissipation(alpha);
                    f.push(fe);
                    d.push(di);
                    if let Some(e) = eps_exp {
                        w.push((e * fe).exp() * di);
                    }
                }
            };
            integ.integrate(x0, &mut substream(seed, i as u64), &mut [&mut obs])?;
            Ok(InvariantStats {
                initial_energy: x0.energy(alpha),
                energy: f.summary(),
                dissipation: d.summary(),
                exp_weighted_dissipation: eps_exp.map(|_| w.summary()),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let margin = eps_exp.map(|e| {
        let p = integ.params();
        p.nu - e / integ.basis().lambda_min() * integ.noise().trace_alpha(p.alpha)
    });
    Ok(InvariantReport {
        stats,
        eps_exp,
        margin,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    /// `errors[i]` is the root-mean-square of `|u_{dt_i}(T) - u_{dt_{i+1}}(T)|_2`.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log dt`.
    pub order: f64,
}

/// Strong-error study on common Brownian paths: the finest increments are
/// summed to drive every coarser level.
pub fn strong_convergence(
    integ: &Integrator,
    x0: &SpectralField,
    dts: &[f64],
    paths: usize,
) -> Result<ConvergenceReport> {
    if dts.len() < 3 {
        return invalid("need at least three step sizes");
    }
    if paths == 0 {
        return invalid("need at least one path");
    }
    let finest = *dts.last().unwrap();
    let mut ratios = Vec::with_capacity(dts.len());
    for &dt in dts {
        let r = (dt / finest).round();
        if r < 1.0 || (r * finest - dt).abs() > 1e-9 * dt {
            return invalid(format!("dt = {dt} is not a multiple of the finest step {finest}"));
        }
        ratios.push(r as usize);
    }
    if ratios.windows(2).any(|w| w[0] <= w[1]) {
        return invalid("step sizes must be strictly decreasing");
    }
    let levels: Vec<Integrator> = dts
        .iter()
        .map(|&dt| {
            integ.reconfigured(IntegratorConfig {
                dt,
                ..integ.config().clone()
            })
        })
        .collect::<Result<_>>()?;
    let fine_steps = levels.last().unwrap().config().steps()?;
    let seed = integ.noise().seed;
    let n = integ.basis().len();

    let terminal = ensemble(paths, |i| {
        let mut rng = substream(seed, i);
        let path: Vec<Vec<f64>> = (0..fine_steps)
            .map(|_| standard_increment(n, finest, &mut rng))
            .collect();
        levels
            .iter()
            .zip(&ratios)
            .map(|(level, &r)| {
                let inc = coarsen(&path, r);
                let rec = level.integrate_driven(x0, &mut |s| inc[s].clone(), &mut [])?;
                Ok(rec.final_state().expect("final state").clone())
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut errors = Vec::with_capacity(dts.len() - 1);
    for l in 0..dts.len() - 1 {
        let sq: Vec<f64> = terminal
            .iter()
            .map(|states| {
                let d = states[l].sub(&states[l + 1]).expect("same basis");
                d.norms().l2.powi(2)
            })
            .collect();
        errors.push(crate::stats::mean(&sq).sqrt());
    }
    let lx: Vec<f64> = dts[..dts.len() - 1].iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (_, order) = fit_line(&lx, &ly);
    Ok(ConvergenceReport {
        dts: dts.to_vec(),
        errors,
        order,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationCheck {
    pub delta: f64,
    pub eta_norm: f64,
    pub fd_norm: f64,
    /// `|fd - eta|_2 / |eta|_2` at the final time.
    pub rel_error: f64,
}

/// Compares the first variation at `t_end` with the central pathwise
/// difference `(u(T; x + delta h) - u(T; x - delta h)) / (2 delta)` on
/// common noise (substream 0).
pub fn variation_check(
    integ: &Integrator,
    x0: &SpectralField,
    h: &SpectralField,
    delta: f64,
) -> Result<VariationCheck> {
    if !(delta > 0.0) {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    let steps = integ.config().steps()?;
    let path = draw_path(integ, steps, &mut substream(integ.noise().seed, 0));
    let (_, eta) = integ.integrate_with_variation(x0, h, &mut |s| path[s].clone(), |_, _, _, _| {})?;
    let plus = integ.integrate_driven(&x0.add_scaled(delta, h)?, &mut |s| path[s].clone(), &mut [])?;
    let minus = integ.integrate_driven(&x0.add_scaled(-delta, h)?, &mut |s| path[s].clone(), &mut [])?;
    let fd = plus
        .final_state()
        .expect("final state")
        .sub(minus.final_state().expect("final state"))?
        .scaled(0.5 / delta);
    let eta_norm = eta.norms().l2;
    let rel_error = if eta_norm > 0.0 {
        fd.sub(&eta)?.norms().l2 / eta_norm
    } else {
        fd.norms().l2
    };
    Ok(VariationCheck {
        delta,
        eta_norm,
        fd_norm: fd.norms().l2,
        rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Basis;
    use crate::integrator::Scheme;
    use crate::noise::NoiseSpec;
    use crate::operators::PhysicalParams;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn model(nu: f64, alpha: f64, sigma: f64, cfg: IntegratorConfig) -> (Integrator, Arc<Basis>) {
        let b = Basis::new(2.0 * PI, 1).unwrap();
        let p = PhysicalParams::new(nu, alpha, 2.0 * PI).unwrap();
        let noise = NoiseSpec::new(1.5, sigma, &b, 11).unwrap();
        (Integrator::new(p, noise, cfg).unwrap(), b)
    }

    fn field_with_energy(b: &Arc<Basis>, alpha: f64, target: f64) -> SpectralField {
        let u = SpectralField::from_coeffs(b, (0..b.len()).map(|j| 1.0 + 0.1 * j as f64).collect())
            .unwrap();
        let f = u.energy(alpha);
        u.scaled((target / f).sqrt())
    }

    #[test]
    fn ensembles_need_two_members() {
        let (integ, b) = model(1.0, 0.0, 0.5, IntegratorConfig::default());
        let x0 = SpectralField::zeros(&b);
        assert!(ito_balance_report(&integ, &x0, 1).is_err());
        assert!(moment_report(&integ, &x0, 1, 1).is_err());
        assert!(moment_report(&integ, &x0, 0, 4).is_err());
    }

    #[test]
    fn silent_noise_balance_is_deterministic_identity() {
        let cfg = IntegratorConfig {
            dt: 1e-3,
            t_end: 0.5,
            ..Default::default()
        };
        let (integ, b) = model(1.0, 0.5, 0.0, cfg);
        let x0 = field_with_energy(&b, 0.5, 2.0);
        let study = ito_balance_study(&integ, &x0, 4).unwrap();
        assert_eq!(study.coarse.residual.standard_error, 0.0);
        assert!(study.coarse.residual.estimate.abs() < 5e-3 * x0.energy(0.5));
        assert!(study.halving_within(0.05), "{}", study.halving_ratio);
        assert!(study.residual_within_budget());
    }

    #[test]
    fn zero_eps_exponential_moment_is_one() {
        let cfg = IntegratorConfig {
            dt: 1e-2,
            t_end: 0.2,
            ..Default::default()
        };
        let (integ, b) = model(1.0, 0.5, 0.5, cfg);
        let r = exp_moment_report(&integ, &field_with_energy(&b, 0.5, 1.0), 0.0, 8).unwrap();
        assert!(r.series.series.iter().all(|p| p.estimate == 1.0));
    }

    #[test]
    fn inadmissible_exponent_is_refused() {
        let (integ, b) = model(0.1, 0.5, 1.0, IntegratorConfig::default());
        let margin = exp_moment_margin(&integ, 10.0);
        assert!(margin >= 0.0);
        let err = exp_moment_report(&integ, &SpectralField::zeros(&b), 10.0, 4).unwrap_err();
        match err {
            Error::Precondition(msg) => assert!(msg.contains("-nu + 2 lambda_1^-1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(invariant_stats(&integ, &[SpectralField::zeros(&b)], 10.0, 1.0, Some(10.0)).is_err());
    }

    #[test]
    fn oracle_values() {
        let (integ, _) = model(1.0, 0.0, 1.0, IntegratorConfig::default());
        let v = ou_stationary_oracle(&integ).unwrap();
        // lambda = 1, q = 1 (eps = 1.5 makes q = lambda^{-5/4} = 1)
        assert_eq!(v[0], 0.5);
        let (silent, _) = model(1.0, 0.0, 0.0, IntegratorConfig::default());
        assert!(ou_stationary_oracle(&silent).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn be_estimator_rejects_bad_input() {
        let (integ, b) = model(1.0, 0.0, 0.0, IntegratorConfig::default());
        let x = SpectralField::zeros(&b);
        let h = SpectralField::unit(&b, 0);
        assert!(matches!(
            bismut_elworthy(&integ, Observable::Energy, &x, &h, 0.1, 10, None),
            Err(Error::SingularOperator(_))
        ));
        let (integ, _) = model(1.0, 0.0, 1.0, IntegratorConfig::default());
        assert!(matches!(
            bismut_elworthy(&integ, Observable::Energy, &x, &h, 0.0, 10, None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn be_with_zero_direction_is_zero() {
        let cfg = IntegratorConfig {
            dt: 1e-2,
            ..Default::default()
        };
        let (integ, b) = model(1.0, 0.3, 1.0, cfg);
        let x = field_with_energy(&b, 0.3, 1.0);
        let est = bismut_elworthy(
            &integ,
            Observable::Linear(0),
            &x,
            &SpectralField::zeros(&b),
            0.1,
            16,
            None,
        )
        .unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn be_is_linear_in_direction() {
        let cfg = IntegratorConfig {
            dt: 1e-2,
            ..Default::default()
        };
        let (integ, b) = model(1.0, 0.3, 1.0, cfg);
        let x = field_with_energy(&b, 0.3, 1.0);
        let h = SpectralField::unit(&b, 1);
        let a = bismut_elworthy(&integ, Observable::Energy, &x, &h, 0.1, 64, None).unwrap();
        let c = bismut_elworthy(&integ, Observable::Energy, &x, &h.scaled(-3.0), 0.1, 64, None)
            .unwrap();
        // common substreams: the estimator is exactly linear per sample
        assert!((c.value + 3.0 * a.value).abs() <= 1e-12 * a.value.abs().max(1.0));
        assert!((c.standard_error - 3.0 * a.standard_error).abs() <= 1e-12 * a.standard_error.max(1.0));
    }

    #[test]
    fn deterministic_moments_decay() {
        let cfg = IntegratorConfig {
            dt: 1e-3,
            t_end: 0.5,
            record_every: 50,
            ..Default::default()
        };
        let (integ, b) = model(1.0, 0.5, 0.0, cfg);
        let x0 = field_with_energy(&b, 0.5, 3.0);
        let r = moment_report(&integ, &x0, 1, 2).unwrap();
        let f0 = x0.energy(0.5);
        assert!(r.series.series.iter().all(|p| p.estimate <= f0));
        assert!(r.envelope.holds);
        assert_eq!(r.envelope.slope, 0.0);

        let e = exp_moment_report(&integ, &x0, 0.05, 2).unwrap();
        assert!(e.series.series.windows(2).all(|w| w[1].estimate <= w[0].estimate));
    }

    #[test]
    fn silent_invariant_averages_collapse() {
        let cfg = IntegratorConfig {
            dt: 1e-2,
            ..Default::default()
        };
        let (integ, b) = model(1.0, 0.5, 0.0, cfg);
        let x0 = field_with_energy(&b, 0.5, 5.0);
        let r = invariant_stats(&integ, &[x0], 60.0, 30.0, None).unwrap();
        assert!(r.stats[0].energy.estimate < 1e-20);
        assert!(r.stats[0].dissipation.estimate < 1e-20);
    }

    #[test]
    fn invariant_window_validation() {
        let (integ, b) = model(1.0, 0.5, 0.5, IntegratorConfig::default());
        let x0 = SpectralField::zeros(&b);
        assert!(invariant_stats(&integ, &[x0], 10.0, 10.0, None).is_err());
    }

    #[test]
    fn strong_convergence_rejects_irregular_levels() {
        let (integ, b) = model(1.0, 0.5, 0.5, IntegratorConfig::default());
        let x0 = SpectralField::zeros(&b);
        assert!(strong_convergence(&integ, &x0, &[0.01, 0.005], 2).is_err());
        assert!(strong_convergence(&integ, &x0, &[0.01, 0.003, 0.001], 2).is_err());
    }

    #[test]
    fn linear_moment_from_zero_matches_ou_energy() {
        let cfg = IntegratorConfig {
            scheme: Scheme::ExponentialEm,
            dt: 1e-2,
            t_end: 1.0,
            record_every: 10,
            nonlinear: false,
            ..Default::default()
        };
        let (integ, b) = model(1.0, 0.5, 0.7, cfg);
        let r = moment_report(&integ, &SpectralField::zeros(&b), 1, 2000).unwrap();
        for p in &r.series.series[1..] {
            let want = ou_mean_energy(&integ, p.t);
            assert!(
                (p.estimate - want).abs() <= 3.0 * p.standard_error,
                "t={} est={} want={} se={}",
                p.t,
                p.estimate,
                want,
                p.standard_error
            );
        }
    }
}
