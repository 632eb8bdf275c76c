use std::f64::consts::PI;
use std::sync::Arc;

use lans_core::diagnostics::{
    bismut_elworthy, invariant_stats, ito_balance_report, moment_report, ou_stationary_oracle,
    variation_check,
};
use lans_core::{
    Basis, Integrator, IntegratorConfig, NoiseSpec, Observable, PhysicalParams, Scheme,
    SpectralField,
};

fn integrator(cutoff: u32, nu: f64, alpha: f64, sigma: f64, cfg: IntegratorConfig) -> Integrator {
    let b = Basis::new(2.0 * PI, cutoff).unwrap();
    let p = PhysicalParams::new(nu, alpha, 2.0 * PI).unwrap();
    Integrator::new(p, NoiseSpec::new(1.5, sigma, &b, 2024).unwrap(), cfg).unwrap()
}

fn start(b: &Arc<Basis>, alpha: f64, energy: f64) -> SpectralField {
    let u = SpectralField::from_coeffs(b, (0..b.len()).map(|j| ((j * 7 % 5) as f64) - 1.7).collect())
        .unwrap();
    u.scaled((energy / u.energy(alpha)).sqrt())
}

#[test]
fn deterministic_balance_with_rk4_is_second_order_small() {
    let cfg = IntegratorConfig {
        scheme: Scheme::Rk4Deterministic,
        dt: 1e-3,
        t_end: 0.5,
        ..Default::default()
    };
    let integ = integrator(2, 0.5, 0.5, 0.0, cfg);
    let x0 = start(integ.basis(), 0.5, 2.0);
    let r = ito_balance_report(&integ, &x0, 2).unwrap();
    // trapezoidal dissipation integral: O(dt^2)
    assert!(r.residual.estimate.abs() < 1e-5, "{}", r.residual.estimate);
}

#[test]
fn linear_balance_matches_trace_term() {
    let cfg = IntegratorConfig {
        dt: 1e-3,
        t_end: 0.5,
        nonlinear: false,
        ..Default::default()
    };
    let integ = integrator(1, 1.0, 0.5, 0.5, cfg);
    let x0 = start(integ.basis(), 0.5, 1.0);
    let r = ito_balance_report(&integ, &x0, 200).unwrap();
    assert!(
        r.residual.estimate.abs() <= 3.0 * r.residual.standard_error,
        "{} +- {}",
        r.residual.estimate,
        r.residual.standard_error
    );
}

#[test]
fn energy_from_rest_is_bounded_by_trace_growth() {
    let cfg = IntegratorConfig {
        dt: 1e-3,
        t_end: 0.5,
        record_every: 50,
        ..Default::default()
    };
    let integ = integrator(1, 1.0, 0.5, 0.5, cfg);
    let tr = integ.noise().trace_alpha(0.5);
    let r = moment_report(&integ, &SpectralField::zeros(integ.basis()), 1, 400).unwrap();
    for p in &r.series.series {
        assert!(p.estimate <= tr * p.t + 3.0 * p.standard_error, "t={}", p.t);
    }
}

#[test]
fn linear_time_average_matches_oracle_energy() {
    let cfg = IntegratorConfig {
        scheme: Scheme::ExponentialEm,
        dt: 1e-2,
        nonlinear: false,
        ..Default::default()
    };
    let alpha = 0.5;
    let integ = integrator(1, 1.0, alpha, 1.0, cfg);
    let oracle: f64 = ou_stationary_oracle(&integ)
        .unwrap()
        .iter()
        .zip(integ.basis().eigenvalues())
        .map(|(v, lam)| (1.0 + alpha * alpha * lam) * v)
        .sum();
    let r = invariant_stats(&integ, &[SpectralField::zeros(integ.basis())], 2000.0, 50.0, None)
        .unwrap();
    let f = r.stats[0].energy.estimate;
    assert!(((f - oracle) / oracle).abs() <= 0.05, "{f} vs {oracle}");
}

#[test]
fn nearby_starts_stay_close() {
    let cfg = IntegratorConfig {
        dt: 1e-3,
        t_end: 0.5,
        ..Default::default()
    };
    let integ = integrator(1, 1.0, 0.5, 0.5, cfg);
    let x0 = start(integ.basis(), 0.5, 1.0);
    let x1 = x0.add_scaled(1e-10, &SpectralField::unit(integ.basis(), 3)).unwrap();
    let mut rng = lans_core::substream(1, 0);
    let path: Vec<Vec<f64>> = (0..500).map(|_| integ.draw_increment(&mut rng)).collect();
    let a = integ.integrate_driven(&x0, &mut |s| path[s].clone(), &mut []).unwrap();
    let b = integ.integrate_driven(&x1, &mut |s| path[s].clone(), &mut []).unwrap();
    let gap = a.final_state().unwrap().sub(b.final_state().unwrap()).unwrap().norms().l2;
    assert!(gap <= 1e-6, "{gap}");
}

#[test]
fn variation_matches_pathwise_difference() {
    let cfg = IntegratorConfig {
        dt: 1e-3,
        t_end: 0.1,
        ..Default::default()
    };
    let integ = integrator(1, 1.0, 0.5, 0.5, cfg);
    let x0 = start(integ.basis(), 0.5, 2.0);
    let h = SpectralField::unit(integ.basis(), 5);
    let v = variation_check(&integ, &x0, &h, 1e-5).unwrap();
    assert!(v.rel_error <= 1e-4, "{}", v.rel_error);
}

#[test]
fn be_linear_observable_matches_ou_semigroup() {
    let cfg = IntegratorConfig {
        dt: 1e-3,
        nonlinear: false,
        ..Default::default()
    };
    let integ = integrator(1, 1.0, 0.5, 2.0, cfg);
    let x = start(integ.basis(), 0.5, 1.0);
    let h = SpectralField::unit(integ.basis(), 2).add_scaled(0.5, &SpectralField::unit(integ.basis(), 4)).unwrap();
    let t = 0.2;
    let est = bismut_elworthy(&integ, Observable::Linear(2), &x, &h, t, 4000, None).unwrap();
    let exact = (-integ.basis().eigenvalues()[2] * t).exp();
    assert!(
        (est.value - exact).abs() <= 3.0 * est.standard_error,
        "{} +- {} vs {}",
        est.value,
        est.standard_error,
        exact
    );
}
