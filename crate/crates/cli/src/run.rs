//! Subcommand dispatch. Each subcommand maps onto one integrator or
//! diagnostics operation and produces a CSV table plus log lines.

use lans_core::diagnostics::{
    bismut_elworthy, exp_moment_report, invariant_stats, ito_balance_study, moment_report,
    ou_empirical_variances, strong_convergence, variation_check, EnsembleReport, SeriesPoint,
};
use lans_core::{Error, IntegratorConfig, Observable, SpectralField};

use crate::config::SimConfig;

/// Success.
pub const EXIT_OK: i32 = 0;
/// The run finished but a checked property failed.
pub const EXIT_ASSERTION: i32 = 1;
/// The configuration or a precondition was rejected.
pub const EXIT_CONFIG: i32 = 2;

/// Relative tolerance of `ou-test`.
pub const OU_TOLERANCE: f64 = 0.05;
/// Accepted window for the fitted strong order.
pub const ORDER_WINDOW: (f64, f64) = (0.7, 1.3);
/// Relative tolerance of `variation`.
pub const VARIATION_TOLERANCE: f64 = 1e-4;
/// Allowed relative deviation of the Ito residual halving ratio from 1/2.
pub const HALVING_TOLERANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Validate,
    Simulate,
    McEnergy,
    McMoments,
    McExpmoments,
    OuTest,
    Convergence,
    Variation,
    Be,
    Invariant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub csv: String,
    pub log: Vec<String>,
}

impl Outcome {
    fn new(exit_code: i32, csv: Csv, log: Vec<String>) -> Self {
        Self {
            exit_code,
            csv: csv.text,
            log,
        }
    }

    fn failed(exit_code: i32, message: String) -> Self {
        Self {
            exit_code,
            csv: String::new(),
            log: vec![format!("error: {message}")],
        }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

struct Csv {
    text: String,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text }
    }

    fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }
}

fn verdict(ok: bool) -> i32 {
    if ok {
        EXIT_OK
    } else {
        EXIT_ASSERTION
    }
}

fn from_core(e: Error) -> Outcome {
    let code = match e {
        Error::BlowUp { .. } => EXIT_ASSERTION,
        _ => EXIT_CONFIG,
    };
    Outcome::failed(code, e.to_string())
}

pub fn execute(cmd: Subcommand, cfg: &SimConfig) -> Outcome {
    let mut log: Vec<String> = cfg.warnings.iter().map(|w| format!("warning: {w}")).collect();
    let result = match cmd {
        Subcommand::Validate => Ok(validate(cfg, &mut log)),
        Subcommand::Simulate => simulate(cfg, &mut log),
        Subcommand::McEnergy => mc_energy(cfg, &mut log),
        Subcommand::McMoments => mc_moments(cfg, &mut log),
        Subcommand::McExpmoments => mc_expmoments(cfg, &mut log),
        Subcommand::OuTest => ou_test(cfg, &mut log),
        Subcommand::Convergence => convergence(cfg, &mut log),
        Subcommand::Variation => variation(cfg, &mut log),
        Subcommand::Be => be(cfg, &mut log),
        Subcommand::Invariant => invariant(cfg, &mut log),
    };
    match result {
        Ok((code, csv)) => Outcome::new(code, csv, log),
        Err(e) => {
            let mut out = e;
            log.append(&mut out.log);
            out.log = log;
            out
        }
    }
}

type Step = Result<(i32, Csv), Outcome>;

fn initial(cfg: &SimConfig) -> Result<SpectralField, Outcome> {
    cfg.x0
        .build(&cfg.basis(), cfg.alpha)
        .map_err(|e| Outcome::failed(EXIT_CONFIG, format!("x0: {e}")))
}

fn validate(cfg: &SimConfig, log: &mut Vec<String>) -> (i32, Csv) {
    let b = cfg.basis();
    let noise = cfg.noise(&b);
    let adm = noise.admissibility();
    let mut csv = Csv::new(&["quantity", "value"]);
    let rows = [
        ("modes", b.len() as f64),
        ("lambda_min", b.lambda_min()),
        ("lambda_max", b.lambda_max()),
        ("trace_Q", noise.trace_q()),
        ("trace_QAQ", noise.trace_qaq()),
        ("trace_alpha", noise.trace_alpha(cfg.alpha)),
        ("truncated_trace", adm.truncated_trace),
        ("tail_estimate", adm.tail_estimate),
        ("trace_class", f64::from(u8::from(adm.trace_class))),
        ("invertible_domain", f64::from(u8::from(adm.invertible_domain))),
    ];
    for (name, value) in rows {
        csv.row(&[name.to_string(), num(value)]);
    }
    log.push(format!(
        "trace_Q = {}, trace_QAQ = {}, trace_alpha = {}",
        noise.trace_q(),
        noise.trace_qaq(),
        noise.trace_alpha(cfg.alpha)
    ));
    log.push(format!(
        "trace-class (epsilon > 1): {}; Q^-1 domain (epsilon <= 2): {}",
        if adm.trace_class { "yes" } else { "no" },
        if adm.invertible_domain { "yes" } else { "no" }
    ));
    (EXIT_OK, csv)
}

fn simulate(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let integ = cfg.integrator();
    let x0 = initial(cfg)?;
    let rec = integ
        .integrate(&x0, &mut lans_core::substream(cfg.seed, 0), &mut [])
        .map_err(from_core)?;
    let mut csv = Csv::new(&[
        "t",
        "energy",
        "dissipation",
        "dissipation_integral",
        "martingale",
        "quadratic_variation",
    ]);
    for i in 0..rec.times.len() {
        csv.row(&[
            num(rec.times[i]),
            num(rec.energy[i]),
            num(rec.dissipation[i]),
            num(rec.dissipation_integral[i]),
            num(rec.martingale[i]),
            num(rec.quadratic_variation[i]),
        ]);
    }
    if let Some(path) = &cfg.snapshot_path {
        let u = rec.final_state().expect("final state");
        let file = std::fs::File::create(path).map_err(|e| {
            Outcome::failed(EXIT_CONFIG, format!("cannot write {}: {e}", path.display()))
        })?;
        lans_core::write_snapshot(u, std::io::BufWriter::new(file)).map_err(|e| {
            Outcome::failed(EXIT_CONFIG, format!("cannot write {}: {e}", path.display()))
        })?;
        log.push(format!("final state written to {}", path.display()));
    }
    Ok((EXIT_OK, csv))
}

fn series_rows(csv: &mut Csv, columns: &[&EnsembleReport]) {
    let times: Vec<f64> = columns[0].series.iter().map(|p| p.t).collect();
    for (i, t) in times.iter().enumerate() {
        let mut row = vec![num(*t)];
        for c in columns {
            let p: &SeriesPoint = &c.series[i];
            row.push(num(p.estimate));
            row.push(num(p.standard_error));
        }
        csv.row(&row);
    }
}

fn mc_energy(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let integ = cfg.integrator();
    let x0 = initial(cfg)?;
    let study = ito_balance_study(&integ, &x0, cfg.m).map_err(from_core)?;
    let mut csv = Csv::new(&[
        "t",
        "residual",
        "residual_se",
        "pathwise",
        "pathwise_se",
        "discretization",
        "discretization_se",
    ]);
    let c = &study.coarse;
    series_rows(&mut csv, &[&c.residual, &c.pathwise, &c.discretization]);
    let budget = study.residual_within_budget();
    let halving = study.halving_within(HALVING_TOLERANCE);
    log.push(format!(
        "R = {} +- {} at dt = {}; fitted C = {}; |R| <= 3 se + |C| dt: {}",
        c.residual.estimate,
        c.residual.standard_error,
        c.dt,
        study.fitted_c,
        budget
    ));
    log.push(format!(
        "discretization residual {} (dt) -> {} (dt/2), ratio {} (target 0.5 +- {}%): {}",
        c.discretization.estimate,
        study.fine.discretization.estimate,
        study.halving_ratio,
        HALVING_TOLERANCE * 100.0,
        halving
    ));
    Ok((verdict(budget && halving), csv))
}

fn envelope_rows(csv: &mut Csv, r: &EnsembleReport, initial: f64, slope: f64) {
    for p in &r.series {
        csv.row(&[
            num(p.t),
            num(p.estimate),
            num(p.standard_error),
            num(initial + slope * p.t),
        ]);
    }
}

fn mc_moments(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let integ = cfg.integrator();
    let x0 = initial(cfg)?;
    let r = moment_report(&integ, &x0, cfg.k, cfg.m).map_err(from_core)?;
    let mut csv = Csv::new(&["t", "estimate", "standard_error", "envelope"]);
    envelope_rows(&mut csv, &r.series, r.envelope.initial, r.envelope.slope);
    let finite = r.series.series.iter().all(|p| p.estimate.is_finite());
    log.push(format!(
        "E[F^{}]: envelope {} + {} t, least squares {} + {} t; E[sup F^{}] = {} +- {}",
        cfg.k,
        r.envelope.initial,
        r.envelope.slope,
        r.envelope.ls_intercept,
        r.envelope.ls_slope,
        cfg.k,
        r.sup.estimate,
        r.sup.standard_error
    ));
    log.push(format!("affine envelope holds: {}", r.envelope.holds && finite));
    Ok((verdict(r.envelope.holds && finite), csv))
}

fn mc_expmoments(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let integ = cfg.integrator();
    let x0 = initial(cfg)?;
    let r = exp_moment_report(&integ, &x0, cfg.eps_exp, cfg.m).map_err(from_core)?;
    let mut csv = Csv::new(&[
        "t",
        "estimate",
        "standard_error",
        "envelope",
        "weighted_dissipation",
        "weighted_dissipation_se",
    ]);
    for (p, w) in r.series.series.iter().zip(&r.weighted_dissipation.series) {
        csv.row(&[
            num(p.t),
            num(p.estimate),
            num(p.standard_error),
            num(r.envelope.initial + r.envelope.slope * p.t),
            num(w.estimate),
            num(w.standard_error),
        ]);
    }
    let finite = r.series.series.iter().all(|p| p.estimate.is_finite());
    log.push(format!(
        "margin -nu + 2 eps Tr/lambda_1 = {}; envelope {} + {} t; holds: {}",
        r.margin,
        r.envelope.initial,
        r.envelope.slope,
        r.envelope.holds && finite
    ));
    Ok((verdict(r.envelope.holds && finite), csv))
}

fn ou_test(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let linear = IntegratorConfig {
        nonlinear: false,
        ..cfg.integrator.clone()
    };
    let integ = cfg
        .integrator()
        .reconfigured(linear)
        .map_err(from_core)?;
    let x0 = initial(cfg)?;
    let r = ou_empirical_variances(&integ, &x0, cfg.burn_in, cfg.m).map_err(from_core)?;
    let mut csv = Csv::new(&["mode", "oracle_variance", "empirical_variance", "rel_error"]);
    for j in 0..r.oracle.len() {
        csv.row(&[
            j.to_string(),
            num(r.oracle[j]),
            num(r.empirical[j]),
            num(r.rel_error[j]),
        ]);
    }
    let ok = r.max_rel_error() <= OU_TOLERANCE;
    log.push(format!(
        "max relative error {} over {} paths (tolerance {})",
        r.max_rel_error(),
        cfg.m,
        OU_TOLERANCE
    ));
    Ok((verdict(ok), csv))
}

fn convergence(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let integ = cfg.integrator();
    let x0 = initial(cfg)?;
    let r = strong_convergence(&integ, &x0, &cfg.dts, cfg.m).map_err(from_core)?;
    let mut csv = Csv::new(&["dt", "strong_error"]);
    for (dt, e) in r.dts.iter().zip(&r.errors) {
        csv.row(&[num(*dt), num(*e)]);
    }
    let ok = r.order >= ORDER_WINDOW.0 && r.order <= ORDER_WINDOW.1;
    log.push(format!("fitted order {}", r.order));
    Ok((verdict(ok), csv))
}

fn variation(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let integ = cfg.integrator();
    let x0 = initial(cfg)?;
    let h = SpectralField::unit(integ.basis(), cfg.direction);
    let v = variation_check(&integ, &x0, &h, cfg.delta_fd).map_err(from_core)?;
    let mut csv = Csv::new(&["delta", "eta_norm", "fd_norm", "rel_error"]);
    csv.row(&[num(v.delta), num(v.eta_norm), num(v.fd_norm), num(v.rel_error)]);
    let ok = v.rel_error <= VARIATION_TOLERANCE;
    log.push(format!("relative error {} (tolerance {VARIATION_TOLERANCE})", v.rel_error));
    Ok((verdict(ok), csv))
}

fn be(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let integ = cfg.integrator();
    let x0 = initial(cfg)?;
    let h = SpectralField::unit(integ.basis(), cfg.direction);
    let exact = match cfg.observable {
        Observable::Linear(j) if !cfg.integrator.nonlinear => {
            Some((-cfg.nu * integ.basis().eigenvalues()[j] * cfg.t).exp() * h.coeffs()[j])
        }
        _ => None,
    };
    let fd = if exact.is_none() { Some(cfg.delta_fd) } else { None };
    let est = bismut_elworthy(&integ, cfg.observable, &x0, &h, cfg.t, cfg.m, fd)
        .map_err(from_core)?;
    let mut csv = Csv::new(&[
        "observable",
        "t",
        "value",
        "standard_error",
        "reference",
        "reference_se",
    ]);
    let (reference, reference_se) = match (exact, est.fd_reference) {
        (Some(x), _) => (x, 0.0),
        (None, Some(s)) => (s.estimate, s.standard_error),
        (None, None) => unreachable!("a finite-difference reference is requested"),
    };
    csv.row(&[
        cfg.observable.id(),
        num(cfg.t),
        num(est.value),
        num(est.standard_error),
        num(reference),
        num(reference_se),
    ]);
    let combined = est.standard_error.hypot(reference_se);
    let ok = (est.value - reference).abs() <= 3.0 * combined;
    log.push(format!(
        "estimate {} +- {}; {} reference {} +- {}; within 3 combined errors: {ok}",
        est.value,
        est.standard_error,
        if exact.is_some() { "exact" } else { "finite-difference" },
        reference,
        reference_se
    ));
    Ok((verdict(ok), csv))
}

fn invariant(cfg: &SimConfig, log: &mut Vec<String>) -> Step {
    let integ = cfg.integrator();
    let b = cfg.basis();
    let x0 = initial(cfg)?;
    let x1 = cfg
        .x0_alt
        .build(&b, cfg.alpha)
        .map_err(|e| Outcome::failed(EXIT_CONFIG, format!("x0_alt: {e}")))?;
    let starts = [x0, x1];
    let eps = (cfg.eps_exp > 0.0).then_some(cfg.eps_exp);
    let mut csv = Csv::new(&[
        "T_long",
        "initial_energy",
        "energy",
        "energy_se",
        "dissipation",
        "dissipation_se",
        "exp_weighted",
        "exp_weighted_se",
    ]);
    let mut reports = Vec::new();
    for t_long in [cfg.t_long, 2.0 * cfg.t_long] {
        let r = invariant_stats(&integ, &starts, t_long, cfg.burn_in, eps).map_err(from_core)?;
        for s in &r.stats {
            let (w, wse) = s
                .exp_weighted_dissipation
                .map(|w| (w.estimate, w.standard_error))
                .unwrap_or((f64::NAN, f64::NAN));
            csv.row(&[
                num(t_long),
                num(s.initial_energy),
                num(s.energy.estimate),
                num(s.energy.standard_error),
                num(s.dissipation.estimate),
                num(s.dissipation.standard_error),
                num(w),
                num(wse),
            ]);
        }
        reports.push(r);
    }
    let mixing = reports[0].mixing_agrees(3.0);
    let stable = match eps {
        Some(_) => reports[0].stats.iter().zip(&reports[1].stats).all(|(a, b)| {
            let (a, b) = (
                a.exp_weighted_dissipation.unwrap(),
                b.exp_weighted_dissipation.unwrap(),
            );
            a.estimate.is_finite() && a.agrees_with(&b, 3.0)
        }),
        None => true,
    };
    if let Some(m) = reports[0].margin {
        log.push(format!("margin nu - eps Tr/lambda_1 = {m}"));
    }
    log.push(format!(
        "starts agree within 3 combined errors: {mixing}; weighted dissipation stable under doubling: {stable}"
    ));
    Ok((verdict(mixing && stable), csv))
}
