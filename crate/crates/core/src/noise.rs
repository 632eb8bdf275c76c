//! Trace-class additive noise `Q dW` with `Q = sigma * A^{-(1+eps)/2}`,
//! diagonal in the Stokes eigenbasis.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::{Basis, SpectralField};
use crate::error::{invalid, Error, Result};

/// Generator driving every trajectory.
pub type NoiseRng = ChaCha8Rng;

/// Independent stream `index` of the generator family selected by `seed`.
///
/// Ensemble member `i` always draws from `substream(seed, i)`, so results do
/// not depend on how members are scheduled across threads.
pub fn substream(seed: u64, index: u64) -> NoiseRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` independent `N(0, dt)` increments of a standard Wiener process.
pub fn standard_increment(n: usize, dt: f64, rng: &mut NoiseRng) -> Vec<f64> {
    let s = dt.sqrt();
    (0..n)
        .map(|_| s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QPower {
    Forward,
    Inverse,
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    basis: Arc<Basis>,
    pub epsilon: f64,
    pub sigma: f64,
    pub seed: u64,
    q: Vec<f64>,
    trace_q: f64,
    trace_qaq: f64,
}

/// Verdict on the covariance exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct Admissibility {
    /// `eps > d/2`: `Tr[Q*(I + A)Q]` stays finite as the cutoff grows.
    pub trace_class: bool,
    /// `eps <= 2`: `D(A^{3/2})` lies in the domain of `Q^{-1}`.
    pub invertible_domain: bool,
    /// Truncated `sum_k lambda_k^{-eps}` over the basis.
    pub truncated_trace: f64,
    /// Integral-comparison estimate of the part of `sum_k lambda_k^{-eps}`
    /// outside the truncation; infinite when the series diverges.
    pub tail_estimate: f64,
    pub warnings: Vec<String>,
}

impl Admissibility {
    pub fn is_admissible(&self) -> bool {
        self.trace_class && self.invertible_domain
    }
}

impl NoiseSpec {
    pub fn new(epsilon: f64, sigma: f64, basis: &Arc<Basis>, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma must be non-negative, got {sigma}"));
        }
        if !epsilon.is_finite() {
            return invalid(format!("epsilon must be finite, got {epsilon}"));
        }
        let q: Vec<f64> = basis
            .eigenvalues()
            .iter()
            .map(|lam| sigma * lam.powf(-(1.0 + epsilon) / 2.0))
            .collect();
        let trace_q = q.iter().map(|x| x * x).sum();
        let trace_qaq = q
            .iter()
            .zip(basis.eigenvalues())
            .map(|(x, lam)| x * x * lam)
            .sum();
        Ok(Self {
            basis: Arc::clone(basis),
            epsilon,
            sigma,
            seed,
            q,
            trace_q,
            trace_qaq,
        })
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    /// Per-mode multipliers `q_j`.
    pub fn multipliers(&self) -> &[f64] {
        &self.q
    }

    /// `Tr[Q* Q]`.
    pub fn trace_q(&self) -> f64 {
        self.trace_q
    }

    /// `Tr[Q* A Q]`.
    pub fn trace_qaq(&self) -> f64 {
        self.trace_qaq
    }

    /// `Tr[Q*(I + alpha^2 A)Q] = Tr[Q*Q] + alpha^2 Tr[Q*AQ]`.
    pub fn trace_alpha(&self, alpha: f64) -> f64 {
        self.trace_q + alpha * alpha * self.trace_qaq
    }

    /// Same trace by direct summation of `q_j^2 (1 + alpha^2 lambda_j)`.
    pub fn trace_alpha_summed(&self, alpha: f64) -> f64 {
        let a2 = alpha * alpha;
        self.q
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(x, lam)| x * x * (1.0 + a2 * lam))
            .sum()
    }

    pub fn is_invertible(&self) -> bool {
        self.sigma > 0.0
    }

    pub fn admissibility(&self) -> Admissibility {
        let d = 2.0;
        let eps = self.epsilon;
        let trace_class = eps > d / 2.0;
        let invertible_domain = eps <= 2.0;
        let truncated_trace = self.basis.eigenvalues().iter().map(|l| l.powf(-eps)).sum();
        // compare the lattice sum outside the max-norm ball with the integral
        // over the exterior of the disc of equal area
        let tail_estimate = if trace_class {
            let r0 = (2.0 * self.basis.cutoff() as f64 + 1.0) / PI.sqrt();
            let scale = (2.0 * PI / self.basis.length()).powf(-2.0 * eps);
            scale * 2.0 * PI * r0.powf(2.0 - 2.0 * eps) / (2.0 * eps - 2.0)
        } else {
            f64::INFINITY
        };
        let mut warnings = Vec::new();
        if !trace_class {
            warnings.push(format!(
                "epsilon = {eps} <= d/2 = 1: the trace of Q*(I+A)Q diverges as the cutoff grows"
            ));
        }
        if !invertible_domain {
            warnings.push(format!(
                "epsilon = {eps} > 2: D(A^(3/2)) is not contained in the domain of Q^(-1)"
            ));
        }
        Admissibility {
            trace_class,
            invertible_domain,
            truncated_trace,
            tail_estimate,
            warnings,
        }
    }

    /// `Q dW` over a step of length `dt`.
    pub fn sample_increment(&self, dt: f64, rng: &mut NoiseRng) -> Result<SpectralField> {
        if !(dt > 0.0) {
            return invalid(format!("dt must be positive, got {dt}"));
        }
        let dw = standard_increment(self.q.len(), dt, rng);
        let coeffs = dw.iter().zip(&self.q).map(|(w, q)| q * w).collect();
        SpectralField::from_coeffs(&self.basis, coeffs)
    }

    pub fn q_apply(&self, u: &SpectralField, power: QPower) -> Result<SpectralField> {
        if !self.basis.same_space(u.basis()) {
            return invalid("field and noise live on different bases");
        }
        match power {
            QPower::Forward => Ok(u.map(|j, c| self.q[j] * c)),
            QPower::Inverse => {
                if !self.is_invertible() {
                    return Err(Error::SingularOperator(
                        "Q^(-1) requested with sigma = 0".into(),
                    ));
                }
                Ok(u.map(|j, c| c / self.q[j]))
            }
        }
    }
}

/// Builds the noise together with its admissibility report.
pub fn make_noise(
    epsilon: f64,
    sigma: f64,
    basis: &Arc<Basis>,
    seed: u64,
) -> Result<(NoiseSpec, Admissibility)> {
    let spec = NoiseSpec::new(epsilon, sigma, basis, seed)?;
    let report = spec.admissibility();
    Ok((spec, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis1() -> Arc<Basis> {
        Basis::new(2.0 * PI, 1).unwrap()
    }

    #[test]
    fn trace_of_unit_exponent_on_cutoff_one() {
        let (spec, _) = make_noise(1.0, 1.0, &basis1(), 0).unwrap();
        assert!((spec.trace_q() - 5.0).abs() < 1e-14);
        assert!((spec.trace_alpha(0.0) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn admissibility_verdicts() {
        let (_, ok) = make_noise(1.5, 1.0, &basis1(), 0).unwrap();
        assert!(ok.trace_class && ok.invertible_domain && ok.warnings.is_empty());
        assert!(ok.tail_estimate.is_finite());

        let (_, low) = make_noise(0.5, 1.0, &basis1(), 0).unwrap();
        assert!(!low.trace_class);
        assert!(low.tail_estimate.is_infinite());
        assert_eq!(low.warnings.len(), 1);

        let (_, high) = make_noise(2.5, 1.0, &basis1(), 0).unwrap();
        assert!(high.trace_class && !high.invertible_domain);
    }

    #[test]
    fn truncated_trace_grows_without_bound_below_threshold() {
        let traces: Vec<f64> = [2, 4, 8, 16]
            .iter()
            .map(|&n| {
                let b = Basis::new(2.0 * PI, n).unwrap();
                NoiseSpec::new(0.5, 1.0, &b, 0).unwrap().admissibility().truncated_trace
            })
            .collect();
        // doubling the cutoff adds a roughly constant multiple of N
        for w in traces.windows(2) {
            assert!(w[1] > 1.8 * w[0], "{traces:?}");
        }
    }

    #[test]
    fn tail_estimate_tracks_the_missing_mass() {
        let eps = 1.5;
        let small = Basis::new(2.0 * PI, 4).unwrap();
        let big = Basis::new(2.0 * PI, 200).unwrap();
        let a = NoiseSpec::new(eps, 1.0, &small, 0).unwrap().admissibility();
        let b = NoiseSpec::new(eps, 1.0, &big, 0).unwrap().admissibility();
        let missing = b.truncated_trace - a.truncated_trace;
        assert!((a.tail_estimate - missing).abs() < 0.1 * missing);
    }

    #[test]
    fn negative_sigma_is_rejected() {
        assert!(matches!(
            NoiseSpec::new(1.5, -0.1, &basis1(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn trace_alpha_two_routes_agree() {
        let b = Basis::new(3.0, 3).unwrap();
        let spec = NoiseSpec::new(1.3, 0.7, &b, 0).unwrap();
        for alpha in [0.0, 0.2, 1.5] {
            let x = spec.trace_alpha(alpha);
            let y = spec.trace_alpha_summed(alpha);
            assert!((x - y).abs() <= 1e-14 * x);
        }
    }

    #[test]
    fn increments_zero_without_noise_and_reproducible() {
        let b = basis1();
        let spec = NoiseSpec::new(1.5, 0.0, &b, 0).unwrap();
        let mut rng = substream(1, 0);
        let dw = spec.sample_increment(0.1, &mut rng).unwrap();
        assert!(dw.coeffs().iter().all(|&c| c == 0.0));
        assert!(spec.sample_increment(0.0, &mut rng).is_err());

        let spec = NoiseSpec::new(1.5, 1.0, &b, 0).unwrap();
        let mut r1 = substream(42, 3);
        let mut r2 = substream(42, 3);
        for _ in 0..5 {
            let a = spec.sample_increment(0.01, &mut r1).unwrap();
            let c = spec.sample_increment(0.01, &mut r2).unwrap();
            assert_eq!(a.coeffs(), c.coeffs());
        }
        let mut r3 = substream(42, 4);
        let a = spec.sample_increment(0.01, &mut substream(42, 3)).unwrap();
        assert_ne!(a.coeffs(), spec.sample_increment(0.01, &mut r3).unwrap().coeffs());
    }

    #[test]
    fn increment_moments() {
        let b = basis1();
        let spec = NoiseSpec::new(1.5, 0.8, &b, 0).unwrap();
        let dt = 0.01;
        let draws = 100_000;
        let n = b.len();
        let mut rng = substream(2024, 0);
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut cross = vec![0.0; n - 1];
        for _ in 0..draws {
            let w = spec.sample_increment(dt, &mut rng).unwrap();
            let c = w.coeffs();
            for j in 0..n {
                sum[j] += c[j];
                sq[j] += c[j] * c[j];
            }
            for j in 0..n - 1 {
                cross[j] += c[j] * c[j + 1];
            }
        }
        let m = draws as f64;
        let q = spec.multipliers();
        for j in 0..n {
            let mean = sum[j] / m;
            let var = sq[j] / m - mean * mean;
            let target = q[j] * q[j] * dt;
            assert!(mean.abs() < 4.0 * q[j] * (dt / m).sqrt());
            assert!((var - target).abs() < 0.05 * target);
        }
        for j in 0..n - 1 {
            let cov = cross[j] / m;
            // standard error of the product of two independent centred normals
            let se = q[j] * q[j + 1] * dt / m.sqrt();
            assert!(cov.abs() < 4.0 * se, "cov[{j}] = {cov}, se = {se}");
        }
    }

    #[test]
    fn q_apply_pairs_and_bounds() {
        let b = Basis::new(2.0 * PI, 2).unwrap();
        let spec = NoiseSpec::new(1.0, 1.0, &b, 0).unwrap();
        let e0 = SpectralField::unit(&b, 0);
        assert_eq!(spec.q_apply(&e0, QPower::Forward).unwrap(), e0);

        let mut rng = substream(5, 0);
        let u = SpectralField::from_coeffs(&b, standard_increment(b.len(), 1.0, &mut rng)).unwrap();
        let back = spec
            .q_apply(&spec.q_apply(&u, QPower::Forward).unwrap(), QPower::Inverse)
            .unwrap();
        for (x, y) in back.coeffs().iter().zip(u.coeffs()) {
            assert!((x - y).abs() < 1e-13);
        }

        let bound = b.lambda_max().powf((1.0 + spec.epsilon) / 2.0) / spec.sigma;
        let inv = spec.q_apply(&u, QPower::Inverse).unwrap();
        assert!(inv.norms().l2 <= bound * u.norms().l2 * (1.0 + 1e-14));
        let top = b.len() - 1;
        let e_top = SpectralField::unit(&b, top);
        let sat = spec.q_apply(&e_top, QPower::Inverse).unwrap().norms().l2;
        assert!((sat - bound).abs() < 1e-12 * bound);

        let silent = NoiseSpec::new(1.0, 0.0, &b, 0).unwrap();
        assert!(matches!(
            silent.q_apply(&u, QPower::Inverse),
            Err(Error::SingularOperator(_))
        ));
    }

    #[test]
    fn helmholtz_weighted_covariance_bound() {
        let b = Basis::new(2.0 * PI, 2).unwrap();
        let spec = NoiseSpec::new(1.5, 0.6, &b, 0).unwrap();
        let mut rng = substream(8, 0);
        for alpha in [0.0, 0.5, 2.0] {
            let tr = spec.trace_alpha(alpha);
            for _ in 0..1000 {
                let x = SpectralField::from_coeffs(&b, standard_increment(b.len(), 1.0, &mut rng))
                    .unwrap();
                let hx = crate::operators::helmholtz(&x, alpha, crate::operators::Helmholtz::Apply);
                let lhs = spec.q_apply(&hx, QPower::Forward).unwrap().norms().l2.powi(2);
                let rhs = tr * x.energy(alpha);
                assert!(lhs - rhs <= 1e-12 * rhs);
            }
        }
    }
}
