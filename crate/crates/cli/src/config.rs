//! Flat `key = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment. Keys are case-sensitive.
//! Every value is range-checked when the file is loaded, so a [`SimConfig`]
//! can always be turned into a working integrator.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;

use lans_core::diagnostics::Observable;
use lans_core::{
    make_noise, Basis, Integrator, IntegratorConfig, NoiseSpec, PhysicalParams, Scheme,
    SpectralField,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: key `{key}`: {message}")]
    Line {
        line: usize,
        key: String,
        message: String,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// How the initial condition is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Zero,
    /// Fixed smooth field rescaled to the given `F = |u|^2 + alpha^2 |grad u|^2`.
    Energy(f64),
    /// Snapshot file.
    Snapshot(PathBuf),
}

impl InitialCondition {
    fn parse(s: &str) -> Result<Self, String> {
        if s == "zero" {
            return Ok(Self::Zero);
        }
        if let Some(v) = s.strip_prefix("energy:") {
            let f: f64 = v.trim().parse().map_err(|_| format!("bad energy `{v}`"))?;
            if !(f >= 0.0 && f.is_finite()) {
                return Err(format!("energy must be non-negative, got {f}"));
            }
            return Ok(Self::Energy(f));
        }
        if let Some(p) = s.strip_prefix("snapshot:") {
            return Ok(Self::Snapshot(PathBuf::from(p.trim())));
        }
        Err(format!("expected `zero`, `energy:<F>` or `snapshot:<path>`, got `{s}`"))
    }

    pub fn build(&self, basis: &Arc<Basis>, alpha: f64) -> Result<SpectralField, String> {
        match self {
            Self::Zero => Ok(SpectralField::zeros(basis)),
            Self::Energy(f) => {
                let shape = SpectralField::from_coeffs(
                    basis,
                    basis
                        .eigenvalues()
                        .iter()
                        .enumerate()
                        .map(|(j, lam)| if j % 3 == 1 { -1.0 } else { 1.0 } / lam)
                        .collect(),
                )
                .map_err(|e| e.to_string())?;
                Ok(shape.scaled((f / shape.energy(alpha)).sqrt()))
            }
            Self::Snapshot(path) => {
                let file = std::fs::File::open(path)
                    .map_err(|e| format!("cannot open snapshot {}: {e}", path.display()))?;
                let u = lans_core::read_snapshot(std::io::BufReader::new(file))
                    .map_err(|e| e.to_string())?;
                if !u.basis().same_space(basis) {
                    return Err(format!(
                        "snapshot {} has L = {}, cutoff = {}; configuration has L = {}, cutoff = {}",
                        path.display(),
                        u.basis().length(),
                        u.basis().cutoff(),
                        basis.length(),
                        basis.cutoff()
                    ));
                }
                SpectralField::from_coeffs(basis, u.into_coeffs()).map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nu: f64,
    pub alpha: f64,
    pub length: f64,
    pub cutoff: u32,
    pub epsilon: f64,
    pub sigma: f64,
    pub seed: u64,
    pub integrator: IntegratorConfig,
    /// Ensemble size (paths for `ou-test` and `convergence`).
    pub m: usize,
    pub k: u32,
    pub eps_exp: f64,
    /// Evaluation time of the Bismut-Elworthy estimator.
    pub t: f64,
    pub burn_in: f64,
    pub t_long: f64,
    pub delta_fd: f64,
    pub dts: Vec<f64>,
    pub observable: Observable,
    /// Basis index of the perturbation direction `h = e_j`.
    pub direction: usize,
    pub x0: InitialCondition,
    pub x0_alt: InitialCondition,
    pub output_path: Option<PathBuf>,
    pub snapshot_path: Option<PathBuf>,
    /// Admissibility warnings for the run log.
    pub warnings: Vec<String>,
}

impl SimConfig {
    pub fn basis(&self) -> Arc<Basis> {
        Basis::new(self.length, self.cutoff).expect("validated at load time")
    }

    pub fn params(&self) -> PhysicalParams {
        PhysicalParams::new(self.nu, self.alpha, self.length).expect("validated at load time")
    }

    pub fn noise(&self, basis: &Arc<Basis>) -> NoiseSpec {
        NoiseSpec::new(self.epsilon, self.sigma, basis, self.seed).expect("validated at load time")
    }

    pub fn integrator(&self) -> Integrator {
        let b = self.basis();
        Integrator::new(self.params(), self.noise(&b), self.integrator.clone())
            .expect("validated at load time")
    }
}

const KEYS: &[&str] = &[
    "nu",
    "alpha",
    "L",
    "cutoff",
    "epsilon",
    "sigma",
    "seed",
    "scheme",
    "dt",
    "t_end",
    "record_every",
    "nonlinear",
    "M",
    "k",
    "eps_exp",
    "t",
    "burn_in",
    "T_long",
    "delta_fd",
    "dts",
    "observable",
    "direction",
    "x0",
    "x0_alt",
    "output_path",
    "snapshot_path",
];

struct Entry {
    line: usize,
    key: String,
    value: String,
}

struct Fields {
    entries: Vec<Entry>,
}

impl Fields {
    fn entry(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn get<T>(
        &self,
        key: &str,
        default: Option<T>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        match self.entry(key) {
            Some(e) => parse(&e.value).map(Some).map_err(|message| ConfigError::Line {
                line: e.line,
                key: e.key.clone(),
                message,
            }),
            None => Ok(default),
        }
    }

    fn range_error(&self, key: &str, message: String) -> ConfigError {
        match self.entry(key) {
            Some(e) => ConfigError::Line {
                line: e.line,
                key: e.key.clone(),
                message,
            },
            None => ConfigError::Invalid(format!("`{key}`: {message}")),
        }
    }
}

fn float(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite number, got `{s}`"))
    }
}

fn unsigned<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse()
        .map_err(|_| format!("expected a non-negative integer, got `{s}`"))
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected `true` or `false`, got `{s}`")),
    }
}

fn observable(s: &str) -> Result<Observable, String> {
    if s == "energy" {
        return Ok(Observable::Energy);
    }
    if let Some(j) = s.strip_prefix("linear:") {
        return Ok(Observable::Linear(unsigned(j.trim())?));
    }
    if let Some(c) = s.strip_prefix("clipped_energy:") {
        let c = float(c.trim())?;
        if c <= 0.0 {
            return Err(format!("clip level must be positive, got {c}"));
        }
        return Ok(Observable::ClippedEnergy(c));
    }
    Err(format!(
        "expected `linear:<j>`, `energy` or `clipped_energy:<c>`, got `{s}`"
    ))
}

fn float_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|x| float(x.trim())).collect()
}

fn positive(f: &Fields, key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(f.range_error(key, format!("must be positive, got {v}")))
    }
}

fn non_negative(f: &Fields, key: &str, v: f64) -> Result<f64, ConfigError> {
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(f.range_error(key, format!("must be non-negative, got {v}")))
    }
}

/// Parses and validates a configuration.
///
/// Required keys: `nu`, `alpha`, `L`, `cutoff`, `epsilon`, `sigma`. All
/// other keys have defaults; see the README for the full table.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: content.to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::Line {
                line,
                key,
                message: "unknown key".into(),
            });
        }
        if !seen.insert(key.clone()) {
            return Err(ConfigError::Line {
                line,
                key,
                message: "duplicate key".into(),
            });
        }
        entries.push(Entry { line, key, value });
    }
    let f = Fields { entries };

    let scheme: Scheme = f
        .get("scheme", Some(Scheme::SemiImplicitEm), |s| {
            s.parse().map_err(|e: lans_core::Error| e.to_string())
        })?
        .unwrap();

    let nu = f.get("nu", None, float)?.ok_or(ConfigError::Missing("nu"))?;
    let nu = if scheme == Scheme::Rk4Deterministic {
        non_negative(&f, "nu", nu)?
    } else {
        positive(&f, "nu", nu)?
    };
    let alpha = non_negative(&f, "alpha", f.get("alpha", None, float)?.ok_or(ConfigError::Missing("alpha"))?)?;
    let length = positive(&f, "L", f.get("L", None, float)?.ok_or(ConfigError::Missing("L"))?)?;
    let cutoff: u32 = f
        .get("cutoff", None, unsigned)?
        .ok_or(ConfigError::Missing("cutoff"))?;
    if cutoff == 0 {
        return Err(f.range_error("cutoff", "must be at least 1".into()));
    }
    let epsilon = f
        .get("epsilon", None, float)?
        .ok_or(ConfigError::Missing("epsilon"))?;
    let sigma = non_negative(
        &f,
        "sigma",
        f.get("sigma", None, float)?.ok_or(ConfigError::Missing("sigma"))?,
    )?;
    let seed: u64 = f.get("seed", Some(0), unsigned)?.unwrap();

    let integrator = IntegratorConfig {
        scheme,
        dt: positive(&f, "dt", f.get("dt", Some(1e-3), float)?.unwrap())?,
        t_end: non_negative(&f, "t_end", f.get("t_end", Some(1.0), float)?.unwrap())?,
        record_every: f.get("record_every", Some(10), unsigned)?.unwrap(),
        nonlinear: f.get("nonlinear", Some(true), boolean)?.unwrap(),
        keep_snapshots: false,
    };
    if integrator.record_every == 0 {
        return Err(f.range_error("record_every", "must be at least 1".into()));
    }
    if let Err(e) = integrator.validate() {
        return Err(f.range_error("dt", e.to_string()));
    }
    if scheme == Scheme::Rk4Deterministic && sigma != 0.0 {
        return Err(f.range_error("sigma", "rk4_deterministic needs sigma = 0".into()));
    }

    let basis = Basis::new(length, cutoff).map_err(|e| f.range_error("cutoff", e.to_string()))?;
    let (_, admissibility) = make_noise(epsilon, sigma, &basis, seed)
        .map_err(|e| f.range_error("epsilon", e.to_string()))?;

    let m: usize = f.get("M", Some(100), unsigned)?.unwrap();
    if m < 2 {
        return Err(f.range_error("M", format!("must be at least 2, got {m}")));
    }
    let k: u32 = f.get("k", Some(1), unsigned)?.unwrap();
    if k == 0 {
        return Err(f.range_error("k", "must be at least 1".into()));
    }
    let eps_exp = non_negative(&f, "eps_exp", f.get("eps_exp", Some(0.0), float)?.unwrap())?;
    let t = positive(&f, "t", f.get("t", Some(0.1), float)?.unwrap())?;
    let burn_in = non_negative(&f, "burn_in", f.get("burn_in", Some(50.0), float)?.unwrap())?;
    let t_long = positive(&f, "T_long", f.get("T_long", Some(500.0), float)?.unwrap())?;
    if burn_in >= t_long {
        return Err(f.range_error(
            "burn_in",
            format!("must be below T_long = {t_long}, got {burn_in}"),
        ));
    }
    let delta_fd = positive(&f, "delta_fd", f.get("delta_fd", Some(1e-5), float)?.unwrap())?;
    let dts = f
        .get("dts", Some(vec![4e-3, 2e-3, 1e-3, 5e-4]), float_list)?
        .unwrap();
    if dts.len() < 3 || dts.iter().any(|&d| d <= 0.0) || dts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(f.range_error(
            "dts",
            "need at least three positive, strictly decreasing step sizes".into(),
        ));
    }
    let observable = f
        .get("observable", Some(Observable::Linear(0)), observable)?
        .unwrap();
    let n = basis.len();
    if let Observable::Linear(j) = observable {
        if j >= n {
            return Err(f.range_error("observable", format!("mode index {j} out of range 0..{n}")));
        }
    }
    let direction: usize = f.get("direction", Some(0), unsigned)?.unwrap();
    if direction >= n {
        return Err(f.range_error("direction", format!("mode index {direction} out of range 0..{n}")));
    }
    let x0 = f
        .get("x0", Some(InitialCondition::Zero), InitialCondition::parse)?
        .unwrap();
    let x0_alt = f
        .get("x0_alt", Some(InitialCondition::Energy(10.0)), InitialCondition::parse)?
        .unwrap();
    let path = |s: &str| -> Result<PathBuf, String> { Ok(PathBuf::from(s)) };
    let output_path = f.get("output_path", None, path)?;
    let snapshot_path = f.get("snapshot_path", None, path)?;

    Ok(SimConfig {
        nu,
        alpha,
        length,
        cutoff,
        epsilon,
        sigma,
        seed,
        integrator,
        m,
        k,
        eps_exp,
        t,
        burn_in,
        t_long,
        delta_fd,
        dts,
        observable,
        direction,
        x0,
        x0_alt,
        output_path,
        snapshot_path,
        warnings: admissibility.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HAPPY: &str = "nu = 1.0\nalpha = 0.5\nL = 6.283185307179586\ncutoff = 2\nepsilon = 1.5\nsigma = 0.5\nseed = 42";

    #[test]
    fn happy_path_fills_defaults() {
        let c = parse_config(HAPPY).unwrap();
        assert_eq!(c.nu, 1.0);
        assert_eq!(c.cutoff, 2);
        assert_eq!(c.seed, 42);
        assert_eq!(c.integrator.dt, 1e-3);
        assert_eq!(c.integrator.record_every, 10);
        assert_eq!(c.integrator.scheme, Scheme::SemiImplicitEm);
        assert!(c.integrator.nonlinear);
        assert!(c.warnings.is_empty());
        assert_eq!(c.x0, InitialCondition::Zero);
    }

    #[test]
    fn negative_nu_is_a_range_error() {
        let text = HAPPY.replace("nu = 1.0", "nu = -1");
        match parse_config(&text).unwrap_err() {
            ConfigError::Line { line, key, .. } => {
                assert_eq!(line, 1);
                assert_eq!(key, "nu");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_epsilon_is_accepted_with_warning() {
        let c = parse_config(&HAPPY.replace("epsilon = 1.5", "epsilon = 0.5")).unwrap();
        assert!(!c.warnings.is_empty());
    }

    #[test]
    fn unknown_and_duplicate_keys_name_the_line() {
        let err = parse_config(&format!("{HAPPY}\nviscosity = 2")).unwrap_err();
        assert!(err.to_string().contains("line 8"), "{err}");
        assert!(err.to_string().contains("viscosity"));
        let err = parse_config(&format!("{HAPPY}\nnu = 2")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn type_mismatch_names_key() {
        let err = parse_config(&HAPPY.replace("cutoff = 2", "cutoff = two")).unwrap_err();
        assert!(matches!(err, ConfigError::Line { line: 4, ref key, .. } if key == "cutoff"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!("# header\n\n{HAPPY}   # trailing\n");
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn missing_required_key() {
        let text = HAPPY.replace("sigma = 0.5", "");
        assert_eq!(parse_config(&text).unwrap_err(), ConfigError::Missing("sigma"));
    }

    #[test]
    fn rk4_allows_inviscid_but_needs_silence() {
        let base = HAPPY.replace("nu = 1.0", "nu = 0").replace("sigma = 0.5", "sigma = 0");
        assert!(parse_config(&base).is_err());
        assert!(parse_config(&format!("{base}\nscheme = rk4_deterministic")).is_ok());
        let noisy = HAPPY.replace("nu = 1.0", "nu = 0");
        assert!(parse_config(&format!("{noisy}\nscheme = rk4_deterministic")).is_err());
    }

    #[test]
    fn structured_values() {
        let c = parse_config(&format!(
            "{HAPPY}\nobservable = clipped_energy:5\nx0 = energy:10\ndts = 0.01, 0.005, 0.0025\nnonlinear = false"
        ))
        .unwrap();
        assert_eq!(c.observable, Observable::ClippedEnergy(5.0));
        assert_eq!(c.x0, InitialCondition::Energy(10.0));
        assert_eq!(c.dts, vec![0.01, 0.005, 0.0025]);
        assert!(!c.integrator.nonlinear);
        let b = c.basis();
        let u = c.x0.build(&b, c.alpha).unwrap();
        assert!((u.energy(c.alpha) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_direction() {
        let err = parse_config(&format!("{HAPPY}\ndirection = 24")).unwrap_err();
        assert!(err.to_string().contains("direction"));
    }
}
