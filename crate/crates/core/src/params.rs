//! Physical parameters, unit normalization and solver configuration.
//!
//! Energies and temperatures share one unit (k_B = 1). Every solver works
//! in whatever unit the caller's [`PhysicalParams`] use, but the CLI always
//! normalizes to `debye = 1` before calling in and rescales on the way out.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};

/// Relative slack used when testing `debye > epsilon * exp(1/u)`.
const BOUNDARY_RTOL: f64 = 1e-12;

/// The problem box: integration cutoffs and the three reference couplings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Lower integration cutoff.
    pub epsilon: f64,
    /// Debye energy, the upper integration cutoff.
    pub debye: f64,
    /// Auxiliary coupling below `u1`, used only for the contraction bound.
    pub u0: f64,
    /// Lower bound of the potential.
    pub u1: f64,
    /// Upper bound of the potential.
    pub u2: f64,
}

impl Default for PhysicalParams {
    /// Reference set. The couplings sit in the strong-coupling corner with
    /// `u0` close to `u2`, which is where the contraction temperature bound
    /// has a nonempty admissible range.
    fn default() -> Self {
        PhysicalParams {
            epsilon: 1e-3,
            debye: 1.0,
            u0: 4.8,
            u1: 4.9,
            u2: 5.0,
        }
    }
}

impl PhysicalParams {
    pub fn new(epsilon: f64, debye: f64, u0: f64, u1: f64, u2: f64) -> Self {
        PhysicalParams {
            epsilon,
            debye,
            u0,
            u1,
            u2,
        }
    }

    /// Same box with the couplings replaced.
    pub fn with_couplings(self, u0: f64, u1: f64, u2: f64) -> Self {
        PhysicalParams { u0, u1, u2, ..self }
    }

    /// Smallest coupling for which a nonzero gap exists at T = 0.
    pub fn critical_coupling(&self) -> f64 {
        1.0 / (self.debye / self.epsilon).ln()
    }

    /// Whether `debye > epsilon * exp(1/u)` holds strictly (with a relative
    /// guard so that values sitting on the boundary are rejected).
    pub fn admits_coupling(&self, u: f64) -> bool {
        u > 0.0 && self.debye > self.epsilon * (1.0 / u).exp() * (1.0 + BOUNDARY_RTOL)
    }

    pub fn is_normalized(&self) -> bool {
        self.debye == 1.0
    }
}

impl fmt::Display for PhysicalParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epsilon={} debye={} u0={} u1={} u2={}",
            self.epsilon, self.debye, self.u0, self.u1, self.u2
        )
    }
}

/// One failed invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

/// Outcome of [`validate`]. Admissible iff `violations` is empty; warnings
/// never make a parameter set inadmissible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    fn violate(&mut self, field: &str, message: String) {
        self.violations.push(Violation {
            field: field.to_string(),
            message,
        });
    }

    /// First violation as an error, if any.
    pub fn into_result(self) -> Result<()> {
        match self.violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(GapError::invalid(v.field, v.message)),
        }
    }
}

/// Lists every violated invariant of `p`.
pub fn validate(p: &PhysicalParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    let finite = [p.epsilon, p.debye, p.u0, p.u1, p.u2]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        report.violate("params", "all parameters must be finite".into());
        return report;
    }
    if p.epsilon <= 0.0 {
        report.violate("epsilon", format!("epsilon must be > 0, got {}", p.epsilon));
    }
    if p.epsilon >= p.debye {
        report.violate(
            "epsilon",
            format!("epsilon < debye required, got {} >= {}", p.epsilon, p.debye),
        );
    } else if p.epsilon > 0.1 * p.debye {
        report.warnings.push(format!(
            "epsilon = {} exceeds 0.1*debye; the cutoff is meant to be small",
            p.epsilon
        ));
    }
    if p.u0 <= 0.0 {
        report.violate("u0", format!("u0 must be > 0, got {}", p.u0));
    }
    if p.u0 >= p.u1 {
        report.violate("u0", format!("u0 < u1 required, got {} >= {}", p.u0, p.u1));
    }
    if p.u1 >= p.u2 {
        report.violate("u1", format!("u1 < u2 required, got {} >= {}", p.u1, p.u2));
    }
    if p.epsilon > 0.0 && p.epsilon < p.debye {
        for (name, u) in [("u0", p.u0), ("u1", p.u1), ("u2", p.u2)] {
            if u > 0.0 && !p.admits_coupling(u) {
                report.violate(
                    name,
                    format!(
                        "debye > epsilon*exp(1/{name}) required: {} <= {} (coupling below {:.6})",
                        p.debye,
                        p.epsilon * (1.0 / u).exp(),
                        p.critical_coupling()
                    ),
                );
            }
        }
    }
    report
}

/// Rescales energies so that `debye = 1`. Couplings are dimensionless and
/// pass through unchanged.
pub fn normalize(p: &PhysicalParams) -> Result<PhysicalParams> {
    validate(p).into_result()?;
    if p.is_normalized() {
        return Ok(*p);
    }
    Ok(PhysicalParams {
        epsilon: p.epsilon / p.debye,
        debye: 1.0,
        ..*p
    })
}

/// Inverse of [`normalize`] for a given physical Debye energy.
pub fn denormalize(p: &PhysicalParams, debye: f64) -> PhysicalParams {
    PhysicalParams {
        epsilon: p.epsilon * debye,
        debye: p.debye * debye,
        ..*p
    }
}

/// Numerical knobs shared by every solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative stop for quadrature panel doubling.
    pub quad_rel_tol: f64,
    /// Relative width at which bisections stop.
    pub root_tol: f64,
    /// Sup-norm stop for the fixed-point iteration, as a fraction of debye.
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Gap values below this fraction of debye count as zero.
    pub gap_zero_threshold: f64,
    /// Picard mixing factor in (0, 1].
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            quad_rel_tol: 1e-12,
            root_tol: 1e-12,
            fp_tol: 1e-10,
            fp_max_iter: 10_000,
            gap_zero_threshold: 1e-8,
            damping: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quad_rel_tol", self.quad_rel_tol),
            ("root_tol", self.root_tol),
            ("fp_tol", self.fp_tol),
            ("gap_zero_threshold", self.gap_zero_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GapError::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if self.fp_max_iter < 1 {
            return Err(GapError::invalid("fp_max_iter", "must be >= 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(GapError::invalid(
                "damping",
                format!("must lie in (0, 1], got {}", self.damping),
            ));
        }
        Ok(())
    }
}

/// Partial settings as read from a config file or the command line. Unset
/// fields fall back to defaults in [`Settings::resolve`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub epsilon: Option<f64>,
    pub debye: Option<f64>,
    pub u0: Option<f64>,
    pub u1: Option<f64>,
    pub u2: Option<f64>,
    pub quad_rel_tol: Option<f64>,
    pub root_tol: Option<f64>,
    pub fp_tol: Option<f64>,
    pub fp_max_iter: Option<usize>,
    pub gap_zero_threshold: Option<f64>,
    pub damping: Option<f64>,
}

pub const CONFIG_KEYS: [&str; 11] = [
    "epsilon",
    "debye",
    "u0",
    "u1",
    "u2",
    "quad_rel_tol",
    "root_tol",
    "fp_tol",
    "fp_max_iter",
    "gap_zero_threshold",
    "damping",
];

impl Settings {
    /// Parses flat `key = value` lines. Blank lines and `#` comments are
    /// skipped; unknown keys and repeated keys are errors.
    pub fn parse(text: &str, origin: &str) -> Result<Settings> {
        let mut seen = BTreeMap::new();
        let mut out = Settings::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| GapError::Parse {
                path: format!("{origin}:{}", lineno + 1),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if let Some(prev) = seen.insert(key.to_string(), lineno + 1) {
                return Err(perr(format!(
                    "duplicate key `{key}` (first on line {prev})"
                )));
            }
            out.set(key, value).map_err(perr)?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path)?;
        Settings::parse(&text, &path.display().to_string())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let float = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| format!("`{key}`: cannot parse `{v}` as a number: {e}"))
        };
        match key {
            "epsilon" => self.epsilon = Some(float(value)?),
            "debye" => self.debye = Some(float(value)?),
            "u0" => self.u0 = Some(float(value)?),
            "u1" => self.u1 = Some(float(value)?),
            "u2" => self.u2 = Some(float(value)?),
            "quad_rel_tol" => self.quad_rel_tol = Some(float(value)?),
            "root_tol" => self.root_tol = Some(float(value)?),
            "fp_tol" => self.fp_tol = Some(float(value)?),
            "gap_zero_threshold" => self.gap_zero_threshold = Some(float(value)?),
            "damping" => self.damping = Some(float(value)?),
            "fp_max_iter" => {
                self.fp_max_iter = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| format!("`fp_max_iter`: cannot parse `{value}`: {e}"))?,
                )
            }
            other => {
                return Err(format!(
                    "unknown key `{other}` (expected one of {})",
                    CONFIG_KEYS.join(", ")
                ))
            }
        }
        Ok(())
    }

    /// Values set in `other` win.
    pub fn overlay(&self, other: &Settings) -> Settings {
        Settings {
            epsilon: other.epsilon.or(self.epsilon),
            debye: other.debye.or(self.debye),
            u0: other.u0.or(self.u0),
            u1: other.u1.or(self.u1),
            u2: other.u2.or(self.u2),
            quad_rel_tol: other.quad_rel_tol.or(self.quad_rel_tol),
            root_tol: other.root_tol.or(self.root_tol),
            fp_tol: other.fp_tol.or(self.fp_tol),
            fp_max_iter: other.fp_max_iter.or(self.fp_max_iter),
            gap_zero_threshold: other.gap_zero_threshold.or(self.gap_zero_threshold),
            damping: other.damping.or(self.damping),
        }
    }

    /// Fills in defaults. When `u1` is given but `u0` is not, `u0 = u1 / 2`.
    pub fn resolve(&self) -> Result<(PhysicalParams, SolverConfig)> {
        let d = PhysicalParams::default();
        let u1 = self.u1.unwrap_or(d.u1);
        let u0 = match (self.u0, self.u1) {
            (Some(u0), _) => u0,
            (None, Some(u1)) => 0.5 * u1,
            (None, None) => d.u0,
        };
        let p = PhysicalParams {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            debye: self.debye.unwrap_or(d.debye),
            u0,
            u1,
            u2: self.u2.unwrap_or(d.u2),
        };
        let c = SolverConfig::default();
        let cfg = SolverConfig {
            quad_rel_tol: self.quad_rel_tol.unwrap_or(c.quad_rel_tol),
            root_tol: self.root_tol.unwrap_or(c.root_tol),
            fp_tol: self.fp_tol.unwrap_or(c.fp_tol),
            fp_max_iter: self.fp_max_iter.unwrap_or(c.fp_max_iter),
            gap_zero_threshold: self.gap_zero_threshold.unwrap_or(c.gap_zero_threshold),
            damping: self.damping.unwrap_or(c.damping),
        };
        cfg.validate()?;
        Ok((p, cfg))
    }
}

/// Renders a parameter set and config in the file format read by
/// [`Settings::parse`].
pub fn render_config(p: &PhysicalParams, cfg: &SolverConfig) -> String {
    format!(
        "epsilon = {:e}\ndebye = {:e}\nu0 = {:e}\nu1 = {:e}\nu2 = {:e}\n\
         quad_rel_tol = {:e}\nroot_tol = {:e}\nfp_tol = {:e}\nfp_max_iter = {}\n\
         gap_zero_threshold = {:e}\ndamping = {:e}\n",
        p.epsilon,
        p.debye,
        p.u0,
        p.u1,
        p.u2,
        cfg.quad_rel_tol,
        cfg.root_tol,
        cfg.fp_tol,
        cfg.fp_max_iter,
        cfg.gap_zero_threshold,
        cfg.damping
    )
}
