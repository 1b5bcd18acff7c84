//! The simple gap equation `1 = U ∫ tanh(√(ξ²+Δ²)/2T)/√(ξ²+Δ²) dξ` for a
//! constant coupling U: zero-temperature gap, critical temperature, the
//! gap curve T ↦ Δ(T), its inverse and finite-difference derivatives.
//!
//! All root finding is bisection. The right side is strictly decreasing in
//! both Y = Δ² and T, so every bracket below is guaranteed to straddle its
//! root and bisection cannot wander.

use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::params::{PhysicalParams, SolverConfig};
use crate::quadrature::{gap_integral, integrate, start_rule};

/// Iteration cap shared by the bisections; far above what any relative
/// tolerance representable in f64 needs.
const MAX_BISECTIONS: usize = 400;

/// Closed-form zero-temperature gap
/// `√((D − εe^{1/U})(D − εe^{−1/U})) / sinh(1/U)`.
pub fn delta_zero(u: f64, p: &PhysicalParams) -> Result<f64> {
    if !(u > 0.0) {
        return Err(GapError::domain(format!("coupling must be > 0, got {u}")));
    }
    let inv = 1.0 / u;
    let upper = p.epsilon * inv.exp();
    let first = p.debye - upper;
    if first < -1e-12 * p.debye {
        return Err(GapError::domain(format!(
            "normal state at all T: debye = {} <= epsilon*exp(1/U) = {upper}",
            p.debye
        )));
    }
    let second = p.debye - p.epsilon * (-inv).exp();
    Ok((first.max(0.0) * second).sqrt() / inv.sinh())
}

/// Bisection on a decreasing function: returns (lo, hi) with `f(lo) > 0 >= f(hi)`
/// once `hi - lo <= rtol * hi`.
fn bisect_decreasing<F>(mut lo: f64, mut hi: f64, rtol: f64, mut f: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= rtol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

/// Critical temperature: the root of `U ∫ tanh(ξ/2τ)/ξ dξ = 1`.
pub fn tau(u: f64, p: &PhysicalParams, cfg: &SolverConfig) -> Result<f64> {
    if !(u > 0.0) {
        return Err(GapError::domain(format!("coupling must be > 0, got {u}")));
    }
    let residual = |t: f64| -> Result<f64> { Ok(u * gap_integral(0.0, t, p, cfg)? - 1.0) };
    let lo = 1e-9 * p.debye;
    if residual(lo)? <= 0.0 {
        return Err(GapError::domain(format!(
            "coupling {u} too weak for epsilon = {}: no superconducting phase",
            p.epsilon
        )));
    }
    let mut hi = p.debye;
    let mut grow = 0;
    while residual(hi)? > 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(GapError::Bracket(format!(
                "no upper bracket for tau(U = {u})"
            )));
        }
    }
    let (lo, hi) = bisect_decreasing(lo, hi, cfg.root_tol, residual)?;
    Ok(0.5 * (lo + hi))
}

/// Solution of the simple gap equation for one coupling, with its critical
/// temperature and zero-temperature gap cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapFunction {
    pub coupling: f64,
    pub tau: f64,
    pub delta_zero: f64,
    params: PhysicalParams,
    cfg: SolverConfig,
}

impl GapFunction {
    pub fn new(u: f64, p: &PhysicalParams, cfg: &SolverConfig) -> Result<GapFunction> {
        let delta_zero = delta_zero(u, p)?;
        let tau = tau(u, p, cfg)?;
        Ok(GapFunction {
            coupling: u,
            tau,
            delta_zero,
            params: *p,
            cfg: *cfg,
        })
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    /// `U ∫ ... dξ − 1` at (Y, T).
    pub fn residual(&self, y: f64, t: f64) -> Result<f64> {
        Ok(self.coupling * gap_integral(y, t, &self.params, &self.cfg)? - 1.0)
    }

    /// Δ(T); exactly zero for T ≥ τ.
    pub fn at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(GapError::domain(format!(
                "temperature must be >= 0, got {t}"
            )));
        }
        if t >= self.tau || self.delta_zero == 0.0 {
            return Ok(0.0);
        }
        if self.residual(0.0, t)? <= 0.0 {
            // Within root_tol of tau.
            return Ok(0.0);
        }
        let hi = (1.1 * self.delta_zero).powi(2);
        if self.residual(hi, t)? > 0.0 {
            return Err(GapError::Bracket(format!(
                "gap bracket [0, {hi:e}] does not contain the root at T = {t:e} (U = {})",
                self.coupling
            )));
        }
        let (lo, hi) = bisect_decreasing(0.0, hi, self.cfg.root_tol, |y| self.residual(y, t))?;
        Ok((0.5 * (lo + hi)).sqrt())
    }

    /// Δ⁻¹(δ): the temperature at which the gap equals `delta`.
    pub fn inverse(&self, delta: f64) -> Result<f64> {
        let slack = 1e-12 * self.delta_zero.max(f64::MIN_POSITIVE);
        if !(delta >= 0.0 && delta <= self.delta_zero + slack) {
            return Err(GapError::domain(format!(
                "inverse gap defined on [0, {}], got {delta}",
                self.delta_zero
            )));
        }
        if delta == 0.0 {
            return Ok(self.tau);
        }
        if delta >= self.delta_zero {
            return Ok(0.0);
        }
        let y = delta * delta;
        // At fixed Y the residual decreases in T: positive at 0 (delta < Δ(0)),
        // negative at tau (Y > 0).
        let (lo, hi) =
            bisect_decreasing(0.0, self.tau, self.cfg.root_tol, |t| self.residual(y, t))?;
        Ok(0.5 * (lo + hi))
    }

    /// Samples Δ on a sorted, nonnegative temperature grid.
    pub fn curve(&self, t_grid: &[f64]) -> Result<GapCurve> {
        if t_grid.iter().any(|&t| !(t >= 0.0)) {
            return Err(GapError::domain("temperature grid must be nonnegative"));
        }
        if t_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(GapError::domain("temperature grid must be sorted"));
        }
        let samples = t_grid
            .iter()
            .map(|&t| {
                Ok(GapSample {
                    t,
                    delta: self.at(t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GapCurve {
            coupling: self.coupling,
            tau: self.tau,
            delta_zero: self.delta_zero,
            samples,
        })
    }

    /// Finite-difference Δ′(T) and Δ″(T) with step `h`. Central stencils in
    /// the interior, first-order forward stencils when `T < h`.
    pub fn derivatives(&self, t: f64, h: f64) -> Result<(f64, f64)> {
        if !(h > 0.0 && t >= 0.0) {
            return Err(GapError::domain("derivative step must be > 0 and T >= 0"));
        }
        if t < h {
            if t + 2.0 * h >= self.tau {
                return Err(GapError::domain("forward stencil leaves [0, tau)"));
            }
            let f0 = self.at(t)?;
            let f1 = self.at(t + h)?;
            let f2 = self.at(t + 2.0 * h)?;
            Ok(((f1 - f0) / h, (f2 - 2.0 * f1 + f0) / (h * h)))
        } else {
            if t + h >= self.tau {
                return Err(GapError::domain("central stencil leaves [0, tau)"));
            }
            let fm = self.at(t - h)?;
            let f0 = self.at(t)?;
            let fp = self.at(t + h)?;
            Ok(((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)))
        }
    }
}

/// One (T, Δ) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    #[serde(rename = "T")]
    pub t: f64,
    pub delta: f64,
}

/// T ↦ Δ(T) sampled for one coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    pub coupling: f64,
    pub tau: f64,
    pub delta_zero: f64,
    pub samples: Vec<GapSample>,
}

impl GapCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["T", "delta"])?;
        for s in &self.samples {
            out.write_record([fmt_f64(s.t), fmt_f64(s.delta)])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rescales energies and temperatures by `scale`.
    pub fn scaled(&self, scale: f64) -> GapCurve {
        GapCurve {
            coupling: self.coupling,
            tau: self.tau * scale,
            delta_zero: self.delta_zero * scale,
            samples: self
                .samples
                .iter()
                .map(|s| GapSample {
                    t: s.t * scale,
                    delta: s.delta * scale,
                })
                .collect(),
        }
    }
}

/// Shortest round-trip representation, so CSV output is reproducible bit for bit.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Δ(T) for coupling `u`.
pub fn solve_gap_at(u: f64, t: f64, p: &PhysicalParams, cfg: &SolverConfig) -> Result<f64> {
    GapFunction::new(u, p, cfg)?.at(t)
}

pub fn gap_curve(
    u: f64,
    t_grid: &[f64],
    p: &PhysicalParams,
    cfg: &SolverConfig,
) -> Result<GapCurve> {
    GapFunction::new(u, p, cfg)?.curve(t_grid)
}

pub fn inverse_gap(u: f64, delta: f64, p: &PhysicalParams, cfg: &SolverConfig) -> Result<f64> {
    GapFunction::new(u, p, cfg)?.inverse(delta)
}

pub fn gap_derivatives(
    u: f64,
    t: f64,
    h: f64,
    p: &PhysicalParams,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    GapFunction::new(u, p, cfg)?.derivatives(t, h)
}

/// `|U ∫ tanh(ξ/2τ)/ξ dξ − 1|`, the defining residual of τ.
pub fn tau_residual(u: f64, tau: f64, p: &PhysicalParams, cfg: &SolverConfig) -> Result<f64> {
    let rule = start_rule(p)?;
    Ok((u * integrate(0.0, tau, |_| 1.0, &rule, cfg)?.value - 1.0).abs())
}
