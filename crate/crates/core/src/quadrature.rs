//! Composite Gauss–Legendre quadrature for the gap integrals
//! `∫_ε^D w(ξ) tanh(√(ξ²+Y)/2T) / √(ξ²+Y) dξ`.
//!
//! Panels are geometric in ξ (uniform in ln ξ) so that the `1/ξ` behaviour
//! near the cutoff is resolved with the same relative accuracy as the rest
//! of the interval. Within a panel the map is affine, so weights sum to
//! `D − ε` exactly up to rounding.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::params::{PhysicalParams, SolverConfig};

/// Gauss–Legendre order used on every panel.
pub const NODES_PER_PANEL: usize = 16;
/// Panel count of the first pass in [`integrate`].
pub const START_PANELS: usize = 4;
/// Panel doublings allowed before [`integrate`] gives up.
pub const MAX_DOUBLINGS: usize = 12;

/// tanh(x) is returned as exactly 1 above this argument.
const TANH_CLAMP: f64 = 20.0;

/// Gauss–Legendre nodes and weights on [-1, 1], ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th largest root.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn base_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(NODES_PER_PANEL))
}

/// Geometric panel breakpoints between `lo` and `hi`.
fn breakpoints(lo: f64, hi: f64, panels: usize) -> impl Iterator<Item = (f64, f64)> {
    let ratio = (hi / lo).ln() / panels as f64;
    (0..panels).map(move |k| {
        let a = if k == 0 {
            lo
        } else {
            lo * (ratio * k as f64).exp()
        };
        let b = if k + 1 == panels {
            hi
        } else {
            lo * (ratio * (k + 1) as f64).exp()
        };
        (a, b)
    })
}

/// A materialized composite rule on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub lower: f64,
    pub upper: f64,
    pub panel_count: usize,
    pub nodes_per_panel: usize,
    pub abscissas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn composite(lower: f64, upper: f64, panel_count: usize) -> Result<QuadratureRule> {
        if !(lower > 0.0 && upper > lower) {
            return Err(GapError::domain(format!(
                "quadrature interval must satisfy 0 < lower < upper, got [{lower}, {upper}]"
            )));
        }
        if panel_count == 0 {
            return Err(GapError::domain("panel_count must be >= 1"));
        }
        let (gx, gw) = base_rule();
        let mut abscissas = Vec::with_capacity(panel_count * NODES_PER_PANEL);
        let mut weights = Vec::with_capacity(panel_count * NODES_PER_PANEL);
        for (a, b) in breakpoints(lower, upper, panel_count) {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in gx.iter().zip(gw) {
                abscissas.push(mid + half * x);
                weights.push(half * w);
            }
        }
        Ok(QuadratureRule {
            lower,
            upper,
            panel_count,
            nodes_per_panel: NODES_PER_PANEL,
            abscissas,
            weights,
        })
    }

    /// Rule on `[ε, ħω_D]` of `p`.
    pub fn for_params(p: &PhysicalParams, panel_count: usize) -> Result<QuadratureRule> {
        QuadratureRule::composite(p.epsilon, p.debye, panel_count)
    }

    /// Same interval with twice as many panels.
    pub fn doubled(&self) -> QuadratureRule {
        QuadratureRule::composite(self.lower, self.upper, 2 * self.panel_count)
            .expect("interval already validated")
    }

    pub fn len(&self) -> usize {
        self.abscissas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissas.is_empty()
    }

    pub fn sum<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.abscissas
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `tanh(z)`, with the large-argument tail pinned to 1.
#[inline]
pub fn tanh_clamped(z: f64) -> f64 {
    if z > TANH_CLAMP {
        1.0
    } else {
        z.tanh()
    }
}

/// `tanh(√(ξ²+Y)/2T) / √(ξ²+Y)`, with the T = 0 limit `1/√(ξ²+Y)`.
pub fn gap_integrand(xi: f64, y: f64, t: f64) -> Result<f64> {
    if !(xi >= 0.0 && y >= 0.0 && t >= 0.0) {
        return Err(GapError::domain(format!(
            "gap integrand needs xi, Y, T >= 0 (got {xi}, {y}, {t})"
        )));
    }
    if xi == 0.0 && y == 0.0 {
        return Err(GapError::domain("gap integrand is singular at xi = Y = 0"));
    }
    Ok(integrand_unchecked(xi, y, t))
}

#[inline]
pub(crate) fn integrand_unchecked(xi: f64, y: f64, t: f64) -> f64 {
    let e = (xi * xi + y).sqrt();
    if t == 0.0 {
        1.0 / e
    } else {
        tanh_clamped(e / (2.0 * t)) / e
    }
}

/// Converged integral value with the last doubling difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
    pub panels: usize,
}

fn composite_sum<F: Fn(f64) -> f64>(lo: f64, hi: f64, panels: usize, f: &F) -> f64 {
    let (gx, gw) = base_rule();
    let mut total = 0.0;
    for (a, b) in breakpoints(lo, hi, panels) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = 0.0;
        for (x, w) in gx.iter().zip(gw) {
            s += w * f(mid + half * x);
        }
        total += half * s;
    }
    total
}

/// Integrates `f` over `rule`'s interval, doubling the panel count from
/// `rule.panel_count` until successive values agree to `cfg.quad_rel_tol`.
pub fn integrate_fn<F: Fn(f64) -> f64>(
    f: F,
    rule: &QuadratureRule,
    cfg: &SolverConfig,
) -> Result<Integral> {
    let mut panels = rule.panel_count.max(1);
    let mut prev = composite_sum(rule.lower, rule.upper, panels, &f);
    let mut diff = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        panels *= 2;
        let next = composite_sum(rule.lower, rule.upper, panels, &f);
        diff = (next - prev).abs();
        if diff <= cfg.quad_rel_tol * next.abs() {
            return Ok(Integral {
                value: next,
                error_estimate: diff,
                panels,
            });
        }
        prev = next;
    }
    Err(GapError::Quadrature {
        doublings: MAX_DOUBLINGS,
        estimate: prev,
        difference: diff,
    })
}

/// `∫ w(ξ) tanh(√(ξ²+Y)/2T)/√(ξ²+Y) dξ` over `rule`'s interval.
pub fn integrate<W: Fn(f64) -> f64>(
    y: f64,
    t: f64,
    weight: W,
    rule: &QuadratureRule,
    cfg: &SolverConfig,
) -> Result<Integral> {
    if !(y >= 0.0 && t >= 0.0) {
        return Err(GapError::domain(format!(
            "integrate needs Y >= 0 and T >= 0, got Y = {y}, T = {t}"
        )));
    }
    integrate_fn(|xi| weight(xi) * integrand_unchecked(xi, y, t), rule, cfg)
}

/// Starting rule used by the scalar gap solvers.
pub(crate) fn start_rule(p: &PhysicalParams) -> Result<QuadratureRule> {
    QuadratureRule::for_params(p, START_PANELS)
}

/// Unit-weight gap integral on `[ε, ħω_D]`, the right side of the simple
/// gap equation divided by the coupling.
pub fn gap_integral(y: f64, t: f64, p: &PhysicalParams, cfg: &SolverConfig) -> Result<f64> {
    let rule = start_rule(p)?;
    Ok(integrate(y, t, |_| 1.0, &rule, cfg)?.value)
}

/// Closed form of the T = 0 unit-weight integral:
/// `asinh(D/√Y) − asinh(ε/√Y)`.
pub fn t0_integral_closed_form(y: f64, eps: f64, debye: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(GapError::domain(
            "closed form needs Y > 0; use ln(debye/eps) at Y = 0",
        ));
    }
    let s = y.sqrt();
    Ok((debye / s).asinh() - (eps / s).asinh())
}
