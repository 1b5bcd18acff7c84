//! Nyström discretization of the full gap equation and its fixed-point
//! solution.
//!
//! The unknown u(T, ·) lives on the quadrature nodes, so applying the
//! integral operator
//!
//! ```text
//! (A u)(x_i) = Σ_j w_j U(x_i, ξ_j) u_j tanh(√(ξ_j²+u_j²)/2T) / √(ξ_j²+u_j²)
//! ```
//!
//! needs no interpolation. Every solve starts inside the band
//! `Δ₁(T) ≤ u ≤ Δ₂(T)` built from the kernel's declared bounds and iterates
//! damped Picard steps. When the observed contraction rate is poor (close
//! to T_c the linearized operator has spectral radius near 1) the iteration
//! hands over to Newton steps on `A u − u`, kept inside the band.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::kernel::Kernel;
use crate::params::{PhysicalParams, SolverConfig};
use crate::quadrature::{tanh_clamped, QuadratureRule};
use crate::simple_gap::{fmt_f64, GapFunction};

/// Panels in the default Nyström rule (16 Gauss–Legendre nodes each).
pub const DEFAULT_PANELS: usize = 8;

/// Picard steps whose residual ratio exceeds this count as slow.
const SLOW_RATE: f64 = 0.8;
/// Consecutive non-decreasing residuals before damping drops to 0.5.
const STALL_LIMIT: usize = 10;
const NEWTON_MAX: usize = 60;

/// Starting point of the fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// u ≡ Δ₂(T).
    Upper,
    /// u ≡ Δ₁(T).
    Lower,
    /// Node values, clamped into the band before use.
    Custom(Vec<f64>),
}

/// `s tanh(√(ξ²+s²)/2T) / √(ξ²+s²)` and its derivative in s.
#[inline]
fn phi(s: f64, xi: f64, t: f64) -> (f64, f64) {
    let e = (xi * xi + s * s).sqrt();
    if t == 0.0 {
        return (s / e, xi * xi / (e * e * e));
    }
    let z = e / (2.0 * t);
    let th = tanh_clamped(z);
    let sech2 = if z > 20.0 { 0.0 } else { 1.0 - th * th };
    let value = s * th / e;
    // d/ds [s g(E)] with g(E) = tanh(E/2T)/E and dE/ds = s/E.
    let dg = sech2 / (2.0 * t * e) - th / (e * e);
    (value, th / e + s * s / e * dg)
}

/// The discrete operator: node set plus `w_j U(x_i, ξ_j)`.
#[derive(Debug, Clone)]
pub struct NystromOperator {
    rule: QuadratureRule,
    weighted: Vec<f64>,
}

impl NystromOperator {
    pub fn new(kernel: &Kernel, rule: QuadratureRule) -> NystromOperator {
        let n = rule.len();
        let mut weighted = kernel.matrix(&rule.abscissas);
        for row in weighted.chunks_mut(n) {
            for (k, w) in row.iter_mut().zip(&rule.weights) {
                *k *= w;
            }
        }
        NystromOperator { rule, weighted }
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }

    fn phis(&self, u: &[f64], t: f64) -> Vec<f64> {
        u.iter()
            .zip(&self.rule.abscissas)
            .map(|(&s, &xi)| phi(s, xi, t).0)
            .collect()
    }

    /// A u at the nodes.
    pub fn apply(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.len();
        if u.len() != n {
            return Err(GapError::domain(format!(
                "operator expects {n} node values, got {}",
                u.len()
            )));
        }
        let f = self.phis(u, t);
        Ok(self
            .weighted
            .chunks(n)
            .map(|row| row.iter().zip(&f).map(|(k, v)| k * v).sum())
            .collect())
    }

    /// Jacobian `∂(A u)_i / ∂u_j`.
    pub fn jacobian(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        let n = self.len();
        let d: Vec<f64> = u
            .iter()
            .zip(&self.rule.abscissas)
            .map(|(&s, &xi)| phi(s, xi, t).1)
            .collect();
        DMatrix::from_fn(n, n, |i, j| self.weighted[i * n + j] * d[j])
    }

    /// Nyström interpolant `Σ_j w_j U(x, ξ_j) φ(u_j)` at an arbitrary x.
    pub fn evaluate_at(&self, kernel: &Kernel, u: &[f64], t: f64, x: f64) -> Result<f64> {
        let mut s = 0.0;
        for ((&xi, &w), &uj) in self.rule.abscissas.iter().zip(&self.rule.weights).zip(u) {
            s += w * kernel.eval(x, xi)? * phi(uj, xi, t).0;
        }
        Ok(s)
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Envelope gaps (Δ₁(T), Δ₂(T)) from the kernel's declared bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub delta1: f64,
    pub delta2: f64,
}

/// Solution u₀(T, ·) at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSlice {
    pub temperature: f64,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// sup |A u − u| at the returned values.
    pub residual: f64,
    pub iterations: usize,
    pub envelope: Envelope,
    /// Number of Newton steps among `iterations`.
    pub newton_steps: usize,
    /// Picard mixing factor in effect at the end.
    pub damping: f64,
}

impl GapSlice {
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Monotone piecewise-cubic (Fritsch–Carlson) interpolation of the node
    /// values; constant beyond the outermost nodes. Post-processing only;
    /// [`NystromOperator::evaluate_at`] is the consistent off-node value.
    pub fn interpolate(&self, x: f64) -> f64 {
        pchip(&self.nodes, &self.values, x)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "u"])?;
        for (x, u) in self.nodes.iter().zip(&self.values) {
            out.write_record([fmt_f64(*x), fmt_f64(*u)])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Energies and temperature multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> GapSlice {
        GapSlice {
            temperature: self.temperature * scale,
            nodes: self.nodes.iter().map(|v| v * scale).collect(),
            values: self.values.iter().map(|v| v * scale).collect(),
            residual: self.residual * scale,
            iterations: self.iterations,
            envelope: Envelope {
                delta1: self.envelope.delta1 * scale,
                delta2: self.envelope.delta2 * scale,
            },
            newton_steps: self.newton_steps,
            damping: self.damping,
        }
    }
}

fn pchip(x: &[f64], y: &[f64], q: f64) -> f64 {
    let n = x.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 || q <= x[0] {
        return y[0];
    }
    if q >= x[n - 1] {
        return y[n - 1];
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let slope = |k: usize| -> f64 {
        if k == 0 {
            return end_slope(h[0], h.get(1).copied(), delta[0], delta.get(1).copied());
        }
        if k == n - 1 {
            return end_slope(
                h[n - 2],
                if n > 2 { Some(h[n - 3]) } else { None },
                delta[n - 2],
                if n > 2 { Some(delta[n - 3]) } else { None },
            );
        }
        let (d0, d1) = (delta[k - 1], delta[k]);
        if d0 * d1 <= 0.0 {
            0.0
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            (w1 + w2) / (w1 / d0 + w2 / d1)
        }
    };
    let k = x.partition_point(|&v| v <= q) - 1;
    let t = (q - x[k]) / h[k];
    let (m0, m1) = (slope(k), slope(k + 1));
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y[k]
        + (t3 - 2.0 * t2 + t) * h[k] * m0
        + (-2.0 * t3 + 3.0 * t2) * y[k + 1]
        + (t3 - t2) * h[k] * m1
}

fn end_slope(h0: f64, h1: Option<f64>, d0: f64, d1: Option<f64>) -> f64 {
    let (Some(h1), Some(d1)) = (h1, d1) else {
        return d0;
    };
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// Gap solution on a (T, x) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSurface {
    pub t_grid: Vec<f64>,
    pub slices: Vec<GapSlice>,
    /// sup change at the coarse nodes when the node count is doubled,
    /// relative to ħω_D, over three probe temperatures.
    pub refinement_delta: f64,
    /// (temperature index, node index) pairs where u increased with T by
    /// more than 10·fp_tol. Reported, not enforced.
    pub monotonicity_violations: Vec<(usize, usize)>,
}

impl GapSurface {
    /// Long-form CSV with columns T, x, u.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["T", "x", "u"])?;
        for s in &self.slices {
            for (x, u) in s.nodes.iter().zip(&s.values) {
                out.write_record([fmt_f64(s.temperature), fmt_f64(*x), fmt_f64(*u)])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Largest sup-norm jump between neighbouring slices.
    pub fn max_adjacent_jump(&self) -> f64 {
        self.slices
            .windows(2)
            .map(|w| sup_diff(&w[0].values, &w[1].values))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, scale: f64) -> GapSurface {
        GapSurface {
            t_grid: self.t_grid.iter().map(|t| t * scale).collect(),
            slices: self.slices.iter().map(|s| s.scaled(scale)).collect(),
            refinement_delta: self.refinement_delta,
            monotonicity_violations: self.monotonicity_violations.clone(),
        }
    }
}

/// Fixed-point solver for one kernel and parameter set.
#[derive(Debug, Clone)]
pub struct BcsSolver {
    kernel: Kernel,
    params: PhysicalParams,
    cfg: SolverConfig,
    op: NystromOperator,
    lower: GapFunction,
    upper: GapFunction,
}

struct State {
    u: Vec<f64>,
    au: Vec<f64>,
    r: f64,
}

impl BcsSolver {
    pub fn new(kernel: &Kernel, p: &PhysicalParams, cfg: &SolverConfig) -> Result<BcsSolver> {
        let rule = QuadratureRule::composite(kernel.lower, kernel.upper, DEFAULT_PANELS)?;
        BcsSolver::with_rule(kernel, p, cfg, rule)
    }

    pub fn with_rule(
        kernel: &Kernel,
        p: &PhysicalParams,
        cfg: &SolverConfig,
        rule: QuadratureRule,
    ) -> Result<BcsSolver> {
        cfg.validate()?;
        kernel.check_condition(p)?;
        let (lo, hi) = kernel.declared_bounds;
        let lower = GapFunction::new(lo, p, cfg)?;
        let upper = if hi == lo {
            lower
        } else {
            GapFunction::new(hi, p, cfg)?
        };
        Ok(BcsSolver {
            kernel: kernel.clone(),
            params: *p,
            cfg: *cfg,
            op: NystromOperator::new(kernel, rule),
            lower,
            upper,
        })
    }

    /// Same problem on a rule with twice as many panels.
    pub fn refined(&self) -> BcsSolver {
        BcsSolver {
            op: NystromOperator::new(&self.kernel, self.op.rule.doubled()),
            ..self.clone()
        }
    }

    pub fn operator(&self) -> &NystromOperator {
        &self.op
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Simple-gap solutions for the declared lower and upper couplings.
    pub fn envelope_functions(&self) -> (&GapFunction, &GapFunction) {
        (&self.lower, &self.upper)
    }

    pub fn envelope(&self, t: f64) -> Result<Envelope> {
        Ok(Envelope {
            delta1: self.lower.at(t)?,
            delta2: self.upper.at(t)?,
        })
    }

    /// Tolerance band around the envelope, `10·fp_tol·(ħω_D + Δ₂)`.
    pub fn margin(&self, env: &Envelope) -> f64 {
        10.0 * self.cfg.fp_tol * (self.params.debye + env.delta2)
    }

    fn state(&self, u: Vec<f64>, t: f64) -> Result<State> {
        let au = self.op.apply(&u, t)?;
        let r = sup_diff(&au, &u);
        Ok(State { u, au, r })
    }

    /// Newton iteration on `A u − u = 0`, projected onto `[lo, hi]`.
    /// Stops once the residual is below `r_target` and the last step below
    /// `step_target`. Near T_c the residual alone says little: `I − J` is
    /// almost singular, so a tiny residual can sit far from the root.
    fn newton(
        &self,
        t: f64,
        start: State,
        (lo, hi): (f64, f64),
        r_target: f64,
        step_target: f64,
    ) -> Result<(State, usize)> {
        let n = self.op.len();
        let mut cur = start;
        let mut steps = 0;
        let mut last_step = f64::INFINITY;
        while steps < NEWTON_MAX && !(cur.r < r_target && last_step < step_target) {
            let j = self.op.jacobian(&cur.u, t);
            let lhs = DMatrix::<f64>::identity(n, n) - j;
            let rhs = DVector::from_iterator(n, cur.au.iter().zip(&cur.u).map(|(a, u)| a - u));
            let Some(delta) = lhs.lu().solve(&rhs) else {
                break;
            };
            let mut lambda = 1.0;
            let mut accepted = None;
            last_step = lambda * delta.amax();
            for _ in 0..12 {
                let trial: Vec<f64> = cur
                    .u
                    .iter()
                    .zip(delta.iter())
                    .map(|(u, d)| (u + lambda * d).clamp(lo, hi))
                    .collect();
                let next = self.state(trial, t)?;
                if next.r < cur.r {
                    accepted = Some(next);
                    break;
                }
                lambda *= 0.5;
                last_step *= 0.5;
            }
            steps += 1;
            match accepted {
                Some(next) => cur = next,
                None => break,
            }
        }
        Ok((cur, steps))
    }

    /// Solves u = A u at temperature `t`.
    pub fn solve(&self, t: f64, init: &Init) -> Result<GapSlice> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(GapError::domain(format!(
                "temperature must be >= 0, got {t}"
            )));
        }
        let env = self.envelope(t)?;
        let n = self.op.len();
        let nodes = self.op.rule.abscissas.clone();
        if env.delta2 == 0.0 {
            // The band is {0}: the normal state.
            return Ok(GapSlice {
                temperature: t,
                nodes,
                values: vec![0.0; n],
                residual: 0.0,
                iterations: 0,
                envelope: env,
                newton_steps: 0,
                damping: self.cfg.damping,
            });
        }
        let margin = self.margin(&env);
        let band = ((env.delta1 - margin).max(0.0), env.delta2 + margin);
        let start = match init {
            Init::Upper => vec![env.delta2; n],
            Init::Lower => vec![env.delta1; n],
            Init::Custom(v) => {
                if v.len() != n {
                    return Err(GapError::domain(format!(
                        "initial guess has {} values, rule has {n} nodes",
                        v.len()
                    )));
                }
                v.iter().map(|x| x.clamp(env.delta1, env.delta2)).collect()
            }
        };
        let tol = self.cfg.fp_tol * self.params.debye;
        let mut cur = self.state(start, t)?;
        let mut history = vec![cur.r];
        let mut damping = self.cfg.damping;
        let mut stall = 0;
        let mut iterations = 0;
        let mut newton_steps = 0;
        let mut newton_allowed = true;

        while cur.r >= tol {
            if iterations >= self.cfg.fp_max_iter {
                return Err(GapError::NonConvergence {
                    temperature: t,
                    iterations,
                    residual: cur.r,
                    history,
                });
            }
            let slow = history.len() >= 4 && {
                let k = history.len();
                history[k - 1] > SLOW_RATE * history[k - 2]
            };
            if newton_allowed && slow {
                let before = cur.r;
                let (next, steps) = self.newton(t, cur, band, tol, f64::INFINITY)?;
                cur = next;
                iterations += steps;
                newton_steps += steps;
                history.push(cur.r);
                if cur.r >= tol && cur.r > 0.5 * before {
                    newton_allowed = false;
                }
                continue;
            }
            let mixed: Vec<f64> = cur
                .u
                .iter()
                .zip(&cur.au)
                .map(|(u, a)| u + damping * (a - u))
                .collect();
            let next = self.state(mixed, t)?;
            iterations += 1;
            if next.r >= cur.r {
                stall += 1;
                if stall >= STALL_LIMIT && damping > 0.5 {
                    damping = 0.5;
                    stall = 0;
                }
            } else {
                stall = 0;
            }
            cur = next;
            history.push(cur.r);
        }

        // A converged Picard iterate can still sit r/(1−q) away from the
        // fixed point; Newton steps remove that.
        let (polished, steps) = self.newton(t, cur, band, tol, tol)?;
        cur = polished;
        iterations += steps;
        newton_steps += steps;

        for &v in &cur.u {
            if v < env.delta1 - margin || v > env.delta2 + margin {
                return Err(GapError::Envelope {
                    temperature: t,
                    value: v,
                    lower: env.delta1,
                    upper: env.delta2,
                });
            }
        }
        Ok(GapSlice {
            temperature: t,
            nodes,
            values: cur.u,
            residual: cur.r,
            iterations,
            envelope: env,
            newton_steps,
            damping,
        })
    }

    /// Largest node value counts as superconducting above this.
    fn gap_threshold(&self) -> f64 {
        self.cfg.gap_zero_threshold * self.params.debye
    }

    fn superconducting(&self, t: f64) -> Result<bool> {
        Ok(self.solve(t, &Init::Upper)?.max_value() > self.gap_threshold())
    }

    /// T_c by bisection on [τ₁, τ₂] of "max u₀(T) exceeds the zero threshold".
    pub fn transition_temperature(&self) -> Result<f64> {
        let (mut lo, mut hi) = (self.lower.tau, self.upper.tau);
        if hi <= lo {
            return Ok(0.5 * (lo + hi));
        }
        let nudge = 1e-6 * hi;
        if self.superconducting(hi)? {
            return Err(GapError::Bracket(format!(
                "gap still open at tau2 = {hi:e}; kernel bounds inconsistent"
            )));
        }
        if !self.superconducting(lo)? {
            if self.superconducting((lo - nudge).max(0.0))? {
                return Ok(lo);
            }
            return Err(GapError::Bracket(format!(
                "gap already closed below tau1 = {lo:e}; kernel bounds inconsistent"
            )));
        }
        let width = self.cfg.root_tol * self.upper.tau;
        while hi - lo > width {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.superconducting(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Sup difference at this solver's nodes between a slice from this
    /// solver and the Nyström interpolant of a slice from another solver.
    pub fn compare_with(
        &self,
        coarse: &GapSlice,
        other: &BcsSolver,
        fine: &GapSlice,
    ) -> Result<f64> {
        let mut d: f64 = 0.0;
        for (&x, &u) in coarse.nodes.iter().zip(&coarse.values) {
            let v = other
                .op
                .evaluate_at(&self.kernel, &fine.values, fine.temperature, x)?;
            d = d.max((u - v).abs());
        }
        Ok(d)
    }

    /// Solves a temperature sweep, warm-starting each slice from the last.
    pub fn surface(&self, t_grid: &[f64]) -> Result<GapSurface> {
        if t_grid.is_empty() {
            return Err(GapError::domain("temperature grid is empty"));
        }
        if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid[0] < 0.0 {
            return Err(GapError::domain(
                "temperature grid must be sorted and nonnegative",
            ));
        }
        let t_max = self.upper.tau * (1.0 + 1e-12);
        if let Some(&t) = t_grid.iter().find(|&&t| t > t_max) {
            return Err(GapError::domain(format!(
                "temperature {t} above tau2 = {}",
                self.upper.tau
            )));
        }
        let mut slices: Vec<GapSlice> = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let init = match slices.last() {
                Some(prev) => Init::Custom(prev.values.clone()),
                None => Init::Upper,
            };
            let slice = self.solve(t, &init)?;
            slices.push(slice);
        }

        let mut probes = vec![0, t_grid.len() / 2, t_grid.len() - 1];
        probes.dedup();
        let fine = self.refined();
        let mut refinement: f64 = 0.0;
        for &k in &probes {
            let fs = fine.solve(t_grid[k], &Init::Upper)?;
            refinement = refinement.max(self.compare_with(&slices[k], &fine, &fs)?);
        }

        let slack = 10.0 * self.cfg.fp_tol * self.params.debye;
        let mut violations = Vec::new();
        for (k, w) in slices.windows(2).enumerate() {
            for (i, (a, b)) in w[0].values.iter().zip(&w[1].values).enumerate() {
                if b > &(a + slack) {
                    violations.push((k + 1, i));
                }
            }
        }

        Ok(GapSurface {
            t_grid: t_grid.to_vec(),
            slices,
            refinement_delta: refinement / self.params.debye,
            monotonicity_violations: violations,
        })
    }
}

/// A u for a node-value vector on `rule`.
pub fn apply_operator(
    u: &[f64],
    t: f64,
    kernel: &Kernel,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    if u.iter().any(|&v| v < 0.0) {
        return Err(GapError::domain("node values must be nonnegative"));
    }
    NystromOperator::new(kernel, rule.clone()).apply(u, t)
}

pub fn solve_fixed_point(
    t: f64,
    kernel: &Kernel,
    p: &PhysicalParams,
    cfg: &SolverConfig,
    init: &Init,
) -> Result<GapSlice> {
    BcsSolver::new(kernel, p, cfg)?.solve(t, init)
}

pub fn transition_temperature(
    kernel: &Kernel,
    p: &PhysicalParams,
    cfg: &SolverConfig,
) -> Result<f64> {
    BcsSolver::new(kernel, p, cfg)?.transition_temperature()
}

pub fn gap_surface(
    kernel: &Kernel,
    t_grid: &[f64],
    p: &PhysicalParams,
    cfg: &SolverConfig,
) -> Result<GapSurface> {
    BcsSolver::new(kernel, p, cfg)?.surface(t_grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> PhysicalParams {
        PhysicalParams::new(1e-3, 1.0, 0.2, 0.25, 0.3)
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn phi_derivative_matches_finite_difference() {
        for &t in &[0.0, 0.01, 0.1, 1.0] {
            for &(s, xi) in &[(0.05, 0.01), (0.3, 0.5), (1e-4, 0.2)] {
                let h = 1e-6 * s;
                let fd = (phi(s + h, xi, t).0 - phi(s - h, xi, t).0) / (2.0 * h);
                let an = phi(s, xi, t).1;
                assert!(
                    (fd - an).abs() < 1e-6 * an.abs().max(1e-3),
                    "{t} {s} {xi}: {fd} {an}"
                );
            }
        }
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let k = Kernel::constant(0.3, &p()).unwrap();
        let rule = QuadratureRule::for_params(&p(), 4).unwrap();
        let au = apply_operator(&vec![0.0; rule.len()], 0.01, &k, &rule).unwrap();
        assert!(au.iter().all(|&v| v == 0.0));
        assert!(apply_operator(&[0.0; 3], 0.01, &k, &rule).is_err());
    }

    #[test]
    fn constant_gap_is_reproduced() {
        let p = p();
        let k = Kernel::constant(0.3, &p).unwrap();
        let g = GapFunction::new(0.3, &p, &cfg()).unwrap();
        let rule = QuadratureRule::for_params(&p, DEFAULT_PANELS).unwrap();
        for &f in &[0.0, 0.5, 0.9] {
            let t = f * g.tau;
            let d = g.at(t).unwrap();
            let au = apply_operator(&vec![d; rule.len()], t, &k, &rule).unwrap();
            assert!(au.iter().all(|&v| (v - d).abs() < 1e-12), "T = {t}");
        }
    }

    #[test]
    fn operator_maps_band_into_band() {
        let p = p();
        let k = Kernel::separable(0.25, 0.05, Shape::Ramp, &p).unwrap();
        let s = BcsSolver::new(&k, &p, &cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &t in &[0.0, 0.01, 0.03] {
            let env = s.envelope(t).unwrap();
            let m = s.margin(&env);
            for _ in 0..20 {
                let u: Vec<f64> = (0..s.operator().len())
                    .map(|_| rng.random_range(env.delta1..=env.delta2))
                    .collect();
                let au = s.operator().apply(&u, t).unwrap();
                assert!(au
                    .iter()
                    .all(|&v| v >= env.delta1 - m && v <= env.delta2 + m));
            }
        }
    }

    #[test]
    fn constant_kernel_reduces_to_simple_gap() {
        let p = p();
        let k = Kernel::constant(0.3, &p).unwrap();
        let s = BcsSolver::new(&k, &p, &cfg()).unwrap();
        let g = GapFunction::new(0.3, &p, &cfg()).unwrap();
        for &f in &[0.0, 0.3, 0.8, 0.99] {
            let t = f * g.tau;
            let sl = s.solve(t, &Init::Upper).unwrap();
            let d = g.at(t).unwrap();
            assert!(sl
                .values
                .iter()
                .all(|&v| (v - d).abs() < 10.0 * cfg().fp_tol));
        }
    }

    #[test]
    fn loose_bounds_constant_kernel_converges_from_both_sides() {
        let p = p();
        let k = Kernel::constant(0.27, &p)
            .unwrap()
            .with_declared_bounds(0.25, 0.3)
            .unwrap();
        let s = BcsSolver::new(&k, &p, &cfg()).unwrap();
        let g = GapFunction::new(0.27, &p, &cfg()).unwrap();
        for &f in &[0.0, 0.5, 0.9, 0.999] {
            let t = f * g.tau;
            let d = g.at(t).unwrap();
            let hi = s.solve(t, &Init::Upper).unwrap();
            assert!(
                hi.values.iter().all(|&v| (v - d).abs() < 1e-9),
                "T = {t} {} {d}",
                hi.values[0]
            );
            if t < s.envelope_functions().0.tau {
                let lo = s.solve(t, &Init::Lower).unwrap();
                assert!(sup_diff(&lo.values, &hi.values) < 10.0 * cfg().fp_tol);
            }
        }
        let tc = s.transition_temperature().unwrap();
        assert!(
            (tc - g.tau).abs() < 10.0 * cfg().root_tol * g.tau,
            "{tc} vs {}",
            g.tau
        );
    }

    #[test]
    fn normal_state_at_tau2() {
        let p = p();
        let k = Kernel::separable(0.25, 0.05, Shape::Ramp, &p).unwrap();
        let s = BcsSolver::new(&k, &p, &cfg()).unwrap();
        let tau2 = s.envelope_functions().1.tau;
        let sl = s.solve(tau2, &Init::Upper).unwrap();
        assert!(sl.max_value() <= cfg().gap_zero_threshold);
    }

    #[test]
    fn separable_uniqueness_at_zero_temperature() {
        let p = p();
        let k = Kernel::separable(0.25, 0.05, Shape::Ramp, &p).unwrap();
        let s = BcsSolver::new(&k, &p, &cfg()).unwrap();
        let a = s.solve(0.0, &Init::Upper).unwrap();
        let b = s.solve(0.0, &Init::Lower).unwrap();
        assert!(sup_diff(&a.values, &b.values) < 10.0 * cfg().fp_tol);
        assert!(a.residual <= cfg().fp_tol);
        // values rise with the ramp
        assert!(a.values.first() < a.values.last());
    }

    #[test]
    fn pchip_is_monotone_and_interpolating() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.0, 0.1, 0.9, 1.0, 1.0];
        for k in 0..5 {
            assert_eq!(pchip(&x, &y, x[k]), y[k]);
        }
        let mut prev = -1.0;
        for k in 0..=400 {
            let v = pchip(&x, &y, 4.0 * k as f64 / 400.0);
            assert!(v >= prev - 1e-15 && v <= 1.0 + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn surface_warm_start_and_refinement() {
        let p = p();
        let k = Kernel::separable(0.25, 0.05, Shape::Ramp, &p).unwrap();
        let s = BcsSolver::new(&k, &p, &cfg()).unwrap();
        let tau1 = s.envelope_functions().0.tau;
        let grid: Vec<f64> = (0..6).map(|i| tau1 * i as f64 / 6.0).collect();
        let surf = s.surface(&grid).unwrap();
        assert_eq!(surf.slices.len(), 6);
        assert!(
            surf.refinement_delta
                < 100.0 * cfg().quad_rel_tol * s.envelope_functions().1.delta_zero
        );
        assert!(surf.monotonicity_violations.is_empty());
        let single = s.surface(&[0.0]).unwrap();
        let direct = s.solve(0.0, &Init::Upper).unwrap();
        assert!(sup_diff(&single.slices[0].values, &direct.values) < 10.0 * cfg().fp_tol);
        assert!(s.surface(&[0.1, 0.0]).is_err());
        assert!(s.surface(&[10.0]).is_err());
    }

    #[test]
    fn nonconvergence_carries_history() {
        let p = p();
        let k = Kernel::separable(0.25, 0.05, Shape::Ramp, &p).unwrap();
        let c = SolverConfig {
            fp_max_iter: 1,
            ..cfg()
        };
        let s = BcsSolver::new(&k, &p, &c).unwrap();
        match s.solve(0.0, &Init::Upper) {
            Err(GapError::NonConvergence { history, .. }) => assert!(!history.is_empty()),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
