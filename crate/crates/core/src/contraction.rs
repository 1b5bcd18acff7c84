//! Small-temperature contraction condition and empirical contraction
//! factors of the discrete gap operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::kernel::Kernel;
use crate::params::{PhysicalParams, SolverConfig};
use crate::simple_gap::GapFunction;
use crate::solver::{BcsSolver, GapSlice, Init};

/// Fraction of τ₀ the T₁ search may reach.
const T1_CAP: f64 = 1.0 - 1e-6;
/// Smallest T₁ probed, relative to τ₀.
const T1_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition20Report {
    pub t1: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// T₁ below the temperature where Δ₀ has dropped to half its T = 0 value.
    pub constraint_ok: bool,
    pub satisfied: bool,
}

/// Simple-gap data for U₀ and U₂ needed by the condition.
#[derive(Debug, Clone, Copy)]
pub struct Condition20 {
    pub g0: GapFunction,
    pub g2: GapFunction,
    /// Temperature at which Δ₀(T) = Δ₀(0)/2.
    pub half_gap_temperature: f64,
    /// Energy unit entering the right-hand side.
    pub debye: f64,
}

impl Condition20 {
    pub fn new(p: &PhysicalParams, cfg: &SolverConfig) -> Result<Condition20> {
        crate::params::validate(p).into_result()?;
        let g0 = GapFunction::new(p.u0, p, cfg)?;
        let g2 = GapFunction::new(p.u2, p, cfg)?;
        let half_gap_temperature = g0.inverse(0.5 * g0.delta_zero)?;
        Ok(Condition20 {
            g0,
            g2,
            half_gap_temperature,
            debye: p.debye,
        })
    }

    pub fn rhs(&self) -> f64 {
        0.5 * (1.0 + 4.0 * self.debye * self.debye / (self.g0.delta_zero * self.g0.delta_zero))
    }

    pub fn margin(&self, t1: f64) -> Result<Condition20Report> {
        if !(t1 > 0.0 && t1 < self.g0.tau) {
            return Err(GapError::domain(format!(
                "t1 must lie in (0, tau0 = {:e}), got {t1:e}",
                self.g0.tau
            )));
        }
        let d = self.g0.at(t1)?;
        if d <= 0.0 {
            return Err(GapError::domain(format!(
                "gap for u0 vanishes at t1 = {t1:e}"
            )));
        }
        let t_star = self.g2.inverse(d)?;
        let z = self.g0.delta_zero / (4.0 * t_star);
        let lhs = z * z.tanh();
        let rhs = self.rhs();
        let constraint_ok = t1 < self.half_gap_temperature;
        Ok(Condition20Report {
            t1,
            lhs,
            rhs,
            constraint_ok,
            satisfied: constraint_ok && lhs > rhs,
        })
    }

    /// Largest t1 for which the condition holds, to relative width root_tol.
    pub fn max_admissible_t1(&self, cfg: &SolverConfig) -> Result<f64> {
        let mut lo = T1_FLOOR * self.g0.tau;
        let floor = self.margin(lo)?;
        if !floor.satisfied {
            return Err(GapError::domain(format!(
                "no admissible t1: lhs = {:e} <= rhs = {:e} as t1 -> 0",
                floor.lhs, floor.rhs
            )));
        }
        let mut hi = T1_CAP * self.g0.tau;
        if self.margin(hi)?.satisfied {
            return Ok(hi);
        }
        while hi - lo > cfg.root_tol * lo {
            // Geometric midpoint: T₁ may be many decades below τ₀.
            let mid = if hi > 4.0 * lo {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
            if mid <= lo || mid >= hi {
                break;
            }
            if self.margin(mid)?.satisfied {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}

pub fn condition20_margin(
    t1: f64,
    p: &PhysicalParams,
    cfg: &SolverConfig,
) -> Result<Condition20Report> {
    Condition20::new(p, cfg)?.margin(t1)
}

pub fn max_admissible_t1(p: &PhysicalParams, cfg: &SolverConfig) -> Result<f64> {
    Condition20::new(p, cfg)?.max_admissible_t1(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub temperature: f64,
    pub trials: usize,
    pub max_ratio: f64,
    pub seed: u64,
    /// The envelope band was a single point, so pairs were drawn as
    /// fp_tol-sized perturbations around it.
    pub degenerate: bool,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Largest observed sup|A u − A v| / sup|u − v| over random pairs in the
/// envelope band at temperature `t`.
pub fn contraction_factor(
    solver: &BcsSolver,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    if trials == 0 {
        return Err(GapError::invalid("trials", "must be at least 1"));
    }
    let env = solver.envelope(t)?;
    let op = solver.operator();
    let n = op.len();
    let degenerate = env.delta2 - env.delta1 <= 0.0;
    let spread = solver.config().fp_tol * solver.params().debye;
    let ratios: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, k);
            let mut draw = || -> f64 {
                if degenerate {
                    (env.delta1 + spread * rng.random_range(-1.0..=1.0)).max(0.0)
                } else {
                    rng.random_range(env.delta1..=env.delta2)
                }
            };
            let u: Vec<f64> = (0..n).map(|_| draw()).collect();
            let v: Vec<f64> = (0..n).map(|_| draw()).collect();
            let den = u
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if den == 0.0 {
                return Ok(0.0);
            }
            let au = op.apply(&u, t)?;
            let av = op.apply(&v, t)?;
            let num = au
                .iter()
                .zip(&av)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(num / den)
        })
        .collect();
    let mut max_ratio: f64 = 0.0;
    for r in ratios {
        max_ratio = max_ratio.max(r?);
    }
    Ok(ContractionEstimate {
        temperature: t,
        trials,
        max_ratio,
        seed,
        degenerate,
    })
}

pub fn empirical_contraction_factor(
    kernel: &Kernel,
    t: f64,
    trials: usize,
    seed: u64,
    p: &PhysicalParams,
    cfg: &SolverConfig,
) -> Result<ContractionEstimate> {
    contraction_factor(&BcsSolver::new(kernel, p, cfg)?, t, trials, seed)
}

/// Fixed points reached from the upper and lower envelopes and from
/// `starts − 2` seeded random points of the band, with their largest
/// pairwise sup distance.
pub fn multistart(
    solver: &BcsSolver,
    t: f64,
    starts: usize,
    seed: u64,
) -> Result<(Vec<GapSlice>, f64)> {
    let env = solver.envelope(t)?;
    let n = solver.operator().len();
    let inits: Vec<Init> = (0..starts.max(2))
        .map(|k| match k {
            0 => Init::Upper,
            1 => Init::Lower,
            _ => {
                let mut rng = trial_rng(seed, k);
                Init::Custom(
                    (0..n)
                        .map(|_| env.delta1 + (env.delta2 - env.delta1) * rng.random::<f64>())
                        .collect(),
                )
            }
        })
        .collect();
    let slices = inits
        .par_iter()
        .map(|init| solver.solve(t, init))
        .collect::<Result<Vec<_>>>()?;
    let mut spread: f64 = 0.0;
    for a in &slices {
        for b in &slices {
            for (x, y) in a.values.iter().zip(&b.values) {
                spread = spread.max((x - y).abs());
            }
        }
    }
    Ok((slices, spread))
}
