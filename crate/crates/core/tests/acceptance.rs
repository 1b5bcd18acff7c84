//! Acceptance suite: twelve numbered criteria, one PASS/FAIL line each.
//! Runs without the libtest harness so every line is printed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gapsolve::contraction::{contraction_factor, Condition20};
use gapsolve::kernel::{Kernel, Shape, Table};
use gapsolve::simple_gap::{delta_zero, solve_gap_at, tau, GapFunction};
use gapsolve::solver::{BcsSolver, Init};
use gapsolve::{PhysicalParams, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const COUPLINGS: [f64; 5] = [0.15, 0.2, 0.25, 0.3, 0.35];

fn cutoffs() -> Vec<f64> {
    (0..5).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect()
}

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn unit(eps: f64) -> PhysicalParams {
    // couplings unused by the single-coupling routines
    PhysicalParams::new(eps, 1.0, 0.1, 0.2, 0.3)
}

fn weak() -> PhysicalParams {
    PhysicalParams::new(1e-3, 1.0, 0.2, 0.25, 0.3)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// U ∫_ε^D tanh(ξ/2τ)/ξ dξ by composite Simpson in s = ln ξ.
fn tau_integral_oracle(u: f64, t: f64, eps: f64, debye: f64) -> f64 {
    let n = 400_000;
    let (a, b) = (eps.ln(), debye.ln());
    let h = (b - a) / n as f64;
    let f = |s: f64| (s.exp() / (2.0 * t)).tanh();
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    u * sum * h / 3.0
}

fn c1_closed_form_t0() -> Outcome {
    let mut worst: f64 = 0.0;
    let (mut solved, mut normal) = (0, 0);
    for &u in &COUPLINGS {
        for &eps in &cutoffs() {
            let p = unit(eps);
            match (delta_zero(u, &p), solve_gap_at(u, 0.0, &p, &cfg())) {
                (Ok(d), Ok(s)) => {
                    worst = worst.max(((s - d) / d).abs());
                    solved += 1;
                }
                // below the critical coupling both routes must agree there is no gap
                (Err(_), Err(_)) if !p.admits_coupling(u) => normal += 1,
                (a, b) => return Err(format!("U={u} eps={eps}: closed form {a:?}, solver {b:?}")),
            }
        }
    }
    let detail = format!("{solved} sets solved, {normal} subcritical, max rel err {worst:.2e}");
    if worst < 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c2_tau_residual() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &u in &COUPLINGS {
        for &eps in &cutoffs() {
            let p = unit(eps);
            if !p.admits_coupling(u) {
                if tau(u, &p, &cfg()).is_ok() {
                    return Err(format!(
                        "tau returned a value for subcritical U={u} eps={eps}"
                    ));
                }
                continue;
            }
            let t = tau(u, &p, &cfg()).map_err(|e| e.to_string())?;
            worst = worst.max((tau_integral_oracle(u, t, eps, 1.0) - 1.0).abs());
            count += 1;
        }
    }
    let detail = format!("{count} sets, max |residual| {worst:.2e}");
    if worst < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c3_orderings() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tol = cfg().gap_zero_threshold;
    for trial in 0..50 {
        let eps = 10f64.powf(rng.random_range(-4.0..-2.0));
        let crit = 1.0 / (1.0 / eps).ln();
        let u0 = rng.random_range(1.05 * crit..0.5);
        let u1 = u0 + rng.random_range(0.005..0.1);
        let u2 = u1 + rng.random_range(0.005..0.1);
        let p = PhysicalParams::new(eps, 1.0, u0, u1, u2);
        let g: Vec<GapFunction> = [u0, u1, u2]
            .iter()
            .map(|&u| GapFunction::new(u, &p, &cfg()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let (t0, t1, t2) = (g[0].tau, g[1].tau, g[2].tau);
        if !(t0 < t1 && t1 < t2) {
            return Err(format!("trial {trial}: taus {t0} {t1} {t2} not ordered"));
        }
        for k in 0..100 {
            let t = 1.1 * t2 * k as f64 / 99.0;
            let d: Vec<f64> = g
                .iter()
                .map(|g| g.at(t))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let zero = |v: f64| v.abs() <= tol;
            let ok = if t < t0 {
                0.0 < d[0] && d[0] < d[1] && d[1] < d[2]
            } else if t < t1 {
                zero(d[0]) && 0.0 < d[1] && d[1] < d[2]
            } else if t < t2 {
                zero(d[0]) && zero(d[1]) && 0.0 < d[2]
            } else {
                zero(d[0]) && zero(d[1]) && zero(d[2])
            };
            if !ok {
                return Err(format!("trial {trial} (eps {eps:.2e}, U {u0:.4} {u1:.4} {u2:.4}): T={t:.4e} gaps {d:?}"));
            }
        }
    }
    Ok("50 triples, 100 temperatures each".into())
}

fn c4_monotone_curves() -> Outcome {
    let mut curves = 0;
    let mut plateau_ties = 0;
    for &u in &COUPLINGS {
        for &eps in &cutoffs() {
            let p = unit(eps);
            if !p.admits_coupling(u) {
                continue;
            }
            let g = GapFunction::new(u, &p, &cfg()).map_err(|e| e.to_string())?;
            let grid: Vec<f64> = (0..200).map(|k| g.tau * k as f64 / 200.0).collect();
            let c = g.curve(&grid).map_err(|e| e.to_string())?;
            for w in c.samples.windows(2) {
                let (a, b) = (w[0].delta, w[1].delta);
                if b < a {
                    continue;
                }
                // Δ(T) differs from Δ(0) by a term ~exp(-Δ(0)/T), below
                // double resolution at the lowest temperatures.
                if a == b && (a - g.delta_zero).abs() <= 1e-12 * g.delta_zero {
                    plateau_ties += 1;
                    continue;
                }
                return Err(format!(
                    "U={u} eps={eps}: Δ({}) = {a} <= Δ({}) = {b}",
                    w[0].t, w[1].t
                ));
            }
            let end = g.at(g.tau).map_err(|e| e.to_string())?;
            if end >= 1e-8 {
                return Err(format!("U={u} eps={eps}: Δ(τ) = {end}"));
            }
            curves += 1;
        }
    }
    Ok(format!(
        "{curves} curves strictly decreasing; {plateau_ties} equal pairs on the Δ(0) plateau"
    ))
}

fn c5_endpoint_derivatives() -> Outcome {
    let p = unit(1e-3);
    let g = GapFunction::new(0.3, &p, &cfg()).map_err(|e| e.to_string())?;
    let h0 = 0.1 * g.tau;
    let mut d1 = vec![];
    let mut d2 = vec![];
    for k in 0..4 {
        let (a, b) = g
            .derivatives(0.0, h0 / 2f64.powi(k))
            .map_err(|e| e.to_string())?;
        d1.push(a.abs());
        d2.push(b.abs());
    }
    let ratios = |v: &[f64]| -> Vec<f64> { v.windows(2).map(|w| w[0] / w[1]).collect() };
    let (r1, r2) = (ratios(&d1), ratios(&d2));
    let in_band = |r: &[f64]| r.iter().all(|x| (1.7..=2.3).contains(x));
    let (n1, _) = g
        .derivatives(0.9 * g.tau, 1e-6 * g.tau)
        .map_err(|e| e.to_string())?;
    let (n2, _) = g
        .derivatives(0.999 * g.tau, 1e-6 * g.tau)
        .map_err(|e| e.to_string())?;
    let steep = n2.abs() > 5.0 * n1.abs();
    let list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let detail = format!(
        "|Δ'(0)| estimates [{}] ratios [{}]; |Δ''(0)| estimates [{}] ratios [{}]; \
         |Δ'(0.999τ)|/|Δ'(0.9τ)| = {:.2}",
        list(&d1),
        list(&r1),
        list(&d2),
        list(&r2),
        n2.abs() / n1.abs()
    );
    if in_band(&r1) && in_band(&r2) && steep {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c6_constant_reduction() -> Outcome {
    let p = weak();
    let k = Kernel::constant(0.3, &p).map_err(|e| e.to_string())?;
    let s = BcsSolver::new(&k, &p, &cfg()).map_err(|e| e.to_string())?;
    let g = GapFunction::new(0.3, &p, &cfg()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let t = g.tau * i as f64 / 19.0;
        let sl = s.solve(t, &Init::Upper).map_err(|e| e.to_string())?;
        let d = g.at(t).map_err(|e| e.to_string())?;
        worst = worst.max(sl.values.iter().map(|v| (v - d).abs()).fold(0.0, f64::max));
    }
    let detail = format!("20 temperatures, sup |u - Δ| = {worst:.2e}");
    if worst < 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn separable_solver() -> Result<BcsSolver, String> {
    let p = weak();
    let k = Kernel::separable(0.25, 0.05, Shape::Ramp, &p).map_err(|e| e.to_string())?;
    BcsSolver::new(&k, &p, &cfg()).map_err(|e| e.to_string())
}

fn c7_sandwich() -> Outcome {
    let s = separable_solver()?;
    let (_, hi) = s.envelope_functions();
    let m = 10.0 * cfg().fp_tol * (1.0 + hi.delta_zero);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let t = hi.tau * i as f64 / 19.0;
        let sl = s.solve(t, &Init::Upper).map_err(|e| e.to_string())?;
        let e = sl.envelope;
        for &v in &sl.values {
            worst = worst.max(e.delta1 - v).max(v - e.delta2);
        }
        if sl
            .values
            .iter()
            .any(|&v| v < e.delta1 - m || v > e.delta2 + m)
        {
            return Err(format!(
                "T = {t}: values outside [{}, {}] ± {m:.1e}",
                e.delta1, e.delta2
            ));
        }
    }
    Ok(format!(
        "20 temperatures on [0, τ₂], worst excursion {worst:.2e} (margin {m:.1e})"
    ))
}

fn c8_uniqueness() -> Outcome {
    let s = separable_solver()?;
    let tau1 = s.envelope_functions().0.tau;
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let t = 0.95 * tau1 * i as f64 / 9.0;
        let a = s.solve(t, &Init::Upper).map_err(|e| e.to_string())?;
        let b = s.solve(t, &Init::Lower).map_err(|e| e.to_string())?;
        worst = worst.max(sup_diff(&a.values, &b.values));
    }
    let detail = format!("10 temperatures on [0, 0.95τ₁], sup difference {worst:.2e}");
    if worst < 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_kernel(rng: &mut ChaCha8Rng, p: &PhysicalParams) -> Result<Kernel, String> {
    let span = p.u2 - p.u1;
    let k = match rng.random_range(0..3) {
        0 => {
            let level = p.u1 + span * rng.random_range(0.0..0.5);
            let amp = (p.u2 - level) * rng.random_range(0.1..1.0);
            Kernel::separable(level, amp, Shape::Ramp, p)
        }
        1 => {
            let level = p.u1 + span * rng.random_range(0.0..0.5);
            let amp = (p.u2 - level) * rng.random_range(0.1..1.0);
            Kernel::separable(level, amp, Shape::Bump, p)
        }
        _ => {
            let n = 6;
            let grid: Vec<f64> = (0..n)
                .map(|i| p.epsilon * (p.debye / p.epsilon).powf(i as f64 / (n - 1) as f64))
                .collect();
            let values = (0..n)
                .map(|_| (0..n).map(|_| p.u1 + span * rng.random::<f64>()).collect())
                .collect();
            Kernel::tabulated(
                Table {
                    x_grid: grid.clone(),
                    xi_grid: grid,
                    values,
                },
                p,
            )
        }
    };
    k.map_err(|e| e.to_string())
}

fn c9_tc_bracket() -> Outcome {
    let p = weak();
    let tau1 = tau(p.u1, &p, &cfg()).map_err(|e| e.to_string())?;
    let tau2 = tau(p.u2, &p, &cfg()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..10 {
        let k = random_kernel(&mut rng, &p)?;
        let s = BcsSolver::new(&k, &p, &cfg()).map_err(|e| e.to_string())?;
        let tc = s.transition_temperature().map_err(|e| e.to_string())?;
        if !(tau1 <= tc && tc <= tau2) {
            return Err(format!("kernel {i}: T_c = {tc} outside [{tau1}, {tau2}]"));
        }
    }
    let mut worst: f64 = 0.0;
    for &(c, lo, hi) in &[
        (0.25, 0.25, 0.25),
        (0.27, 0.27, 0.27),
        (0.3, 0.3, 0.3),
        (0.27, 0.25, 0.3),
    ] {
        let k = Kernel::constant(c, &p)
            .and_then(|k| k.with_declared_bounds(lo, hi))
            .map_err(|e| e.to_string())?;
        let s = BcsSolver::new(&k, &p, &cfg()).map_err(|e| e.to_string())?;
        let tc = s.transition_temperature().map_err(|e| e.to_string())?;
        let t = tau(c, &p, &cfg()).map_err(|e| e.to_string())?;
        let rel = (tc - t).abs() / t;
        worst = worst.max(rel);
        if rel >= 10.0 * cfg().root_tol {
            return Err(format!(
                "constant {c} (declared [{lo}, {hi}]): T_c = {tc}, τ = {t}"
            ));
        }
    }
    Ok(format!(
        "10 random kernels bracketed; constant kernels max |T_c - τ|/τ = {worst:.1e}"
    ))
}

fn default_setup() -> Result<(BcsSolver, f64), String> {
    let p = PhysicalParams::default();
    let c = Condition20::new(&p, &cfg()).map_err(|e| e.to_string())?;
    let t1 = c.max_admissible_t1(&cfg()).map_err(|e| e.to_string())?;
    let k = Kernel::default_separable(&p).map_err(|e| e.to_string())?;
    let s = BcsSolver::new(&k, &p, &cfg()).map_err(|e| e.to_string())?;
    Ok((s, t1))
}

fn c10_contraction() -> Outcome {
    let (s, t1) = default_setup()?;
    let tau2 = s.envelope_functions().1.tau;
    let est = contraction_factor(&s, t1, 100, 42).map_err(|e| e.to_string())?;
    let detail = format!(
        "t1 = {t1:.6e}, t1/τ₂ = {:.4}, max ratio {:.3e} over {} trials (seed {})",
        t1 / tau2,
        est.max_ratio,
        est.trials,
        est.seed
    );
    if est.max_ratio < 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c11_refinement() -> Outcome {
    let (s, t1) = default_setup()?;
    let fine = s.refined();
    let d2 = s.envelope_functions().1.delta_zero;
    let grid = |n: usize| -> Vec<f64> { (0..=n).map(|i| t1 * i as f64 / n as f64).collect() };
    let coarse = s.surface(&grid(10)).map_err(|e| e.to_string())?;
    let mut change: f64 = 0.0;
    for sl in &coarse.slices {
        let f = fine
            .solve(sl.temperature, &Init::Upper)
            .map_err(|e| e.to_string())?;
        change = change.max(s.compare_with(sl, &fine, &f).map_err(|e| e.to_string())?);
    }
    let half = s.surface(&grid(20)).map_err(|e| e.to_string())?;
    let ratio = coarse.max_adjacent_jump() / half.max_adjacent_jump();
    let detail = format!(
        "node doubling sup change {:.2e}·Δ₂(0); adjacent-jump ratio {ratio:.3}",
        change / d2
    );
    if change < 1e-6 * d2 && (1.5..=2.5).contains(&ratio) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gapsolve(dir: &Path, args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gapsolve"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

fn c12_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let runs: [&[&str]; 4] = [
        &["solve", "--T", "0.5", "--out", "slice.csv"],
        &[
            "surface",
            "--t-points",
            "6",
            "--t-max",
            "1.0",
            "--out",
            "surface.csv",
        ],
        &["curve", "--t-points", "50", "--out", "curve.csv"],
        &[
            "contraction",
            "--T",
            "1.0",
            "--trials",
            "100",
            "--seed",
            "7",
            "--json",
            "--manifest",
            "contraction.json",
        ],
    ];
    let mut checked = 0;
    for args in runs {
        let (code, first) = gapsolve(dir, args)?;
        if code != 0 {
            return Err(format!("`{}` exited with {code}", args.join(" ")));
        }
        let manifest = match args.iter().position(|a| *a == "--manifest") {
            Some(i) => args[i + 1].to_string(),
            None => format!(
                "{}.manifest.json",
                args[args.iter().position(|a| *a == "--out").unwrap() + 1]
            ),
        };
        let replay_dir = format!("replay-{checked}");
        let (code, _) = gapsolve(
            dir,
            &["replay", &manifest, "--out-dir", &replay_dir, "--verify"],
        )?;
        if code != 0 {
            return Err(format!(
                "replay of `{}` did not reproduce its outputs",
                args.join(" ")
            ));
        }
        let (_, second) = gapsolve(dir, args)?;
        if first != second {
            return Err(format!(
                "stdout of `{}` differs between runs",
                args.join(" ")
            ));
        }
        let read = |p: &Path| -> Result<serde_json::Value, String> {
            let text = std::fs::read_to_string(p).map_err(|e| e.to_string())?;
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        let original = read(&dir.join(&manifest))?;
        let replayed = read(&dir.join(&replay_dir).join(&manifest))?;
        if original["results"] != replayed["results"] {
            return Err(format!("replayed results of `{}` differ", args.join(" ")));
        }
        checked += 1;
    }
    Ok(format!(
        "{checked} commands reproduced bit-identically, including a seeded contraction run"
    ))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("closed-form T=0 oracle", c1_closed_form_t0),
        ("critical-temperature residual", c2_tau_residual),
        ("ordering chains", c3_orderings),
        ("monotone gap curves", c4_monotone_curves),
        ("endpoint derivatives", c5_endpoint_derivatives),
        ("constant-kernel reduction", c6_constant_reduction),
        ("envelope sandwich", c7_sandwich),
        ("uniqueness from both envelopes", c8_uniqueness),
        ("T_c bracket", c9_tc_bracket),
        ("contraction at t1", c10_contraction),
        ("continuity under refinement", c11_refinement),
        ("determinism", c12_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = vec![];
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {:02}", i + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|w| id.contains(w.as_str()) || name.contains(w.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("{id} {name}: PASS [{secs:.1}s] {d}"),
            Err(d) => {
                println!("{id} {name}: FAIL [{secs:.1}s] {d}");
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
