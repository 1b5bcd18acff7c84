//! Command-line front end.
//!
//! Parameters come in physical units, are normalized by ħω_D for the
//! solvers, and go back out in physical units. Every invocation writes a
//! run manifest; `replay` re-runs one from its echoed parameters.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::contraction::{contraction_factor, Condition20};
use crate::error::{GapError, Result};
use crate::kernel::{KernelSpec, Shape};
use crate::params::{normalize, PhysicalParams, Settings, SolverConfig};
use crate::simple_gap::{fmt_f64, GapFunction};
use crate::solver::{BcsSolver, Init};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GAPSOLVE_THREADS";
/// Manifest file name used when neither `--manifest` nor `--out` is given.
pub const DEFAULT_MANIFEST: &str = "gapsolve-manifest.json";

#[derive(Debug, Parser)]
#[command(name = "gapsolve", version, about = "BCS gap equation solver")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Configuration file with `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Lower energy cutoff
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Debye energy; also the output energy unit
    #[arg(long, global = true)]
    debye: Option<f64>,
    /// Lower coupling bound (defaults to u1/2 when only u1 is set)
    #[arg(long, global = true)]
    u0: Option<f64>,
    /// Middle coupling, the default for single-coupling commands
    #[arg(long, global = true)]
    u1: Option<f64>,
    /// Upper coupling bound
    #[arg(long, global = true)]
    u2: Option<f64>,
    /// Relative tolerance for quadrature refinement
    #[arg(long, global = true)]
    quad_rel_tol: Option<f64>,
    /// Relative tolerance for root bracketing
    #[arg(long, global = true)]
    root_tol: Option<f64>,
    /// Fixed-point stop, relative to the Debye energy
    #[arg(long, global = true)]
    fp_tol: Option<f64>,
    /// Iteration budget for the fixed-point solver
    #[arg(long, global = true)]
    fp_max_iter: Option<usize>,
    /// Gap values below this fraction of the Debye energy count as zero
    #[arg(long, global = true)]
    gap_zero_threshold: Option<f64>,
    /// Mixing factor in (0, 1]
    #[arg(long, global = true)]
    damping: Option<f64>,
    /// Where to write the run manifest
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Print results as JSON
    #[arg(long, global = true, conflicts_with = "csv")]
    json: bool,
    /// Print results as CSV
    #[arg(long, global = true)]
    csv: bool,
}

impl Common {
    fn overrides(&self) -> Settings {
        Settings {
            epsilon: self.epsilon,
            debye: self.debye,
            u0: self.u0,
            u1: self.u1,
            u2: self.u2,
            quad_rel_tol: self.quad_rel_tol,
            root_tol: self.root_tol,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            gap_zero_threshold: self.gap_zero_threshold,
            damping: self.damping,
        }
    }
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Zero-temperature gap of a simple gap equation
    Delta0 {
        /// u0, u1, u2 or a number
        #[arg(long, default_value = "u1")]
        coupling: Coupling,
    },
    /// Critical temperature of a simple gap equation
    Tau {
        /// u0, u1, u2 or a number
        #[arg(long, default_value = "u1")]
        coupling: Coupling,
    },
    /// Gap curves T -> Delta(T) for several couplings
    Curve {
        #[arg(long, value_delimiter = ',', default_value = "u0,u1,u2")]
        couplings: Vec<Coupling>,
        #[arg(long, default_value_t = 200)]
        t_points: usize,
        /// Upper end of the grid; defaults to the largest tau
        #[arg(long)]
        t_max: Option<f64>,
        /// CSV output file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the full gap equation at one temperature
    Solve {
        /// `const:<c>`, `sep:<level>:<amplitude>[:ramp|bump]` or `file:<path>`
        #[arg(long)]
        kernel: Option<String>,
        /// Temperature in the same units as debye
        #[arg(long = "T")]
        t: f64,
        /// Starting point: upper or lower
        #[arg(long, default_value = "upper")]
        init: InitArg,
        /// CSV output file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transition temperature of the full gap equation
    Tc {
        /// `const:<c>`, `sep:<level>:<amplitude>[:ramp|bump]` or `file:<path>`
        /// Kernel spec, as for `solve`
        #[arg(long)]
        kernel: Option<String>,
    },
    /// Solution on a temperature grid
    Surface {
        /// `const:<c>`, `sep:<level>:<amplitude>[:ramp|bump]` or `file:<path>`
        /// Kernel spec, as for `solve`
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long, default_value_t = 21)]
        t_points: usize,
        #[arg(long, default_value_t = 0.0)]
        t_min: f64,
        /// Defaults to tau of the kernel's upper bound
        #[arg(long)]
        t_max: Option<f64>,
        /// CSV output file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the small-temperature contraction condition
    CheckT1 {
        /// Evaluate at this T1 instead of searching for the largest one
        #[arg(long)]
        t1: Option<f64>,
    },
    /// Empirical contraction factor of the gap operator
    Contraction {
        /// `const:<c>`, `sep:<level>:<amplitude>[:ramp|bump]` or `file:<path>`
        /// Kernel spec, as for `solve`
        #[arg(long)]
        kernel: Option<String>,
        /// Defaults to the largest admissible T1
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a kernel against the coupling bounds
    ValidateKernel {
        /// `const:<c>`, `sep:<level>:<amplitude>[:ramp|bump]` or `file:<path>`
        /// Kernel spec, as for `solve`
        #[arg(long)]
        kernel: Option<String>,
    },
    /// Re-run a recorded manifest
    Replay {
        manifest: PathBuf,
        /// Write the replayed outputs here instead of over the originals
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Fail unless every replayed output matches the original byte for byte
        #[arg(long)]
        verify: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Delta0 { .. } => "delta0",
            Command::Tau { .. } => "tau",
            Command::Curve { .. } => "curve",
            Command::Solve { .. } => "solve",
            Command::Tc { .. } => "tc",
            Command::Surface { .. } => "surface",
            Command::CheckT1 { .. } => "check-t1",
            Command::Contraction { .. } => "contraction",
            Command::ValidateKernel { .. } => "validate-kernel",
            Command::Replay { .. } => "replay",
        }
    }

    fn out_mut(&mut self) -> Option<&mut Option<PathBuf>> {
        match self {
            Command::Curve { out, .. }
            | Command::Solve { out, .. }
            | Command::Surface { out, .. } => Some(out),
            _ => None,
        }
    }
}

/// A coupling named by its role or given as a number.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Coupling {
    Named(usize),
    Value(f64),
}

impl FromStr for Coupling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Coupling, String> {
        match s {
            "u0" => Ok(Coupling::Named(0)),
            "u1" => Ok(Coupling::Named(1)),
            "u2" => Ok(Coupling::Named(2)),
            _ => s
                .parse::<f64>()
                .map(Coupling::Value)
                .map_err(|_| format!("expected u0, u1, u2 or a number, got `{s}`")),
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coupling::Named(k) => write!(f, "u{k}"),
            Coupling::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Coupling {
    fn value(&self, p: &PhysicalParams) -> f64 {
        match self {
            Coupling::Named(0) => p.u0,
            Coupling::Named(1) => p.u1,
            Coupling::Named(_) => p.u2,
            Coupling::Value(v) => *v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InitArg {
    Upper,
    Lower,
}

impl FromStr for InitArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<InitArg, String> {
        match s {
            "upper" => Ok(InitArg::Upper),
            "lower" => Ok(InitArg::Lower),
            _ => Err(format!("expected upper or lower, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestParameters {
    /// Parameters as supplied, in physical units.
    pub physical: PhysicalParams,
    /// Parameters divided by the Debye energy, as used by the solvers.
    pub normalized: PhysicalParams,
    /// Energy unit of `physical`: the Debye energy.
    pub energy_unit: f64,
    pub config: SolverConfig,
}

/// Record of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    pub parameters: Option<ManifestParameters>,
    pub outputs: Vec<String>,
    pub wall_time: f64,
    pub status: String,
    pub message: Option<String>,
    pub results: Value,
    pub version: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| GapError::domain(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Text,
    Json,
    Csv,
}

/// What a subcommand produced.
struct Report {
    summary: Map<String, Value>,
    /// CSV table printed on `--csv` when nothing was written to a file.
    table: Option<Vec<u8>>,
    /// Extra data included with `--json`.
    data: Option<Value>,
    outputs: Vec<PathBuf>,
    /// Optional one-line verdict printed first in text mode.
    verdict: Option<String>,
}

impl Report {
    fn new() -> Report {
        Report {
            summary: Map::new(),
            table: None,
            data: None,
            outputs: Vec::new(),
            verdict: None,
        }
    }

    fn put(&mut self, key: &str, v: impl Into<Value>) -> &mut Report {
        self.summary.insert(key.to_string(), v.into());
        self
    }

    fn render(&self, fmt: Format) -> Result<String> {
        Ok(match fmt {
            Format::Json => {
                let mut obj = self.summary.clone();
                if let Some(d) = &self.data {
                    obj.insert("data".into(), d.clone());
                }
                serde_json::to_string_pretty(&Value::Object(obj))? + "\n"
            }
            Format::Csv => match &self.table {
                Some(t) if self.outputs.is_empty() => String::from_utf8_lossy(t).into_owned(),
                _ => {
                    let mut w = csv::Writer::from_writer(vec![]);
                    w.write_record(self.summary.keys())?;
                    w.write_record(self.summary.values().map(value_text))?;
                    String::from_utf8_lossy(&w.into_inner().map_err(|e| e.into_error())?)
                        .into_owned()
                }
            },
            Format::Text => {
                let mut s = String::new();
                if let Some(v) = &self.verdict {
                    s.push_str(v);
                    s.push('\n');
                }
                for (k, v) in &self.summary {
                    s.push_str(&format!("{k}: {}\n", value_text(v)));
                }
                s
            }
        })
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if !n.is_i64() && !n.is_u64() => fmt_f64(f),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

/// Resolved problem in both unit systems.
struct Problem {
    physical: PhysicalParams,
    unit: PhysicalParams,
    cfg: SolverConfig,
}

impl Problem {
    fn scale(&self) -> f64 {
        self.physical.debye
    }

    fn kernel_spec(&self, spec: &Option<String>) -> Result<KernelSpec> {
        match spec {
            Some(s) => s.parse(),
            None => Ok(KernelSpec::Separable {
                level: self.physical.u1,
                amplitude: self.physical.u2 - self.physical.u1,
                shape: Shape::Ramp,
            }),
        }
    }

    fn solver(&self, spec: &KernelSpec) -> Result<BcsSolver> {
        let k = spec.build(&self.unit, &self.physical)?;
        BcsSolver::new(&k, &self.unit, &self.cfg)
    }

    fn manifest_parameters(&self) -> ManifestParameters {
        ManifestParameters {
            physical: self.physical,
            normalized: self.unit,
            energy_unit: self.physical.debye,
            config: self.cfg,
        }
    }
}

fn settings_from(p: &PhysicalParams, cfg: &SolverConfig) -> Settings {
    Settings {
        epsilon: Some(p.epsilon),
        debye: Some(p.debye),
        u0: Some(p.u0),
        u1: Some(p.u1),
        u2: Some(p.u2),
        quad_rel_tol: Some(cfg.quad_rel_tol),
        root_tol: Some(cfg.root_tol),
        fp_tol: Some(cfg.fp_tol),
        fp_max_iter: Some(cfg.fp_max_iter),
        gap_zero_threshold: Some(cfg.gap_zero_threshold),
        damping: Some(cfg.damping),
    }
}

fn resolve(common: &Common, fixed: Option<&Settings>) -> Result<Problem> {
    let settings = match fixed {
        Some(s) => s.clone(),
        None => {
            let base = match &common.config {
                Some(path) => Settings::load(path)?,
                None => Settings::default(),
            };
            base.overlay(&common.overrides())
        }
    };
    let (physical, cfg) = settings.resolve()?;
    let unit = normalize(&physical)?;
    Ok(Problem {
        physical,
        unit,
        cfg,
    })
}

fn grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(GapError::invalid("t-points", "need at least 2 points"));
    }
    if !(hi > lo && lo >= 0.0) {
        return Err(GapError::domain(format!(
            "empty temperature range [{lo}, {hi}]"
        )));
    }
    Ok((0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect())
}

fn emit(out: &Option<PathBuf>, bytes: Vec<u8>, report: &mut Report) -> Result<()> {
    match out {
        Some(path) => {
            write_atomic(path, &bytes)?;
            report.outputs.push(path.clone());
        }
        None => report.table = Some(bytes),
    }
    Ok(())
}

fn execute(cmd: &Command, pb: &Problem) -> Result<Report> {
    let mut r = Report::new();
    let scale = pb.scale();
    match cmd {
        Command::Delta0 { coupling } => {
            let g = GapFunction::new(coupling.value(&pb.physical), &pb.unit, &pb.cfg)?;
            r.put("coupling", coupling.value(&pb.physical))
                .put("delta0", g.delta_zero * scale);
        }
        Command::Tau { coupling } => {
            let u = coupling.value(&pb.physical);
            let g = GapFunction::new(u, &pb.unit, &pb.cfg)?;
            r.put("coupling", u).put("tau", g.tau * scale).put(
                "residual",
                crate::simple_gap::tau_residual(u, g.tau, &pb.unit, &pb.cfg)?,
            );
        }
        Command::Curve {
            couplings,
            t_points,
            t_max,
            out,
        } => {
            if couplings.is_empty() {
                return Err(GapError::invalid(
                    "couplings",
                    "at least one coupling required",
                ));
            }
            let gaps = couplings
                .iter()
                .map(|c| GapFunction::new(c.value(&pb.physical), &pb.unit, &pb.cfg))
                .collect::<Result<Vec<_>>>()?;
            let hi = match t_max {
                Some(t) => t / scale,
                None => gaps.iter().map(|g| g.tau).fold(0.0, f64::max),
            };
            let ts = grid(0.0, hi, *t_points)?;
            let rows = ts
                .par_iter()
                .map(|&t| gaps.iter().map(|g| g.at(t)).collect::<Result<Vec<f64>>>())
                .collect::<Result<Vec<_>>>()?;
            let mut w = csv::Writer::from_writer(vec![]);
            let mut header = vec!["T".to_string()];
            header.extend(couplings.iter().map(|c| format!("delta_{c}")));
            w.write_record(&header)?;
            for (t, row) in ts.iter().zip(&rows) {
                let mut rec = vec![fmt_f64(t * scale)];
                rec.extend(row.iter().map(|d| fmt_f64(d * scale)));
                w.write_record(&rec)?;
            }
            let bytes = w.into_inner().map_err(|e| e.into_error())?;
            for (c, g) in couplings.iter().zip(&gaps) {
                r.put(&format!("tau_{c}"), g.tau * scale);
            }
            r.put("t_points", *t_points as u64);
            r.data = Some(
                json!({ "T": ts.iter().map(|t| t * scale).collect::<Vec<_>>(),
                "delta": rows.iter().map(|row| row.iter().map(|d| d * scale).collect::<Vec<_>>()).collect::<Vec<_>>() }),
            );
            emit(out, bytes, &mut r)?;
        }
        Command::Solve {
            kernel,
            t,
            init,
            out,
        } => {
            let spec = pb.kernel_spec(kernel)?;
            let solver = pb.solver(&spec)?;
            let init = match init {
                InitArg::Upper => Init::Upper,
                InitArg::Lower => Init::Lower,
            };
            let slice = solver.solve(t / scale, &init)?.scaled(scale);
            r.put("kernel", spec.to_string())
                .put("temperature", slice.temperature)
                .put("residual", slice.residual)
                .put("iterations", slice.iterations as u64)
                .put("newton_steps", slice.newton_steps as u64)
                .put("delta1", slice.envelope.delta1)
                .put("delta2", slice.envelope.delta2)
                .put("u_min", slice.min_value())
                .put("u_max", slice.max_value());
            let mut bytes = vec![];
            slice.write_csv(&mut bytes)?;
            let side = json!({
                "temperature": slice.temperature,
                "residual": slice.residual,
                "iterations": slice.iterations,
                "envelope": slice.envelope,
                "nodes": slice.nodes,
                "values": slice.values,
            });
            if let Some(path) = out {
                let jpath = sidecar(path, ".json");
                write_atomic(
                    &jpath,
                    (serde_json::to_string_pretty(&side)? + "\n").as_bytes(),
                )?;
                emit(out, bytes, &mut r)?;
                r.outputs.push(jpath);
            } else {
                emit(out, bytes, &mut r)?;
            }
            r.data = Some(side);
        }
        Command::Tc { kernel } => {
            let spec = pb.kernel_spec(kernel)?;
            let solver = pb.solver(&spec)?;
            let tc = solver.transition_temperature()?;
            let (lo, hi) = solver.envelope_functions();
            r.put("kernel", spec.to_string())
                .put("tc", tc * scale)
                .put("tau1", lo.tau * scale)
                .put("tau2", hi.tau * scale);
        }
        Command::Surface {
            kernel,
            t_points,
            t_min,
            t_max,
            out,
        } => {
            let spec = pb.kernel_spec(kernel)?;
            let solver = pb.solver(&spec)?;
            let hi = match t_max {
                Some(t) => t / scale,
                None => solver.envelope_functions().1.tau,
            };
            let ts = grid(t_min / scale, hi, *t_points)?;
            let surf = solver.surface(&ts)?;
            let jump = surf.max_adjacent_jump() * scale;
            let surf = surf.scaled(scale);
            let mut bytes = vec![];
            surf.write_csv(&mut bytes)?;
            r.put("kernel", spec.to_string())
                .put("t_points", *t_points as u64)
                .put("refinement_delta", surf.refinement_delta)
                .put("max_adjacent_jump", jump)
                .put(
                    "monotonicity_violations",
                    surf.monotonicity_violations.len() as u64,
                )
                .put(
                    "iterations",
                    surf.slices.iter().map(|s| s.iterations as u64).sum::<u64>(),
                );
            r.data = Some(json!({
                "T": surf.t_grid,
                "residuals": surf.slices.iter().map(|s| s.residual).collect::<Vec<_>>(),
            }));
            emit(out, bytes, &mut r)?;
        }
        Command::CheckT1 { t1 } => {
            let c = Condition20::new(&pb.unit, &pb.cfg)?;
            let tau2 = c.g2.tau;
            let report = match t1 {
                Some(t) => c.margin(t / scale)?,
                None => c.margin(c.max_admissible_t1(&pb.cfg)?)?,
            };
            r.verdict = Some(format!(
                "t1 = {} {}",
                fmt_f64(report.t1 * scale),
                if report.satisfied {
                    "satisfies the condition"
                } else {
                    "violates the condition"
                }
            ));
            r.put("t1", report.t1 * scale)
                .put("lhs", report.lhs)
                .put("rhs", report.rhs)
                .put("constraint_ok", report.constraint_ok)
                .put("satisfied", report.satisfied)
                .put("tau2", tau2 * scale)
                .put("t1_over_tau2", report.t1 / tau2);
        }
        Command::Contraction {
            kernel,
            t,
            trials,
            seed,
        } => {
            let spec = pb.kernel_spec(kernel)?;
            let solver = pb.solver(&spec)?;
            let temp = match t {
                Some(t) => t / scale,
                None => Condition20::new(&pb.unit, &pb.cfg)?.max_admissible_t1(&pb.cfg)?,
            };
            let est = contraction_factor(&solver, temp, *trials, *seed)?;
            r.verdict = Some(format!(
                "{} at T = {}: max ratio {} over {} trials",
                if est.max_ratio < 1.0 {
                    "contractive"
                } else {
                    "not contractive"
                },
                fmt_f64(temp * scale),
                fmt_f64(est.max_ratio),
                est.trials
            ));
            r.put("kernel", spec.to_string())
                .put("temperature", temp * scale)
                .put("trials", est.trials as u64)
                .put("seed", est.seed)
                .put("max_ratio", est.max_ratio)
                .put("degenerate", est.degenerate);
        }
        Command::ValidateKernel { kernel } => {
            let spec = pb.kernel_spec(kernel)?;
            let k = spec.build(&pb.unit, &pb.physical)?;
            let (lo, hi) = k.bounds(65);
            k.check_condition(&pb.unit)?;
            r.verdict = Some(format!("kernel {spec} is admissible"));
            r.put("kernel", spec.to_string())
                .put("declared_lower", k.declared_bounds.0)
                .put("declared_upper", k.declared_bounds.1)
                .put("sampled_lower", lo)
                .put("sampled_upper", hi)
                .put("u1", pb.physical.u1)
                .put("u2", pb.physical.u2);
        }
        Command::Replay { .. } => unreachable!("replay is dispatched before execute"),
    }
    Ok(r)
}

fn format_of(c: &Common) -> Format {
    if c.json {
        Format::Json
    } else if c.csv {
        Format::Csv
    } else {
        Format::Text
    }
}

fn manifest_path(cli: &Cli) -> PathBuf {
    if let Some(m) = &cli.common.manifest {
        return m.clone();
    }
    let mut cmd = cli.command.clone();
    match cmd.out_mut().and_then(|o| o.take()) {
        Some(out) => sidecar(&out, ".manifest.json"),
        None => PathBuf::from(DEFAULT_MANIFEST),
    }
}

/// Runs a parsed command, writes its manifest, returns the exit code.
fn run_parsed(cli: &Cli, argv: Vec<String>, fixed: Option<&Settings>) -> i32 {
    let started = Instant::now();
    let fmt = format_of(&cli.common);
    let mut parameters = None;
    let outcome = resolve(&cli.common, fixed).and_then(|pb| {
        parameters = Some(pb.manifest_parameters());
        execute(&cli.command, &pb)
    });
    let (code, status, message, results, outputs) = match &outcome {
        Ok(r) => (
            0,
            "ok",
            None,
            Value::Object(r.summary.clone()),
            r.outputs.clone(),
        ),
        Err(e) => (
            if e.is_numerical() { 2 } else { 1 },
            "error",
            Some(e.to_string()),
            Value::Null,
            vec![],
        ),
    };
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        argv,
        parameters,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_time: started.elapsed().as_secs_f64(),
        status: status.to_string(),
        message,
        results,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mpath = manifest_path(cli);
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(GapError::from)
        .and_then(|s| write_atomic(&mpath, (s + "\n").as_bytes()));
    if let Err(e) = written {
        eprintln!("error: cannot write manifest {}: {e}", mpath.display());
        return 1;
    }
    match outcome {
        Ok(r) => match r.render(fmt) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            code
        }
    }
}

fn replay(path: &Path, out_dir: Option<&Path>, verify: bool) -> Result<i32> {
    let m = RunManifest::load(path)?;
    let params = m
        .parameters
        .as_ref()
        .ok_or_else(|| GapError::invalid("manifest", "recorded run has no resolved parameters"))?;
    let fixed = settings_from(&params.physical, &params.config);
    let mut cli =
        Cli::try_parse_from(std::iter::once("gapsolve".to_string()).chain(m.argv.iter().cloned()))
            .map_err(|e| {
                GapError::invalid("manifest", format!("recorded arguments do not parse: {e}"))
            })?;
    if let Command::Replay { .. } = cli.command {
        return Err(GapError::invalid("manifest", "cannot replay a replay"));
    }
    let relocate = |p: &Path, dir: &Path| dir.join(p.file_name().unwrap_or(p.as_os_str()));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mpath = manifest_path(&cli);
        if let Some(out) = cli.command.out_mut() {
            *out = out.as_ref().map(|o| relocate(o, dir));
        }
        cli.common.manifest = Some(relocate(&mpath, dir));
    } else if verify {
        return Err(GapError::invalid("replay", "--verify needs --out-dir"));
    }
    let code = run_parsed(&cli, m.argv.clone(), Some(&fixed));
    if code != 0 || !verify {
        return Ok(code);
    }
    let dir = out_dir.expect("checked above");
    for orig in &m.outputs {
        let orig = Path::new(orig);
        let new = relocate(orig, dir);
        if std::fs::read(orig)? != std::fs::read(&new)? {
            return Err(GapError::invalid(
                "replay",
                format!("{} differs from {}", new.display(), orig.display()),
            ));
        }
    }
    eprintln!("replay verified: {} output(s) identical", m.outputs.len());
    Ok(0)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            GapError::invalid(
                THREADS_ENV,
                format!("expected a positive integer, got `{v}`"),
            )
        })?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| GapError::invalid(THREADS_ENV, e.to_string()))
}

/// Entry point: `argv` includes the program name. Returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    pool.install(|| {
        if let Command::Replay {
            manifest,
            out_dir,
            verify,
        } = &cli.command
        {
            return match replay(manifest, out_dir.as_deref(), *verify) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    if e.is_numerical() {
                        2
                    } else {
                        1
                    }
                }
            };
        }
        run_parsed(&cli, argv.iter().skip(1).cloned().collect(), None)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_parsing() {
        assert_eq!("u2".parse::<Coupling>().unwrap(), Coupling::Named(2));
        assert_eq!("0.3".parse::<Coupling>().unwrap(), Coupling::Value(0.3));
        assert!("u3".parse::<Coupling>().is_err());
    }

    #[test]
    fn grid_includes_endpoints() {
        let g = grid(0.0, 0.3, 4).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[3], 0.3);
        assert!(grid(0.0, 1.0, 1).is_err());
        assert!(grid(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("base.cfg");
        std::fs::write(&cfg, "epsilon = 1e-6\nu1 = 0.25\nu2 = 0.3\n").unwrap();
        let cli = Cli::try_parse_from([
            "gapsolve",
            "tau",
            "--config",
            cfg.to_str().unwrap(),
            "--u2",
            "0.35",
        ])
        .unwrap();
        let pb = resolve(&cli.common, None).unwrap();
        assert_eq!(pb.physical.u2, 0.35);
        assert_eq!(pb.physical.u1, 0.25);
        assert_eq!(pb.physical.u0, 0.125);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["gapsolve", "bogus"]), 1);
        assert_eq!(run(["gapsolve", "tau", "--nope"]), 1);
    }
}
