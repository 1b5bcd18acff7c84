//! The potential U(x, ξ) on the square [ε, ħω_D]².
//!
//! Three forms are supported: a constant, a separable profile
//! `level + amplitude·s(x)·s(ξ)` with `s ∈ [0, 1]`, and a table with
//! bilinear interpolation. Bilinear interpolation never leaves the range of
//! the node values, so table bounds are exact and the solver's envelope
//! gaps stay valid.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::params::PhysicalParams;

/// Slack for "point lies in the square" and "grid covers the square".
const EDGE_RTOL: f64 = 1e-12;

/// Profile used by separable kernels, mapped onto [ε, ħω_D].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// 0 at ε rising linearly to 1 at ħω_D.
    Ramp,
    /// `sin(π s)`: 0 at both ends, 1 in the middle.
    Bump,
}

impl Shape {
    fn eval(self, s: f64) -> f64 {
        match self {
            Shape::Ramp => s,
            Shape::Bump => (std::f64::consts::PI * s).sin(),
        }
    }

    /// Bound on |d shape / ds|.
    fn slope(self) -> f64 {
        match self {
            Shape::Ramp => 1.0,
            Shape::Bump => std::f64::consts::PI,
        }
    }
}

impl FromStr for Shape {
    type Err = GapError;
    fn from_str(s: &str) -> Result<Shape> {
        match s {
            "ramp" => Ok(Shape::Ramp),
            "bump" => Ok(Shape::Bump),
            other => Err(GapError::invalid(
                "shape",
                format!("unknown shape `{other}`"),
            )),
        }
    }
}

/// Tabulated kernel data. Grids strictly increasing; `values[i][j]` is
/// U(x_grid[i], xi_grid[j]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub x_grid: Vec<f64>,
    pub xi_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Table {
    fn cell(grid: &[f64], v: f64) -> (usize, f64) {
        let n = grid.len();
        let k = grid.partition_point(|&g| g <= v).clamp(1, n - 1) - 1;
        let t = ((v - grid[k]) / (grid[k + 1] - grid[k])).clamp(0.0, 1.0);
        (k, t)
    }

    fn eval(&self, x: f64, xi: f64) -> f64 {
        let (i, s) = Table::cell(&self.x_grid, x);
        let (j, t) = Table::cell(&self.xi_grid, xi);
        let v = &self.values;
        (1.0 - s) * ((1.0 - t) * v[i][j] + t * v[i][j + 1])
            + s * ((1.0 - t) * v[i + 1][j] + t * v[i + 1][j + 1])
    }

    fn node_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Largest cell slope along either axis.
    fn slope(&self) -> f64 {
        let mut l: f64 = 0.0;
        for i in 0..self.x_grid.len() {
            for j in 0..self.xi_grid.len() {
                if i + 1 < self.x_grid.len() {
                    let d = (self.values[i + 1][j] - self.values[i][j]).abs();
                    l = l.max(d / (self.x_grid[i + 1] - self.x_grid[i]));
                }
                if j + 1 < self.xi_grid.len() {
                    let d = (self.values[i][j + 1] - self.values[i][j]).abs();
                    l = l.max(d / (self.xi_grid[j + 1] - self.xi_grid[j]));
                }
            }
        }
        l
    }

    fn scaled(&self, factor: f64) -> Table {
        Table {
            x_grid: self.x_grid.iter().map(|v| v * factor).collect(),
            xi_grid: self.xi_grid.iter().map(|v| v * factor).collect(),
            values: self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelForm {
    Constant {
        c: f64,
    },
    Separable {
        level: f64,
        amplitude: f64,
        shape: Shape,
    },
    Tabulated(Table),
}

/// U(x, ξ) together with the bounds the solver builds its envelope from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub form: KernelForm,
    /// Lower edge of the square (ε).
    pub lower: f64,
    /// Upper edge of the square (ħω_D).
    pub upper: f64,
    /// (u_lo, u_hi) with u_lo ≤ U ≤ u_hi everywhere.
    pub declared_bounds: (f64, f64),
}

impl Kernel {
    pub fn constant(c: f64, p: &PhysicalParams) -> Result<Kernel> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(GapError::invalid(
                "kernel",
                format!("constant must be > 0, got {c}"),
            ));
        }
        Ok(Kernel {
            form: KernelForm::Constant { c },
            lower: p.epsilon,
            upper: p.debye,
            declared_bounds: (c, c),
        })
    }

    pub fn separable(
        level: f64,
        amplitude: f64,
        shape: Shape,
        p: &PhysicalParams,
    ) -> Result<Kernel> {
        if !(level > 0.0 && amplitude >= 0.0 && (level + amplitude).is_finite()) {
            return Err(GapError::invalid(
                "kernel",
                format!(
                    "separable kernel needs level > 0 and amplitude >= 0, got {level}, {amplitude}"
                ),
            ));
        }
        Ok(Kernel {
            form: KernelForm::Separable {
                level,
                amplitude,
                shape,
            },
            lower: p.epsilon,
            upper: p.debye,
            declared_bounds: (level, level + amplitude),
        })
    }

    /// Canonical nonconstant kernel for `p`: a ramp from u1 to u2.
    pub fn default_separable(p: &PhysicalParams) -> Result<Kernel> {
        Kernel::separable(p.u1, p.u2 - p.u1, Shape::Ramp, p)
    }

    /// Builds a tabulated kernel whose grids are in the same units as `p`.
    pub fn tabulated(table: Table, p: &PhysicalParams) -> Result<Kernel> {
        check_grid("x", &table.x_grid, p)?;
        check_grid("xi", &table.xi_grid, p)?;
        if table.values.len() != table.x_grid.len() {
            return Err(GapError::invalid(
                "kernel table",
                format!(
                    "{} rows for {} x values",
                    table.values.len(),
                    table.x_grid.len()
                ),
            ));
        }
        for (i, row) in table.values.iter().enumerate() {
            if row.len() != table.xi_grid.len() {
                return Err(GapError::invalid(
                    "kernel table",
                    format!(
                        "row {} has {} values, expected {}",
                        i + 1,
                        row.len(),
                        table.xi_grid.len()
                    ),
                ));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(GapError::invalid(
                        "kernel table",
                        format!(
                            "value at row {}, column {} must be positive, got {v}",
                            i + 1,
                            j + 1
                        ),
                    ));
                }
            }
        }
        let mut k = Kernel {
            form: KernelForm::Tabulated(table),
            lower: p.epsilon,
            upper: p.debye,
            declared_bounds: (0.0, 0.0),
        };
        let n = match &k.form {
            KernelForm::Tabulated(t) => t.x_grid.len().max(t.xi_grid.len()),
            _ => unreachable!(),
        };
        k.declared_bounds = k.bounds(n.max(2));
        Ok(k)
    }

    /// Replaces the declared bounds, which must enclose the sampled range.
    pub fn with_declared_bounds(mut self, lo: f64, hi: f64) -> Result<Kernel> {
        let (smin, smax) = self.bounds(65);
        if !(lo > 0.0 && lo <= smin && hi >= smax) {
            return Err(GapError::invalid(
                "kernel bounds",
                format!("declared [{lo}, {hi}] does not enclose sampled [{smin}, {smax}]"),
            ));
        }
        self.declared_bounds = (lo, hi);
        Ok(self)
    }

    pub fn u_lo(&self) -> f64 {
        self.declared_bounds.0
    }

    pub fn u_hi(&self) -> f64 {
        self.declared_bounds.1
    }

    fn in_square(&self, v: f64) -> bool {
        let slack = EDGE_RTOL * self.upper;
        v >= self.lower - slack && v <= self.upper + slack
    }

    /// U(x, ξ) for a point of the square.
    pub fn eval(&self, x: f64, xi: f64) -> Result<f64> {
        if !(self.in_square(x) && self.in_square(xi)) {
            return Err(GapError::domain(format!(
                "kernel evaluated at ({x}, {xi}) outside [{}, {}]^2",
                self.lower, self.upper
            )));
        }
        Ok(self.eval_unchecked(x, xi))
    }

    pub(crate) fn eval_unchecked(&self, x: f64, xi: f64) -> f64 {
        match &self.form {
            KernelForm::Constant { c } => *c,
            KernelForm::Separable {
                level,
                amplitude,
                shape,
            } => {
                let w = self.upper - self.lower;
                let sx = ((x - self.lower) / w).clamp(0.0, 1.0);
                let sxi = ((xi - self.lower) / w).clamp(0.0, 1.0);
                level + amplitude * shape.eval(sx) * shape.eval(sxi)
            }
            KernelForm::Tabulated(t) => t.eval(x, xi),
        }
    }

    /// Min and max over an n×n uniform sample, widened by the table nodes.
    pub fn bounds(&self, n: usize) -> (f64, f64) {
        let n = n.max(2);
        let step = (self.upper - self.lower) / (n - 1) as f64;
        let point = |k: usize| {
            if k + 1 == n {
                self.upper
            } else {
                self.lower + step * k as f64
            }
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                let v = self.eval_unchecked(point(i), point(j));
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if let KernelForm::Tabulated(t) = &self.form {
            let (a, b) = t.node_range();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        (lo, hi)
    }

    /// L with |U(x+δ, ξ) − U(x, ξ)| ≤ L·δ (and likewise in ξ).
    pub fn lipschitz_bound(&self) -> f64 {
        match &self.form {
            KernelForm::Constant { .. } => 0.0,
            KernelForm::Separable {
                amplitude, shape, ..
            } => amplitude * shape.slope() / (self.upper - self.lower),
            KernelForm::Tabulated(t) => t.slope(),
        }
    }

    /// Checks `u1 ≤ U ≤ u2` through the declared bounds.
    pub fn check_condition(&self, p: &PhysicalParams) -> Result<()> {
        let (lo, hi) = self.declared_bounds;
        let slack = 1e-12 * p.u2;
        if lo < p.u1 - slack || hi > p.u2 + slack {
            return Err(GapError::invalid(
                "kernel bounds",
                format!(
                    "kernel range [{lo}, {hi}] is not inside [u1, u2] = [{}, {}]",
                    p.u1, p.u2
                ),
            ));
        }
        if (self.lower - p.epsilon).abs() > EDGE_RTOL * p.debye
            || (self.upper - p.debye).abs() > EDGE_RTOL * p.debye
        {
            return Err(GapError::invalid(
                "kernel",
                format!(
                    "kernel square [{}, {}] does not match [epsilon, debye] = [{}, {}]",
                    self.lower, self.upper, p.epsilon, p.debye
                ),
            ));
        }
        Ok(())
    }

    /// Same kernel with energies multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Kernel {
        let form = match &self.form {
            KernelForm::Tabulated(t) => KernelForm::Tabulated(t.scaled(factor)),
            other => other.clone(),
        };
        Kernel {
            form,
            lower: self.lower * factor,
            upper: self.upper * factor,
            declared_bounds: self.declared_bounds,
        }
    }

    /// Dense `K[i][j] = U(x_i, x_j)` on a node set.
    pub fn matrix(&self, nodes: &[f64]) -> Vec<f64> {
        let n = nodes.len();
        let mut m = Vec::with_capacity(n * n);
        for &x in nodes {
            for &xi in nodes {
                m.push(self.eval_unchecked(x, xi));
            }
        }
        m
    }
}

fn check_grid(name: &str, grid: &[f64], p: &PhysicalParams) -> Result<()> {
    if grid.len() < 2 {
        return Err(GapError::invalid(
            "kernel table",
            format!("{name} grid needs at least 2 points"),
        ));
    }
    for (k, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(GapError::invalid(
                "kernel table",
                format!(
                    "{name} grid not strictly increasing at positions {} and {} ({} then {})",
                    k + 1,
                    k + 2,
                    w[0],
                    w[1]
                ),
            ));
        }
    }
    let slack = EDGE_RTOL * p.debye;
    if grid[0] > p.epsilon + slack || grid[grid.len() - 1] < p.debye - slack {
        return Err(GapError::invalid(
            "kernel table",
            format!(
                "{name} grid [{}, {}] does not cover [ε, ħω_D] = [{}, {}]",
                grid[0],
                grid[grid.len() - 1],
                p.epsilon,
                p.debye
            ),
        ));
    }
    Ok(())
}

/// Parses the table layout: first row is the ξ grid (its first cell is a
/// label and ignored), each following row is an x value then U values.
pub fn parse_table(text: &str, origin: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let perr = |row: usize, col: usize, message: String| GapError::Parse {
        path: format!("{origin}:row {row}, column {col}"),
        message,
    };
    let mut xi_grid = Vec::new();
    let mut x_grid = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let mut nums = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            if r == 0 && c == 0 {
                continue;
            }
            let v = field
                .parse::<f64>()
                .map_err(|e| perr(row, c + 1, format!("cannot parse `{field}`: {e}")))?;
            nums.push(v);
        }
        if r == 0 {
            xi_grid = nums;
        } else {
            if nums.len() != xi_grid.len() + 1 {
                return Err(perr(
                    row,
                    nums.len().min(xi_grid.len() + 1),
                    format!(
                        "expected {} values after the x value, found {}",
                        xi_grid.len(),
                        nums.len().saturating_sub(1)
                    ),
                ));
            }
            x_grid.push(nums[0]);
            for (c, &v) in nums[1..].iter().enumerate() {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(perr(
                        row,
                        c + 2,
                        format!("potential must be positive, got {v}"),
                    ));
                }
            }
            values.push(nums[1..].to_vec());
        }
    }
    if values.is_empty() {
        return Err(GapError::Parse {
            path: origin.to_string(),
            message: "table has no data rows".into(),
        });
    }
    Ok(Table {
        x_grid,
        xi_grid,
        values,
    })
}

pub fn eval_kernel(k: &Kernel, x: f64, xi: f64) -> Result<f64> {
    k.eval(x, xi)
}

/// Sampled (min, max); `n` below 2 is raised to 2.
pub fn kernel_bounds(k: &Kernel, n: usize) -> (f64, f64) {
    k.bounds(n)
}

/// Loads a tabulated kernel whose grids are in the units of `p` and
/// returns it in normalized units (ħω_D = 1).
pub fn load_tabulated(path: &Path, p: &PhysicalParams) -> Result<Kernel> {
    let text = std::fs::read_to_string(path)?;
    let table = parse_table(&text, &path.display().to_string())?;
    let kernel = Kernel::tabulated(table, p)?.rescaled(1.0 / p.debye);
    let unit = PhysicalParams {
        epsilon: p.epsilon / p.debye,
        debye: 1.0,
        ..*p
    };
    kernel.check_condition(&unit)?;
    Ok(kernel)
}

/// Command-line kernel syntax: `const:<c>`, `sep:<level>:<amplitude>[:<shape>]`,
/// `file:<path>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Constant(f64),
    Separable {
        level: f64,
        amplitude: f64,
        shape: Shape,
    },
    File(String),
}

impl FromStr for KernelSpec {
    type Err = GapError;
    fn from_str(s: &str) -> Result<KernelSpec> {
        let bad = |m: String| GapError::invalid("kernel", m);
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| bad(format!("cannot parse `{v}` in kernel spec `{s}`: {e}")))
        };
        let parts: Vec<&str> = s.splitn(2, ':').collect();
        match parts.as_slice() {
            ["const", rest] => Ok(KernelSpec::Constant(num(rest)?)),
            ["sep", rest] => {
                let f: Vec<&str> = rest.split(':').collect();
                match f.as_slice() {
                    [l, a] => Ok(KernelSpec::Separable {
                        level: num(l)?,
                        amplitude: num(a)?,
                        shape: Shape::Ramp,
                    }),
                    [l, a, sh] => Ok(KernelSpec::Separable {
                        level: num(l)?,
                        amplitude: num(a)?,
                        shape: sh.parse()?,
                    }),
                    _ => Err(bad(format!(
                        "expected sep:<level>:<amplitude>[:<shape>], got `{s}`"
                    ))),
                }
            }
            ["file", path] if !path.is_empty() => Ok(KernelSpec::File(path.to_string())),
            _ => Err(bad(format!(
                "unknown kernel spec `{s}` (use const:<c>, sep:<level>:<amplitude>, file:<path>)"
            ))),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Constant(c) => write!(f, "const:{c}"),
            KernelSpec::Separable {
                level,
                amplitude,
                shape,
            } => {
                let sh = match shape {
                    Shape::Ramp => "ramp",
                    Shape::Bump => "bump",
                };
                write!(f, "sep:{level}:{amplitude}:{sh}")
            }
            KernelSpec::File(p) => write!(f, "file:{p}"),
        }
    }
}

impl KernelSpec {
    /// Builds the kernel for normalized parameters `unit`. Files are read
    /// with the physical parameters `physical` and normalized on load.
    pub fn build(&self, unit: &PhysicalParams, physical: &PhysicalParams) -> Result<Kernel> {
        match self {
            KernelSpec::Constant(c) => Kernel::constant(*c, unit),
            KernelSpec::Separable {
                level,
                amplitude,
                shape,
            } => Kernel::separable(*level, *amplitude, *shape, unit),
            KernelSpec::File(path) => load_tabulated(Path::new(path), physical),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> PhysicalParams {
        PhysicalParams::new(1e-3, 1.0, 0.2, 0.25, 0.35)
    }

    fn table(values: Vec<Vec<f64>>) -> Table {
        let n = values.len();
        let m = values[0].len();
        let grid = |k: usize| -> Vec<f64> {
            (0..k)
                .map(|i| 1e-3 + (1.0 - 1e-3) * i as f64 / (k - 1) as f64)
                .collect()
        };
        Table {
            x_grid: grid(n),
            xi_grid: grid(m),
            values,
        }
    }

    #[test]
    fn constant_everywhere() {
        let k = Kernel::constant(0.3, &p()).unwrap();
        assert_eq!(k.eval(0.5, 0.01).unwrap(), 0.3);
        assert_eq!(k.bounds(11), (0.3, 0.3));
        assert!(k.eval(0.0, 0.5).is_err());
        assert!(k.eval(0.5, 1.5).is_err());
    }

    #[test]
    fn separable_ramp_endpoints_and_bounds() {
        let p = p();
        let k = Kernel::separable(0.25, 0.05, Shape::Ramp, &p).unwrap();
        assert_eq!(k.eval(p.epsilon, p.epsilon).unwrap(), 0.25);
        assert!((k.eval(1.0, 1.0).unwrap() - 0.30).abs() < 1e-15);
        let (lo, hi) = kernel_bounds(&k, 101);
        assert!((lo - 0.25).abs() < 1e-12 && (hi - 0.30).abs() < 1e-12);
        assert_eq!(
            eval_kernel(&k, 0.5, 0.5).unwrap(),
            k.eval(0.5, 0.5).unwrap()
        );
        k.check_condition(&PhysicalParams::new(1e-3, 1.0, 0.2, 0.25, 0.3))
            .unwrap();
        assert!(k
            .check_condition(&PhysicalParams::new(1e-3, 1.0, 0.2, 0.26, 0.3))
            .is_err());
    }

    #[test]
    fn table_reproduces_nodes() {
        let t = table(vec![vec![0.26, 0.3, 0.28], vec![0.34, 0.27, 0.31]]);
        let k = Kernel::tabulated(t.clone(), &p()).unwrap();
        for (i, &x) in t.x_grid.iter().enumerate() {
            for (j, &xi) in t.xi_grid.iter().enumerate() {
                assert_eq!(k.eval(x, xi).unwrap(), t.values[i][j]);
            }
        }
        assert_eq!(k.declared_bounds, (0.26, 0.34));
    }

    #[test]
    fn flat_table_equals_constant() {
        let k = Kernel::tabulated(table(vec![vec![0.3, 0.3], vec![0.3, 0.3]]), &p()).unwrap();
        let c = Kernel::constant(0.3, &p()).unwrap();
        for &(x, xi) in &[(1e-3, 1e-3), (0.2, 0.7), (1.0, 0.5)] {
            assert!((k.eval(x, xi).unwrap() - c.eval(x, xi).unwrap()).abs() < 1e-16);
        }
    }

    #[test]
    fn bilinear_stays_inside_node_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(0.26..0.34)).collect())
            .collect();
        let k = Kernel::tabulated(table(values.clone()), &p()).unwrap();
        let (lo, hi) = values
            .iter()
            .flatten()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for _ in 0..1000 {
            let x = rng.random_range(1e-3..1.0);
            let xi = rng.random_range(1e-3..1.0);
            let v = k.eval(x, xi).unwrap();
            assert!(v >= lo && v <= hi);
        }
        let (blo, bhi) = k.bounds(50);
        assert!(blo >= 0.26 && bhi <= 0.34);
    }

    #[test]
    fn lipschitz_bound_holds() {
        let p = p();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..6).map(|_| rng.random_range(0.25..0.35)).collect())
            .collect();
        let kernels = [
            Kernel::constant(0.3, &p).unwrap(),
            Kernel::separable(0.25, 0.05, Shape::Ramp, &p).unwrap(),
            Kernel::separable(0.25, 0.1, Shape::Bump, &p).unwrap(),
            Kernel::tabulated(table(values), &p).unwrap(),
        ];
        for k in &kernels {
            let l = k.lipschitz_bound();
            for _ in 0..500 {
                let d = rng.random_range(0.0..0.05);
                let x = rng.random_range(1e-3..(1.0 - d));
                let xi = rng.random_range(1e-3..1.0);
                let a = k.eval(x + d, xi).unwrap() - k.eval(x, xi).unwrap();
                let b = k.eval(xi, x + d).unwrap() - k.eval(xi, x).unwrap();
                assert!(a.abs() <= l * d + 1e-14 && b.abs() <= l * d + 1e-14);
            }
        }
    }

    #[test]
    fn table_parse_errors_name_the_cell() {
        let text = "x\\xi,0.001,1\n0.001,0.3,0.3\n1,0.3,0\n";
        let msg = parse_table(text, "k.csv").unwrap_err().to_string();
        assert!(msg.contains("row 3, column 3"), "{msg}");
        let text = "x\\xi,0.001,1\n0.001,0.3,abc\n";
        assert!(parse_table(text, "k.csv")
            .unwrap_err()
            .to_string()
            .contains("column 3"));
    }

    #[test]
    fn grid_must_cover_square() {
        let t = Table {
            x_grid: vec![0.01, 1.0],
            xi_grid: vec![1e-3, 1.0],
            values: vec![vec![0.3, 0.3], vec![0.3, 0.3]],
        };
        let msg = Kernel::tabulated(t, &p()).unwrap_err().to_string();
        assert!(msg.contains("does not cover"), "{msg}");
        let t = Table {
            x_grid: vec![1e-3, 0.5, 0.4, 1.0],
            xi_grid: vec![1e-3, 1.0],
            values: vec![vec![0.3, 0.3]; 4],
        };
        assert!(Kernel::tabulated(t, &p())
            .unwrap_err()
            .to_string()
            .contains("strictly increasing"));
    }

    #[test]
    fn load_normalizes_grids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        std::fs::write(
            &path,
            "x\\xi,0.03,15,30\n0.03,0.3,0.3,0.3\n30,0.3,0.32,0.3\n",
        )
        .unwrap();
        let phys = PhysicalParams::new(0.03, 30.0, 0.2, 0.25, 0.35);
        let k = load_tabulated(&path, &phys).unwrap();
        assert_eq!((k.lower, k.upper), (1e-3, 1.0));
        assert!((k.eval(1.0, 0.5).unwrap() - 0.32).abs() < 1e-15);
        let tight = PhysicalParams::new(0.03, 30.0, 0.2, 0.31, 0.35);
        assert!(load_tabulated(&path, &tight).is_err());
    }

    #[test]
    fn spec_strings() {
        assert_eq!(
            "const:0.3".parse::<KernelSpec>().unwrap(),
            KernelSpec::Constant(0.3)
        );
        let s: KernelSpec = "sep:0.25:0.05".parse().unwrap();
        assert_eq!(s.to_string(), "sep:0.25:0.05:ramp");
        assert_eq!(s.to_string().parse::<KernelSpec>().unwrap(), s);
        assert!(matches!(
            "file:a.csv".parse::<KernelSpec>().unwrap(),
            KernelSpec::File(_)
        ));
        assert!("gauss:1".parse::<KernelSpec>().is_err());
        assert!("sep:0.2".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn declared_bounds_must_enclose() {
        let k = Kernel::constant(0.3, &p()).unwrap();
        let wide = k.clone().with_declared_bounds(0.28, 0.32).unwrap();
        assert_eq!(wide.declared_bounds, (0.28, 0.32));
        assert!(k.with_declared_bounds(0.31, 0.32).is_err());
    }
}
