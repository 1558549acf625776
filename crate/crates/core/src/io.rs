//! Run directories: CSV tables plus a JSON manifest with seed, grid hash and version.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::dtn::DtnRecord;
use crate::error::Result;
use crate::evolve::RotheSolution;
use crate::grid::UniformGrid;
use crate::kernel::{ElectricPotential, MagneticPotential};
use crate::recovery::RecoveredField;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shortest round-trip representation, identical across runs and platforms.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// A CSV table held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// One pass/fail line of a verification suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub level: Option<u32>,
    pub measured: f64,
    pub target: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Passes when `measured <= target`.
    pub fn at_most(check: impl Into<String>, level: Option<u32>, measured: f64, target: f64) -> Self {
        Self { check: check.into(), level, measured, target, pass: measured <= target }
    }

    /// Passes when `measured >= target`.
    pub fn at_least(check: impl Into<String>, level: Option<u32>, measured: f64, target: f64) -> Self {
        Self { check: check.into(), level, measured, target, pass: measured >= target }
    }

    pub fn flag(check: impl Into<String>, level: Option<u32>, measured: f64, target: f64, pass: bool) -> Self {
        Self { check: check.into(), level, measured, target, pass }
    }
}

pub fn checks_table(rows: &[CheckRow]) -> Table {
    let mut t = Table::new(["check", "level", "measured", "target", "pass"]);
    for r in rows {
        t.push(vec![
            r.check.clone(),
            r.level.map(|l| l.to_string()).unwrap_or_default(),
            fmt_f64(r.measured),
            fmt_f64(r.target),
            r.pass.to_string(),
        ]);
    }
    t
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub grid_hash: String,
    pub kernel_scale: f64,
    pub kernel_convention: String,
    pub config: String,
    pub files: Vec<String>,
    pub checks: Vec<CheckRow>,
    pub values: Map<String, Value>,
    pub warnings: Vec<String>,
    pub pass: bool,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, grid_hash: String, kernel_scale: f64, config: String) -> Self {
        Self {
            command: command.into(),
            version: VERSION.into(),
            seed,
            grid_hash,
            kernel_scale,
            kernel_convention: "form ∬(u(x)-u(y))(v(x)-v(y))K with K = kernel_scale |x-y|^(-n-2s); \
                                auto scale = c_{n,s}/2 so that the A-free form has symbol |ξ|^{2s}"
                .into(),
            config,
            files: Vec::new(),
            checks: Vec::new(),
            values: Map::new(),
            warnings: Vec::new(),
            pass: true,
        }
    }

    pub fn value(&mut self, key: &str, v: impl Serialize) {
        self.values.insert(key.into(), serde_json::to_value(v).expect("serializable value"));
    }

    pub fn check(&mut self, row: CheckRow) {
        self.pass &= row.pass;
        self.checks.push(row);
    }
}

/// Output directory of one invocation.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    pub fn create(path: &Path, manifest: Manifest) -> Result<Self> {
        fs::create_dir_all(path)?;
        Ok(Self { path: path.to_path_buf(), manifest })
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<()> {
        fs::write(self.path.join(name), table.to_csv())?;
        self.manifest.files.push(name.into());
        Ok(())
    }

    /// Writes `checks.csv` and `manifest.json`; returns whether every check passed.
    pub fn finish(mut self) -> Result<bool> {
        let checks = checks_table(&self.manifest.checks);
        if !self.manifest.checks.is_empty() {
            self.write_table("checks.csv", &checks)?;
        }
        self.manifest.files.push("manifest.json".into());
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(self.path.join("manifest.json"), text + "\n")?;
        Ok(self.manifest.pass)
    }
}

/// `(node index, coordinates, value)` for interior coefficients of a grid.
pub fn field_table(grid: &UniformGrid, coeffs: &[f64]) -> Table {
    let dim = grid.dim();
    let mut t = Table::new(std::iter::once("node".to_string()).chain((0..dim).map(|k| format!("x{}", k + 1))).chain(["value".into()]));
    for (i, v) in coeffs.iter().enumerate() {
        let x = grid.node(&grid.interior_multi(i));
        let mut row = vec![i.to_string()];
        row.extend(x[..dim].iter().map(|c| fmt_f64(*c)));
        row.push(fmt_f64(*v));
        t.push(row);
    }
    t
}

/// `(time node, t, node index, coordinates, value)` for every Rothe iterate.
pub fn solution_table(grid: &UniformGrid, sol: &RotheSolution) -> Table {
    let dim = grid.dim();
    let mut t = Table::new(
        ["step".to_string(), "t".into(), "node".into()]
            .into_iter()
            .chain((0..dim).map(|k| format!("x{}", k + 1)))
            .chain(["value".into()]),
    );
    let coords: Vec<Vec<String>> = (0..sol.dofs())
        .map(|i| grid.node(&grid.interior_multi(i))[..dim].iter().map(|c| fmt_f64(*c)).collect())
        .collect();
    for (j, z) in sol.z.iter().enumerate() {
        let tj = fmt_f64(sol.grid.node(j));
        for (i, v) in z.iter().enumerate() {
            let mut row = vec![j.to_string(), tj.clone(), i.to_string()];
            row.extend(coords[i].iter().cloned());
            row.push(fmt_f64(*v));
            t.push(row);
        }
    }
    t
}

/// `(point index, coordinates, time node, value)`.
pub fn dtn_table(rec: &DtnRecord, dim: usize) -> Table {
    let mut t = Table::new(
        ["point".to_string()]
            .into_iter()
            .chain((0..dim).map(|k| format!("x{}", k + 1)))
            .chain(["step".into(), "t".into(), "value".into()]),
    );
    for (p, x) in rec.points.iter().enumerate() {
        for j in 0..rec.samples.ncols() {
            let mut row = vec![p.to_string()];
            row.extend(x[..dim].iter().map(|c| fmt_f64(*c)));
            row.extend([j.to_string(), fmt_f64(rec.grid.node(j)), fmt_f64(rec.samples[(p, j)])]);
            t.push(row);
        }
    }
    t
}

/// Recovered `A` samples, with error columns when the truth is known.
pub fn magnetic_table(field: &RecoveredField, truth: Option<&MagneticPotential>) -> Table {
    let dim = field.dim;
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..dim).map(|k| format!("x{}", k + 1)));
    header.extend((0..dim).map(|k| format!("a{}", k + 1)));
    if truth.is_some() {
        header.extend((0..dim).map(|k| format!("true{}", k + 1)));
        header.push("error".into());
    }
    let sign = truth.map(|a| sign_against(field, a)).unwrap_or(1.0);
    let mut t = Table::new(header);
    for (k, tk) in field.a_times.iter().enumerate() {
        for (i, m) in field.midpoints.iter().enumerate() {
            let a = &field.a_est[k][i];
            let mut row = vec![fmt_f64(*tk)];
            row.extend(m[..dim].iter().map(|c| fmt_f64(*c)));
            row.extend(a[..dim].iter().map(|c| fmt_f64(*c)));
            if let Some(truth) = truth {
                let v = truth.value(m, *tk);
                row.extend(v[..dim].iter().map(|c| fmt_f64(*c)));
                let err = (0..dim).map(|c| (a[c] - sign * v[c]).powi(2)).sum::<f64>().sqrt();
                row.push(fmt_f64(err));
            }
            t.push(row);
        }
    }
    t
}

fn sign_against(field: &RecoveredField, truth: &MagneticPotential) -> f64 {
    let mut dot = 0.0;
    for (k, tk) in field.a_times.iter().enumerate() {
        for (i, m) in field.midpoints.iter().enumerate() {
            let v = truth.value(m, *tk);
            dot += (0..field.dim).map(|c| field.a_est[k][i][c] * v[c]).sum::<f64>();
        }
    }
    if dot < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Recovered `q` per cell and slab, with error columns when the truth is known.
pub fn electric_table(field: &RecoveredField, truth: Option<&ElectricPotential>) -> Table {
    let dim = field.dim;
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..dim).map(|k| format!("x{}", k + 1)));
    header.extend(["q".to_string(), "dq".into()]);
    if truth.is_some() {
        header.extend(["true".to_string(), "error".into()]);
    }
    let mut t = Table::new(header);
    for (k, tk) in field.q_times.iter().enumerate() {
        for (c, x) in field.cell_centers.iter().enumerate() {
            let mut row = vec![fmt_f64(*tk)];
            row.extend(x[..dim].iter().map(|v| fmt_f64(*v)));
            row.extend([fmt_f64(field.q_est[k][c]), fmt_f64(field.dq_est[k][c])]);
            if let Some(q) = truth {
                let v = q.value(x, *tk);
                row.extend([fmt_f64(v), fmt_f64((field.q_est[k][c] - v).abs())]);
            }
            t.push(row);
        }
    }
    t
}

/// Plain-text summary line for logs.
pub fn summary(rows: &[CheckRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let level = r.level.map(|l| format!(" level {l}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{} {}{}: {:.4e} (target {:.4e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.check,
            level,
            r.measured,
            r.target
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02e23] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn manifest_tracks_failures() {
        let mut m = Manifest::new("verify", 7, "abc".into(), 0.5, String::new());
        m.check(CheckRow::at_most("a", Some(1), 0.1, 0.2));
        assert!(m.pass);
        m.check(CheckRow::at_least("b", None, 0.1, 0.2));
        assert!(!m.pass);
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), m).unwrap();
        assert!(!run.finish().unwrap());
        let csv = std::fs::read_to_string(dir.path().join("checks.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        let json: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(json["seed"], 7);
        assert_eq!(json["pass"], false);
    }
}
