//! Tables, verdicts and the on-disk CSV/JSON format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::scalar::Cx;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    F(f64),
    U(u64),
    B(bool),
    S(String),
}

impl Cell {
    /// Floats use 17 significant digits; non-finite values print as
    /// `inf`, `-inf` and `nan`.
    pub fn render(&self) -> String {
        match self {
            Cell::F(v) if v.is_nan() => "nan".into(),
            Cell::F(v) if v.is_infinite() => if *v > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::F(v) => format!("{v:.16e}"),
            Cell::U(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::U(v as u64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::F(v.unwrap_or(f64::NAN))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: &str, header: Vec<String>) -> Self {
        Table { file: file.into(), header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::render).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

/// `re_z, im_z` for one coordinate, `re_z1, im_z1, re_z2, ...` otherwise.
pub fn coord_header(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        return vec![format!("re_{prefix}"), format!("im_{prefix}")];
    }
    (1..=n).flat_map(|i| [format!("re_{prefix}{i}"), format!("im_{prefix}{i}")]).collect()
}

pub fn coord_cells(p: &[Cx<f64>]) -> Vec<Cell> {
    p.iter().flat_map(|z| [Cell::F(z.re), Cell::F(z.im)]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvStamp {
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub target: String,
}

impl EnvStamp {
    pub fn current(seed: u64) -> Self {
        EnvStamp {
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads: rayon::current_num_threads(),
            target: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub suite: String,
    pub config: serde_json::Value,
    pub tables: Vec<Table>,
    pub verdicts: Vec<VerdictLine>,
    pub env: EnvStamp,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.verdicts.push(VerdictLine { name: name.into(), pass, detail: detail.into() });
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "suite": self.suite,
            "pass": self.pass(),
            "config": self.config,
            "verdicts": self.verdicts,
            "tables": self.tables.iter().map(|t| &t.file).collect::<Vec<_>>(),
            "env": self.env,
            "timings": self.timings.iter().map(|(k, v)| serde_json::json!({"stage": k, "seconds": v})).collect::<Vec<_>>(),
        })
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!("{}: {}\n", self.suite, if self.pass() { "PASS" } else { "FAIL" });
        for v in &self.verdicts {
            let _ = writeln!(s, "  [{}] {}: {}", if v.pass { "pass" } else { "FAIL" }, v.name, v.detail);
        }
        for (k, t) in &self.timings {
            let _ = writeln!(s, "  {k}: {t:.2} s");
        }
        s
    }
}

pub fn emit_csv(table: &Table, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(&table.file);
    std::fs::write(&path, table.to_csv())?;
    Ok(path)
}

/// Writes every table plus `report.json` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for t in &report.tables {
        out.push(emit_csv(t, dir)?);
    }
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    text.push('\n');
    std::fs::write(&path, text)?;
    out.push(path);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(Cell::F(0.1).render(), "1.0000000000000001e-1");
        assert_eq!(Cell::F(0.1).render().parse::<f64>().unwrap(), 0.1);
        assert_eq!(Cell::F(f64::NEG_INFINITY).render(), "-inf");
        assert_eq!(Cell::from(None).render(), "nan");
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("k.csv", vec!["a".into(), "b".into()]);
        assert_eq!(t.to_csv(), "a,b\n");
    }

    #[test]
    fn headers() {
        assert_eq!(coord_header("z", 1), ["re_z", "im_z"]);
        assert_eq!(coord_header("t", 2), ["re_t1", "im_t1", "re_t2", "im_t2"]);
    }
}
