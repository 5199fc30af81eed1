use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use otstab::InvariantCheck;
use serde::Serialize;

use crate::CliError;

/// Formats a float so that output is short, round-trips and is locale-free.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Clone, Debug, Default)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// An invariant check tagged with the table row it belongs to.
#[derive(Clone, Debug, Serialize)]
pub struct RowCheck {
    pub row: usize,
    #[serde(flatten)]
    pub check: InvariantCheck,
}

/// Everything a scenario produces.
#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<(String, CsvTable)>,
    pub files: Vec<(String, String)>,
    pub checks: Vec<RowCheck>,
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl Outcome {
    pub fn check(&mut self, row: usize, check: InvariantCheck) {
        self.checks.push(RowCheck { row, check });
    }

    pub fn violations(&self) -> impl Iterator<Item = &RowCheck> {
        self.checks.iter().filter(|c| !c.check.holds)
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }
}

#[derive(Serialize)]
struct Report<'a> {
    scenario: &'a str,
    version: &'a str,
    config_sha256: &'a str,
    config: serde_json::Value,
    outputs: Vec<String>,
    checks_total: usize,
    checks_passed: usize,
    violations: Vec<&'a RowCheck>,
    summary: &'a serde_json::Map<String, serde_json::Value>,
}

pub fn write_outcome(
    dir: &Path,
    scenario: &str,
    config_sha256: &str,
    config: serde_json::Value,
    outcome: &Outcome,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let mut names = Vec::new();
    let contents = outcome
        .tables
        .iter()
        .map(|(n, t)| (n, t.to_csv()))
        .chain(outcome.files.iter().map(|(n, s)| (n, s.clone())));
    for (name, text) in contents {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        names.push(name.clone());
        written.push(path);
    }
    names.push("report.json".into());
    let violations: Vec<&RowCheck> = outcome.violations().collect();
    let report = Report {
        scenario,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256,
        config,
        outputs: names,
        checks_total: outcome.checks.len(),
        checks_passed: outcome.checks.len() - violations.len(),
        violations,
        summary: &outcome.summary,
    };
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    let _ = writeln!(text);
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_round_trips() {
        for v in [0.0, 1.0, 0.1, 1e-20, 123456.789, -3.5e-7, 1e300] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(1e-20), "1e-20");
    }

    #[test]
    fn csv_layout() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["1".into(), "2".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,2\n");
    }
}
