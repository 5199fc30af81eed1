use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Solve,
    Tightness,
    Stability,
    Chain,
    Bias,
    SemiDiscreteStability,
    PlotData,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Tightness => "tightness-sweep",
            Self::Stability => "stability-random",
            Self::Chain => "chain-diagnostics",
            Self::Bias => "bias-sweep",
            Self::SemiDiscreteStability => "semidiscrete-stability",
            Self::PlotData => "plotdata",
        }
    }

    fn allowed_keys(self) -> &'static [&'static str] {
        match self {
            Self::Solve => &["source", "target", "epsilon", "tolerance", "max_iterations"],
            Self::Tightness => &["radius", "epsilons", "thetas", "tolerance", "match_tolerance"],
            Self::Stability => &[
                "seed", "triples", "max_atoms", "dim", "radius", "epsilons", "tolerance", "lipschitz",
                "inverse_lipschitz",
            ],
            Self::Chain => &["seed", "triples", "max_atoms", "dim", "radius", "epsilons", "tolerance"],
            Self::Bias => &[
                "radius", "resolution", "epsilons", "target", "density", "sd_tolerance", "tolerance", "bandwidth",
                "h_inflation", "du", "tail",
            ],
            Self::SemiDiscreteStability => &[
                "radius", "resolution", "thetas", "epsilon", "density", "sd_tolerance", "tolerance",
            ],
            Self::PlotData => &["table", "x", "y", "transform", "output"],
        }
    }

    fn required_keys(self) -> &'static [&'static str] {
        match self {
            Self::Solve => &["source", "target", "epsilon"],
            Self::PlotData => &["table", "x", "y"],
            _ => &[],
        }
    }
}

/// A validated flat configuration table.
#[derive(Clone, Debug)]
pub struct Config {
    pub scenario: Scenario,
    table: Table,
    base_dir: PathBuf,
    pub output_dir: PathBuf,
}

const COMMON_KEYS: [&str; 2] = ["scenario", "output_dir"];

impl Config {
    pub fn load(scenario: Scenario, path: Option<&Path>) -> Result<Self, CliError> {
        let (table, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let table: Table = text
                    .parse()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (Table::new(), PathBuf::new()),
        };
        Self::from_table(scenario, table, base_dir)
    }

    pub fn from_table(scenario: Scenario, mut table: Table, base_dir: PathBuf) -> Result<Self, CliError> {
        if let Some(v) = table.remove("scenario") {
            let name = v
                .as_str()
                .ok_or_else(|| CliError::Config("`scenario` must be a string".into()))?;
            if name != scenario.name() {
                return Err(CliError::Config(format!(
                    "config is for scenario `{name}` but the `{}` subcommand was run",
                    scenario.name()
                )));
            }
        }
        let output_dir = match table.remove("output_dir") {
            Some(Value::String(s)) => base_dir.join(s),
            Some(_) => return Err(CliError::Config("`output_dir` must be a string".into())),
            None => PathBuf::from("otstab-out"),
        };
        let allowed: BTreeSet<&str> = scenario.allowed_keys().iter().copied().chain(COMMON_KEYS).collect();
        for key in table.keys() {
            if !allowed.contains(key.as_str()) {
                return Err(CliError::Config(format!(
                    "unknown key `{key}` for scenario `{}`",
                    scenario.name()
                )));
            }
        }
        let cfg = Self { scenario, table, base_dir, output_dir };
        for key in scenario.required_keys() {
            if !cfg.table.contains_key(*key) {
                return Err(CliError::Config(format!(
                    "missing required key `{key}` for scenario `{}`",
                    scenario.name()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.table.insert(key.to_string(), value);
    }

    pub fn set_output_dir(&mut self, dir: PathBuf) {
        self.output_dir = dir;
    }

    /// Canonical text of the effective configuration.
    pub fn canonical(&self) -> String {
        let mut t = self.table.clone();
        t.insert("scenario".into(), Value::String(self.scenario.name().into()));
        toml::to_string(&t).unwrap_or_default()
    }

    pub fn sha256(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn as_json(&self) -> serde_json::Value {
        let mut t = self.table.clone();
        t.insert("scenario".into(), Value::String(self.scenario.name().into()));
        serde_json::to_value(&t).unwrap_or(serde_json::Value::Null)
    }

    pub fn has(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&Value> {
        self.table.get(key)
    }

    fn number(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(CliError::Config(format!("`{key}` must be a number"))),
        }
    }

    pub fn positive(&self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = self.number(key)?.unwrap_or(default);
        if !(v > 0.0) || !v.is_finite() {
            return Err(CliError::Config(format!("`{key}` must be positive, got {v}")));
        }
        Ok(v)
    }

    pub fn optional_positive(&self, key: &str) -> Result<Option<f64>, CliError> {
        if self.has(key) {
            self.positive(key, 0.0).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn count(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.table.get(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i > 0 => Ok(*i as usize),
            Some(_) => Err(CliError::Config(format!("`{key}` must be a positive integer"))),
        }
    }

    pub fn seed(&self, default: u64) -> Result<u64, CliError> {
        match self.table.get("seed") {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(_) => Err(CliError::Config("`seed` must be a nonnegative integer".into())),
        }
    }

    pub fn positive_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        let list = match self.table.get(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(CliError::Config(format!("`{key}` must be a list of numbers"))),
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(CliError::Config(format!("`{key}` must be a list of numbers"))),
        };
        if list.is_empty() {
            return Err(CliError::Config(format!("`{key}` must not be empty")));
        }
        if let Some(v) = list.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(CliError::Config(format!("`{key}` entries must be positive, got {v}")));
        }
        Ok(list)
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(CliError::Config(format!("`{key}` must be a string"))),
        }
    }

    pub fn strings(&self, key: &str) -> Result<Vec<String>, CliError> {
        match self.table.get(key) {
            None => Ok(Vec::new()),
            Some(Value::String(s)) => Ok(vec![s.clone()]),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| CliError::Config(format!("`{key}` must be a list of strings")))
                })
                .collect(),
            Some(_) => Err(CliError::Config(format!("`{key}` must be a string or list of strings"))),
        }
    }

    /// A path value, resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        Ok(self.string(key)?.map(|s| self.base_dir.join(s)))
    }
}
