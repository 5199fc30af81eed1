//! `otstab` scenario runner.
//!
//! Exit status: 0 when every invariant check passed, 1 on a violated
//! invariant, 2 on a configuration or input error, 3 on a solver failure.

mod config;
mod output;
mod plotdata;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use toml::Value;

use config::{Config, Scenario};
use output::Outcome;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn from_lib(e: otstab::Error) -> Self {
        use otstab::Error as E;
        match e {
            E::NotConverged { .. } | E::EmptyCell { .. } | E::SizeLimit { .. } | E::NonFinite(_) | E::ZeroMarginal(_) => {
                Self::Solver(e.to_string())
            }
            E::Io(_) => Self::Io(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            Self::Config(m) => Self::Config(format!("{what}: {m}")),
            Self::Input(m) => Self::Input(format!("{what}: {m}")),
            Self::Solver(m) => Self::Solver(format!("{what}: {m}")),
            Self::Io(m) => Self::Io(format!("{what}: {m}")),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Solver(_) => 3,
            _ => 2,
        }
    }
}

impl From<otstab::Error> for CliError {
    fn from(e: otstab::Error) -> Self {
        Self::from_lib(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "otstab", version, about = "Entropic and exact optimal transport stability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for data-parallel kernels.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct PlotArgs {
    #[command(flatten)]
    common: Common,
    /// CSV table to read.
    #[arg(long, value_name = "PATH")]
    table: Option<PathBuf>,
    /// Column for the x axis.
    #[arg(long)]
    x: Option<String>,
    /// Columns for the y axis.
    #[arg(long, value_delimiter = ',')]
    y: Vec<String>,
    /// `linear` or `log-log`.
    #[arg(long)]
    transform: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Entropic potentials and the exact plan between two measure files.
    Solve(Common),
    /// Two-point tightness family against its closed form.
    Tightness(Common),
    /// Stability bounds on random triples.
    Stability(Common),
    /// Proof-chain diagnostics on random triples.
    Chain(Common),
    /// Semi-discrete entropic bias sweep.
    Bias(Common),
    /// Semi-discrete stability on a rotating two-atom family.
    Sdstab(Common),
    /// Gnuplot-ready columns from a CSV table.
    Plotdata(PlotArgs),
}

fn configure(scenario: Scenario, common: &Common) -> Result<Config, CliError> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))?;
    }
    let mut cfg = Config::load(scenario, common.config.as_deref())?;
    if let Some(seed) = common.seed {
        if matches!(scenario, Scenario::Stability | Scenario::Chain) {
            cfg.set("seed", Value::Integer(seed as i64));
        } else {
            eprintln!("warning: --seed has no effect on `{}`", scenario.name());
        }
    }
    if let Some(out) = &common.out {
        cfg.set_output_dir(out.clone());
    }
    Ok(cfg)
}

fn run_plotdata(cfg: &Config) -> Result<Outcome, CliError> {
    let table = cfg.path("table")?.expect("required key");
    let x = cfg.string("x")?.expect("required key");
    let ys = cfg.strings("y")?;
    let transform = plotdata::Transform::parse(cfg.string("transform")?.as_deref().unwrap_or("linear"))?;
    let csv = std::fs::read_to_string(&table).map_err(|e| CliError::Input(format!("{}: {e}", table.display())))?;
    let data = plotdata::emit_plotdata(&csv, &x, &ys, transform).map_err(|e| e.context(&table.display().to_string()))?;
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    let name = match cfg.string("output")? {
        Some(n) => n,
        None => format!("{}.dat", table.file_stem().and_then(|s| s.to_str()).unwrap_or("plot")),
    };
    let mut out = Outcome::default();
    out.note("rows", data.rows);
    out.note("warnings", &data.warnings);
    out.files.push((name, data.text));
    Ok(out)
}

fn configure_plot(args: &PlotArgs) -> Result<Config, CliError> {
    let mut table = match &args.common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let base = args
        .common
        .config
        .as_ref()
        .and_then(|p| p.parent().map(PathBuf::from))
        .unwrap_or_default();
    if let Some(t) = &args.table {
        let abs = std::path::absolute(t).map_err(|e| CliError::Config(e.to_string()))?;
        table.insert("table".into(), Value::String(abs.display().to_string()));
    }
    if let Some(x) = &args.x {
        table.insert("x".into(), Value::String(x.clone()));
    }
    if !args.y.is_empty() {
        table.insert("y".into(), Value::Array(args.y.iter().cloned().map(Value::String).collect()));
    }
    if let Some(t) = &args.transform {
        table.insert("transform".into(), Value::String(t.clone()));
    }
    let mut cfg = Config::from_table(Scenario::PlotData, table, base)?;
    if let Some(out) = &args.common.out {
        cfg.set_output_dir(out.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let (cfg, outcome) = match &cli.command {
        Command::Plotdata(args) => {
            let cfg = configure_plot(args)?;
            let outcome = run_plotdata(&cfg)?;
            (cfg, outcome)
        }
        Command::Solve(c) => with(Scenario::Solve, c, scenarios::solve)?,
        Command::Tightness(c) => with(Scenario::Tightness, c, scenarios::tightness)?,
        Command::Stability(c) => with(Scenario::Stability, c, scenarios::stability)?,
        Command::Chain(c) => with(Scenario::Chain, c, scenarios::chain)?,
        Command::Bias(c) => with(Scenario::Bias, c, scenarios::bias)?,
        Command::Sdstab(c) => with(Scenario::SemiDiscreteStability, c, scenarios::semidiscrete)?,
    };
    let written = output::write_outcome(&cfg.output_dir, cfg.scenario.name(), &cfg.sha256(), cfg.as_json(), &outcome)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    let violations: Vec<_> = outcome.violations().collect();
    println!(
        "{}: {} of {} checks passed",
        cfg.scenario.name(),
        outcome.checks.len() - violations.len(),
        outcome.checks.len()
    );
    for v in &violations {
        eprintln!(
            "invariant violated at row {}: {} (lhs {:e}, rhs {:e})",
            v.row, v.check.name, v.check.lhs, v.check.rhs
        );
    }
    Ok(if violations.is_empty() { 0 } else { 1 })
}

fn with(
    scenario: Scenario,
    common: &Common,
    f: fn(&Config) -> Result<Outcome, CliError>,
) -> Result<(Config, Outcome), CliError> {
    let cfg = configure(scenario, common)?;
    let outcome = f(&cfg)?;
    Ok((cfg, outcome))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
