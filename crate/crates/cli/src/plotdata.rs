use std::fmt::Write as _;

use crate::output::num;
use crate::scenarios::least_squares_slope;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Linear,
    LogLog,
}

impl Transform {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "linear" => Ok(Self::Linear),
            "log-log" | "loglog" => Ok(Self::LogLog),
            _ => Err(CliError::Config(format!("`transform` must be \"linear\" or \"log-log\", got \"{s}\""))),
        }
    }
}

#[derive(Debug)]
pub struct PlotData {
    pub text: String,
    pub rows: usize,
    pub warnings: Vec<String>,
}

/// Whitespace-separated data for gnuplot. In log-log mode the columns hold
/// `log10` of the values and rows with a nonpositive entry are dropped.
pub fn emit_plotdata(csv: &str, x: &str, ys: &[String], transform: Transform) -> Result<PlotData, CliError> {
    let mut lines = csv
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let Some((_, header)) = lines.next() else {
        return Ok(PlotData {
            text: String::new(),
            rows: 0,
            warnings: vec!["table is empty; wrote an empty data file".into()],
        });
    };
    if ys.is_empty() {
        return Err(CliError::Config("at least one y column is required".into()));
    }
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| CliError::Input(format!("column `{name}` not found; available: {}", columns.join(", "))))
    };
    let xi = find(x)?;
    let yi: Vec<usize> = ys.iter().map(|y| find(y)).collect::<Result<_, _>>()?;
    let mut data: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for (line, content) in lines {
        let cells: Vec<&str> = content.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(CliError::Input(format!(
                "line {line}: expected {} fields, found {}",
                columns.len(),
                cells.len()
            )));
        }
        let mut row = Vec::with_capacity(1 + yi.len());
        for &k in std::iter::once(&xi).chain(&yi) {
            let v = if cells[k].is_empty() {
                f64::NAN
            } else {
                cells[k]
                    .parse::<f64>()
                    .map_err(|_| CliError::Input(format!("line {line}: `{}` is not a number", cells[k])))?
            };
            row.push(v);
        }
        let keep = match transform {
            Transform::Linear => row.iter().all(|v| v.is_finite()),
            Transform::LogLog => row.iter().all(|v| v.is_finite() && *v > 0.0),
        };
        if !keep {
            dropped += 1;
            continue;
        }
        if transform == Transform::LogLog {
            row.iter_mut().for_each(|v| *v = v.log10());
        }
        data.push(row);
    }
    let mut warnings = Vec::new();
    if dropped > 0 {
        let why = match transform {
            Transform::Linear => "non-finite",
            Transform::LogLog => "nonpositive or non-finite",
        };
        warnings.push(format!("dropped {dropped} row(s) with {why} values"));
    }
    if data.is_empty() {
        warnings.push("table has no usable rows; wrote an empty data file".into());
        return Ok(PlotData { text: String::new(), rows: 0, warnings });
    }
    let mut text = String::new();
    let label = |c: &str| match transform {
        Transform::Linear => c.to_string(),
        Transform::LogLog => format!("log10({c})"),
    };
    let _ = write!(text, "# {}", label(x));
    for y in ys {
        let _ = write!(text, " {}", label(y));
    }
    text.push('\n');
    for row in &data {
        let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
        let _ = writeln!(text, "{}", cells.join(" "));
    }
    for (k, y) in ys.iter().enumerate() {
        let pts: Vec<(f64, f64)> = data.iter().map(|r| (r[0], r[k + 1])).collect();
        match least_squares_slope(&pts) {
            Some(s) => {
                let _ = writeln!(text, "# slope {y}: {}", num(s));
            }
            None => {
                let _ = writeln!(text, "# slope {y}: undefined");
            }
        }
    }
    Ok(PlotData { text, rows: data.len(), warnings })
}
