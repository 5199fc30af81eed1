//! Discrete probability measures on ℝᵈ.
//!
//! A [`DiscreteMeasure`] is a finite weighted point cloud whose weights are
//! strictly positive and sum to one. Densities are discretized with
//! [`grid_quadrature`], a midpoint rule on a regular grid.
//!
//! Text format (one measure per file):
//!
//! ```text
//! d n
//! w x_1 ... x_d      (n lines)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sq_norm;

/// Largest number of grid cells [`grid_quadrature`] will enumerate.
const MAX_GRID_CELLS: usize = 50_000_000;

/// Finite weighted point cloud with positive weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from row-major coordinates. Zero-weight atoms are
    /// dropped and the remaining weights renormalized.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * weights.len(),
                found: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("coordinates"));
        }
        let mut total = 0.0;
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite("weights"));
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight { index, value: w });
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::EmptySupport);
        }
        let mut kept_coords = Vec::with_capacity(coords.len());
        let mut kept_weights = Vec::with_capacity(weights.len());
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                kept_coords.extend_from_slice(&coords[i * dim..(i + 1) * dim]);
                kept_weights.push(w / total);
            }
        }
        Ok(Self {
            dim,
            coords: kept_coords,
            weights: kept_weights,
        })
    }

    /// Builds a measure keeping every atom, with weights already normalized
    /// up to rounding. Used for reweightings of an existing support.
    pub(crate) fn with_support_of(base: &DiscreteMeasure, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), base.len());
        Self {
            dim: base.dim,
            coords: base.coords.clone(),
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn second_moment(&self) -> f64 {
        self.points()
            .zip(&self.weights)
            .map(|(p, w)| w * sq_norm(p))
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.points().zip(&self.weights) {
            for (acc, x) in m.iter_mut().zip(p) {
                *acc += w * x;
            }
        }
        m
    }

    /// Largest Euclidean norm over the support.
    pub fn max_norm(&self) -> f64 {
        self.points().map(sq_norm).fold(0.0, f64::max).sqrt()
    }

    /// Same weights, every atom shifted by `v`.
    pub fn translated(&self, v: &[f64]) -> Result<Self> {
        check_dim(self.dim, v.len())?;
        let coords = self
            .coords
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(v).map(|(x, s)| x + s))
            .collect();
        Ok(Self {
            dim: self.dim,
            coords,
            weights: self.weights.clone(),
        })
    }

    /// Per-axis bounding box `(lower, upper)` of the support.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.points() {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Serializes to the `d n` / `w x_1 ... x_d` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.dim, self.len());
        for (p, w) in self.points().zip(&self.weights) {
            let _ = write!(out, "{w}");
            for x in p {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text format. Errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header `d n`".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: hline,
                message: format!("expected header `d n`, found `{header}`"),
            });
        }
        let dim: usize = parse_field(fields[0], hline, "dimension")?;
        let n: usize = parse_field(fields[1], hline, "atom count")?;
        if dim == 0 {
            return Err(Error::Parse {
                line: hline,
                message: "dimension must be positive".into(),
            });
        }
        let mut coords = Vec::with_capacity(n * dim);
        let mut weights = Vec::with_capacity(n);
        for (line, content) in lines {
            if weights.len() == n {
                return Err(Error::Parse {
                    line,
                    message: format!("more than the declared {n} atoms"),
                });
            }
            let values: Vec<&str> = content.split_whitespace().collect();
            if values.len() != dim + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", dim + 1, values.len()),
                });
            }
            let w: f64 = parse_field(values[0], line, "weight")?;
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("weight must be finite and nonnegative, found {w}"),
                });
            }
            weights.push(w);
            for v in &values[1..] {
                let x: f64 = parse_field(v, line, "coordinate")?;
                if !x.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: "non-finite coordinate".into(),
                    });
                }
                coords.push(x);
            }
        }
        if weights.len() != n {
            return Err(Error::Parse {
                line: text.lines().count().max(1),
                message: format!("declared {n} atoms, found {}", weights.len()),
            });
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Parse {
                line: hline,
                message: "weights are not normalizable (sum ≤ 0)".into(),
            });
        }
        Self::from_flat(dim, coords, weights)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{s}`"),
    })
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Builds a measure from a list of points and nonnegative weights.
pub fn make_discrete(points: &[Vec<f64>], weights: &[f64]) -> Result<DiscreteMeasure> {
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    let dim = points.first().ok_or(Error::EmptySupport)?.len();
    let mut coords = Vec::with_capacity(dim * points.len());
    for p in points {
        check_dim(dim, p.len())?;
        coords.extend_from_slice(p);
    }
    DiscreteMeasure::from_flat(dim, coords, weights.to_vec())
}

/// `½δ_{R e_θ} + ½δ_{−R e_θ}` in ℝ² with `e_θ = (cos θ, sin θ)`.
pub fn two_point_measure(radius: f64, angle: f64) -> Result<DiscreteMeasure> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let (s, c) = angle.sin_cos();
    DiscreteMeasure::from_flat(
        2,
        vec![radius * c, radius * s, -radius * c, -radius * s],
        vec![0.5, 0.5],
    )
}

pub fn second_moment(m: &DiscreteMeasure) -> f64 {
    m.second_moment()
}

/// Uniform measure on `count` random atoms drawn uniformly from the ball
/// `B(0; radius)`, with random weights in `[0.1, 1]` before normalization.
pub fn random_ball_measure<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    dim: usize,
    radius: f64,
) -> Result<DiscreteMeasure> {
    if count == 0 || dim == 0 {
        return Err(Error::EmptySupport);
    }
    let mut coords = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    for _ in 0..count {
        loop {
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if sq_norm(&p) <= 1.0 {
                coords.extend(p.iter().map(|x| x * radius));
                break;
            }
        }
        weights.push(rng.random_range(0.1..1.0));
    }
    DiscreteMeasure::from_flat(dim, coords, weights)
}

/// Densities that [`grid_quadrature`] can discretize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DensitySpec {
    /// Uniform density on `B(0; radius)` in ℝ^dim.
    UniformBall { dim: usize, radius: f64 },
    /// Uniform density on the box `[lower, upper]`.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Piecewise-constant density on `[lower, upper]` with cell values on a
    /// regular grid of the given shape (row-major, last axis fastest).
    GridValues {
        lower: Vec<f64>,
        upper: Vec<f64>,
        shape: Vec<usize>,
        values: Vec<f64>,
    },
}

impl DensitySpec {
    pub fn dim(&self) -> usize {
        match self {
            DensitySpec::UniformBall { dim, .. } => *dim,
            DensitySpec::UniformBox { lower, .. } | DensitySpec::GridValues { lower, .. } => {
                lower.len()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::UnsupportedDensity(m));
        match self {
            DensitySpec::UniformBall { dim, radius } => {
                if *dim == 0 {
                    return bad("ball dimension must be positive".into());
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return bad(format!("ball radius must be positive, got {radius}"));
                }
            }
            DensitySpec::UniformBox { lower, upper } => check_box(lower, upper)?,
            DensitySpec::GridValues {
                lower,
                upper,
                shape,
                values,
            } => {
                check_box(lower, upper)?;
                if shape.len() != lower.len() || shape.iter().any(|&s| s == 0) {
                    return bad("grid shape must have one positive entry per axis".into());
                }
                if shape.iter().product::<usize>() != values.len() {
                    return bad("grid values do not match the grid shape".into());
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return bad("grid values must be finite and nonnegative".into());
                }
            }
        }
        Ok(())
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            DensitySpec::UniformBall { dim, radius } => (vec![-radius; *dim], vec![*radius; *dim]),
            DensitySpec::UniformBox { lower, upper } | DensitySpec::GridValues { lower, upper, .. } => {
                (lower.clone(), upper.clone())
            }
        }
    }

    /// Unnormalized density at `x`.
    fn density(&self, x: &[f64]) -> f64 {
        match self {
            DensitySpec::UniformBall { radius, .. } => {
                if sq_norm(x) <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
            DensitySpec::UniformBox { lower, upper } => {
                let inside = x
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            DensitySpec::GridValues {
                lower,
                upper,
                shape,
                values,
            } => {
                let mut flat = 0;
                for k in 0..x.len() {
                    let rel = (x[k] - lower[k]) / (upper[k] - lower[k]);
                    if !(0.0..=1.0).contains(&rel) {
                        return 0.0;
                    }
                    let idx = ((rel * shape[k] as f64) as usize).min(shape[k] - 1);
                    flat = flat * shape[k] + idx;
                }
                values[flat]
            }
        }
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.is_empty() || lower.len() != upper.len() {
        return Err(Error::UnsupportedDensity(
            "box bounds must be non-empty and of equal length".into(),
        ));
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
    {
        return Err(Error::UnsupportedDensity("box bounds must be ordered".into()));
    }
    Ok(())
}

/// Midpoint-rule discretization of a density.
#[derive(Clone, Debug, PartialEq)]
pub struct GridQuadrature {
    pub measure: DiscreteMeasure,
    /// Side lengths of one grid cell.
    pub cell_widths: Vec<f64>,
    /// Cells whose midpoint carried zero density.
    pub dropped_cells: usize,
    /// Total box volume of the dropped cells.
    pub dropped_volume: f64,
}

impl GridQuadrature {
    pub fn cell_volume(&self) -> f64 {
        self.cell_widths.iter().product()
    }
}

/// Discretizes `spec` with `resolution` cells per axis over its bounding box.
/// Cells whose midpoint lies outside the support are dropped.
pub fn grid_quadrature(spec: &DensitySpec, resolution: usize) -> Result<GridQuadrature> {
    if resolution < 2 {
        return Err(Error::InvalidParameter(format!(
            "resolution must be at least 2, got {resolution}"
        )));
    }
    spec.validate()?;
    let dim = spec.dim();
    let total_cells = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(resolution));
    let total_cells = match total_cells {
        Some(n) if n <= MAX_GRID_CELLS => n,
        _ => {
            return Err(Error::SizeLimit {
                size: usize::MAX,
                limit: MAX_GRID_CELLS,
            })
        }
    };
    let (lower, upper) = spec.bounds();
    let widths: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(lo, hi)| (hi - lo) / resolution as f64)
        .collect();
    let cell_volume: f64 = widths.iter().product();

    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let mut dropped_cells = 0;
    let mut index = vec![0usize; dim];
    let mut center = vec![0.0; dim];
    for _ in 0..total_cells {
        for k in 0..dim {
            center[k] = lower[k] + (index[k] as f64 + 0.5) * widths[k];
        }
        let rho = spec.density(&center);
        if rho > 0.0 {
            coords.extend_from_slice(&center);
            weights.push(rho * cell_volume);
        } else {
            dropped_cells += 1;
        }
        // odometer, last axis fastest
        for k in (0..dim).rev() {
            index[k] += 1;
            if index[k] < resolution {
                break;
            }
            index[k] = 0;
        }
    }
    let measure = DiscreteMeasure::from_flat(dim, coords, weights)?;
    Ok(GridQuadrature {
        measure,
        cell_widths: widths,
        dropped_cells,
        dropped_volume: dropped_cells as f64 * cell_volume,
    })
}
