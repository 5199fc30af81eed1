//! Semi-discrete transport from a gridded density to a discrete measure.
//!
//! The unregularized dual is solved on the quadrature grid:
//!
//! ```text
//! F(ψ) = Σ_a ρ_a max_j (⟨x_a, y_j⟩ − ψ_j) + Σ_j μ_j ψ_j
//! ```
//!
//! is convex with gradient `μ_j − ρ(L_j)`, where `L_j` is the Laguerre cell of
//! atom `j` (grid atoms assigned by argmax, lowest index on ties). Gradient
//! steps with backtracking drive the mass mismatch below the tolerance.
//! Because every grid atom belongs to exactly one cell, cell masses are
//! piecewise constant in `ψ`, and tolerances below the mass of one grid
//! row crossing a boundary may be unreachable.
//!
//! The same module computes the entropic bias `‖T₀ − T_ε‖_{L²(ρ)}`, its
//! explicit upper bound through the boundary-slab densities `h_ij`, and the
//! bias/variance decomposition of `‖T₀^μ − T₀^ν‖_{L²(ρ)}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropic_maps::forward_map;
use crate::error::{Error, Result};
use crate::exact_ot::w2_distance;
use crate::linalg::{dot, sq_dist};
use crate::measures::{check_dim, DiscreteMeasure, GridQuadrature};
use crate::sinkhorn::{solve_entropic, SolverOptions};
use crate::stability::map_l2_distance;

const ARMIJO: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiDiscreteOptions {
    /// Sup-norm target for `|ρ(L_j) − μ_j|`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SemiDiscreteOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SemiDiscreteSolution {
    pub grid: GridQuadrature,
    pub atoms: DiscreteMeasure,
    /// Dual potential, mean-zero under `μ`.
    pub psi0: Vec<f64>,
    pub cell_masses: Vec<f64>,
    /// `max_j |cell_masses_j − μ_j|`.
    pub residual: f64,
    /// Cell index of every grid atom.
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

impl SemiDiscreteSolution {
    /// `T₀(x_a)` for grid atom `a`.
    pub fn map_at(&self, a: usize) -> &[f64] {
        self.atoms.point(self.assignment[a])
    }
}

/// Assignment, per-atom maxima and cell masses for a given `ψ`.
struct Partition {
    assignment: Vec<usize>,
    maxima: Vec<f64>,
    masses: Vec<f64>,
}

fn gram(grid: &DiscreteMeasure, atoms: &DiscreteMeasure) -> Vec<f64> {
    let m = atoms.len();
    let mut g = vec![0.0; grid.len() * m];
    g.par_chunks_mut(m).enumerate().for_each(|(a, row)| {
        let x = grid.point(a);
        for (j, v) in row.iter_mut().enumerate() {
            *v = dot(x, atoms.point(j));
        }
    });
    g
}

fn partition(gram: &[f64], m: usize, psi: &[f64], rho: &[f64]) -> Partition {
    let (assignment, maxima): (Vec<usize>, Vec<f64>) = gram
        .par_chunks(m)
        .map(|row| {
            let mut best = 0;
            let mut val = row[0] - psi[0];
            for j in 1..m {
                let v = row[j] - psi[j];
                if v > val {
                    best = j;
                    val = v;
                }
            }
            (best, val)
        })
        .unzip();
    let mut masses = vec![0.0; m];
    for (j, w) in assignment.iter().zip(rho) {
        masses[*j] += w;
    }
    Partition {
        assignment,
        maxima,
        masses,
    }
}

fn residual_of(masses: &[f64], mu: &[f64]) -> f64 {
    masses.iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Wraps an arbitrary discrete measure as a grid with zero-width cells.
pub fn point_grid(measure: DiscreteMeasure) -> GridQuadrature {
    let dim = measure.dim();
    GridQuadrature {
        measure,
        cell_widths: vec![0.0; dim],
        dropped_cells: 0,
        dropped_volume: 0.0,
    }
}

/// Solves the grid dual by gradient descent with backtracking.
pub fn solve_semidiscrete(
    grid: &GridQuadrature,
    mu: &DiscreteMeasure,
    opts: &SemiDiscreteOptions,
) -> Result<SemiDiscreteSolution> {
    let rho = &grid.measure;
    check_dim(rho.dim(), mu.dim())?;
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let m = mu.len();
    let g = gram(rho, mu);
    let mut psi = vec![0.0; m];
    let mut part = partition(&g, m, &psi, rho.weights());
    let mut step = 1.0;
    let mut iterations = 0;
    loop {
        let grad: Vec<f64> = mu.weights().iter().zip(&part.masses).map(|(a, b)| a - b).collect();
        let residual = grad.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if residual <= opts.tolerance {
            break;
        }
        let stuck = |part: &Partition| match part.masses.iter().position(|v| *v == 0.0) {
            Some(atom) => Error::EmptyCell { atom, residual },
            None => Error::NotConverged {
                solver: "semi-discrete dual descent",
                iterations,
                residual,
            },
        };
        if iterations >= opts.max_iterations {
            return Err(stuck(&part));
        }
        let gnorm2: f64 = grad.iter().map(|v| v * v).sum();
        let scale = 1.0 + psi.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut accepted = None;
        while step * residual > 1e-15 * scale {
            let trial: Vec<f64> = psi.iter().zip(&grad).map(|(p, d)| p - step * d).collect();
            let next = partition(&g, m, &trial, rho.weights());
            let mut change = 0.0;
            for ((a, b), w) in next.maxima.iter().zip(&part.maxima).zip(rho.weights()) {
                change += w * (a - b);
            }
            for ((a, b), w) in trial.iter().zip(&psi).zip(mu.weights()) {
                change += w * (a - b);
            }
            if change <= -ARMIJO * step * gnorm2 {
                accepted = Some((trial, next));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                psi = trial;
                part = next;
                step *= 2.0;
            }
            None => return Err(stuck(&part)),
        }
        iterations += 1;
    }
    let shift: f64 = psi.iter().zip(mu.weights()).map(|(p, w)| p * w).sum();
    psi.iter_mut().for_each(|p| *p -= shift);
    let residual = residual_of(&part.masses, mu.weights());
    Ok(SemiDiscreteSolution {
        grid: grid.clone(),
        atoms: mu.clone(),
        psi0: psi,
        cell_masses: part.masses,
        residual,
        assignment: part.assignment,
        iterations,
    })
}

/// `F(ψ)` on the solution's grid; the dual value is `−F`.
pub fn semidiscrete_dual_objective(sol: &SemiDiscreteSolution, psi: &[f64]) -> Result<f64> {
    if psi.len() != sol.atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: sol.atoms.len(),
            found: psi.len(),
        });
    }
    let mut total = 0.0;
    for (x, w) in sol.grid.measure.points().zip(sol.grid.measure.weights()) {
        let best = sol
            .atoms
            .points()
            .zip(psi)
            .map(|(y, p)| dot(x, y) - p)
            .fold(f64::NEG_INFINITY, f64::max);
        total += w * best;
    }
    Ok(total + psi.iter().zip(sol.atoms.weights()).map(|(p, w)| p * w).sum::<f64>())
}

/// `T₀(x)`: the atom maximizing `⟨x, y_j⟩ − ψ₀_j`, lowest index on ties.
pub fn brenier_map_eval(sol: &SemiDiscreteSolution, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    check_dim(sol.atoms.dim(), x.len())?;
    let mut best = 0;
    let mut val = f64::NEG_INFINITY;
    for (j, (y, p)) in sol.atoms.points().zip(&sol.psi0).enumerate() {
        let v = dot(x, y) - p;
        if v > val {
            best = j;
            val = v;
        }
    }
    Ok((best, sol.atoms.point(best).to_vec()))
}

fn check_pair(sol: &SemiDiscreteSolution, i: usize, j: usize) -> Result<()> {
    let len = sol.atoms.len();
    for k in [i, j] {
        if k >= len {
            return Err(Error::IndexOutOfRange { index: k, len });
        }
    }
    if i == j {
        return Err(Error::InvalidParameter("Δ_ij needs i ≠ j".into()));
    }
    Ok(())
}

fn delta_unchecked(sol: &SemiDiscreteSolution, i: usize, j: usize, x: &[f64]) -> f64 {
    let (yi, yj) = (sol.atoms.point(i), sol.atoms.point(j));
    2.0 * (dot(x, yi) - dot(x, yj) - sol.psi0[i] + sol.psi0[j])
}

/// `Δ_ij(x) = 2(⟨x, y_i − y_j⟩ − ψ₀_i + ψ₀_j)`.
pub fn delta_ij(sol: &SemiDiscreteSolution, i: usize, j: usize, x: &[f64]) -> Result<f64> {
    check_pair(sol, i, j)?;
    check_dim(sol.atoms.dim(), x.len())?;
    Ok(delta_unchecked(sol, i, j, x))
}

/// Values of `Δ_ij` over the grid atoms of `L_i`, spread over their cells.
///
/// `Δ_ij` is affine, so over one grid cell it is distributed as a sum of
/// independent uniforms with widths `|g_k| w_k` where `g = 2(y_i − y_j)`.
/// `G(t)`, the `ρ`-mass of `{x ∈ L_i : Δ_ij(x) ≤ t}`, is then evaluated
/// exactly for the piecewise-constant density.
struct SlabProfile {
    /// Sorted `Δ_ij` at the cell centres.
    deltas: Vec<f64>,
    weights: Vec<f64>,
    /// `prefix[k] = Σ_{l<k} weights[l]`.
    prefix: Vec<f64>,
    /// Nonzero uniform widths.
    widths: Vec<f64>,
    half_span: f64,
    /// `1 / (n! Π widths)`.
    norm: f64,
}

impl SlabProfile {
    fn new(sol: &SemiDiscreteSolution, i: usize, j: usize) -> Self {
        let grid = &sol.grid.measure;
        let mut pairs: Vec<(f64, f64)> = (0..grid.len())
            .filter(|&a| sol.assignment[a] == i)
            .map(|a| (delta_unchecked(sol, i, j, grid.point(a)), grid.weight(a)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (deltas, weights): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mut prefix = Vec::with_capacity(weights.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            prefix.push(acc);
        }
        let (yi, yj) = (sol.atoms.point(i), sol.atoms.point(j));
        let widths: Vec<f64> = yi
            .iter()
            .zip(yj)
            .zip(&sol.grid.cell_widths)
            .map(|((a, b), w)| (2.0 * (a - b) * w).abs())
            .filter(|w| *w > 0.0)
            .collect();
        let n = widths.len();
        let factorial: f64 = (1..=n).map(|k| k as f64).product();
        let norm = 1.0 / (factorial * widths.iter().product::<f64>());
        Self {
            half_span: widths.iter().sum::<f64>() / 2.0,
            deltas,
            weights,
            prefix,
            widths,
            norm,
        }
    }

    /// CDF of the sum of uniforms on `[0, widths_k]`.
    fn box_cdf(&self, s: f64) -> f64 {
        let n = self.widths.len();
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 2.0 * self.half_span {
            return 1.0;
        }
        let mut total = 0.0;
        for mask in 0usize..(1 << n) {
            let shift: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| self.widths[k]).sum();
            let r = s - shift;
            if r > 0.0 {
                let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                total += sign * r.powi(n as i32);
            }
        }
        (total * self.norm).clamp(0.0, 1.0)
    }

    fn cdf(&self, t: f64) -> f64 {
        let c = self.half_span;
        if c == 0.0 {
            let k = self.deltas.partition_point(|d| *d <= t);
            return self.prefix[k];
        }
        let full = self.deltas.partition_point(|d| *d + c <= t);
        let end = self.deltas.partition_point(|d| *d - c < t);
        let mut g = self.prefix[full];
        for k in full..end {
            g += self.weights[k] * self.box_cdf(t - (self.deltas[k] - c));
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HijEstimate {
    pub values: Vec<f64>,
    /// Slabs that carried no grid mass; their value is reported as 0.
    pub empty_slabs: usize,
}

/// Boundary-slab density `h_ij(t)` by finite differences of `G`:
/// `h(t) ≈ 2‖y_i − y_j‖ (G(t + b) − G(max(t − b, 0))) / width`.
///
/// Near `t = 0` the slab is one-sided and `G(0)` is taken as its exact
/// value 0, so mass that the cell smoothing pushes across the boundary is
/// counted inside the slab.
pub fn h_ij_estimate(
    sol: &SemiDiscreteSolution,
    i: usize,
    j: usize,
    t_values: &[f64],
    bandwidth: f64,
) -> Result<HijEstimate> {
    check_pair(sol, i, j)?;
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let profile = SlabProfile::new(sol, i, j);
    let dist = sq_dist(sol.atoms.point(i), sol.atoms.point(j)).sqrt();
    Ok(h_from_profile(&profile, dist, t_values, bandwidth))
}

fn h_from_profile(profile: &SlabProfile, dist: f64, t_values: &[f64], b: f64) -> HijEstimate {
    let mut empty_slabs = 0;
    let values = t_values
        .iter()
        .map(|&t| {
            let hi = t + b;
            let lo = (t - b).max(0.0);
            let g_lo = if t - b <= 0.0 { 0.0 } else { profile.cdf(lo) };
            let mass = profile.cdf(hi) - g_lo;
            if mass <= 0.0 {
                empty_slabs += 1;
                0.0
            } else {
                2.0 * dist * mass / (hi - lo)
            }
        })
        .collect();
    HijEstimate { values, empty_slabs }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasOptions {
    pub sinkhorn: SolverOptions,
    /// Slab half-width for `h_ij`.
    pub bandwidth: f64,
    /// Trapezoid step in `u = t/ε`.
    pub du: f64,
    /// Multiplier applied to `h_ij` estimates to cover their error.
    pub h_inflation: f64,
    /// The `u`-integral is cut where the weight falls below `e^{−tail}`.
    pub tail: f64,
}

impl Default for BiasOptions {
    fn default() -> Self {
        Self {
            sinkhorn: SolverOptions::default(),
            bandwidth: 0.05,
            du: 0.02,
            h_inflation: 1.0,
            tail: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasLedger {
    pub epsilon: f64,
    /// `‖T₀ − T_ε‖_{L²(ρ)}` on the grid.
    pub bias_l2: f64,
    /// `min_c ‖ψ₀ − ψ_ε + c‖_∞`.
    pub psi_gap_inf: f64,
    /// Co-area form of the bias bound with estimated `h_ij`.
    pub rhs_prelim: f64,
    /// The same bound summed directly over the grid cells.
    pub rhs_direct: f64,
    /// `ε⁻¹ bias_l2²`.
    pub limit_constant_estimate: f64,
    /// `Σ_{i≠j} ‖y_i − y_j‖ h_ij(0) log(1 + μ_j/μ_i)` with estimated `h_ij(0)`.
    pub bound_limit_estimate: f64,
    pub empty_slabs: usize,
}

/// Bias ledger on the grid and target stored in `sol`.
pub fn bias_ledger(sol: &SemiDiscreteSolution, epsilon: f64, opts: &BiasOptions) -> Result<BiasLedger> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    for (name, v) in [("bandwidth", opts.bandwidth), ("du", opts.du), ("h_inflation", opts.h_inflation), ("tail", opts.tail)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let grid = &sol.grid.measure;
    let mu = &sol.atoms;
    let p = solve_entropic(grid, mu, epsilon, &opts.sinkhorn)?;

    let bias_l2 = bias_on_grid(sol, &p)?;
    let bias_sq = bias_l2 * bias_l2;

    let delta: Vec<f64> = sol.psi0.iter().zip(&p.psi).map(|(a, b)| a - b).collect();
    let dmax = delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dmin = delta.iter().cloned().fold(f64::INFINITY, f64::min);
    let gap = (dmax - dmin) / 2.0;
    let factor = (2.0 * gap / epsilon).exp();

    let m = mu.len();
    let mut integral_sum = 0.0;
    let mut direct_sum = 0.0;
    let mut limit = 0.0;
    let mut empty_slabs = 0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (mi, mj) = (mu.weight(i), mu.weight(j));
            let dist = sq_dist(mu.point(i), mu.point(j)).sqrt();
            let ratio = mi / mj;
            let weight = |u: f64| 1.0 / (1.0 + ratio * (u / 2.0).exp());

            let upper = 2.0 * ((mj / mi).ln() + opts.tail).max(opts.tail);
            let steps = (upper / opts.du).ceil().max(1.0) as usize;
            let du = upper / steps as f64;
            let us: Vec<f64> = (0..=steps).map(|k| k as f64 * du).collect();
            let ts: Vec<f64> = us.iter().map(|u| u * epsilon).collect();
            let profile = SlabProfile::new(sol, i, j);
            let h = h_from_profile(&profile, dist, &ts, opts.bandwidth);
            empty_slabs += h.empty_slabs;
            let f: Vec<f64> = h.values.iter().zip(&us).map(|(h, u)| h * weight(*u)).collect();
            let trap = du * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[steps]));
            integral_sum += dist / 2.0 * opts.h_inflation * trap;
            limit += dist * h.values[0] * (1.0 + mj / mi).ln();

            let dsq = dist * dist;
            for a in (0..grid.len()).filter(|&a| sol.assignment[a] == i) {
                let d = delta_unchecked(sol, i, j, grid.point(a));
                direct_sum += grid.weight(a) * dsq / (1.0 + ratio * (d / (2.0 * epsilon)).exp());
            }
        }
    }
    Ok(BiasLedger {
        epsilon,
        bias_l2,
        psi_gap_inf: gap,
        rhs_prelim: factor * epsilon * integral_sum,
        rhs_direct: factor * direct_sum,
        limit_constant_estimate: bias_sq / epsilon,
        bound_limit_estimate: limit,
        empty_slabs,
    })
}

/// [`bias_ledger`] after checking that `grid` and `mu` are the ones `sol`
/// was solved on.
pub fn bias_ledger_with(
    grid: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    epsilon: f64,
    sol: &SemiDiscreteSolution,
    opts: &BiasOptions,
) -> Result<BiasLedger> {
    if grid != &sol.grid.measure {
        return Err(Error::MeasureMismatch("grid differs from the solution's grid".into()));
    }
    if mu != &sol.atoms {
        return Err(Error::MeasureMismatch("target differs from the solution's target".into()));
    }
    bias_ledger(sol, epsilon, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EpsilonRule {
    Fixed(f64),
    /// `ε = W₂(μ, ν)^{2/3}`.
    W2TwoThirds,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiDiscreteStabilityOptions {
    pub semidiscrete: SemiDiscreteOptions,
    pub sinkhorn: SolverOptions,
}

impl Default for SemiDiscreteStabilityOptions {
    fn default() -> Self {
        Self {
            semidiscrete: SemiDiscreteOptions::default(),
            sinkhorn: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiDiscreteStability {
    pub epsilon: f64,
    /// `‖T₀^μ − T_ε^μ‖_{L²(ρ)}`.
    pub bias_mu: f64,
    /// `‖T₀^ν − T_ε^ν‖_{L²(ρ)}`.
    pub bias_nu: f64,
    /// `‖T_ε^μ − T_ε^ν‖_{L²(ρ)}`.
    pub entropic_term: f64,
    /// `‖T₀^μ − T₀^ν‖_{L²(ρ)}` measured on the grid.
    pub lhs: f64,
    pub w2: f64,
    /// `lhs / W₂^{1/3}`.
    pub ratio: f64,
}

impl SemiDiscreteStability {
    pub fn decomposition_sum(&self) -> f64 {
        self.bias_mu + self.bias_nu + self.entropic_term
    }
}

fn bias_on_grid(sol: &SemiDiscreteSolution, p: &crate::sinkhorn::EntropicPotentials) -> Result<f64> {
    let grid = &sol.grid.measure;
    let sq: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|a| forward_map(p, grid.point(a)).map(|t| sq_dist(&t, sol.map_at(a))))
        .collect::<Result<_>>()?;
    Ok(sq.iter().zip(grid.weights()).map(|(s, w)| s * w).sum::<f64>().sqrt())
}

/// Measures `‖T₀^μ − T₀^ν‖_{L²(ρ)}` and the three terms bounding it.
pub fn semidiscrete_stability(
    grid: &GridQuadrature,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    rule: EpsilonRule,
    opts: &SemiDiscreteStabilityOptions,
) -> Result<SemiDiscreteStability> {
    check_dim(mu.dim(), nu.dim())?;
    let sol_mu = solve_semidiscrete(grid, mu, &opts.semidiscrete)?;
    let sol_nu = solve_semidiscrete(grid, nu, &opts.semidiscrete)?;
    let rho = &grid.measure;
    let lhs = (0..rho.len())
        .map(|a| rho.weight(a) * sq_dist(sol_mu.map_at(a), sol_nu.map_at(a)))
        .sum::<f64>()
        .sqrt();
    let w2 = w2_distance(mu, nu)?;
    let epsilon = match rule {
        EpsilonRule::Fixed(e) => e,
        EpsilonRule::W2TwoThirds => w2.powf(2.0 / 3.0),
    };
    if epsilon == 0.0 && rule == EpsilonRule::W2TwoThirds {
        return Ok(SemiDiscreteStability {
            epsilon,
            bias_mu: 0.0,
            bias_nu: 0.0,
            entropic_term: 0.0,
            lhs,
            w2,
            ratio: 0.0,
        });
    }
    let p_mu = solve_entropic(rho, mu, epsilon, &opts.sinkhorn)?;
    let p_nu = solve_entropic(rho, nu, epsilon, &opts.sinkhorn)?;
    Ok(SemiDiscreteStability {
        epsilon,
        bias_mu: bias_on_grid(&sol_mu, &p_mu)?,
        bias_nu: bias_on_grid(&sol_nu, &p_nu)?,
        entropic_term: map_l2_distance(&p_mu, &p_nu)?,
        lhs,
        w2,
        ratio: if w2 > 0.0 { lhs / w2.cbrt() } else { 0.0 },
    })
}
