//! Log-domain Sinkhorn iterations for the entropic dual.
//!
//! Potentials use the inner-product gauge. Given `ψ` on the target atoms the
//! source potential is the soft conjugate
//!
//! ```text
//! φ(x) = ε log Σ_j ν_j exp((⟨x, z_j⟩ − ψ_j) / ε)
//! ```
//!
//! and symmetrically for `ψ`. Alternating the two updates from `ψ ≡ 0` is
//! Sinkhorn's algorithm. Exponentials only ever appear inside a log-sum-exp.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp};
use crate::measures::{check_dim, DiscreteMeasure};

/// Row counts above which conjugate updates are split across threads.
const PAR_THRESHOLD: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceMetric {
    /// Sup-norm violation of the coupling-density normalization on both sides.
    MarginalSup,
    /// Sup-norm change of `φ` over one sweep.
    PotentialSup,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub metric: ConvergenceMetric,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100_000,
            metric: ConvergenceMetric::MarginalSup,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

/// How the additive constant shared by `(φ, ψ)` is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gauge {
    /// `Σ_j ν_j ψ_j = 0`.
    TargetMeanZero,
    /// No normalization applied (hand-built potentials).
    Free,
}

/// Entropic potentials `(φ, ψ)` between a source `ρ` and target `ν`.
#[derive(Clone, Debug)]
pub struct EntropicPotentials {
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    pub epsilon: f64,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub gauge: Gauge,
    pub iterations: usize,
    /// Marginal residual at the returned iterate.
    pub residual: f64,
}

impl EntropicPotentials {
    /// Wraps arbitrary potential vectors (no convergence implied).
    pub fn from_parts(
        source: DiscreteMeasure,
        target: DiscreteMeasure,
        epsilon: f64,
        phi: Vec<f64>,
        psi: Vec<f64>,
    ) -> Result<Self> {
        check_dim(source.dim(), target.dim())?;
        check_epsilon(epsilon)?;
        if phi.len() != source.len() {
            return Err(Error::DimensionMismatch {
                expected: source.len(),
                found: phi.len(),
            });
        }
        if psi.len() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: target.len(),
                found: psi.len(),
            });
        }
        if phi.iter().chain(&psi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potentials"));
        }
        let mut p = Self {
            source,
            target,
            epsilon,
            phi,
            psi,
            gauge: Gauge::Free,
            iterations: 0,
            residual: f64::NAN,
        };
        p.residual = marginal_residual(&p);
        Ok(p)
    }

    /// `log γ(x_i, z_j)`.
    pub fn log_density(&self, i: usize, j: usize) -> f64 {
        (dot(self.source.point(i), self.target.point(j)) - self.phi[i] - self.psi[j]) / self.epsilon
    }

    /// Potentials with the opposite sign convention used for the quadratic
    /// cost: `f(x) = ½‖x‖² − φ(x)` and `g(z) = ½‖z‖² − ψ(z)`.
    pub fn quadratic_cost_potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let f = self
            .source
            .points()
            .zip(&self.phi)
            .map(|(x, p)| 0.5 * dot(x, x) - p)
            .collect();
        let g = self
            .target
            .points()
            .zip(&self.psi)
            .map(|(z, p)| 0.5 * dot(z, z) - p)
            .collect();
        (f, g)
    }

    /// Text format: header `epsilon n m`, then `n` values of `φ` and `m`
    /// values of `ψ`, one per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.epsilon, self.phi.len(), self.psi.len());
        for v in self.phi.iter().chain(&self.psi) {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    /// Reads the text format back against the given measures.
    pub fn parse(text: &str, source: DiscreteMeasure, target: DiscreteMeasure) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let bad = |line: usize, message: String| Error::Parse { line, message };
        let (hl, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 {
            return Err(bad(hl, format!("expected `epsilon n m`, found `{header}`")));
        }
        let epsilon: f64 = h[0].parse().map_err(|_| bad(hl, "invalid epsilon".into()))?;
        let n: usize = h[1].parse().map_err(|_| bad(hl, "invalid n".into()))?;
        let m: usize = h[2].parse().map_err(|_| bad(hl, "invalid m".into()))?;
        let mut values = Vec::with_capacity(n + m);
        for (line, l) in lines {
            values.push(l.parse::<f64>().map_err(|_| bad(line, format!("invalid value `{l}`")))?);
        }
        if values.len() != n + m {
            return Err(bad(
                text.lines().count(),
                format!("expected {} values, found {}", n + m, values.len()),
            ));
        }
        let psi = values.split_off(n);
        Self::from_parts(source, target, epsilon, values, psi)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    Ok(())
}

/// `Φ_ε^q[values](query) = ε log Σ_i q_i exp((⟨x_i, query⟩ − values_i) / ε)`.
pub fn soft_conjugate(
    values: &[f64],
    query: &[f64],
    epsilon: f64,
    q: &DiscreteMeasure,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_dim(q.dim(), query.len())?;
    if values.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            found: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("potential values"));
    }
    Ok(soft_conjugate_unchecked(values, query, epsilon, q))
}

pub(crate) fn soft_conjugate_unchecked(
    values: &[f64],
    query: &[f64],
    epsilon: f64,
    q: &DiscreteMeasure,
) -> f64 {
    epsilon
        * log_sum_exp(
            q.points()
                .zip(values)
                .zip(q.weights())
                .map(|((x, v), w)| (dot(x, query) - v) / epsilon + w.ln()),
        )
}

/// Conjugate update along the rows of a row-major inner-product matrix:
/// `out_r = ε log Σ_c w_c exp((G_rc − values_c) / ε)`.
fn conjugate_rows(
    gram: &[f64],
    cols: usize,
    values: &[f64],
    log_w: &[f64],
    epsilon: f64,
    out: &mut [f64],
) {
    let row = |r: usize| {
        let g = &gram[r * cols..(r + 1) * cols];
        epsilon
            * log_sum_exp(
                g.iter()
                    .zip(values)
                    .zip(log_w)
                    .map(|((g, v), lw)| (g - v) / epsilon + lw),
            )
    };
    if out.len() >= PAR_THRESHOLD {
        out.par_iter_mut().enumerate().for_each(|(r, o)| *o = row(r));
    } else {
        out.iter_mut().enumerate().for_each(|(r, o)| *o = row(r));
    }
}

/// Stateful Sinkhorn iteration. After every sweep the target-side
/// normalization holds exactly and the source side carries the residual.
pub struct SinkhornSolver {
    rho: DiscreteMeasure,
    nu: DiscreteMeasure,
    epsilon: f64,
    gram: Vec<f64>,
    gram_t: Vec<f64>,
    log_rho: Vec<f64>,
    log_nu: Vec<f64>,
    phi: Vec<f64>,
    psi: Vec<f64>,
    next_phi: Vec<f64>,
    iterations: usize,
}

impl SinkhornSolver {
    pub fn new(rho: &DiscreteMeasure, nu: &DiscreteMeasure, epsilon: f64) -> Result<Self> {
        check_dim(rho.dim(), nu.dim())?;
        check_epsilon(epsilon)?;
        let (n, m) = (rho.len(), nu.len());
        let mut gram = vec![0.0; n * m];
        let fill = |(i, row): (usize, &mut [f64])| {
            let x = rho.point(i);
            for (j, g) in row.iter_mut().enumerate() {
                *g = dot(x, nu.point(j));
            }
        };
        if n >= PAR_THRESHOLD {
            gram.par_chunks_mut(m).enumerate().for_each(fill);
        } else {
            gram.chunks_mut(m).enumerate().for_each(fill);
        }
        let mut gram_t = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                gram_t[j * n + i] = gram[i * m + j];
            }
        }
        let mut solver = Self {
            log_rho: rho.weights().iter().map(|w| w.ln()).collect(),
            log_nu: nu.weights().iter().map(|w| w.ln()).collect(),
            rho: rho.clone(),
            nu: nu.clone(),
            epsilon,
            gram,
            gram_t,
            phi: vec![0.0; n],
            psi: vec![0.0; m],
            next_phi: vec![0.0; n],
            iterations: 0,
        };
        // ψ ≡ 0 start
        solver.update_phi_into_next();
        solver.sweep();
        Ok(solver)
    }

    fn update_phi_into_next(&mut self) {
        let m = self.nu.len();
        conjugate_rows(&self.gram, m, &self.psi, &self.log_nu, self.epsilon, &mut self.next_phi);
    }

    /// One full sweep: `φ ← Φ^ν[ψ]`, then `ψ ← Φ^ρ[φ]`.
    pub fn sweep(&mut self) {
        std::mem::swap(&mut self.phi, &mut self.next_phi);
        let n = self.rho.len();
        conjugate_rows(&self.gram_t, n, &self.phi, &self.log_rho, self.epsilon, &mut self.psi);
        self.update_phi_into_next();
        self.iterations += 1;
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Source-side normalization violation `max_i |Σ_j γ_ij ν_j − 1|` of the
    /// current iterate (the target side is exact).
    pub fn marginal_residual(&self) -> f64 {
        self.phi
            .iter()
            .zip(&self.next_phi)
            .map(|(p, q)| ((q - p) / self.epsilon).exp_m1().abs())
            .fold(0.0, f64::max)
    }

    /// Sup-norm change of `φ` that the next sweep would make.
    pub fn potential_change(&self) -> f64 {
        self.phi
            .iter()
            .zip(&self.next_phi)
            .map(|(p, q)| (q - p).abs())
            .fold(0.0, f64::max)
    }

    fn residual(&self, metric: ConvergenceMetric) -> f64 {
        match metric {
            ConvergenceMetric::MarginalSup => self.marginal_residual(),
            ConvergenceMetric::PotentialSup => self.potential_change(),
        }
    }

    /// Current potentials, gauged so that `ψ` is mean-zero under `ν`.
    pub fn potentials(&self) -> EntropicPotentials {
        let shift: f64 = self.psi.iter().zip(self.nu.weights()).map(|(p, w)| p * w).sum();
        EntropicPotentials {
            source: self.rho.clone(),
            target: self.nu.clone(),
            epsilon: self.epsilon,
            phi: self.phi.iter().map(|p| p + shift).collect(),
            psi: self.psi.iter().map(|p| p - shift).collect(),
            gauge: Gauge::TargetMeanZero,
            iterations: self.iterations,
            residual: self.marginal_residual(),
        }
    }
}

/// Solves the entropic dual between `rho` and `nu` by Sinkhorn iterations.
pub fn solve_entropic(
    rho: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
    opts: &SolverOptions,
) -> Result<EntropicPotentials> {
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let mut solver = SinkhornSolver::new(rho, nu, epsilon)?;
    loop {
        let residual = solver.residual(opts.metric);
        if !residual.is_finite() {
            return Err(Error::NonFinite("Sinkhorn residual"));
        }
        if residual <= opts.tolerance {
            return Ok(solver.potentials());
        }
        if solver.iterations() >= opts.max_iterations {
            return Err(Error::NotConverged {
                solver: "sinkhorn",
                iterations: solver.iterations(),
                residual,
            });
        }
        solver.sweep();
    }
}

/// `(⟨x_i, z_j⟩ − φ_i − ψ_j) / ε`, the log of the coupling density.
pub fn plan_log_density(p: &EntropicPotentials, i: usize, j: usize) -> Result<f64> {
    if i >= p.source.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: p.source.len(),
        });
    }
    if j >= p.target.len() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: p.target.len(),
        });
    }
    Ok(p.log_density(i, j))
}

/// Largest violation of either normalization,
/// `max(max_i |Σ_j γ_ij ν_j − 1|, max_j |Σ_i γ_ij ρ_i − 1|)`.
pub fn marginal_residual(p: &EntropicPotentials) -> f64 {
    let eps = p.epsilon;
    let rows = p
        .source
        .points()
        .zip(&p.phi)
        .map(|(x, phi)| ((soft_conjugate_unchecked(&p.psi, x, eps, &p.target) - phi) / eps).exp_m1().abs())
        .fold(0.0, f64::max);
    let cols = p
        .target
        .points()
        .zip(&p.psi)
        .map(|(z, psi)| ((soft_conjugate_unchecked(&p.phi, z, eps, &p.source) - psi) / eps).exp_m1().abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

/// Entropic dual objective
/// `−Σ ρ_i φ_i − Σ ν_j ψ_j − ε Σ ρ_i ν_j γ_ij + ε`, which Sinkhorn sweeps
/// never decrease.
pub fn dual_objective(p: &EntropicPotentials) -> f64 {
    let linear: f64 = p.phi.iter().zip(p.source.weights()).map(|(v, w)| v * w).sum::<f64>()
        + p.psi.iter().zip(p.target.weights()).map(|(v, w)| v * w).sum::<f64>();
    let mut mass = 0.0;
    for i in 0..p.source.len() {
        for j in 0..p.target.len() {
            mass += p.source.weight(i) * p.target.weight(j) * p.log_density(i, j).exp();
        }
    }
    -linear - p.epsilon * mass + p.epsilon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_discrete, two_point_measure};
    use std::f64::consts::PI;

    #[test]
    fn single_atom_conjugate() {
        let q = make_discrete(&[vec![0.5, -1.0]], &[1.0]).unwrap();
        for &eps in &[1e-3, 0.5, 10.0] {
            let v = soft_conjugate(&[0.3], &[2.0, 1.0], eps, &q).unwrap();
            assert!((v - (0.5 * 2.0 - 1.0 - 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_two_point_conjugate_is_zero() {
        let p0 = two_point_measure(1.0, 0.0).unwrap();
        let v = soft_conjugate(&[0.0, 0.0], &[0.0, 1.0], 0.5, &p0).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn conjugate_approaches_max_as_epsilon_shrinks() {
        let q = make_discrete(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.3, 0.7]).unwrap();
        let values = [0.1, 0.4];
        let query = [0.8, 0.6];
        let max = (0.8 - 0.1f64).max(0.6 - 0.4);
        let gaps: Vec<f64> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&e| (soft_conjugate(&values, &query, e, &q).unwrap() - max).abs())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 0.02);
    }

    #[test]
    fn conjugate_survives_huge_exponents() {
        let q = make_discrete(&[vec![1.0], vec![-1.0]], &[0.5, 0.5]).unwrap();
        let v = soft_conjugate(&[0.0, 0.0], &[1e3], 1e-3, &q).unwrap();
        assert!((v - (1e3 + 1e-3 * 0.5f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn single_atoms_are_coupled_with_unit_density() {
        let a = make_discrete(&[vec![0.3, 0.4]], &[1.0]).unwrap();
        let p = solve_entropic(&a, &a, 0.7, &SolverOptions::default()).unwrap();
        assert!((p.phi[0] + p.psi[0] - 0.25).abs() < 1e-14);
        assert!(plan_log_density(&p, 0, 0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn huge_epsilon_gives_product_coupling() {
        let rho = make_discrete(&[vec![0.1, 0.2], vec![-0.5, 0.3], vec![0.9, -0.1]], &[1.0, 2.0, 3.0]).unwrap();
        let nu = make_discrete(&[vec![0.0, 1.0], vec![-0.4, -0.4]], &[1.0, 1.0]).unwrap();
        let p = solve_entropic(&rho, &nu, 1e6, &SolverOptions::default()).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!(p.log_density(i, j).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn zero_potentials_have_positive_residual() {
        let rho = two_point_measure(1.0, PI / 2.0).unwrap();
        let nu = make_discrete(&[vec![1.0, 1.0], vec![-0.2, 0.1]], &[0.5, 0.5]).unwrap();
        let p = EntropicPotentials::from_parts(rho, nu, 0.5, vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert!(marginal_residual(&p) > 0.0);
    }

    #[test]
    fn converged_residual_within_tolerance_and_gauge() {
        let rho = make_discrete(&[vec![0.1], vec![0.7], vec![-0.4]], &[0.2, 0.5, 0.3]).unwrap();
        let nu = make_discrete(&[vec![0.0], vec![1.0]], &[0.6, 0.4]).unwrap();
        let opts = SolverOptions::default();
        let p = solve_entropic(&rho, &nu, 0.2, &opts).unwrap();
        assert!(marginal_residual(&p) <= 1.5 * opts.tolerance);
        let mean: f64 = p.psi.iter().zip(nu.weights()).map(|(a, b)| a * b).sum();
        assert!(mean.abs() < 1e-14);
    }

    #[test]
    fn errors() {
        let a = make_discrete(&[vec![0.0]], &[1.0]).unwrap();
        let b = make_discrete(&[vec![0.0, 1.0]], &[1.0]).unwrap();
        let opts = SolverOptions::default();
        assert!(solve_entropic(&a, &a, 0.0, &opts).is_err());
        assert!(solve_entropic(&a, &a, -1.0, &opts).is_err());
        assert!(matches!(solve_entropic(&a, &b, 1.0, &opts), Err(Error::DimensionMismatch { .. })));
        assert!(soft_conjugate(&[0.0], &[0.0, 1.0], 1.0, &a).is_err());
        let p = solve_entropic(&a, &a, 1.0, &opts).unwrap();
        assert!(plan_log_density(&p, 1, 0).is_err());

        let rho = make_discrete(&[vec![0.0], vec![1.0], vec![2.0]], &[1.0, 1.0, 1.0]).unwrap();
        let tight = SolverOptions {
            tolerance: 1e-300,
            max_iterations: 3,
            ..opts
        };
        assert!(matches!(
            solve_entropic(&rho, &rho, 0.1, &tight),
            Err(Error::NotConverged { iterations: 3, .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let rho = make_discrete(&[vec![0.1], vec![0.7]], &[0.2, 0.8]).unwrap();
        let nu = make_discrete(&[vec![0.0], vec![1.0], vec![2.0]], &[0.6, 0.3, 0.1]).unwrap();
        let p = solve_entropic(&rho, &nu, 0.3, &SolverOptions::default()).unwrap();
        let q = EntropicPotentials::parse(&p.to_text(), rho, nu).unwrap();
        assert_eq!(q.phi, p.phi);
        assert_eq!(q.psi, p.psi);
        assert_eq!(q.epsilon, p.epsilon);
    }
}
