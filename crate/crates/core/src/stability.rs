//! Stability of entropic maps under a change of target measure.
//!
//! For a source `ρ` and two targets `μ`, `ν` this module computes
//! `‖T_ε^μ − T_ε^ν‖_{L²(ρ)}`, the right-hand sides of the general, bounded and
//! smooth stability bounds, and every intermediate quantity of the proof
//! (`Q(·|x)`, `I`, `Ī`, `Ĩ`, the backward-map coupling terms).
//!
//! Log-ratios of coupling densities are always formed from the potentials,
//! `log γ^μ(x,y) − log γ^ν(x,z) = (⟨x, y − z⟩ − φ^μ(x) + φ^ν(x) − ψ^μ(y) + ψ^ν(z)) / ε`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropic_maps::{
    backward_map, default_probes, estimate_hmax, forward_map, ConditionalDistribution, Side,
};
use crate::error::{Error, Result};
use crate::exact_ot::{solve_discrete_w2, TransportPlan};
use crate::linalg::{dot, log_sum_exp, sq_dist};
use crate::measures::{check_dim, DiscreteMeasure};
use crate::sinkhorn::{solve_entropic, EntropicPotentials, SolverOptions};

/// Largest `|ρ|·|μ|·|ν|` accepted by [`chain_diagnostics`].
pub const CHAIN_SIZE_LIMIT: usize = 10_000_000;
const NORMALIZATION_TOL: f64 = 1e-10;
const ABS_TOL: f64 = 1e-9;
const STEP2_REL_TOL: f64 = 1e-8;
const STEP2_ABS_FLOOR: f64 = 1e-12;

fn same_measure(a: &DiscreteMeasure, b: &DiscreteMeasure) -> bool {
    a.dim() == b.dim()
        && a.len() == b.len()
        && a.coords() == b.coords()
        && a.weights().iter().zip(b.weights()).all(|(u, v)| (u - v).abs() <= 1e-12)
}

/// `‖T_A − T_B‖_{L²(ρ)}` for two entropic solutions sharing the source `ρ`.
pub fn map_l2_distance(a: &EntropicPotentials, b: &EntropicPotentials) -> Result<f64> {
    if !same_measure(&a.source, &b.source) {
        return Err(Error::MeasureMismatch(
            "entropic solutions have different source measures".into(),
        ));
    }
    let mut total = 0.0;
    for (x, w) in a.source.points().zip(a.source.weights()) {
        total += w * sq_dist(&forward_map(a, x)?, &forward_map(b, x)?);
    }
    Ok(total.sqrt())
}

/// `Q(·|x_i)` on the atoms of `ν`, with `Q_j = Σ_k γ^μ(x_i, y_k) τ_kj`.
///
/// `tau` couples `μ` (rows) to `ν` (columns). The returned `potential` holds
/// `ε` times the log of the mass before normalization, which is zero up to
/// the Sinkhorn residual.
pub fn q_conditional(
    p_mu: &EntropicPotentials,
    tau: &TransportPlan,
    x_index: usize,
) -> Result<ConditionalDistribution> {
    if !same_measure(&p_mu.target, tau.row_measure()) {
        return Err(Error::MeasureMismatch(
            "plan rows do not match the target of the entropic solution".into(),
        ));
    }
    if x_index >= p_mu.source.len() {
        return Err(Error::IndexOutOfRange {
            index: x_index,
            len: p_mu.source.len(),
        });
    }
    let log_gamma: Vec<f64> = (0..p_mu.target.len()).map(|k| p_mu.log_density(x_index, k)).collect();
    let cols = q_log_weights(&log_gamma, tau);
    let mut dist = conditional_from_log_mass(tau.col_measure(), cols, p_mu.source.point(x_index), p_mu.epsilon);
    if (dist.potential / p_mu.epsilon).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidParameter(format!(
            "Q(.|x) mass deviates from one by {:e}; potentials not converged",
            (dist.potential / p_mu.epsilon).exp_m1()
        )));
    }
    dist.side = Side::X;
    Ok(dist)
}

/// Unnormalized `log Q_j = log Σ_k exp(log γ_k + log τ_kj)`.
fn q_log_weights(log_gamma: &[f64], tau: &TransportPlan) -> Vec<f64> {
    let (n, m) = tau.shape();
    (0..m)
        .map(|j| {
            log_sum_exp((0..n).filter_map(|k| {
                let t = tau.mass(k, j);
                (t > 0.0).then(|| log_gamma[k] + t.ln())
            }))
        })
        .collect()
}

fn conditional_from_log_mass(
    base: &DiscreteMeasure,
    mut log_mass: Vec<f64>,
    point: &[f64],
    epsilon: f64,
) -> ConditionalDistribution {
    let lse = crate::linalg::log_normalize(&mut log_mass);
    let mut weights: Vec<f64> = log_mass.iter().map(|l| l.exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    ConditionalDistribution {
        base: base.clone(),
        log_weights: log_mass,
        weights,
        point: point.to_vec(),
        side: Side::X,
        potential: epsilon * lse,
    }
}

/// One named inequality or identity and whether it held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InvariantCheck {
    /// `lhs ≤ rhs + slack`.
    pub fn le(name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            holds: lhs <= rhs + slack,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub sinkhorn: SolverOptions,
    /// Radius of a ball known to contain all supports; caps become `R²`.
    /// Without it, caps are the largest squared atom norms.
    pub radius: Option<f64>,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            sinkhorn: SolverOptions::with_tolerance(1e-13),
            radius: None,
        }
    }
}

/// Every term of the proof chain on a discrete triple `(ρ, μ, ν)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub epsilon: f64,
    /// `∫ KL(Q(·|x) ‖ π^ν(·|x)) dρ(x)`.
    pub i: f64,
    pub i_bar: f64,
    pub i_tilde: f64,
    /// `∬ ⟨S^μ(y) − S^ν(z), y − z⟩ dτ`.
    pub coupling_term: f64,
    /// `∬ ‖S^μ(y) − S^ν(z)‖² dτ`.
    pub backward_gap: f64,
    /// `‖T^μ − T^ν‖_{L²(ρ)}`.
    pub lhs: f64,
    pub w2: f64,
    /// `W₂ + √(2 cap_φ I)`.
    pub step1_rhs: f64,
    /// Cap on `H_max(φ^ν)`.
    pub cap_phi: f64,
    /// Cap on `H_max(ψ^ν)`.
    pub cap_psi: f64,
    /// Largest deviation of `Σ_j Q_j` from one before normalization.
    pub q_normalization_error: f64,
}

impl ChainDiagnostics {
    pub fn checks(&self) -> Vec<InvariantCheck> {
        let eps_sum = self.epsilon * (self.i_bar + self.i_tilde);
        let diff = (eps_sum - self.coupling_term).abs();
        let scale = eps_sum.abs().max(self.coupling_term.abs());
        vec![
            InvariantCheck::le("I >= 0", -self.i, 0.0, ABS_TOL),
            InvariantCheck::le("I <= I_bar", self.i, self.i_bar, ABS_TOL),
            InvariantCheck::le("I_tilde >= 0", -self.i_tilde, 0.0, ABS_TOL),
            InvariantCheck {
                name: "eps*(I_bar + I_tilde) = coupling_term".into(),
                lhs: eps_sum,
                rhs: self.coupling_term,
                holds: diff <= (STEP2_REL_TOL * scale).max(STEP2_ABS_FLOOR),
            },
            InvariantCheck::le(
                "backward_gap <= 2*cap_psi*I_bar",
                self.backward_gap,
                2.0 * self.cap_psi * self.i_bar,
                ABS_TOL,
            ),
            InvariantCheck::le("lhs <= W2 + sqrt(2*cap_phi*I)", self.lhs, self.step1_rhs, ABS_TOL),
        ]
    }

    pub fn all_hold(&self) -> bool {
        self.checks().iter().all(|c| c.holds)
    }
}

struct AtomTerms {
    i: f64,
    i_bar: f64,
    i_tilde: f64,
    sq_map_gap: f64,
    q_error: f64,
}

/// Proof-chain diagnostics with default options.
pub fn chain_diagnostics(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
) -> Result<ChainDiagnostics> {
    chain_diagnostics_with(rho, mu, nu, epsilon, &ChainOptions::default())
}

pub fn chain_diagnostics_with(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
    opts: &ChainOptions,
) -> Result<ChainDiagnostics> {
    check_dim(rho.dim(), mu.dim())?;
    check_dim(rho.dim(), nu.dim())?;
    let size = rho.len().saturating_mul(mu.len()).saturating_mul(nu.len());
    if size > CHAIN_SIZE_LIMIT {
        return Err(Error::SizeLimit {
            size,
            limit: CHAIN_SIZE_LIMIT,
        });
    }
    let tau = solve_discrete_w2(mu, nu)?;
    let p_mu = solve_entropic(rho, mu, epsilon, &opts.sinkhorn)?;
    let p_nu = solve_entropic(rho, nu, epsilon, &opts.sinkhorn)?;
    let support: Vec<(usize, usize, f64)> = tau.support().collect();

    let per_atom = |i: usize| -> Result<AtomTerms> {
        let x = rho.point(i);
        let lg_mu: Vec<f64> = (0..mu.len()).map(|k| p_mu.log_density(i, k)).collect();
        let lg_nu: Vec<f64> = (0..nu.len()).map(|j| p_nu.log_density(i, j)).collect();
        let mut i_bar = 0.0;
        let mut i_tilde = 0.0;
        for &(k, j, t) in &support {
            let log_ratio = lg_mu[k] - lg_nu[j];
            i_bar += t * lg_mu[k].exp() * log_ratio;
            i_tilde -= t * lg_nu[j].exp() * log_ratio;
        }
        let q = conditional_from_log_mass(nu, q_log_weights(&lg_mu, &tau), x, epsilon);
        let q_error = (q.potential / epsilon).exp_m1().abs();
        // KL(Q ‖ π^ν(·|x)) with log π^ν_j = log γ^ν_j + log ν_j
        let i_atom: f64 = q
            .weights
            .iter()
            .zip(&q.log_weights)
            .zip(&lg_nu)
            .zip(nu.weights())
            .filter(|(((w, _), _), _)| **w > 0.0)
            .map(|(((w, lq), lg), wn)| w * (lq - lg - wn.ln()))
            .sum();
        let sq_map_gap = sq_dist(&forward_map(&p_mu, x)?, &forward_map(&p_nu, x)?);
        Ok(AtomTerms {
            i: i_atom,
            i_bar,
            i_tilde,
            sq_map_gap,
            q_error,
        })
    };
    let terms: Vec<AtomTerms> = (0..rho.len())
        .into_par_iter()
        .map(per_atom)
        .collect::<Result<_>>()?;

    let (mut i, mut i_bar, mut i_tilde, mut lhs_sq, mut q_err) = (0.0, 0.0, 0.0, 0.0, 0.0_f64);
    for (t, w) in terms.iter().zip(rho.weights()) {
        i += w * t.i;
        i_bar += w * t.i_bar;
        i_tilde += w * t.i_tilde;
        lhs_sq += w * t.sq_map_gap;
        q_err = q_err.max(t.q_error);
    }

    let s_mu: Vec<Vec<f64>> = mu.points().map(|y| backward_map(&p_mu, y)).collect::<Result<_>>()?;
    let s_nu: Vec<Vec<f64>> = nu.points().map(|z| backward_map(&p_nu, z)).collect::<Result<_>>()?;
    let (mut coupling_term, mut backward_gap) = (0.0, 0.0);
    for &(k, j, t) in &support {
        let ds: Vec<f64> = s_mu[k].iter().zip(&s_nu[j]).map(|(a, b)| a - b).collect();
        let dy: Vec<f64> = mu.point(k).iter().zip(nu.point(j)).map(|(a, b)| a - b).collect();
        coupling_term += t * dot(&ds, &dy);
        backward_gap += t * dot(&ds, &ds);
    }

    let (cap_phi, cap_psi) = match opts.radius {
        Some(r) => (r * r, r * r),
        None => (nu.max_norm().powi(2), rho.max_norm().powi(2)),
    };
    let w2 = tau.cost().max(0.0).sqrt();
    Ok(ChainDiagnostics {
        epsilon,
        i,
        i_bar,
        i_tilde,
        coupling_term,
        backward_gap,
        lhs: lhs_sq.sqrt(),
        w2,
        step1_rhs: w2 + (2.0 * cap_phi * i.max(0.0)).sqrt(),
        cap_phi,
        cap_psi,
        q_normalization_error: q_err,
    })
}

/// Smoothness constants supplied by the caller for the improved bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    /// `T_ε^ν` is `Λ`-Lipschitz.
    pub lipschitz: f64,
    /// `S_ε^ν` is `1/λ`-Lipschitz.
    pub inverse_lipschitz: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub sinkhorn: SolverOptions,
    pub smoothness: Option<Smoothness>,
    /// Also compute probe lower bounds on `H_max` for both potentials.
    pub probe_hmax: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            sinkhorn: SolverOptions::default(),
            smoothness: None,
            probe_hmax: false,
        }
    }
}

/// Both sides of the stability bounds for one triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub epsilon: f64,
    pub radius: f64,
    pub lhs: f64,
    pub w2: f64,
    /// `(1 + 2R²/ε) W₂`.
    pub rhs_bounded: f64,
    /// General bound with analytic caps, minimized over which target plays `ν`.
    pub rhs_general: f64,
    /// `true` when the minimum in `rhs_general` came from swapping `μ` and `ν`.
    pub rhs_general_swapped: bool,
    pub rhs_smooth: Option<f64>,
    /// Probe lower bounds on `H_max(φ^ν)` and `H_max(ψ^ν)`; tightness
    /// indicators only.
    pub hmax_probe: Option<(f64, f64)>,
}

impl StabilityReport {
    pub fn checks(&self) -> Vec<InvariantCheck> {
        let mut out = vec![
            InvariantCheck::le("lhs <= rhs_bounded", self.lhs, self.rhs_bounded, ABS_TOL),
            InvariantCheck::le("lhs <= rhs_general", self.lhs, self.rhs_general, ABS_TOL),
        ];
        if let Some(s) = self.rhs_smooth {
            out.push(InvariantCheck::le("lhs <= rhs_smooth", self.lhs, s, ABS_TOL));
        }
        out
    }
}

pub fn stability_report(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
    radius: f64,
) -> Result<StabilityReport> {
    stability_report_with(rho, mu, nu, epsilon, radius, &ReportOptions::default())
}

pub fn stability_report_with(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
    radius: f64,
    opts: &ReportOptions,
) -> Result<StabilityReport> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    check_dim(rho.dim(), mu.dim())?;
    check_dim(rho.dim(), nu.dim())?;
    for m in [rho, mu, nu] {
        let norm = m.max_norm();
        if norm > radius * (1.0 + 1e-12) {
            return Err(Error::OutsideBall { norm, radius });
        }
    }
    let p_mu = solve_entropic(rho, mu, epsilon, &opts.sinkhorn)?;
    let p_nu = solve_entropic(rho, nu, epsilon, &opts.sinkhorn)?;
    let lhs = map_l2_distance(&p_mu, &p_nu)?;
    let w2 = solve_discrete_w2(mu, nu)?.cost().max(0.0).sqrt();

    let cap_psi = rho.max_norm().powi(2);
    let general = |target: &DiscreteMeasure| {
        let cap_phi = target.max_norm().powi(2);
        (1.0 + 2.0 * (cap_phi * cap_psi).sqrt() / epsilon) * w2
    };
    let (g_nu, g_mu) = (general(nu), general(mu));
    let rhs_smooth = opts.smoothness.map(|s| {
        let mut c = 1.0 + 2.0 * (s.lipschitz * radius * radius / epsilon).sqrt();
        if let Some(l) = s.inverse_lipschitz {
            c = c.min(1.0 + 2.0 * (s.lipschitz / l).sqrt());
        }
        c * w2
    });
    let hmax_probe = if opts.probe_hmax {
        let hx = estimate_hmax(&p_nu, Side::X, &default_probes(&p_nu, Side::X), Some(radius))?;
        let hz = estimate_hmax(&p_nu, Side::Z, &default_probes(&p_nu, Side::Z), Some(radius))?;
        Some((hx.lower_bound, hz.lower_bound))
    } else {
        None
    };
    Ok(StabilityReport {
        epsilon,
        radius,
        lhs,
        w2,
        rhs_bounded: (1.0 + 2.0 * radius * radius / epsilon) * w2,
        rhs_general: g_nu.min(g_mu),
        rhs_general_swapped: g_mu < g_nu,
        rhs_smooth,
        hmax_probe,
    })
}
