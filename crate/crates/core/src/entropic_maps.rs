//! Entropic Brenier maps as conditional means of the entropic coupling.
//!
//! Conditioning on a source point `x` gives a distribution over the target
//! atoms with log-weights `(⟨x, z_j⟩ − ψ_j)/ε + log ν_j − φ(x)/ε`, where
//! `φ(x)` is the soft conjugate of `ψ`. This extends the potentials to all
//! of `ℝᵈ`, so every query point is admissible.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, log_normalize, sym_op_norm};
use crate::measures::{check_dim, DiscreteMeasure};
use crate::sinkhorn::EntropicPotentials;

/// Grid points per axis in [`default_probes`].
const PROBE_GRID: usize = 32;

/// Which variable is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Condition on a source point; the distribution lives on the target atoms.
    X,
    /// Condition on a target point; the distribution lives on the source atoms.
    Z,
}

#[derive(Clone, Debug)]
pub struct ConditionalDistribution {
    /// Measure whose atoms carry the conditional (original weights kept).
    pub base: DiscreteMeasure,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub point: Vec<f64>,
    pub side: Side,
    /// Extended potential at `point` (`φ(x)` or `ψ(z)`).
    pub potential: f64,
}

impl ConditionalDistribution {
    fn from_logits(
        base: &DiscreteMeasure,
        mut logits: Vec<f64>,
        point: &[f64],
        side: Side,
        epsilon: f64,
    ) -> Self {
        let lse = log_normalize(&mut logits);
        let mut weights: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self {
            base: base.clone(),
            log_weights: logits,
            weights,
            point: point.to_vec(),
            side,
            potential: epsilon * lse,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.base.dim()];
        for (p, w) in self.base.points().zip(&self.weights) {
            for (a, b) in m.iter_mut().zip(p) {
                *a += w * b;
            }
        }
        m
    }

    /// `Σ_j w_j (z_j − m)(z_j − m)ᵀ`, symmetrized.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.base.dim();
        let m = self.mean();
        let mut c = DMatrix::zeros(d, d);
        let mut diff = vec![0.0; d];
        for (p, w) in self.base.points().zip(&self.weights) {
            for k in 0..d {
                diff[k] = p[k] - m[k];
            }
            for a in 0..d {
                for b in a..d {
                    c[(a, b)] += w * diff[a] * diff[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                c[(a, b)] = c[(b, a)];
            }
        }
        c
    }

    /// Exponential tilt by `h`, computed on the log-weights.
    pub fn tilted(&self, h: &[f64]) -> Result<Self> {
        check_dim(self.base.dim(), h.len())?;
        let mut logits: Vec<f64> = self
            .base
            .points()
            .zip(&self.log_weights)
            .map(|(p, l)| l + dot(h, p))
            .collect();
        let shift = log_normalize(&mut logits);
        let weights: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
        let total: f64 = weights.iter().sum();
        Ok(Self {
            base: self.base.clone(),
            log_weights: logits,
            weights: weights.into_iter().map(|w| w / total).collect(),
            point: self.point.clone(),
            side: self.side,
            potential: self.potential + shift,
        })
    }

    /// The conditional as a measure on the full support; weights below the
    /// smallest positive double are clamped so no atom is dropped.
    pub fn as_measure(&self) -> DiscreteMeasure {
        let w = self.weights.iter().map(|w| w.max(f64::MIN_POSITIVE)).collect();
        DiscreteMeasure::with_support_of(&self.base, w)
    }

    /// `KL(p ‖ self)` for `p` on the same atoms, with `0 log 0 = 0`.
    pub fn kl_from(&self, p: &[f64]) -> Result<f64> {
        if p.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: p.len(),
            });
        }
        Ok(p.iter()
            .zip(&self.log_weights)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, l)| q * (q.ln() - l))
            .sum())
    }
}

/// Conditional distribution of the entropic coupling given `point` on `side`.
pub fn conditional_distribution(
    p: &EntropicPotentials,
    side: Side,
    point: &[f64],
) -> Result<ConditionalDistribution> {
    check_dim(p.source.dim(), point.len())?;
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query point"));
    }
    let (base, pot) = match side {
        Side::X => (&p.target, &p.psi),
        Side::Z => (&p.source, &p.phi),
    };
    let logits = base
        .points()
        .zip(pot)
        .zip(base.weights())
        .map(|((y, v), w)| (dot(point, y) - v) / p.epsilon + w.ln())
        .collect();
    Ok(ConditionalDistribution::from_logits(base, logits, point, side, p.epsilon))
}

/// `T_ε(x) = E[Z | X = x]`.
pub fn forward_map(p: &EntropicPotentials, x: &[f64]) -> Result<Vec<f64>> {
    Ok(conditional_distribution(p, Side::X, x)?.mean())
}

/// `S_ε(z) = E[X | Z = z]`.
pub fn backward_map(p: &EntropicPotentials, z: &[f64]) -> Result<Vec<f64>> {
    Ok(conditional_distribution(p, Side::Z, z)?.mean())
}

/// Covariance of the conditional; `ε⁻¹` times this is the potential's Hessian.
pub fn conditional_covariance(
    p: &EntropicPotentials,
    side: Side,
    point: &[f64],
) -> Result<DMatrix<f64>> {
    Ok(conditional_distribution(p, side, point)?.covariance())
}

/// Exponential tilt `dT_h q / dq (z) ∝ e^{⟨h, z⟩}` with the support kept.
pub fn tilt(q: &DiscreteMeasure, h: &[f64]) -> Result<DiscreteMeasure> {
    check_dim(q.dim(), h.len())?;
    if h.iter().all(|v| *v == 0.0) {
        return Ok(q.clone());
    }
    let mut logits: Vec<f64> = q
        .points()
        .zip(q.weights())
        .map(|(z, w)| w.ln() + dot(h, z))
        .collect();
    log_normalize(&mut logits);
    let mut w: Vec<f64> = logits.iter().map(|l| l.exp().max(f64::MIN_POSITIVE)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(DiscreteMeasure::with_support_of(q, w))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmaxEstimate {
    /// Largest covariance operator norm seen over the probes.
    pub lower_bound: f64,
    /// `R²` when a ball radius is known, `+∞` otherwise.
    pub analytic_cap: f64,
    pub probe_count: usize,
}

impl HmaxEstimate {
    /// Upper value usable inside a bound.
    pub fn cap(&self) -> f64 {
        self.analytic_cap
    }
}

/// Atoms of the conditioning measure plus a regular grid over its bounding
/// box in the first `min(d, 2)` coordinates. Remaining coordinates are taken
/// from the first atom.
pub fn default_probes(p: &EntropicPotentials, side: Side) -> Vec<Vec<f64>> {
    let m = match side {
        Side::X => &p.source,
        Side::Z => &p.target,
    };
    let mut probes: Vec<Vec<f64>> = m.points().map(<[f64]>::to_vec).collect();
    let d = m.dim();
    let gd = d.min(2);
    let (lo, hi) = m.bounding_box();
    let anchor = m.point(0).to_vec();
    let axis = |k: usize, t: usize| {
        lo[k] + (hi[k] - lo[k]) * t as f64 / (PROBE_GRID - 1) as f64
    };
    let total = PROBE_GRID.pow(gd as u32);
    for idx in 0..total {
        let mut q = anchor.clone();
        let mut r = idx;
        for k in (0..gd).rev() {
            q[k] = axis(k, r % PROBE_GRID);
            r /= PROBE_GRID;
        }
        probes.push(q);
    }
    probes
}

/// Probe lower bound for `H_max` together with the `R²` cap when a ball
/// radius is supplied.
pub fn estimate_hmax(
    p: &EntropicPotentials,
    side: Side,
    probes: &[Vec<f64>],
    ball_radius: Option<f64>,
) -> Result<HmaxEstimate> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("empty probe list".into()));
    }
    if let Some(r) = ball_radius {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid ball radius {r}")));
        }
    }
    let mut lower = 0.0_f64;
    for probe in probes {
        lower = lower.max(sym_op_norm(&conditional_covariance(p, side, probe)?));
    }
    Ok(HmaxEstimate {
        lower_bound: lower,
        analytic_cap: ball_radius.map_or(f64::INFINITY, |r| r * r),
        probe_count: probes.len(),
    })
}

/// Probe estimates `(Λ, λ)` of the largest and smallest eigenvalues of the
/// map Jacobian `ε⁻¹ Cov` over the probes. Not a certificate.
pub fn estimate_jacobian_bounds(
    p: &EntropicPotentials,
    side: Side,
    probes: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("empty probe list".into()));
    }
    let mut big = 0.0_f64;
    let mut small = f64::INFINITY;
    for probe in probes {
        let c = conditional_covariance(p, side, probe)? / p.epsilon;
        let eig = nalgebra::SymmetricEigen::new(c);
        for v in eig.eigenvalues.iter() {
            big = big.max(*v);
            small = small.min(*v);
        }
    }
    Ok((big, small.max(0.0)))
}
