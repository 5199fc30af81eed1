//! Entropic optimal transport maps and their stability under changes of the
//! target measure.
//!
//! The crate covers the whole pipeline needed to check stability bounds for
//! entropic Brenier maps numerically:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`measures`] | discrete measures, quadrature grids, the measure text format |
//! | [`exact_ot`] | exact W₂ transport plans via the transportation simplex |
//! | [`sinkhorn`] | log-domain Sinkhorn in the inner-product potential gauge |
//! | [`entropic_maps`] | conditionals, forward/backward maps, covariances, tilts, H_max |
//! | [`stability`] | map distances, bound right-hand sides and proof-chain diagnostics |
//! | [`semidiscrete`] | Laguerre cells on a grid, entropic bias and semi-discrete stability |
//!
//! Potentials follow the inner-product convention: the entropic coupling has
//! density `γ(x, z) = exp((⟨x, z⟩ − φ(x) − ψ(z)) / ε)` with respect to the
//! product of the marginals, and `ψ` is fixed to be mean-zero under the target.

pub mod entropic_maps;
pub mod error;
pub mod exact_ot;
mod linalg;
pub mod measures;
pub mod semidiscrete;
pub mod sinkhorn;
pub mod stability;

pub use entropic_maps::{
    backward_map, conditional_covariance, conditional_distribution, default_probes,
    estimate_hmax, forward_map, tilt, ConditionalDistribution, HmaxEstimate, Side,
};
pub use error::{Error, Result};
pub use exact_ot::{conditional_of_plan, solve_discrete_w2, w2_distance, PlanSide, TransportPlan};
pub use measures::{
    grid_quadrature, make_discrete, second_moment, two_point_measure, DensitySpec,
    DiscreteMeasure, GridQuadrature,
};
pub use semidiscrete::{
    bias_ledger, brenier_map_eval, delta_ij, h_ij_estimate, semidiscrete_stability,
    solve_semidiscrete, BiasLedger, EpsilonRule, SemiDiscreteSolution,
};
pub use sinkhorn::{
    marginal_residual, plan_log_density, soft_conjugate, solve_entropic, ConvergenceMetric,
    EntropicPotentials, SolverOptions,
};
pub use stability::{
    chain_diagnostics, map_l2_distance, q_conditional, stability_report, ChainDiagnostics,
    InvariantCheck, StabilityReport,
};
