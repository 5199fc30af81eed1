use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use otstab::measures::{grid_quadrature, make_discrete, random_ball_measure, two_point_measure, DensitySpec};
use otstab::semidiscrete::{
    bias_ledger, semidiscrete_stability, solve_semidiscrete, BiasOptions, EpsilonRule, SemiDiscreteOptions,
    SemiDiscreteStabilityOptions,
};
use otstab::sinkhorn::{dual_objective, marginal_residual, solve_entropic, SolverOptions};
use otstab::stability::{
    chain_diagnostics_with, stability_report_with, ChainOptions, InvariantCheck, ReportOptions, Smoothness,
};
use otstab::{solve_discrete_w2, DiscreteMeasure, GridQuadrature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toml::Value;

use crate::config::Config;
use crate::output::{num, CsvTable, Outcome};
use crate::CliError;

const CERTIFICATE_TOL: f64 = 1e-8;
const DECOMPOSITION_TOL: f64 = 1e-9;

fn solver_options(cfg: &Config, default_tol: f64) -> Result<SolverOptions, CliError> {
    let mut o = SolverOptions::with_tolerance(cfg.positive("tolerance", default_tol)?);
    if cfg.has("max_iterations") {
        o.max_iterations = cfg.count("max_iterations", o.max_iterations)?;
    }
    Ok(o)
}

fn read_measure(path: &Path) -> Result<DiscreteMeasure, CliError> {
    DiscreteMeasure::read_file(path).map_err(|e| CliError::from_lib(e).context(&path.display().to_string()))
}

pub fn solve(cfg: &Config) -> Result<Outcome, CliError> {
    let source = read_measure(&cfg.path("source")?.expect("required key"))?;
    let target = read_measure(&cfg.path("target")?.expect("required key"))?;
    if source.dim() != target.dim() {
        return Err(CliError::Input(format!(
            "source has dimension {} but target has dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    let eps = cfg.positive("epsilon", 1.0)?;
    let opts = solver_options(cfg, 1e-10)?;
    let pot = solve_entropic(&source, &target, eps, &opts)?;
    let plan = solve_discrete_w2(&source, &target)?;
    let mut out = Outcome::default();
    let residual = marginal_residual(&pot);
    out.check(0, InvariantCheck::le("marginal_residual <= tolerance", residual, opts.tolerance, 0.0));
    let gap = plan.certificate_gap().unwrap_or(f64::INFINITY);
    out.check(0, InvariantCheck::le("certificate_gap <= 1e-8*(1+cost)", gap, CERTIFICATE_TOL * (1.0 + plan.cost()), 0.0));
    out.note("epsilon", eps);
    out.note("sinkhorn_iterations", pot.iterations);
    out.note("marginal_residual", residual);
    out.note("dual_objective", dual_objective(&pot));
    out.note("w2", plan.cost().sqrt());
    out.note("w2_squared", plan.cost());
    out.files.push(("potentials.txt".into(), pot.to_text()));
    out.files.push(("plan.csv".into(), plan.to_csv()));
    Ok(out)
}

pub fn tightness(cfg: &Config) -> Result<Outcome, CliError> {
    let r = cfg.positive("radius", 1.0)?;
    let epsilons = cfg.positive_list("epsilons", &[0.25, 0.5, 1.0])?;
    let thetas = cfg.positive_list("thetas", &[0.05, 0.1, 0.2, 0.3])?;
    let match_tol = cfg.positive("match_tolerance", 1e-6)?;
    let opts = ReportOptions { sinkhorn: solver_options(cfg, 1e-12)?, ..ReportOptions::default() };
    let rho = two_point_measure(r, FRAC_PI_2)?;
    let p0 = two_point_measure(r, 0.0)?;
    let mut table = CsvTable::new(&[
        "theta", "epsilon", "lhs", "formula", "abs_error", "w2", "lhs_over_w2", "rhs_bounded", "rhs_general",
    ]);
    let mut out = Outcome::default();
    for &eps in &epsilons {
        for &theta in &thetas {
            let p_theta = two_point_measure(r, theta)?;
            let rep = stability_report_with(&rho, &p0, &p_theta, eps, r, &opts)?;
            let formula = r * (r * theta.sin() / eps).tanh();
            let err = (rep.lhs - formula).abs();
            let row = table.rows.len();
            out.check(row, InvariantCheck::le("|lhs - R*tanh(R*sin(theta)/eps)| <= match_tolerance", err, match_tol, 0.0));
            for c in rep.checks() {
                out.check(row, c);
            }
            let ratio = if rep.w2 > 0.0 { rep.lhs / rep.w2 } else { f64::NAN };
            table.push(vec![
                num(theta),
                num(eps),
                num(rep.lhs),
                num(formula),
                num(err),
                num(rep.w2),
                num(ratio),
                num(rep.rhs_bounded),
                num(rep.rhs_general),
            ]);
        }
    }
    out.note("radius", r);
    out.note("rows", table.rows.len());
    out.tables.push(("tightness.csv".into(), table));
    Ok(out)
}

struct TripleSpec {
    seed: u64,
    triples: usize,
    max_atoms: usize,
    dim: usize,
    radius: f64,
}

impl TripleSpec {
    fn from_config(cfg: &Config, default_seed: u64, default_triples: usize, default_atoms: usize) -> Result<Self, CliError> {
        Ok(Self {
            seed: cfg.seed(default_seed)?,
            triples: cfg.count("triples", default_triples)?,
            max_atoms: cfg.count("max_atoms", default_atoms)?,
            dim: cfg.count("dim", 2)?,
            radius: cfg.positive("radius", 1.0)?,
        })
    }

    /// Triple `k` depends only on `seed + k`.
    fn triple(&self, k: usize) -> Result<(u64, [DiscreteMeasure; 3]), CliError> {
        let seed = self.seed.wrapping_add(k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let n = rng.random_range(1..=self.max_atoms);
            random_ball_measure(&mut rng, n, self.dim, self.radius)
        };
        Ok((seed, [draw()?, draw()?, draw()?]))
    }
}

pub fn stability(cfg: &Config) -> Result<Outcome, CliError> {
    let spec = TripleSpec::from_config(cfg, 0, 200, 8)?;
    let epsilons = cfg.positive_list("epsilons", &[0.05, 0.5])?;
    let sinkhorn = solver_options(cfg, 1e-12)?;
    let smoothness = match (cfg.optional_positive("lipschitz")?, cfg.optional_positive("inverse_lipschitz")?) {
        (Some(l), inv) => Some(Smoothness { lipschitz: l, inverse_lipschitz: inv }),
        (None, Some(_)) => return Err(CliError::Config("`inverse_lipschitz` requires `lipschitz`".into())),
        (None, None) => None,
    };
    let opts = ReportOptions { sinkhorn, smoothness, probe_hmax: false };
    let chain_opts = ChainOptions { sinkhorn, radius: Some(spec.radius) };
    let mut table = CsvTable::new(&[
        "seed", "epsilon", "lhs", "w2", "rhs_bounded", "rhs_general", "rhs_smooth", "I", "I_bar", "I_tilde",
    ]);
    let mut out = Outcome::default();
    for k in 0..spec.triples {
        let (seed, [rho, mu, nu]) = spec.triple(k)?;
        for &eps in &epsilons {
            let rep = stability_report_with(&rho, &mu, &nu, eps, spec.radius, &opts)?;
            let chain = chain_diagnostics_with(&rho, &mu, &nu, eps, &chain_opts)?;
            let row = table.rows.len();
            for c in rep.checks() {
                out.check(row, c);
            }
            table.push(vec![
                seed.to_string(),
                num(eps),
                num(rep.lhs),
                num(rep.w2),
                num(rep.rhs_bounded),
                num(rep.rhs_general),
                rep.rhs_smooth.map(num).unwrap_or_default(),
                num(chain.i),
                num(chain.i_bar),
                num(chain.i_tilde),
            ]);
        }
    }
    out.note("rows", table.rows.len());
    out.tables.push(("stability.csv".into(), table));
    Ok(out)
}

const CHAIN_CHECK_COLUMNS: [&str; 6] = [
    "ok_I_nonneg",
    "ok_I_le_I_bar",
    "ok_I_tilde_nonneg",
    "ok_coupling_identity",
    "ok_backward_gap",
    "ok_step1",
];

pub fn chain(cfg: &Config) -> Result<Outcome, CliError> {
    let spec = TripleSpec::from_config(cfg, 7, 20, 6)?;
    let epsilons = cfg.positive_list("epsilons", &[0.5])?;
    let opts = ChainOptions { sinkhorn: solver_options(cfg, 1e-13)?, radius: Some(spec.radius) };
    let mut columns = vec![
        "seed", "epsilon", "I", "I_bar", "I_tilde", "coupling_term", "backward_gap", "lhs", "w2", "step1_rhs",
    ];
    columns.extend(CHAIN_CHECK_COLUMNS);
    let mut table = CsvTable::new(&columns);
    let mut out = Outcome::default();
    for k in 0..spec.triples {
        let (seed, [rho, mu, nu]) = spec.triple(k)?;
        for &eps in &epsilons {
            let d = chain_diagnostics_with(&rho, &mu, &nu, eps, &opts)?;
            let checks = d.checks();
            debug_assert_eq!(checks.len(), CHAIN_CHECK_COLUMNS.len());
            let row = table.rows.len();
            let mut cells = vec![
                seed.to_string(),
                num(eps),
                num(d.i),
                num(d.i_bar),
                num(d.i_tilde),
                num(d.coupling_term),
                num(d.backward_gap),
                num(d.lhs),
                num(d.w2),
                num(d.step1_rhs),
            ];
            cells.extend(checks.iter().map(|c| c.holds.to_string()));
            for c in checks {
                out.check(row, c);
            }
            table.push(cells);
        }
    }
    out.note("rows", table.rows.len());
    out.tables.push(("chain.csv".into(), table));
    Ok(out)
}

fn density_grid(cfg: &Config) -> Result<GridQuadrature, CliError> {
    let r = cfg.positive("radius", 1.0)?;
    let resolution = cfg.count("resolution", 256)?;
    let spec = match cfg.string("density")?.as_deref().unwrap_or("disk") {
        "disk" => DensitySpec::UniformBall { dim: 2, radius: r },
        "square" => DensitySpec::UniformBox { lower: vec![-r, -r], upper: vec![r, r] },
        other => return Err(CliError::Config(format!("`density` must be \"disk\" or \"square\", got \"{other}\""))),
    };
    Ok(grid_quadrature(&spec, resolution)?)
}

fn rotated_pair(theta: f64) -> Result<DiscreteMeasure, CliError> {
    let (s, c) = theta.sin_cos();
    Ok(make_discrete(&[vec![c, s], vec![-c, -s]], &[0.5, 0.5])?)
}

/// Least-squares slope of `ln y` against `ln x` over the positive pairs.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    least_squares_slope(&pts)
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn bias(cfg: &Config) -> Result<Outcome, CliError> {
    let grid = density_grid(cfg)?;
    let epsilons = cfg.positive_list("epsilons", &[0.1, 0.05, 0.025, 0.0125])?;
    let mu = match cfg.path("target")? {
        Some(p) => read_measure(&p)?,
        None => rotated_pair(0.0)?,
    };
    if mu.dim() != 2 {
        return Err(CliError::Input(format!("target must be two-dimensional, found dimension {}", mu.dim())));
    }
    let defaults = BiasOptions::default();
    let opts = BiasOptions {
        sinkhorn: solver_options(cfg, 1e-10)?,
        bandwidth: cfg.positive("bandwidth", defaults.bandwidth)?,
        du: cfg.positive("du", defaults.du)?,
        h_inflation: cfg.positive("h_inflation", defaults.h_inflation)?,
        tail: cfg.positive("tail", defaults.tail)?,
    };
    let sd = SemiDiscreteOptions { tolerance: cfg.positive("sd_tolerance", 1e-6)?, ..SemiDiscreteOptions::default() };
    let sol = solve_semidiscrete(&grid, &mu, &sd)?;
    let mut table = CsvTable::new(&[
        "epsilon",
        "bias_l2",
        "bias_sq_over_eps",
        "rhs_prelim",
        "rhs_direct",
        "bound_limit_estimate",
        "psi_gap_inf",
        "empty_slabs",
    ]);
    let mut out = Outcome::default();
    let mut biases = Vec::new();
    for &eps in &epsilons {
        let l = bias_ledger(&sol, eps, &opts)?;
        let row = table.rows.len();
        out.check(row, InvariantCheck::le("bias_l2^2 <= rhs_prelim", l.bias_l2 * l.bias_l2, l.rhs_prelim, 0.0));
        biases.push(l.bias_l2);
        table.push(vec![
            num(eps),
            num(l.bias_l2),
            num(l.limit_constant_estimate),
            num(l.rhs_prelim),
            num(l.rhs_direct),
            num(l.bound_limit_estimate),
            num(l.psi_gap_inf),
            l.empty_slabs.to_string(),
        ]);
    }
    out.note("grid_atoms", grid.measure.len());
    out.note("semidiscrete_residual", sol.residual);
    out.note("semidiscrete_iterations", sol.iterations);
    out.note("log_log_slope", log_log_slope(&epsilons, &biases));
    out.tables.push(("bias.csv".into(), table));
    Ok(out)
}

fn epsilon_rule(cfg: &Config) -> Result<EpsilonRule, CliError> {
    match cfg.raw("epsilon") {
        None => Ok(EpsilonRule::W2TwoThirds),
        Some(Value::String(s)) if s == "w2-two-thirds" => Ok(EpsilonRule::W2TwoThirds),
        Some(Value::String(s)) => Err(CliError::Config(format!(
            "`epsilon` must be a positive number or \"w2-two-thirds\", got \"{s}\""
        ))),
        Some(_) => Ok(EpsilonRule::Fixed(cfg.positive("epsilon", 1.0)?)),
    }
}

pub fn semidiscrete(cfg: &Config) -> Result<Outcome, CliError> {
    let grid = density_grid(cfg)?;
    let thetas = cfg.positive_list("thetas", &[0.4, 0.2, 0.1, 0.05])?;
    let rule = epsilon_rule(cfg)?;
    let opts = SemiDiscreteStabilityOptions {
        semidiscrete: SemiDiscreteOptions { tolerance: cfg.positive("sd_tolerance", 1e-6)?, ..Default::default() },
        sinkhorn: solver_options(cfg, 1e-10)?,
    };
    let mu0 = rotated_pair(0.0)?;
    let mut table = CsvTable::new(&[
        "theta", "epsilon", "bias_mu", "bias_nu", "entropic_term", "lhs", "w2", "lhs_over_w2_cube_root",
    ]);
    let mut out = Outcome::default();
    let mut ratios = Vec::new();
    for &theta in &thetas {
        let s = semidiscrete_stability(&grid, &mu0, &rotated_pair(theta)?, rule, &opts)?;
        let row = table.rows.len();
        out.check(
            row,
            InvariantCheck::le("lhs <= bias_mu + bias_nu + entropic_term", s.lhs, s.decomposition_sum(), DECOMPOSITION_TOL),
        );
        if s.w2 > 0.0 {
            ratios.push(s.ratio);
        }
        table.push(vec![
            num(theta),
            num(s.epsilon),
            num(s.bias_mu),
            num(s.bias_nu),
            num(s.entropic_term),
            num(s.lhs),
            num(s.w2),
            num(s.ratio),
        ]);
    }
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    if !ratios.is_empty() && min > 0.0 {
        out.note("ratio_max_over_min", max / min);
    }
    out.note("grid_atoms", grid.measure.len());
    out.tables.push(("semidiscrete_stability.csv".into(), table));
    Ok(out)
}
