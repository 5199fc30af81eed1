//! Exact optimal transport between discrete measures for the squared
//! Euclidean cost.
//!
//! [`solve_discrete_w2`] runs the primal transportation simplex on the
//! bipartite spanning-tree basis. The initial basis comes from the north-west
//! corner rule; entering and leaving arcs follow Bland's rule (smallest
//! eligible cell index `i * m + j`), which rules out cycling on degenerate
//! pivots. The dual potentials of the final basis certify optimality through
//! complementary slackness.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::measures::{check_dim, DiscreteMeasure};

/// Supports larger than this are rejected.
pub const MAX_ATOMS: usize = 5000;
const MAX_PIVOTS: usize = 20_000_000;
const MARGINAL_TOL: f64 = 1e-10;

/// Dense coupling between two discrete measures.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    rows: DiscreteMeasure,
    cols: DiscreteMeasure,
    mass: Vec<f64>,
    cost: f64,
    duals: Option<(Vec<f64>, Vec<f64>)>,
}

/// Which marginal a conditional slice is taken along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanSide {
    Row,
    Col,
}

impl TransportPlan {
    /// Wraps a row-major mass matrix after checking nonnegativity and both
    /// marginals (within 1e-10).
    pub fn new(rows: DiscreteMeasure, cols: DiscreteMeasure, mass: Vec<f64>) -> Result<Self> {
        check_dim(rows.dim(), cols.dim())?;
        let (n, m) = (rows.len(), cols.len());
        if mass.len() != n * m {
            return Err(Error::DimensionMismatch {
                expected: n * m,
                found: mass.len(),
            });
        }
        if mass.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "plan entries must be finite and nonnegative".into(),
            ));
        }
        for i in 0..n {
            let s: f64 = mass[i * m..(i + 1) * m].iter().sum();
            if (s - rows.weight(i)).abs() > MARGINAL_TOL {
                return Err(Error::MeasureMismatch(format!(
                    "row {i} sums to {s}, marginal is {}",
                    rows.weight(i)
                )));
            }
        }
        for j in 0..m {
            let s: f64 = (0..n).map(|i| mass[i * m + j]).sum();
            if (s - cols.weight(j)).abs() > MARGINAL_TOL {
                return Err(Error::MeasureMismatch(format!(
                    "column {j} sums to {s}, marginal is {}",
                    cols.weight(j)
                )));
            }
        }
        let cost = plan_cost(&rows, &cols, &mass);
        Ok(Self {
            rows,
            cols,
            mass,
            cost,
            duals: None,
        })
    }

    /// Independent coupling `a ⊗ b`.
    pub fn product(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<Self> {
        let mass = a
            .weights()
            .iter()
            .flat_map(|wa| b.weights().iter().map(move |wb| wa * wb))
            .collect();
        Self::new(a.clone(), b.clone(), mass)
    }

    pub fn row_measure(&self) -> &DiscreteMeasure {
        &self.rows
    }

    pub fn col_measure(&self) -> &DiscreteMeasure {
        &self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.cols.len() + j]
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// `Σ π_ij ‖x_i − z_j‖²`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Dual potentials `(f, g)` recovered by the simplex, if any.
    pub fn duals(&self) -> Option<(&[f64], &[f64])> {
        self.duals.as_ref().map(|(f, g)| (f.as_slice(), g.as_slice()))
    }

    /// Nonzero entries as `(i, j, mass)`.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let m = self.cols.len();
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(move |(k, v)| (k / m, k % m, *v))
    }

    /// Largest violation of the complementary-slackness certificate:
    /// `f_i + g_j ≤ c_ij` everywhere and equality on the plan's support.
    /// `None` when the plan carries no duals.
    pub fn certificate_gap(&self) -> Option<f64> {
        let (f, g) = self.duals()?;
        let m = self.cols.len();
        let mut worst = 0.0_f64;
        for i in 0..self.rows.len() {
            for j in 0..m {
                let c = sq_dist(self.rows.point(i), self.cols.point(j));
                let slack = c - f[i] - g[j];
                worst = worst.max(-slack);
                if self.mass[i * m + j] > 0.0 {
                    worst = worst.max(slack.abs());
                }
            }
        }
        Some(worst)
    }

    /// Sparse CSV: header `n m cost`, then `i j mass` triplets.
    pub fn to_csv(&self) -> String {
        let (n, m) = self.shape();
        let mut out = format!("{n} {m} {}\n", self.cost);
        for (i, j, v) in self.support() {
            let _ = writeln!(out, "{i} {j} {v}");
        }
        out
    }
}

fn plan_cost(rows: &DiscreteMeasure, cols: &DiscreteMeasure, mass: &[f64]) -> f64 {
    let m = cols.len();
    let mut cost = 0.0;
    for (k, &v) in mass.iter().enumerate() {
        if v > 0.0 {
            cost += v * sq_dist(rows.point(k / m), cols.point(k % m));
        }
    }
    cost
}

/// Sparse plan read back from the CSV format.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanTriplets {
    pub rows: usize,
    pub cols: usize,
    pub cost: f64,
    pub entries: Vec<(usize, usize, f64)>,
}

pub fn parse_plan_csv(text: &str) -> Result<PlanTriplets> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header `n m cost`".into(),
    })?;
    let h: Vec<&str> = header.split_whitespace().collect();
    let bad = |line: usize, message: String| Error::Parse { line, message };
    if h.len() != 3 {
        return Err(bad(1, format!("expected `n m cost`, found `{header}`")));
    }
    let rows: usize = h[0].parse().map_err(|_| bad(1, "invalid n".into()))?;
    let cols: usize = h[1].parse().map_err(|_| bad(1, "invalid m".into()))?;
    let cost: f64 = h[2].parse().map_err(|_| bad(1, "invalid cost".into()))?;
    let mut entries = Vec::new();
    for (idx, l) in lines {
        let line = idx + 1;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(bad(line, format!("expected `i j mass`, found `{l}`")));
        }
        let i: usize = f[0].parse().map_err(|_| bad(line, "invalid row index".into()))?;
        let j: usize = f[1].parse().map_err(|_| bad(line, "invalid column index".into()))?;
        let v: f64 = f[2].parse().map_err(|_| bad(line, "invalid mass".into()))?;
        if i >= rows || j >= cols {
            return Err(bad(line, format!("index ({i}, {j}) outside {rows}x{cols}")));
        }
        entries.push((i, j, v));
    }
    Ok(PlanTriplets {
        rows,
        cols,
        cost,
        entries,
    })
}

/// Spanning-tree basis of the transportation problem. Nodes `0..n` are rows,
/// `n..n+m` are columns; every basic cell is a tree edge.
struct Basis {
    n: usize,
    m: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    adj: Vec<Vec<(usize, usize)>>,
}

impl Basis {
    fn link(&mut self, slot: usize) {
        let (i, j) = self.cells[slot];
        let col = self.n + j;
        self.adj[i].push((col, slot));
        self.adj[col].push((i, slot));
    }

    fn unlink(&mut self, slot: usize) {
        let (i, j) = self.cells[slot];
        let col = self.n + j;
        self.adj[i].retain(|&(_, s)| s != slot);
        self.adj[col].retain(|&(_, s)| s != slot);
    }

    /// Row and column potentials with `u_0 = 0` and `u_i + v_j = c_ij` on
    /// every basic cell.
    fn potentials(&self, cost: &impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>) {
        let total = self.n + self.m;
        let mut pot = vec![0.0; total];
        let mut seen = vec![false; total];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(node) = stack.pop() {
            for &(next, slot) in &self.adj[node] {
                if seen[next] {
                    continue;
                }
                let (i, j) = self.cells[slot];
                pot[next] = cost(i, j) - pot[node];
                seen[next] = true;
                stack.push(next);
            }
        }
        let v = pot.split_off(self.n);
        (pot, v)
    }

    /// Tree path from row `i` to column `j` as basic slots, ordered from the
    /// row end.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let total = self.n + self.m;
        let target = self.n + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut queue = VecDeque::from([i]);
        seen[i] = true;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, slot) in &self.adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, slot));
                    queue.push_back(next);
                }
            }
        }
        let mut slots = Vec::new();
        let mut node = target;
        while let Some((prev, slot)) = parent[node] {
            slots.push(slot);
            node = prev;
        }
        slots.reverse();
        slots
    }
}

/// North-west corner rule. Always yields `n + m − 1` basic cells (some
/// possibly with zero flow), i.e. a spanning tree.
fn northwest_corner(a: &[f64], b: &[f64]) -> Basis {
    let (n, m) = (a.len(), b.len());
    let mut basis = Basis {
        n,
        m,
        cells: Vec::with_capacity(n + m - 1),
        flow: Vec::with_capacity(n + m - 1),
        adj: vec![Vec::new(); n + m],
    };
    let (mut ra, mut rb) = (a[0], b[0]);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra.min(rb).max(0.0);
        basis.cells.push((i, j));
        basis.flow.push(x);
        basis.link(basis.cells.len() - 1);
        if i == n - 1 && j == m - 1 {
            break;
        }
        let advance_row = j == m - 1 || (i < n - 1 && ra <= rb);
        if advance_row {
            rb -= x;
            i += 1;
            ra = a[i];
        } else {
            ra -= x;
            j += 1;
            rb = b[j];
        }
    }
    basis
}

/// Optimal plan for the squared Euclidean cost between `a` (rows) and `b`
/// (columns). The returned plan carries the dual potentials of the final
/// basis; their complementary-slackness gap is checked to 1e-8.
pub fn solve_discrete_w2(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<TransportPlan> {
    check_dim(a.dim(), b.dim())?;
    let (n, m) = (a.len(), b.len());
    for size in [n, m] {
        if size > MAX_ATOMS {
            return Err(Error::SizeLimit {
                size,
                limit: MAX_ATOMS,
            });
        }
    }
    let cost = |i: usize, j: usize| sq_dist(a.point(i), b.point(j));
    let scale = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| cost(i, j))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let tol = 1e-12 * scale;

    let mut basis = northwest_corner(a.weights(), b.weights());
    let mut pivots = 0;
    let (u, v) = loop {
        let (u, v) = basis.potentials(&cost);
        // Bland: first cell in index order with negative reduced cost
        let entering = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .find(|&(i, j)| cost(i, j) - u[i] - v[j] < -tol);
        let Some((ei, ej)) = entering else {
            break (u, v);
        };
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::NotConverged {
                solver: "transportation simplex",
                iterations: pivots,
                residual: cost(ei, ej) - u[ei] - v[ej],
            });
        }
        let path = basis.path(ei, ej);
        debug_assert!(path.len() % 2 == 1);
        // path edges alternate −, +, −, ... starting at the row end
        let leaving = path
            .iter()
            .step_by(2)
            .copied()
            .min_by(|&s, &t| {
                let key = |slot: usize| {
                    let (i, j) = basis.cells[slot];
                    (basis.flow[slot], i * m + j)
                };
                let (fs, ks) = key(s);
                let (ft, kt) = key(t);
                fs.total_cmp(&ft).then(ks.cmp(&kt))
            })
            .expect("cycle has a decreasing edge");
        let theta = basis.flow[leaving];
        for (pos, &slot) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis.flow[slot] = (basis.flow[slot] - theta).max(0.0);
            } else {
                basis.flow[slot] += theta;
            }
        }
        basis.unlink(leaving);
        basis.cells[leaving] = (ei, ej);
        basis.flow[leaving] = theta;
        basis.link(leaving);
    };

    let mut mass = vec![0.0; n * m];
    for (&(i, j), &f) in basis.cells.iter().zip(&basis.flow) {
        mass[i * m + j] += f;
    }
    let total_cost = plan_cost(a, b, &mass);
    let plan = TransportPlan {
        rows: a.clone(),
        cols: b.clone(),
        mass,
        cost: total_cost,
        duals: Some((u, v)),
    };
    let gap = plan.certificate_gap().unwrap_or(0.0);
    if gap > 1e-8 * scale {
        return Err(Error::NotConverged {
            solver: "transportation simplex certificate",
            iterations: pivots,
            residual: gap,
        });
    }
    Ok(plan)
}

/// `W₂(a, b)`, the square root of the optimal cost.
pub fn w2_distance(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    Ok(solve_discrete_w2(a, b)?.cost().max(0.0).sqrt())
}

/// Row (or column) `index` of the plan divided by its marginal weight.
pub fn conditional_of_plan(plan: &TransportPlan, side: PlanSide, index: usize) -> Result<Vec<f64>> {
    let (n, m) = plan.shape();
    let slice: Vec<f64> = match side {
        PlanSide::Row => {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, len: n });
            }
            plan.mass[index * m..(index + 1) * m].to_vec()
        }
        PlanSide::Col => {
            if index >= m {
                return Err(Error::IndexOutOfRange { index, len: m });
            }
            (0..n).map(|i| plan.mass[i * m + index]).collect()
        }
    };
    let total: f64 = slice.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroMarginal(index));
    }
    Ok(slice.into_iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_discrete, two_point_measure};
    use std::f64::consts::PI;

    #[test]
    fn identical_measures_give_diagonal_plan() {
        let a = make_discrete(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.3, 2.0]], &[0.2, 0.5, 0.3])
            .unwrap();
        let plan = solve_discrete_w2(&a, &a).unwrap();
        assert!(plan.cost().abs() < 1e-15);
        for i in 0..3 {
            assert!((plan.mass(i, i) - a.weight(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_point_rotation_cost() {
        let p0 = two_point_measure(1.0, 0.0).unwrap();
        let pt = two_point_measure(1.0, PI / 6.0).unwrap();
        let plan = solve_discrete_w2(&p0, &pt).unwrap();
        let expected = (2.0 * (PI / 12.0).sin()).powi(2);
        assert!((plan.cost() - expected).abs() < 1e-12);
        assert!((plan.cost() - 0.267949).abs() < 1e-6);
        assert!((w2_distance(&p0, &pt).unwrap() - 0.517638).abs() < 1e-6);
        assert!(w2_distance(&p0, &p0).unwrap() < 1e-12);
    }

    #[test]
    fn conditional_slices() {
        let a = make_discrete(&[vec![0.0], vec![1.0]], &[0.5, 0.5]).unwrap();
        let b = make_discrete(&[vec![0.0], vec![1.0]], &[0.4, 0.6]).unwrap();
        let plan = TransportPlan::new(a.clone(), b.clone(), vec![0.3, 0.2, 0.1, 0.4]).unwrap();
        let c = conditional_of_plan(&plan, PlanSide::Col, 0).unwrap();
        assert!((c[0] - 0.75).abs() < 1e-15 && (c[1] - 0.25).abs() < 1e-15);

        let prod = TransportPlan::product(&a, &b).unwrap();
        for j in 0..2 {
            let c = conditional_of_plan(&prod, PlanSide::Col, j).unwrap();
            assert!((c[0] - 0.5).abs() < 1e-15);
        }
        let diag = solve_discrete_w2(&a, &a).unwrap();
        assert_eq!(conditional_of_plan(&diag, PlanSide::Row, 1).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(
            conditional_of_plan(&diag, PlanSide::Row, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn plan_validation_rejects_bad_marginals() {
        let a = make_discrete(&[vec![0.0], vec![1.0]], &[0.5, 0.5]).unwrap();
        assert!(TransportPlan::new(a.clone(), a.clone(), vec![0.5, 0.0, 0.0, 0.4]).is_err());
        assert!(TransportPlan::new(a.clone(), a, vec![0.6, -0.1, -0.1, 0.6]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let a = make_discrete(&[vec![0.0], vec![1.0], vec![3.0]], &[0.2, 0.3, 0.5]).unwrap();
        let b = make_discrete(&[vec![0.5], vec![2.0]], &[0.6, 0.4]).unwrap();
        let plan = solve_discrete_w2(&a, &b).unwrap();
        let parsed = parse_plan_csv(&plan.to_csv()).unwrap();
        assert_eq!((parsed.rows, parsed.cols), (3, 2));
        assert_eq!(parsed.cost, plan.cost());
        let total: f64 = parsed.entries.iter().map(|e| e.2).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(parse_plan_csv("2 2 0.1\n0 5 0.5\n").is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let a = make_discrete(&[vec![0.0]], &[1.0]).unwrap();
        let b = make_discrete(&[vec![0.0, 1.0]], &[1.0]).unwrap();
        assert!(matches!(solve_discrete_w2(&a, &b), Err(Error::DimensionMismatch { .. })));
    }
}
