//! Dense primal active-set solver for small convex quadratic programs.
//!
//! Solves
//!
//! ```text
//! minimize    ½ xᵀQx + cᵀx
//! subject to  a_eqᵀx = b_eq            (optional, at most one)
//!             a_kᵀx ≥ b_k              k = 0..m
//!             x_j ≥ l_j                for variables with a lower bound
//! ```
//!
//! with Q symmetric positive semidefinite. The solver needs a feasible
//! starting point; callers with special structure (see
//! [`crate::coalition::solve_core`]) construct one directly.
//!
//! Multiplier convention: at a KKT point
//! `Qx + c + ν·a_eq − Σ μ_k a_k − Σ μ_j e_j = 0` with `μ ≥ 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One linear constraint row, `coeffs · x (op) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: Vec<f64>,
    pub eq: Option<LinearConstraint>,
    /// Rows meaning `a_k · x ≥ b_k`.
    pub ineq: Vec<LinearConstraint>,
    /// Per-variable lower bounds; empty means no bounds at all.
    pub lower_bounds: Vec<Option<f64>>,
}

impl QpProblem {
    pub fn new(q: DMatrix<f64>, c: Vec<f64>) -> Self {
        Self {
            q,
            c,
            eq: None,
            ineq: Vec::new(),
            lower_bounds: Vec::new(),
        }
    }

    pub fn with_eq(mut self, coeffs: Vec<f64>, rhs: f64) -> Self {
        self.eq = Some(LinearConstraint::new(coeffs, rhs));
        self
    }

    pub fn with_ineq(mut self, coeffs: Vec<f64>, rhs: f64) -> Self {
        self.ineq.push(LinearConstraint::new(coeffs, rhs));
        self
    }

    pub fn with_lower_bound(mut self, var: usize, bound: f64) -> Self {
        if self.lower_bounds.is_empty() {
            self.lower_bounds = vec![None; self.dim()];
        }
        self.lower_bounds[var] = Some(bound);
        self
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Objective value `½ xᵀQx + cᵀx`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let quad = (xv.transpose() * &self.q * &xv)[(0, 0)];
        0.5 * quad + self.c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Checks shapes, finiteness, symmetry and positive semidefiniteness.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::arg("QP dimension must be at least 1"));
        }
        if self.q.nrows() != d || self.q.ncols() != d {
            return Err(Error::Dimension {
                context: "QP quadratic term",
                expected: d,
                got: self.q.nrows().max(self.q.ncols()),
            });
        }
        let rows = self.eq.iter().chain(self.ineq.iter());
        for row in rows {
            if row.coeffs.len() != d {
                return Err(Error::Dimension {
                    context: "QP constraint row",
                    expected: d,
                    got: row.coeffs.len(),
                });
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("QP constraint".into()));
            }
        }
        if !self.lower_bounds.is_empty() && self.lower_bounds.len() != d {
            return Err(Error::Dimension {
                context: "QP lower bounds",
                expected: d,
                got: self.lower_bounds.len(),
            });
        }
        if self.c.iter().chain(self.q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP objective".into()));
        }
        let scale = self.q.amax().max(1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.q[(i, j)] - self.q[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::arg(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        let min_eig = SymmetricEigen::new(self.q.clone()).eigenvalues.min();
        if min_eig < -1e-8 {
            return Err(Error::arg(format!(
                "Q is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    fn bounds(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.lower_bounds
            .iter()
            .enumerate()
            .filter_map(|(j, b)| b.map(|b| (j, b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    /// The supplied (or default) starting point violates a constraint.
    InfeasibleStart,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub eq_dual: f64,
    pub ineq_duals: Vec<f64>,
    /// One entry per variable; zero where no bound is present.
    pub bound_duals: Vec<f64>,
    /// Inequality rows in the final working set, in ascending order.
    pub active_ineq: Vec<usize>,
    /// Variables whose lower bound is in the final working set.
    pub active_bounds: Vec<usize>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub status: QpStatus,
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    /// Defaults to `50·(m+1)` where m counts inequality rows plus bounds.
    pub max_iter: Option<usize>,
    pub tol: f64,
    /// Diagonal damping added to Q inside the KKT factorizations.
    pub ridge: f64,
    pub x0: Option<Vec<f64>>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: None,
            tol: 1e-8,
            ridge: 1e-10,
            x0: None,
        }
    }
}

impl QpOptions {
    pub fn new(max_iter: usize, tol: f64) -> Self {
        Self {
            max_iter: Some(max_iter),
            tol,
            ..Self::default()
        }
    }

    pub fn with_start(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }
}

/// Unified view over inequality rows and bounds: index `k < m` is an
/// inequality row, `k ≥ m` is the `k−m`-th present bound.
struct Rows<'a> {
    p: &'a QpProblem,
    bounds: Vec<(usize, f64)>,
}

impl<'a> Rows<'a> {
    fn new(p: &'a QpProblem) -> Self {
        Self {
            p,
            bounds: p.bounds().collect(),
        }
    }

    fn len(&self) -> usize {
        self.p.ineq.len() + self.bounds.len()
    }

    fn dot(&self, k: usize, v: &[f64]) -> f64 {
        let m = self.p.ineq.len();
        if k < m {
            self.p.ineq[k].dot(v)
        } else {
            v[self.bounds[k - m].0]
        }
    }

    fn rhs(&self, k: usize) -> f64 {
        let m = self.p.ineq.len();
        if k < m {
            self.p.ineq[k].rhs
        } else {
            self.bounds[k - m].1
        }
    }

    fn norm(&self, k: usize) -> f64 {
        let m = self.p.ineq.len();
        if k < m {
            self.p.ineq[k]
                .coeffs
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
        } else {
            1.0
        }
    }

    fn write_row(&self, k: usize, out: &mut [f64]) {
        let m = self.p.ineq.len();
        if k < m {
            out.copy_from_slice(&self.p.ineq[k].coeffs);
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[self.bounds[k - m].0] = 1.0;
        }
    }
}

/// Solves the QP with a primal active-set method.
///
/// Entering and leaving constraints are chosen by lowest index among the
/// candidates (Bland's rule), which rules out cycling on degenerate vertices.
pub fn solve_qp(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    p.validate()?;
    let d = p.dim();
    let rows = Rows::new(p);
    let total = rows.len();
    let max_iter = opts.max_iter.unwrap_or(50 * (total + 1));

    let mut x = match &opts.x0 {
        Some(x0) => {
            if x0.len() != d {
                return Err(Error::Dimension {
                    context: "QP starting point",
                    expected: d,
                    got: x0.len(),
                });
            }
            x0.clone()
        }
        None => min_norm_start(p),
    };

    let feas_tol = opts.tol.max(1e-12);
    let start_violation = primal_violation(p, &rows, &x);
    if start_violation > feas_tol * (1.0 + inf_norm(&x)) {
        let mut sol = empty_solution(p, x, QpStatus::InfeasibleStart);
        sol.kkt_residual = kkt_residual(p, &sol);
        return Ok(sol);
    }

    let has_eq = p.eq.is_some();
    let mut working: Vec<usize> = Vec::new();
    let mut y = Vec::new();
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut row_buf = vec![0.0; d];

    while iterations < max_iter {
        iterations += 1;
        let (step, mult) = solve_eqp(p, &rows, &working, &x, opts.ridge, &mut row_buf)?;
        y = mult;
        let step_norm = inf_norm(&step);
        if step_norm <= 1e-11 * (1.0 + inf_norm(&x)) {
            // Multipliers of working inequalities are μ = −y.
            let offset = usize::from(has_eq);
            let leaving = working
                .iter()
                .enumerate()
                .filter(|(slot, _)| -y[offset + slot] < -opts.tol)
                .map(|(slot, &k)| (slot, k))
                .min_by_key(|&(_, k)| k);
            match leaving {
                None => {
                    status = QpStatus::Optimal;
                    break;
                }
                Some((slot, _)) => {
                    working.remove(slot);
                    continue;
                }
            }
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for k in 0..total {
            if working.contains(&k) {
                continue;
            }
            let ap = rows.dot(k, &step);
            if ap >= -1e-13 * rows.norm(k) * step_norm {
                continue;
            }
            let slack = (rows.dot(k, &x) - rows.rhs(k)).max(0.0);
            let t = slack / -ap;
            if t < alpha {
                alpha = t;
                blocking = Some(k);
            }
        }
        if blocking.is_none() && step_norm > 1e6 * (1.0 + inf_norm(&x)) {
            status = QpStatus::Unbounded;
            break;
        }
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += alpha * si;
        }
        if let Some(k) = blocking {
            working.push(k);
        }
    }

    let mut sol = empty_solution(p, x, status);
    sol.iterations = iterations;
    if !y.is_empty() || has_eq {
        let offset = usize::from(has_eq);
        if has_eq {
            sol.eq_dual = y.first().copied().unwrap_or(0.0);
        }
        let m = p.ineq.len();
        for (slot, &k) in working.iter().enumerate() {
            let mu = y.get(offset + slot).map_or(0.0, |v| -v);
            if k < m {
                sol.ineq_duals[k] = mu;
            } else {
                sol.bound_duals[rows.bounds[k - m].0] = mu;
            }
        }
    }
    let m = p.ineq.len();
    let mut active_ineq: Vec<usize> = working.iter().copied().filter(|&k| k < m).collect();
    active_ineq.sort_unstable();
    let mut active_bounds: Vec<usize> = working
        .iter()
        .filter(|&&k| k >= m)
        .map(|&k| rows.bounds[k - m].0)
        .collect();
    active_bounds.sort_unstable();
    sol.active_ineq = active_ineq;
    sol.active_bounds = active_bounds;
    sol.kkt_residual = kkt_residual(p, &sol);
    Ok(sol)
}

/// Solves the equality-constrained subproblem for the current working set.
///
/// Returns the step `p` and the raw multipliers `y` of
/// `[Q+rI Aᵀ; A 0] [p; y] = [−g; 0]`, ordered equality first.
fn solve_eqp(
    p: &QpProblem,
    rows: &Rows<'_>,
    working: &[usize],
    x: &[f64],
    ridge: f64,
    row_buf: &mut [f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = p.dim();
    let k = usize::from(p.eq.is_some()) + working.len();
    let size = d + k;
    let mut kkt = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    let xv = DVector::from_column_slice(x);
    let g = &p.q * &xv + DVector::from_column_slice(&p.c);
    for i in 0..d {
        for j in 0..d {
            kkt[(i, j)] = p.q[(i, j)];
        }
        kkt[(i, i)] += ridge;
        rhs[i] = -g[i];
    }
    let mut r = d;
    if let Some(eq) = &p.eq {
        for (j, &a) in eq.coeffs.iter().enumerate() {
            kkt[(r, j)] = a;
            kkt[(j, r)] = a;
        }
        r += 1;
    }
    for &w in working {
        rows.write_row(w, row_buf);
        for (j, &a) in row_buf.iter().enumerate() {
            kkt[(r, j)] = a;
            kkt[(j, r)] = a;
        }
        r += 1;
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonFinite("singular KKT system in active-set QP".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "KKT solve produced non-finite values".into(),
        ));
    }
    let step = sol.rows(0, d).iter().copied().collect();
    let mult = sol.rows(d, k).iter().copied().collect();
    Ok((step, mult))
}

fn min_norm_start(p: &QpProblem) -> Vec<f64> {
    let d = p.dim();
    match &p.eq {
        Some(eq) => {
            let nn: f64 = eq.coeffs.iter().map(|a| a * a).sum();
            if nn == 0.0 {
                vec![0.0; d]
            } else {
                eq.coeffs.iter().map(|a| a * eq.rhs / nn).collect()
            }
        }
        None => vec![0.0; d],
    }
}

fn primal_violation(p: &QpProblem, rows: &Rows<'_>, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    if let Some(eq) = &p.eq {
        worst = worst.max((eq.dot(x) - eq.rhs).abs());
    }
    for k in 0..rows.len() {
        worst = worst.max(rows.rhs(k) - rows.dot(k, x));
    }
    worst
}

fn empty_solution(p: &QpProblem, x: Vec<f64>, status: QpStatus) -> QpSolution {
    QpSolution {
        x,
        eq_dual: 0.0,
        ineq_duals: vec![0.0; p.ineq.len()],
        bound_duals: vec![0.0; p.dim()],
        active_ineq: Vec::new(),
        active_bounds: Vec::new(),
        iterations: 0,
        kkt_residual: f64::INFINITY,
        status,
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Largest violation among stationarity, primal feasibility, dual
/// feasibility and complementary slackness.
pub fn kkt_residual(p: &QpProblem, s: &QpSolution) -> f64 {
    let d = p.dim();
    let x = &s.x;
    let xv = DVector::from_column_slice(x);
    let mut station: Vec<f64> = (&p.q * &xv + DVector::from_column_slice(&p.c))
        .iter()
        .copied()
        .collect();
    let mut worst: f64 = 0.0;
    if let Some(eq) = &p.eq {
        for j in 0..d {
            station[j] += s.eq_dual * eq.coeffs[j];
        }
        worst = worst.max((eq.dot(x) - eq.rhs).abs());
    }
    for (k, row) in p.ineq.iter().enumerate() {
        let mu = s.ineq_duals.get(k).copied().unwrap_or(0.0);
        for j in 0..d {
            station[j] -= mu * row.coeffs[j];
        }
        let slack = row.dot(x) - row.rhs;
        worst = worst.max(-slack).max(-mu).max((mu * slack).abs());
    }
    for (j, bound) in p.bounds() {
        let mu = s.bound_duals.get(j).copied().unwrap_or(0.0);
        station[j] -= mu;
        let slack = x[j] - bound;
        worst = worst.max(-slack).max(-mu).max((mu * slack).abs());
    }
    worst.max(inf_norm(&station))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn symmetric_example() -> QpProblem {
        QpProblem::new(DMatrix::from_diagonal_element(2, 2, 2.0), vec![0.0, 0.0])
            .with_eq(vec![1.0, 1.0], 2.0)
    }

    #[test]
    fn unconstrained_scalar() {
        let p = QpProblem::new(DMatrix::from_element(1, 1, 2.0), vec![-2.0]);
        let s = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_only_symmetric() {
        let s = solve_qp(&symmetric_example(), &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eq_dual, -2.0, epsilon = 1e-9);
    }

    #[test]
    fn residual_of_analytic_solution_is_tiny() {
        let p = symmetric_example();
        let s = QpSolution {
            x: vec![1.0, 1.0],
            eq_dual: -2.0,
            ..empty_solution(&p, vec![1.0, 1.0], QpStatus::Optimal)
        };
        assert!(kkt_residual(&p, &s) <= 1e-10);
    }

    #[test]
    fn residual_detects_perturbation() {
        let p = symmetric_example();
        let s = QpSolution {
            eq_dual: -2.0,
            ..empty_solution(&p, vec![1.001, 1.0], QpStatus::Optimal)
        };
        // eq residual 1e-3, stationarity 2e-3
        let r = kkt_residual(&p, &s);
        assert!(r >= 1e-4);
        assert_abs_diff_eq!(r, 2e-3, epsilon = 1e-12);
    }

    #[test]
    fn residual_of_zero_vector_is_eq_rhs() {
        let p = symmetric_example();
        let s = empty_solution(&p, vec![0.0, 0.0], QpStatus::Optimal);
        assert_abs_diff_eq!(kkt_residual(&p, &s), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_indefinite_q() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = QpProblem::new(q, vec![0.0, 0.0]);
        assert!(matches!(
            solve_qp(&p, &QpOptions::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn rejects_asymmetric_q() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpProblem::new(q, vec![0.0, 0.0]).validate().is_err());
    }

    #[test]
    fn inequality_becomes_active() {
        // min (x-3)² s.t. x ≤ 1  (written as −x ≥ −1)
        let p = QpProblem::new(DMatrix::from_element(1, 1, 2.0), vec![-6.0])
            .with_ineq(vec![-1.0], -1.0);
        let s = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.ineq_duals[0], 4.0, epsilon = 1e-9);
        assert_eq!(s.active_ineq, vec![0]);
    }

    #[test]
    fn infeasible_start_is_reported() {
        let p =
            QpProblem::new(DMatrix::from_element(1, 1, 2.0), vec![0.0]).with_ineq(vec![1.0], 5.0);
        let s = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::InfeasibleStart);
        let s = solve_qp(&p, &QpOptions::default().with_start(vec![6.0])).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn unbounded_linear_direction() {
        let p = QpProblem::new(DMatrix::zeros(1, 1), vec![1.0]);
        let s = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Unbounded);
    }

    #[test]
    fn linear_objective_blocked_by_bound() {
        let p = QpProblem::new(DMatrix::zeros(1, 1), vec![1.0]).with_lower_bound(0, -3.0);
        let s = solve_qp(&p, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.bound_duals[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn max_iter_returns_best_iterate() {
        let p = QpProblem::new(DMatrix::from_element(1, 1, 2.0), vec![-6.0])
            .with_ineq(vec![-1.0], -1.0);
        let s = solve_qp(&p, &QpOptions::new(1, 1e-8)).unwrap();
        assert_eq!(s.status, QpStatus::MaxIter);
        assert!(s.x[0] <= 1.0 + 1e-12);
    }
}
