//! Coalitions, coalition sampling, and regularized least ε-core allocation.
//!
//! For one timestep the allocation problem is
//!
//! ```text
//! minimize    ε + λ_reg · Σ_i (A_i − A_N/n)²
//! subject to  Σ_i A_i = A_N
//!             Σ_{i∈C} A_i ≥ A_C − ε      for every C in the table
//!             ε ≥ 0
//! ```
//!
//! over the variables `(A_1, …, A_n, ε)`. It is always feasible: any
//! efficient split becomes feasible once ε is raised to the worst violation.

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpOptions, QpProblem, QpSolution, QpStatus};

/// Largest supported agent count; coalitions are `u32` bitmasks.
pub const MAX_AGENTS: usize = 20;

/// Default variance-regularization weight.
pub const DEFAULT_LAMBDA_REG: f64 = 1e-2;

/// A nonempty proper subset of the agents, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition(u32);

impl Coalition {
    pub fn new(mask: u32, n: usize) -> Result<Self> {
        check_agent_count(n)?;
        let grand = grand_mask(n);
        if mask == 0 {
            return Err(Error::arg("coalition must be nonempty"));
        }
        if mask & !grand != 0 {
            return Err(Error::arg(format!(
                "coalition mask {mask} names agents outside 0..{n}"
            )));
        }
        if mask == grand {
            return Err(Error::arg(
                "the grand coalition enters only through the efficiency constraint",
            ));
        }
        Ok(Self(mask))
    }

    /// The full agent set. Not accepted as a table entry; used where an
    /// operation treats `N` like any other coalition.
    pub fn grand(n: usize) -> Result<Self> {
        check_agent_count(n)?;
        Ok(Self(grand_mask(n)))
    }

    pub fn from_members(members: &[usize], n: usize) -> Result<Self> {
        let mut mask = 0u32;
        for &i in members {
            if i >= n {
                return Err(Error::arg(format!("agent {i} out of range for n={n}")));
            }
            mask |= 1 << i;
        }
        Self::new(mask, n)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn contains(self, agent: usize) -> bool {
        agent < 32 && self.0 & (1 << agent) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let mask = self.0;
        (0..32).filter(move |&i| mask & (1 << i) != 0)
    }

    /// Sum of `values[i]` over members.
    pub fn sum(self, values: &[f64]) -> f64 {
        self.members().map(|i| values[i]).sum()
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.members().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

pub fn grand_mask(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

/// Number of nonempty proper coalitions, `2^n − 2`.
pub fn proper_count(n: usize) -> usize {
    (1usize << n) - 2
}

fn check_agent_count(n: usize) -> Result<()> {
    if n > MAX_AGENTS {
        return Err(Error::Capacity(format!(
            "{n} agents exceeds the supported maximum of {MAX_AGENTS}"
        )));
    }
    if n < 2 {
        return Err(Error::arg("at least two agents are required"));
    }
    Ok(())
}

/// Every nonempty proper coalition in ascending mask order.
pub fn all_proper(n: usize) -> Result<Vec<Coalition>> {
    check_agent_count(n)?;
    Ok((1..grand_mask(n)).map(Coalition).collect())
}

/// Coalition advantages `A_C` for one timestep plus the grand advantage `A_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionAdvantageTable {
    n: usize,
    entries: Vec<(Coalition, f64)>,
    grand_advantage: f64,
}

impl CoalitionAdvantageTable {
    pub fn new(n: usize, entries: Vec<(Coalition, f64)>, grand_advantage: f64) -> Result<Self> {
        check_agent_count(n)?;
        if !grand_advantage.is_finite() {
            return Err(Error::NonFinite("grand advantage".into()));
        }
        let grand = grand_mask(n);
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        for &(c, v) in &entries {
            if c.mask() == 0 || c.mask() & !grand != 0 || c.mask() == grand {
                return Err(Error::arg(format!(
                    "coalition {c} is not a proper subset of {n} agents"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("advantage of coalition {c}")));
            }
            if !seen.insert(c) {
                return Err(Error::arg(format!("duplicate coalition {c}")));
            }
        }
        Ok(Self {
            n,
            entries,
            grand_advantage,
        })
    }

    /// Convenience constructor from `(mask, value)` pairs.
    pub fn from_masks(n: usize, grand_advantage: f64, entries: &[(u32, f64)]) -> Result<Self> {
        let entries = entries
            .iter()
            .map(|&(m, v)| Coalition::new(m, n).map(|c| (c, v)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, entries, grand_advantage)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(Coalition, f64)] {
        &self.entries
    }

    pub fn grand_advantage(&self) -> f64 {
        self.grand_advantage
    }

    pub fn get(&self, c: Coalition) -> Option<f64> {
        self.entries.iter().find(|(k, _)| *k == c).map(|&(_, v)| v)
    }

    /// The sub-table restricted to the given coalitions, in the given order.
    pub fn restrict(&self, coalitions: &[Coalition]) -> Result<Self> {
        let entries = coalitions
            .iter()
            .map(|&c| {
                self.get(c)
                    .map(|v| (c, v))
                    .ok_or_else(|| Error::arg(format!("coalition {c} missing from table")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.n, entries, self.grand_advantage)
    }

    /// Parses the plain-text game format: line 1 `n`, line 2 `A_N`, then one
    /// `bitmask value` pair per line. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, n_str) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing agent count".into(),
        })?;
        let n: usize = n_str.parse().map_err(|_| Error::Parse {
            line,
            message: format!("expected agent count, found `{n_str}`"),
        })?;
        let (line, grand_str) = lines.next().ok_or(Error::Parse {
            line: line + 1,
            message: "missing grand advantage".into(),
        })?;
        let grand: f64 = grand_str.parse().map_err(|_| Error::Parse {
            line,
            message: format!("expected grand advantage, found `{grand_str}`"),
        })?;
        let mut entries = Vec::new();
        for (line, l) in lines {
            let mut parts = l.split_whitespace();
            let (Some(mask), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line,
                    message: "expected `bitmask value`".into(),
                });
            };
            let mask: u32 = mask.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad bitmask `{mask}`"),
            })?;
            let value: f64 = value.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad value `{value}`"),
            })?;
            let c = Coalition::new(mask, n).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            entries.push((c, value));
        }
        Self::new(n, entries, grand)
    }

    /// Inverse of [`CoalitionAdvantageTable::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n{}\n", self.n, self.grand_advantage);
        for (c, v) in &self.entries {
            out.push_str(&format!("{} {}\n", c.mask(), v));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreStatus {
    Optimal,
    MaxIter,
    InfeasibleInput,
}

/// Per-agent advantages for one timestep together with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreAllocation {
    pub per_agent: Vec<f64>,
    pub epsilon: f64,
    pub objective: f64,
    pub status: CoreStatus,
    /// Indices into the table entries whose constraints are in the final
    /// working set.
    pub active_constraints: Vec<usize>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SamplingMode {
    AllProper,
    FixedCount { count: usize },
    ProbableCore { delta: f64, confidence: f64 },
}

/// How coalitions are drawn for each timestep. Draws are uniform without
/// replacement over nonempty proper coalitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    #[serde(flatten)]
    pub mode: SamplingMode,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn all_proper(seed: u64) -> Self {
        Self {
            mode: SamplingMode::AllProper,
            seed,
        }
    }

    pub fn fixed(count: usize, seed: u64) -> Self {
        Self {
            mode: SamplingMode::FixedCount { count },
            seed,
        }
    }

    /// `2^{n−1} − 1` coalitions, roughly half of all of them.
    pub fn half(n: usize, seed: u64) -> Self {
        Self::fixed((1usize << (n - 1)) - 1, seed)
    }

    pub fn probable_core(delta: f64, confidence: f64, seed: u64) -> Self {
        Self {
            mode: SamplingMode::ProbableCore { delta, confidence },
            seed,
        }
    }

    /// Number of coalitions this plan yields for `n` agents.
    pub fn count(&self, n: usize) -> Result<usize> {
        check_agent_count(n)?;
        let total = proper_count(n);
        match self.mode {
            SamplingMode::AllProper => Ok(total),
            SamplingMode::FixedCount { count } => {
                if count > total {
                    Err(Error::arg(format!(
                        "cannot sample {count} distinct coalitions from {total}"
                    )))
                } else {
                    Ok(count)
                }
            }
            SamplingMode::ProbableCore { delta, confidence } => {
                Ok(probable_core_sample_size(n, delta, confidence)?.min(total))
            }
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.count(n).map(|_| ())
    }
}

/// Uncapped sample size `⌈((n+2)·ln(1/δ) + ln(1/Δ)) / δ²⌉` for a
/// δ-probable core allocation with probability at least `1 − Δ`.
pub fn probable_core_sample_size(n: usize, delta: f64, confidence: f64) -> Result<usize> {
    for (name, v) in [("delta", delta), ("confidence", confidence)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::arg(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let m = ((n as f64 + 2.0) * (1.0 / delta).ln() + (1.0 / confidence).ln()) / (delta * delta);
    Ok(m.ceil() as usize)
}

/// Draws distinct coalitions according to `plan`; ascending mask order.
pub fn sample_coalitions(n: usize, plan: &SamplingPlan) -> Result<Vec<Coalition>> {
    let count = plan.count(n)?;
    let total = proper_count(n);
    if count == total {
        return all_proper(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    Ok(sample_distinct(n, count, &mut rng))
}

pub(crate) fn sample_distinct<R: Rng + ?Sized>(
    n: usize,
    count: usize,
    rng: &mut R,
) -> Vec<Coalition> {
    let mut picked: Vec<Coalition> = index::sample(rng, proper_count(n), count)
        .into_iter()
        .map(|k| Coalition(k as u32 + 1))
        .collect();
    picked.sort_unstable();
    picked
}

/// Options for [`solve_core_with`].
#[derive(Debug, Clone)]
pub struct CoreSolveOptions {
    /// Variance weight; zero selects the lexicographic variant (least ε,
    /// then least deviation from the equal split).
    pub lambda_reg: f64,
    pub max_iter: Option<usize>,
    pub tol: f64,
    /// Previous per-agent allocation used to seed the start point.
    pub warm_start: Option<Vec<f64>>,
}

impl CoreSolveOptions {
    pub fn new(lambda_reg: f64) -> Self {
        Self {
            lambda_reg,
            max_iter: None,
            tol: 1e-8,
            warm_start: None,
        }
    }
}

/// Variance weight used in the first phase of the lexicographic solve.
const LEXICOGRAPHIC_PHASE1_WEIGHT: f64 = 1e-6;

/// The allocation problem in matrix form over `x = (A_1, …, A_n, ε)`.
pub fn core_qp(table: &CoalitionAdvantageTable, lambda_reg: f64) -> QpProblem {
    let n = table.n();
    let d = n + 1;
    let mean = table.grand_advantage() / n as f64;
    let mut q = DMatrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for i in 0..n {
        q[(i, i)] = 2.0 * lambda_reg;
        c[i] = -2.0 * lambda_reg * mean;
    }
    c[n] = 1.0;
    let mut eq = vec![1.0; d];
    eq[n] = 0.0;
    let mut p = QpProblem::new(q, c).with_eq(eq, table.grand_advantage());
    for &(coal, value) in table.entries() {
        let mut row = vec![0.0; d];
        for i in coal.members() {
            row[i] = 1.0;
        }
        row[n] = 1.0;
        p = p.with_ineq(row, value);
    }
    p.with_lower_bound(n, 0.0)
}

/// Efficient split derived from `seed` (or the equal split), with ε raised to
/// the largest coalition violation. Always feasible.
fn feasible_start(table: &CoalitionAdvantageTable, seed: Option<&[f64]>) -> Vec<f64> {
    let n = table.n();
    let grand = table.grand_advantage();
    let mut x: Vec<f64> = match seed {
        Some(w) if w.len() == n && w.iter().all(|v| v.is_finite()) => {
            let shift = (grand - w.iter().sum::<f64>()) / n as f64;
            w.iter().map(|v| v + shift).collect()
        }
        _ => vec![grand / n as f64; n],
    };
    let eps = table
        .entries()
        .iter()
        .map(|&(c, v)| v - c.sum(&x))
        .fold(0.0f64, f64::max);
    x.push(eps);
    x
}

fn variance_term(per_agent: &[f64], grand: f64) -> f64 {
    let mean = grand / per_agent.len() as f64;
    per_agent.iter().map(|a| (a - mean).powi(2)).sum()
}

/// Regularized least ε-core allocation with `lambda_reg > 0`.
pub fn solve_core(table: &CoalitionAdvantageTable, lambda_reg: f64) -> Result<CoreAllocation> {
    if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
        return Err(Error::arg(format!(
            "lambda_reg must be positive, got {lambda_reg}"
        )));
    }
    solve_core_with(table, &CoreSolveOptions::new(lambda_reg))
}

pub fn solve_core_with(
    table: &CoalitionAdvantageTable,
    opts: &CoreSolveOptions,
) -> Result<CoreAllocation> {
    if !(opts.lambda_reg >= 0.0 && opts.lambda_reg.is_finite()) {
        return Err(Error::arg(format!(
            "lambda_reg must be non-negative, got {}",
            opts.lambda_reg
        )));
    }
    if opts.lambda_reg == 0.0 {
        return solve_lexicographic(table, opts);
    }
    let n = table.n();
    let problem = core_qp(table, opts.lambda_reg);
    let start = feasible_start(table, opts.warm_start.as_deref());
    let qp_opts = QpOptions {
        max_iter: opts.max_iter,
        tol: opts.tol,
        x0: Some(start),
        ..QpOptions::default()
    };
    let sol = solve_qp(&problem, &qp_opts)?;
    debug_assert_ne!(
        sol.status,
        QpStatus::InfeasibleStart,
        "ε-relaxed start must be feasible"
    );
    let per_agent = sol.x[..n].to_vec();
    let epsilon = sol.x[n].max(0.0);
    let objective = epsilon + opts.lambda_reg * variance_term(&per_agent, table.grand_advantage());
    Ok(allocation_from(sol, per_agent, epsilon, objective))
}

fn allocation_from(
    sol: QpSolution,
    per_agent: Vec<f64>,
    epsilon: f64,
    objective: f64,
) -> CoreAllocation {
    let status = match sol.status {
        QpStatus::Optimal => CoreStatus::Optimal,
        QpStatus::MaxIter => CoreStatus::MaxIter,
        QpStatus::InfeasibleStart | QpStatus::Unbounded => CoreStatus::InfeasibleInput,
    };
    CoreAllocation {
        per_agent,
        epsilon,
        objective,
        status,
        active_constraints: sol.active_ineq,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
    }
}

/// Least ε first, then the allocation closest to the equal split at that ε.
fn solve_lexicographic(
    table: &CoalitionAdvantageTable,
    opts: &CoreSolveOptions,
) -> Result<CoreAllocation> {
    let n = table.n();
    let phase1 = solve_core_with(
        table,
        &CoreSolveOptions {
            lambda_reg: LEXICOGRAPHIC_PHASE1_WEIGHT,
            ..opts.clone()
        },
    )?;
    if phase1.status != CoreStatus::Optimal {
        return Ok(phase1);
    }
    let eps = phase1.epsilon;
    let mean = table.grand_advantage() / n as f64;
    let mut p = QpProblem::new(
        DMatrix::from_diagonal_element(n, n, 2.0),
        vec![-2.0 * mean; n],
    )
    .with_eq(vec![1.0; n], table.grand_advantage());
    for &(coal, value) in table.entries() {
        let row = (0..n)
            .map(|i| if coal.contains(i) { 1.0 } else { 0.0 })
            .collect();
        p = p.with_ineq(row, value - eps);
    }
    let sol = solve_qp(
        &p,
        &QpOptions {
            max_iter: opts.max_iter,
            tol: opts.tol,
            x0: Some(phase1.per_agent.clone()),
            ..QpOptions::default()
        },
    )?;
    if sol.status == QpStatus::InfeasibleStart {
        return Ok(phase1);
    }
    let iterations = phase1.iterations + sol.iterations;
    let mut alloc = allocation_from(sol.clone(), sol.x, eps, eps);
    alloc.iterations = iterations;
    Ok(alloc)
}

/// Feasibility of an allocation against a table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// `|Σ_i A_i − A_N|`.
    pub equality_residual: f64,
    /// `Σ_{i∈C} A_i − A_C + ε` per table entry; negative means violated.
    pub slacks: Vec<f64>,
    pub violations: usize,
    /// Entries whose slack is within `tol` of zero.
    pub tight: Vec<usize>,
    pub tol: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations == 0 && self.equality_residual <= self.tol
    }
}

pub fn verify_allocation(
    table: &CoalitionAdvantageTable,
    alloc: &[f64],
    epsilon: f64,
    tol: f64,
) -> Result<FeasibilityReport> {
    if alloc.len() != table.n() {
        return Err(Error::Dimension {
            context: "allocation",
            expected: table.n(),
            got: alloc.len(),
        });
    }
    let equality_residual = (alloc.iter().sum::<f64>() - table.grand_advantage()).abs();
    let slacks: Vec<f64> = table
        .entries()
        .iter()
        .map(|&(c, v)| c.sum(alloc) - v + epsilon)
        .collect();
    let violations = slacks.iter().filter(|&&s| s < -tol).count() + usize::from(epsilon < -tol);
    let tight = slacks
        .iter()
        .enumerate()
        .filter(|(_, s)| s.abs() <= tol)
        .map(|(k, _)| k)
        .collect();
    Ok(FeasibilityReport {
        equality_residual,
        slacks,
        violations,
        tight,
        tol,
    })
}

const VIOLATION_TOL: f64 = 1e-8;

/// Fraction of `fresh_samples` coalitions, drawn i.i.d. uniformly from
/// `table_full`, whose constraint the allocation violates.
pub fn probable_core_rate(
    table_full: &CoalitionAdvantageTable,
    alloc: &CoreAllocation,
    fresh_samples: usize,
    seed: u64,
) -> Result<f64> {
    if alloc.per_agent.len() != table_full.n() {
        return Err(Error::Dimension {
            context: "allocation",
            expected: table_full.n(),
            got: alloc.per_agent.len(),
        });
    }
    let entries = table_full.entries();
    if fresh_samples == 0 || entries.is_empty() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let violated = (0..fresh_samples)
        .filter(|_| {
            let (c, v) = entries[rng.gen_range(0..entries.len())];
            c.sum(&alloc.per_agent) - v + alloc.epsilon < -VIOLATION_TOL
        })
        .count();
    Ok(violated as f64 / fresh_samples as f64)
}

/// Exact violation ratio over every entry of `table_full`.
pub fn exact_violation_ratio(table_full: &CoalitionAdvantageTable, alloc: &CoreAllocation) -> f64 {
    let entries = table_full.entries();
    if entries.is_empty() {
        return 0.0;
    }
    let violated = entries
        .iter()
        .filter(|&&(c, v)| c.sum(&alloc.per_agent) - v + alloc.epsilon < -VIOLATION_TOL)
        .count();
    violated as f64 / entries.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn two_agent_table() -> CoalitionAdvantageTable {
        CoalitionAdvantageTable::from_masks(2, -5.0, &[(0b01, 5.0), (0b10, -5.0)]).unwrap()
    }

    pub(crate) fn three_agent() -> CoalitionAdvantageTable {
        CoalitionAdvantageTable::from_masks(3, -2.0, &[(0b011, 1.0), (0b101, 0.0), (0b110, 5.0)])
            .unwrap()
    }

    #[test]
    fn coalition_invariants() {
        assert!(Coalition::new(0, 3).is_err());
        assert!(Coalition::new(0b111, 3).is_err());
        assert!(Coalition::new(0b1000, 3).is_err());
        let c = Coalition::from_members(&[0, 2], 3).unwrap();
        assert_eq!(c.mask(), 0b101);
        assert!(c.contains(0) && !c.contains(1) && c.contains(2));
        assert_eq!(c.members().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(c.to_string(), "{0,2}");
        assert!(matches!(all_proper(21), Err(Error::Capacity(_))));
    }

    #[test]
    fn table_rejects_duplicates_and_non_finite() {
        assert!(CoalitionAdvantageTable::from_masks(2, 0.0, &[(1, 1.0), (1, 2.0)]).is_err());
        assert!(CoalitionAdvantageTable::from_masks(2, 0.0, &[(1, f64::NAN)]).is_err());
        assert!(CoalitionAdvantageTable::from_masks(2, f64::INFINITY, &[]).is_err());
    }

    #[test]
    fn sampling_all_proper_two_agents() {
        let c = sample_coalitions(2, &SamplingPlan::all_proper(0)).unwrap();
        assert_eq!(c.iter().map(|c| c.mask()).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn sampling_half_is_distinct_and_deterministic() {
        let plan = SamplingPlan::half(4, 11);
        let a = sample_coalitions(4, &plan).unwrap();
        let b = sample_coalitions(4, &plan).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(a, b);
        let mut masks: Vec<u32> = a.iter().map(|c| c.mask()).collect();
        masks.dedup();
        assert_eq!(masks.len(), 7);
        assert!(masks.iter().all(|&m| m > 0 && m < 15));
    }

    #[test]
    fn sampling_probable_core_count() {
        let plan = SamplingPlan::probable_core(0.5, 0.5, 3);
        // ⌈(7·ln2 + ln2)/0.25⌉ = ⌈22.18⌉ = 23, below the cap of 30
        assert_eq!(plan.count(5).unwrap(), 23);
        assert_eq!(sample_coalitions(5, &plan).unwrap().len(), 23);
        let tiny = SamplingPlan::probable_core(0.1, 0.1, 3);
        assert_eq!(tiny.count(3).unwrap(), 6);
    }

    #[test]
    fn sampling_errors() {
        assert!(matches!(
            sample_coalitions(4, &SamplingPlan::fixed(15, 0)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            sample_coalitions(21, &SamplingPlan::fixed(1, 0)),
            Err(Error::Capacity(_))
        ));
        assert!(SamplingPlan::probable_core(1.0, 0.5, 0).count(3).is_err());
    }

    #[test]
    fn two_agent_table_allocation() {
        let alloc = solve_core(&two_agent_table(), 0.01).unwrap();
        assert_eq!(alloc.status, CoreStatus::Optimal);
        assert_abs_diff_eq!(alloc.per_agent[0], 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(alloc.per_agent[1], -7.5, epsilon = 1e-9);
        assert_abs_diff_eq!(alloc.epsilon, 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(alloc.objective, 2.5 + 0.01 * 50.0, epsilon = 1e-9);
        assert!(alloc.kkt_residual <= 1e-8);
    }

    #[test]
    fn all_negative_singletons_split_equally() {
        let t = CoalitionAdvantageTable::from_masks(2, 0.0, &[(1, -1.0), (2, -1.0)]).unwrap();
        for lambda in [1e-3, 1e-2, 1.0] {
            let a = solve_core(&t, lambda).unwrap();
            assert_abs_diff_eq!(a.per_agent[0], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(a.per_agent[1], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(a.epsilon, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn three_agent_allocation() {
        let alloc = solve_core(&three_agent(), 0.01).unwrap();
        assert_eq!(alloc.status, CoreStatus::Optimal);
        assert_abs_diff_eq!(alloc.epsilon, 10.0 / 3.0, epsilon = 1e-9);
        let expect = [-11.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0];
        for (a, e) in alloc.per_agent.iter().zip(expect) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-9);
        }
        assert_eq!(alloc.active_constraints, vec![0, 1, 2]);
    }

    #[test]
    fn verify_known_points() {
        let r = verify_allocation(&three_agent(), &[-4.0, 1.0, 1.0], 4.0, 1e-9).unwrap();
        assert!(r.is_feasible());
        let r = verify_allocation(&two_agent_table(), &[2.5, -7.5], 2.5, 1e-9).unwrap();
        assert!(r.is_feasible());
        assert_eq!(r.tight, vec![0, 1]);
        let r = verify_allocation(&three_agent(), &[0.0, 0.0, 0.0], 0.0, 1e-9).unwrap();
        assert_abs_diff_eq!(r.equality_residual, 2.0);
        assert!(r.violations >= 1);
        assert!(!r.is_feasible());
        assert!(verify_allocation(&three_agent(), &[0.0], 0.0, 1e-9).is_err());
    }

    #[test]
    fn hand_three_agent_point_is_suboptimal() {
        let lambda = 0.01;
        let alloc = solve_core(&three_agent(), lambda).unwrap();
        let hand = 4.0 + lambda * variance_term(&[-4.0, 1.0, 1.0], -2.0);
        assert!(alloc.objective < hand);
    }

    #[test]
    fn lexicographic_variant_minimizes_epsilon() {
        let opts = CoreSolveOptions::new(0.0);
        let a = solve_core_with(&three_agent(), &opts).unwrap();
        assert_eq!(a.status, CoreStatus::Optimal);
        assert_abs_diff_eq!(a.epsilon, 10.0 / 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(a.per_agent.iter().sum::<f64>(), -2.0, epsilon = 1e-9);
        let a = solve_core_with(&two_agent_table(), &opts).unwrap();
        assert_abs_diff_eq!(a.epsilon, 2.5, epsilon = 1e-6);
        assert_abs_diff_eq!(a.per_agent[0], 2.5, epsilon = 1e-6);
    }

    #[test]
    fn high_value_coalition_is_protected() {
        let t = two_agent_table();
        let a = solve_core(&t, DEFAULT_LAMBDA_REG).unwrap();
        assert!(a.per_agent[0] >= 5.0 - a.epsilon - 1e-9);
        let r = verify_allocation(&t, &a.per_agent, a.epsilon, 1e-8).unwrap();
        assert!(r.tight.contains(&0));
    }

    #[test]
    fn empty_table_gives_equal_split() {
        let t = CoalitionAdvantageTable::new(4, vec![], 8.0).unwrap();
        let a = solve_core(&t, 0.01).unwrap();
        for v in &a.per_agent {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(a.epsilon, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let t = three_agent();
        let cold = solve_core(&t, 0.01).unwrap();
        let mut opts = CoreSolveOptions::new(0.01);
        opts.warm_start = Some(vec![5.0, -3.0, 1.0]);
        let warm = solve_core_with(&t, &opts).unwrap();
        for (a, b) in cold.per_agent.iter().zip(&warm.per_agent) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        assert_abs_diff_eq!(cold.epsilon, warm.epsilon, epsilon = 1e-7);
    }

    #[test]
    fn probable_core_rate_trivial_cases() {
        let t = three_agent();
        let a = solve_core(&t, 0.01).unwrap();
        assert_eq!(probable_core_rate(&t, &a, 500, 1).unwrap(), 0.0);
        let t2 = two_agent_table();
        let sub = t2.restrict(&[Coalition::new(1, 2).unwrap()]).unwrap();
        let a = solve_core(&sub, 0.01).unwrap();
        assert_eq!(probable_core_rate(&sub, &a, 100, 1).unwrap(), 0.0);
    }

    #[test]
    fn game_file_round_trip_and_errors() {
        let text = "3\n-2\n3 1\n5 0\n# comment\n6 5\n";
        let t = CoalitionAdvantageTable::parse(text).unwrap();
        assert_eq!(t, three_agent());
        assert_eq!(CoalitionAdvantageTable::parse(&t.to_text()).unwrap(), t);
        assert!(matches!(
            CoalitionAdvantageTable::parse("3\n-2\n7 1\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(CoalitionAdvantageTable::parse("x\n").is_err());
        assert!(CoalitionAdvantageTable::parse("2\n0\n1\n").is_err());
    }
}
