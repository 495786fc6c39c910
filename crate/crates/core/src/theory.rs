//! Exact numerical checks of the policy-improvement bounds on single-state
//! games with tabular softmax agents.
//!
//! Every expectation is an enumeration over the joint action space; the only
//! sampled quantity is the Hessian bound along the update segment.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::action::{joint_from_index, joint_index};
use crate::coalition::{solve_core, CoalitionAdvantageTable, CoreStatus};
use crate::error::{Error, Result};
use crate::policy::softmax;

/// Ridge added to the Fisher matrix when no other value is given.
pub const DEFAULT_DAMPING: f64 = 1e-6;
pub const HESSIAN_SAMPLES: usize = 100;
pub const HESSIAN_INFLATION: f64 = 1.2;
pub const HESSIAN_RETRY_INFLATION: f64 = 2.0;
/// Floating-point allowance when comparing the two sides of a bound.
pub const CHECK_TOL: f64 = 1e-9;
/// Largest joint action space the checks will enumerate.
pub const MAX_JOINT_ACTIONS: usize = 4096;

/// A single-state game: per-agent softmax logits and the joint advantage
/// `A_N(a) = Q(a) − E_π[Q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmaxGame {
    counts: Vec<usize>,
    logits: Vec<Vec<f64>>,
    advantage: Vec<f64>,
}

/// Per-profile allocations: `credits[joint][agent]` and `epsilon[joint]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditTable {
    pub credits: Vec<Vec<f64>>,
    pub epsilon: Vec<f64>,
}

impl TabularSoftmaxGame {
    /// Builds the game from joint action values `q[joint_index]`; the
    /// advantage is `q` centred under the current joint policy.
    pub fn new(counts: Vec<usize>, logits: Vec<Vec<f64>>, q: Vec<f64>) -> Result<Self> {
        if counts.len() < 2 || counts.len() != logits.len() {
            return Err(Error::arg(
                "need at least two agents with one logit vector each",
            ));
        }
        for (k, l) in counts.iter().zip(&logits) {
            if *k < 2 || l.len() != *k || l.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg("each agent needs ≥ 2 actions and finite logits"));
            }
        }
        let size = counts
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .filter(|&s| s <= MAX_JOINT_ACTIONS)
            .ok_or_else(|| {
                Error::Capacity(format!("joint action space exceeds {MAX_JOINT_ACTIONS}"))
            })?;
        if q.len() != size {
            return Err(Error::Dimension {
                context: "joint action values",
                expected: size,
                got: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint action values".into()));
        }
        let mut game = Self {
            counts,
            logits,
            advantage: q,
        };
        let baseline: f64 = (0..size)
            .map(|j| game.joint_prob(j) * game.advantage[j])
            .sum();
        game.advantage.iter_mut().for_each(|v| *v -= baseline);
        Ok(game)
    }

    /// Logits ~ N(0,1)-ish (uniform in [−1.5, 1.5]), values uniform in
    /// [−10, 10].
    pub fn random<R: Rng + ?Sized>(counts: &[usize], rng: &mut R) -> Result<Self> {
        let logits = counts
            .iter()
            .map(|&k| (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let size: usize = counts.iter().product();
        let q = (0..size).map(|_| rng.gen_range(-10.0..10.0)).collect();
        Self::new(counts.to_vec(), logits, q)
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn logits(&self, agent: usize) -> &[f64] {
        &self.logits[agent]
    }

    pub fn joint_size(&self) -> usize {
        self.advantage.len()
    }

    pub fn probs(&self, agent: usize) -> Vec<f64> {
        softmax(&self.logits[agent])
    }

    pub fn joint_prob(&self, joint: usize) -> f64 {
        joint_from_index(&self.counts, joint)
            .iter()
            .enumerate()
            .map(|(i, &a)| self.probs(i)[a])
            .product()
    }

    pub fn grand_advantage(&self, joint: usize) -> f64 {
        self.advantage[joint]
    }

    /// `A_C(a_C) = E_{a_{N∖C}∼π}[A_N(a_C, a_{N∖C})]`; for `C = N` this is
    /// `A_N(a)`.
    pub fn coalition_advantage(&self, mask: u32, joint: &[usize]) -> f64 {
        let n = self.n();
        let probs: Vec<Vec<f64>> = (0..n).map(|i| self.probs(i)).collect();
        let mut total = 0.0;
        for k in 0..self.joint_size() {
            let b = joint_from_index(&self.counts, k);
            let mut w = 1.0;
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    if b[i] != joint[i] {
                        w = 0.0;
                        break;
                    }
                } else {
                    w *= probs[i][b[i]];
                }
            }
            if w != 0.0 {
                total += w * self.advantage[k];
            }
        }
        total
    }

    /// Coalition table over every proper coalition at one joint profile.
    pub fn table_at(&self, joint: usize) -> Result<CoalitionAdvantageTable> {
        let n = self.n();
        let a = joint_from_index(&self.counts, joint);
        let entries = crate::coalition::all_proper(n)?
            .into_iter()
            .map(|c| (c, self.coalition_advantage(c.mask(), &a)))
            .collect();
        CoalitionAdvantageTable::new(n, entries, self.advantage[joint])
    }

    /// Regularized least-core credits at every joint profile.
    pub fn core_credits(&self, lambda_reg: f64) -> Result<CreditTable> {
        let mut credits = Vec::with_capacity(self.joint_size());
        let mut epsilon = Vec::with_capacity(self.joint_size());
        for j in 0..self.joint_size() {
            let alloc = solve_core(&self.table_at(j)?, lambda_reg)?;
            if alloc.status != CoreStatus::Optimal {
                return Err(Error::arg(format!(
                    "allocation QP did not converge at profile {j}"
                )));
            }
            credits.push(alloc.per_agent);
            epsilon.push(alloc.epsilon);
        }
        Ok(CreditTable { credits, epsilon })
    }
}

/// Score vectors `ψ_i(a_i) = e_{a_i} − p_i` (one row per action) and the
/// Fisher matrix `F_i = E[ψψᵀ] = diag(p_i) − p_i p_iᵀ`, both exact.
pub fn fisher_and_score(
    game: &TabularSoftmaxGame,
    agent: usize,
) -> (Vec<DVector<f64>>, DMatrix<f64>) {
    let p = game.probs(agent);
    score_fisher_from_probs(&p)
}

fn score_fisher_from_probs(p: &[f64]) -> (Vec<DVector<f64>>, DMatrix<f64>) {
    let k = p.len();
    let pv = DVector::from_column_slice(p);
    let psi: Vec<DVector<f64>> = (0..k)
        .map(|a| {
            let mut e = -pv.clone();
            e[a] += 1.0;
            e
        })
        .collect();
    let mut f = DMatrix::zeros(k, k);
    for (a, s) in psi.iter().enumerate() {
        f += p[a] * s * s.transpose();
    }
    (psi, f)
}

/// `g_i = E_a[ψ_i(a_i) Â_i(a)]` under the joint policy.
fn policy_gradient(
    game: &TabularSoftmaxGame,
    agent: usize,
    psi: &[DVector<f64>],
    credits: &[f64],
) -> DVector<f64> {
    let mut g = DVector::zeros(psi[0].len());
    for (j, c) in credits.iter().enumerate() {
        let a = joint_from_index(game.counts(), j)[agent];
        g += game.joint_prob(j) * c * &psi[a];
    }
    g
}

fn damped_solve(f: &DMatrix<f64>, g: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
    let k = f.nrows();
    (f + DMatrix::identity(k, k) * beta)
        .lu()
        .solve(g)
        .ok_or_else(|| Error::arg("damped Fisher matrix is singular; increase beta"))
}

/// Table `a_i ↦ w*ᵀψ_i(a_i)` with `(F_i + βI) w* = E[ψ_i Â_i]`, the L²
/// projection of agent `agent`'s credits (`credits[joint]`) onto its score
/// features.
pub fn compatible_projection(
    game: &TabularSoftmaxGame,
    agent: usize,
    credits: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    if credits.len() != game.joint_size() {
        return Err(Error::Dimension {
            context: "credits",
            expected: game.joint_size(),
            got: credits.len(),
        });
    }
    let (psi, f) = fisher_and_score(game, agent);
    let g = policy_gradient(game, agent, &psi, credits);
    let w = damped_solve(&f, &g, beta)?;
    Ok(psi.iter().map(|s| s.dot(&w)).collect())
}

/// One inequality evaluated at one subject. `margin ≥ −CHECK_TOL` means it
/// holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub family: &'static str,
    pub subject: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn le(family: &'static str, subject: String, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        Self {
            family,
            subject,
            lhs,
            rhs,
            margin,
            holds: margin >= -CHECK_TOL,
        }
    }

    fn ge(family: &'static str, subject: String, lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        Self {
            family,
            subject,
            lhs,
            rhs,
            margin,
            holds: margin >= -CHECK_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNpg {
    pub psi: Vec<DVector<f64>>,
    pub fisher: DMatrix<f64>,
    pub gradient: DVector<f64>,
    /// `(F_i + βI)^{-1} g_i`.
    pub direction: DVector<f64>,
    pub delta_log_pi: Vec<f64>,
    pub projected: Vec<f64>,
    /// `(α²/2)·L̂_i·‖F_i^{-1}g_i‖²`.
    pub bound_term: f64,
    pub l_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpgReport {
    pub alpha: f64,
    pub beta: f64,
    pub inflation: f64,
    pub agents: Vec<AgentNpg>,
    pub checks: Vec<BoundCheck>,
}

impl NpgReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn failures(&self) -> Vec<&BoundCheck> {
        self.checks.iter().filter(|c| !c.holds).collect()
    }

    pub fn min_margin(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

fn op_norm_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

/// Largest Hessian operator norm of `log π(a|θ)` over `samples` evenly
/// spaced points of the segment `θ → θ + step`. For a softmax the Hessian is
/// `−(diag p − ppᵀ)` for every action.
pub fn hessian_bound_along(logits: &[f64], step: &DVector<f64>, samples: usize) -> f64 {
    let samples = samples.max(2);
    (0..samples)
        .map(|k| {
            let s = k as f64 / (samples - 1) as f64;
            let theta: Vec<f64> = logits
                .iter()
                .zip(step.iter())
                .map(|(t, d)| t + s * d)
                .collect();
            op_norm_sym(&score_fisher_from_probs(&softmax(&theta)).1)
        })
        .fold(0.0, f64::max)
}

fn coalition_label(mask: u32, n: usize) -> String {
    let members: Vec<String> = (0..n)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| i.to_string())
        .collect();
    format!("{{{}}}", members.join(","))
}

fn profile_label(a: &[usize]) -> String {
    let parts: Vec<String> = a.iter().map(|x| x.to_string()).collect();
    format!("({})", parts.join(","))
}

/// Takes one natural-gradient step per agent on the given credits, measures
/// the exact change of every log-probability, and evaluates:
///
/// * the per-agent and per-coalition first-order bounds against the
///   projected credits `Ā_i`;
/// * the coalition lower bound, with ε the smallest slack that makes the
///   projected credits satisfy every coalition constraint at the profile;
/// * concentration on the maximizing coalition `C*` (the grand coalition
///   enters with value `Σ_i Ā_i`).
///
/// If any first-order check fails with `L̂` inflated ×1.2, the whole report is
/// recomputed with ×2 before being returned.
pub fn npg_step_and_verify(
    game: &TabularSoftmaxGame,
    credits: &CreditTable,
    alpha: f64,
    beta: f64,
) -> Result<NpgReport> {
    let first = npg_with_inflation(game, credits, alpha, beta, HESSIAN_INFLATION)?;
    if first.passed() {
        return Ok(first);
    }
    npg_with_inflation(game, credits, alpha, beta, HESSIAN_RETRY_INFLATION)
}

fn npg_with_inflation(
    game: &TabularSoftmaxGame,
    credits: &CreditTable,
    alpha: f64,
    beta: f64,
    inflation: f64,
) -> Result<NpgReport> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::arg(format!(
            "step size must be non-negative, got {alpha}"
        )));
    }
    let n = game.n();
    let size = game.joint_size();
    if credits.credits.len() != size || credits.epsilon.len() != size {
        return Err(Error::Dimension {
            context: "credit table",
            expected: size,
            got: credits.credits.len(),
        });
    }
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let (psi, fisher) = fisher_and_score(game, i);
        let own: Vec<f64> = credits.credits.iter().map(|c| c[i]).collect();
        let gradient = policy_gradient(game, i, &psi, &own);
        let direction = damped_solve(&fisher, &gradient, beta)?;
        let step = &direction * alpha;
        let old = game.logits(i);
        let new: Vec<f64> = old.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
        let lp_old: Vec<f64> = softmax(old).iter().map(|p| p.ln()).collect();
        let lp_new: Vec<f64> = softmax(&new).iter().map(|p| p.ln()).collect();
        let delta_log_pi = lp_new.iter().zip(&lp_old).map(|(a, b)| a - b).collect();
        let projected = psi.iter().map(|s| s.dot(&direction)).collect();
        let l_hat = inflation * hessian_bound_along(old, &step, HESSIAN_SAMPLES);
        let bound_term = 0.5 * alpha * alpha * l_hat * direction.norm_squared();
        agents.push(AgentNpg {
            psi,
            fisher,
            gradient,
            direction,
            delta_log_pi,
            projected,
            bound_term,
            l_hat,
        });
    }

    let mut checks = Vec::new();
    for (i, ag) in agents.iter().enumerate() {
        for a in 0..game.counts()[i] {
            let resid = (ag.delta_log_pi[a] - alpha * ag.projected[a]).abs();
            checks.push(BoundCheck::le(
                "first_order_individual",
                format!("agent {i} action {a}"),
                resid,
                ag.bound_term,
            ));
        }
    }

    let full = crate::coalition::grand_mask(n);
    for j in 0..size {
        let a = joint_from_index(game.counts(), j);
        let delta = |mask: u32| -> f64 {
            (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| agents[i].delta_log_pi[a[i]])
                .sum()
        };
        let proj = |mask: u32| -> f64 {
            (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| agents[i].projected[a[i]])
                .sum()
        };
        let bound = |mask: u32| -> f64 {
            (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| agents[i].bound_term)
                .sum()
        };

        let proper: Vec<(u32, f64)> = (1..full)
            .map(|m| (m, game.coalition_advantage(m, &a)))
            .collect();
        let eps_proj = proper
            .iter()
            .map(|&(m, v)| v - proj(m))
            .fold(0.0f64, f64::max);
        let label = profile_label(&a);

        for mask in 1..=full {
            let resid = (delta(mask) - alpha * proj(mask)).abs();
            checks.push(BoundCheck::le(
                "first_order_coalition",
                format!("{} at {label}", coalition_label(mask, n)),
                resid,
                bound(mask),
            ));
        }
        for &(mask, value) in &proper {
            checks.push(BoundCheck::ge(
                "coalition_lower_bound",
                format!("{} at {label}", coalition_label(mask, n)),
                delta(mask),
                alpha * (value - eps_proj) - bound(mask),
            ));
        }

        let grand_value = proj(full);
        let (star, star_value) = proper
            .iter()
            .copied()
            .chain(std::iter::once((full, grand_value)))
            .fold((full, f64::NEG_INFINITY), |best, c| {
                if c.1 > best.1 {
                    c
                } else {
                    best
                }
            });
        let rest = full & !star;
        checks.push(BoundCheck::le(
            "concentration_complement_credit",
            format!("N∖{} at {label}", coalition_label(star, n)),
            proj(rest),
            eps_proj,
        ));
        checks.push(BoundCheck::le(
            "concentration_complement",
            format!("N∖{} at {label}", coalition_label(star, n)),
            delta(rest),
            alpha * eps_proj + bound(rest),
        ));
        checks.push(BoundCheck::ge(
            "concentration_maximizer",
            format!("{} at {label}", coalition_label(star, n)),
            delta(star),
            alpha * (star_value - eps_proj) - bound(star),
        ));
    }
    Ok(NpgReport {
        alpha,
        beta,
        inflation,
        agents,
        checks,
    })
}

/// Result of the exponential tilt `π'_i ∝ π_i·exp(η Â_i(·, a_{−i}))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltResult {
    pub probs: Vec<f64>,
    pub log_z: f64,
    pub delta_log_pi: Vec<f64>,
}

/// Tilts `probs` by `η·values` (values indexed by the agent's action) with
/// max-subtraction for stability.
pub fn exp_tilt(probs: &[f64], values: &[f64], eta: f64) -> Result<TiltResult> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::arg(format!("eta must be non-negative, got {eta}")));
    }
    if probs.len() != values.len() {
        return Err(Error::Dimension {
            context: "tilt values",
            expected: probs.len(),
            got: values.len(),
        });
    }
    let shift = values
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(v, _)| eta * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = probs
        .iter()
        .zip(values)
        .map(|(p, v)| p * (eta * v - shift).exp())
        .collect();
    let z_shifted: f64 = weights.iter().sum();
    let log_z = shift + z_shifted.ln();
    let new: Vec<f64> = weights.iter().map(|w| w / z_shifted).collect();
    let delta_log_pi = values.iter().map(|v| eta * v - log_z).collect();
    Ok(TiltResult {
        probs: new,
        log_z,
        delta_log_pi,
    })
}

/// Tilt of agent `agent`'s policy by its credits with the other agents'
/// actions fixed at `others` (the agent's own entry is ignored).
pub fn exp_tilt_update(
    game: &TabularSoftmaxGame,
    agent: usize,
    credits: &CreditTable,
    others: &[usize],
    eta: f64,
) -> Result<TiltResult> {
    let values = own_action_credits(game, agent, credits, others);
    exp_tilt(&game.probs(agent), &values, eta)
}

fn own_action_credits(
    game: &TabularSoftmaxGame,
    agent: usize,
    credits: &CreditTable,
    others: &[usize],
) -> Vec<f64> {
    let mut a = others.to_vec();
    (0..game.counts()[agent])
        .map(|x| {
            a[agent] = x;
            credits.credits[joint_index(game.counts(), &a)][agent]
        })
        .collect()
}

fn own_action_epsilon(
    game: &TabularSoftmaxGame,
    agent: usize,
    credits: &CreditTable,
    others: &[usize],
) -> f64 {
    let mut a = others.to_vec();
    (0..game.counts()[agent])
        .map(|x| {
            a[agent] = x;
            credits.epsilon[joint_index(game.counts(), &a)]
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltReport {
    pub eta: f64,
    pub checks: Vec<BoundCheck>,
}

impl TiltReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn failures(&self) -> Vec<&BoundCheck> {
        self.checks.iter().filter(|c| !c.holds).collect()
    }

    pub fn min_margin(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Checks, at every joint profile `a`, with each agent's tilt taken at the
/// profile's `a_{−i}`:
///
/// * `E_{a_i∼π_i}[Â_i(a_i, a_{−i})] ≤ ε̄_i`, where `ε̄_i` is the largest ε over
///   the profiles `(·, a_{−i})`;
/// * `Δlog π_i(a_i) ≥ η(Â_i(a) − ε̄_i) − η²R_i²/8`, `R_i` the range of the
///   credits over the agent's own actions;
/// * for every coalition `C` (including `N`),
///   `Σ_{i∈C} Δlog π_i(a_i) ≥ η(A_C(a_C) − (1+|C|)ε̄_C) − Σ_{i∈C} η²R_i²/8`
///   with `ε̄_C = max_{i∈C} ε̄_i`.
pub fn verify_tilt_bounds(
    game: &TabularSoftmaxGame,
    credits: &CreditTable,
    eta: f64,
) -> Result<TiltReport> {
    let n = game.n();
    let full = crate::coalition::grand_mask(n);
    let mut checks = Vec::new();
    for j in 0..game.joint_size() {
        let a = joint_from_index(game.counts(), j);
        let label = profile_label(&a);
        let mut delta = vec![0.0; n];
        let mut eps_bar = vec![0.0; n];
        let mut hoeffding = vec![0.0; n];
        for i in 0..n {
            let values = own_action_credits(game, i, credits, &a);
            let tilt = exp_tilt(&game.probs(i), &values, eta)?;
            let range = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - values.iter().cloned().fold(f64::INFINITY, f64::min);
            eps_bar[i] = own_action_epsilon(game, i, credits, &a).max(credits.epsilon[j]);
            hoeffding[i] = eta * eta * range * range / 8.0;
            delta[i] = tilt.delta_log_pi[a[i]];
            let mean: f64 = game.probs(i).iter().zip(&values).map(|(p, v)| p * v).sum();
            checks.push(BoundCheck::le(
                "tilt_mean_credit",
                format!("agent {i} at {label}"),
                mean,
                eps_bar[i],
            ));
            checks.push(BoundCheck::ge(
                "tilt_individual",
                format!("agent {i} at {label}"),
                delta[i],
                eta * (values[a[i]] - eps_bar[i]) - hoeffding[i],
            ));
        }
        for mask in 1..=full {
            let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let value = game.coalition_advantage(mask, &a);
            let eps = members.iter().map(|&i| eps_bar[i]).fold(0.0, f64::max);
            let lhs: f64 = members.iter().map(|&i| delta[i]).sum();
            let rhs = eta * (value - (1.0 + members.len() as f64) * eps)
                - members.iter().map(|&i| hoeffding[i]).sum::<f64>();
            checks.push(BoundCheck::ge(
                "tilt_coalition",
                format!("{} at {label}", coalition_label(mask, n)),
                lhs,
                rhs,
            ));
        }
    }
    Ok(TiltReport { eta, checks })
}

/// The two-agent, two-action game whose profile `(0, 0)` under uniform
/// policies has `A_N = −5`, `A_{0} = 5`, `A_{1} = −5`.
pub fn two_agent_example() -> TabularSoftmaxGame {
    TabularSoftmaxGame::new(
        vec![2, 2],
        vec![vec![0.0; 2], vec![0.0; 2]],
        vec![-5.0, 15.0, -5.0, -5.0],
    )
    .expect("fixed example is valid")
}

/// Which family of bounds a suite run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TheorySuite {
    /// First-order changes and coalition lower bounds under an NPG step.
    Npg,
    /// Exponential-tilt bounds and the mean-credit claim.
    Tilt,
    /// Complement and maximizer bounds for the best coalition.
    Concentration,
}

impl std::str::FromStr for TheorySuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "npg" => Ok(Self::Npg),
            "tilt" => Ok(Self::Tilt),
            "concentration" => Ok(Self::Concentration),
            other => Err(Error::arg(format!(
                "unknown theory suite `{other}` (npg, tilt, concentration)"
            ))),
        }
    }
}

pub const SUITE_STEP_SIZES: [f64; 2] = [1e-3, 1e-2];
pub const SUITE_TILT_ETAS: [f64; 2] = [0.1, 1.0];
pub const SUITE_LAMBDA_REG: f64 = 1e-2;
pub const SUITE_BETA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub game: usize,
    /// α for NPG-based families, η for tilt.
    pub step: f64,
    /// `L̂` inflation the NPG check settled on; 0 for tilt.
    pub inflation: f64,
    pub check: BoundCheck,
}

pub const SUITE_COLUMNS: &str = "game,step,inflation,family,subject,lhs,rhs,margin,pass";

pub fn suite_csv(rows: &[SuiteRow]) -> String {
    let mut out = format!("{SUITE_COLUMNS}\n");
    for r in rows {
        let c = &r.check;
        out.push_str(&format!(
            "{},{},{},{},\"{}\",{},{},{},{}\n",
            r.game, r.step, r.inflation, c.family, c.subject, c.lhs, c.rhs, c.margin, c.holds
        ));
    }
    out
}

/// Random game number `index` of a suite: 2 or 3 agents, 2 to 4 actions
/// each.
pub fn suite_game(seed: u64, index: usize) -> Result<TabularSoftmaxGame> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::config::mix_seed(
        crate::config::derive_seed(seed, "theory-games"),
        index as u64,
    ));
    let n = rng.gen_range(2..=3);
    let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=4)).collect();
    TabularSoftmaxGame::random(&counts, &mut rng)
}

/// Runs one suite over `games` random games with regularized least-core
/// credits. Games are independent and evaluated in parallel; rows come back in
/// game order.
pub fn run_suite(suite: TheorySuite, seed: u64, games: usize) -> Result<Vec<SuiteRow>> {
    use rayon::prelude::*;
    let per_game: Vec<Result<Vec<SuiteRow>>> = (0..games)
        .into_par_iter()
        .map(|index| {
            let game = suite_game(seed, index)?;
            let credits = game.core_credits(SUITE_LAMBDA_REG)?;
            let mut rows = Vec::new();
            match suite {
                TheorySuite::Tilt => {
                    for eta in SUITE_TILT_ETAS {
                        let report = verify_tilt_bounds(&game, &credits, eta)?;
                        rows.extend(report.checks.into_iter().map(|check| SuiteRow {
                            game: index,
                            step: eta,
                            inflation: 0.0,
                            check,
                        }));
                    }
                }
                TheorySuite::Npg | TheorySuite::Concentration => {
                    for alpha in SUITE_STEP_SIZES {
                        let report = npg_step_and_verify(&game, &credits, alpha, SUITE_BETA)?;
                        let keep = |family: &str| {
                            let conc = family.starts_with("concentration");
                            conc == (suite == TheorySuite::Concentration)
                        };
                        rows.extend(report.checks.into_iter().filter(|c| keep(c.family)).map(
                            |check| SuiteRow {
                                game: index,
                                step: alpha,
                                inflation: report.inflation,
                                check,
                            },
                        ));
                    }
                }
            }
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for rows in per_game {
        out.extend(rows?);
    }
    Ok(out)
}
