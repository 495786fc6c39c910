//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod checks;

use cora::coalition::{all_proper, CoalitionAdvantageTable};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Optimum of the allocation QP found by enumerating active sets.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub per_agent: Vec<f64>,
    pub epsilon: f64,
    pub objective: f64,
}

pub fn objective(per_agent: &[f64], epsilon: f64, grand: f64, lambda: f64) -> f64 {
    let mean = grand / per_agent.len() as f64;
    epsilon + lambda * per_agent.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
}

/// Brute-force KKT search for `min ε + λΣ(x_i − A_N/n)²` subject to
/// `Σx = A_N`, `Σ_{i∈C} x_i + ε ≥ A_C` for each entry, and `ε ≥ 0`.
///
/// Every subset of at most `n` inequality rows is treated as equalities; the
/// resulting linear KKT system is solved directly and the candidate kept if
/// it is primal feasible with nonnegative multipliers. The problem is convex,
/// so any KKT point is optimal; the lowest objective among them is returned.
pub fn brute_force_core(table: &CoalitionAdvantageTable, lambda: f64) -> OracleSolution {
    let n = table.n();
    let d = n + 1;
    // Rows g·x ≥ h; the last one is ε ≥ 0.
    let mut rows: Vec<(Vec<f64>, f64)> = table
        .entries()
        .iter()
        .map(|(c, v)| {
            let mut g = vec![0.0; d];
            for i in c.members() {
                g[i] = 1.0;
            }
            g[n] = 1.0;
            (g, *v)
        })
        .collect();
    let mut eps_row = vec![0.0; d];
    eps_row[n] = 1.0;
    rows.push((eps_row, 0.0));

    let grand = table.grand_advantage();
    let mean = grand / n as f64;
    let mut best: Option<OracleSolution> = None;
    let m = rows.len();
    let mut subset = Vec::new();
    for_each_subset(m, n.min(m), &mut subset, &mut |active| {
        let k = active.len();
        let size = d + 1 + k;
        let mut kkt = DMatrix::<f64>::zeros(size, size);
        let mut rhs = DVector::<f64>::zeros(size);
        for i in 0..n {
            kkt[(i, i)] = 2.0 * lambda;
            rhs[i] = 2.0 * lambda * mean;
        }
        rhs[n] = -1.0;
        // Equality Σx = A_N with free multiplier ν.
        for i in 0..n {
            kkt[(i, d)] = -1.0;
            kkt[(d, i)] = 1.0;
        }
        rhs[d] = grand;
        for (r, &row) in active.iter().enumerate() {
            let (g, h) = &rows[row];
            for j in 0..d {
                kkt[(j, d + 1 + r)] = -g[j];
                kkt[(d + 1 + r, j)] = g[j];
            }
            rhs[d + 1 + r] = *h;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else {
            return;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            return;
        }
        let x: Vec<f64> = sol.iter().take(d).copied().collect();
        if active
            .iter()
            .enumerate()
            .any(|(r, _)| sol[d + 1 + r] < -1e-9)
        {
            return;
        }
        let feasible = rows
            .iter()
            .all(|(g, h)| g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() >= h - 1e-9);
        if !feasible {
            return;
        }
        let obj = objective(&x[..n], x[n], grand, lambda);
        if best.as_ref().map_or(true, |b| obj < b.objective) {
            best = Some(OracleSolution {
                per_agent: x[..n].to_vec(),
                epsilon: x[n],
                objective: obj,
            });
        }
    });
    best.expect("a convex QP with a feasible point has a KKT point")
}

fn for_each_subset(
    m: usize,
    max_len: usize,
    current: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    f(current);
    if current.len() == max_len {
        return;
    }
    let start = current.last().map_or(0, |&l| l + 1);
    for next in start..m {
        current.push(next);
        for_each_subset(m, max_len, current, f);
        current.pop();
    }
}

/// Table over every proper coalition, entries uniform in `[-10, 10]`.
pub fn random_table<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CoalitionAdvantageTable {
    let entries = all_proper(n)
        .unwrap()
        .into_iter()
        .map(|c| (c, rng.gen_range(-10.0..=10.0)))
        .collect();
    CoalitionAdvantageTable::new(n, entries, rng.gen_range(-10.0..=10.0)).unwrap()
}

/// `Σ_l (γλ)^l δ_{t+l}` written out as an explicit double sum, with the trace
/// and bootstrap cut at the first terminal step.
pub fn gae_double_sum(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
    dones: &[bool],
) -> Vec<f64> {
    let t_len = rewards.len();
    let delta: Vec<f64> = (0..t_len)
        .map(|t| {
            let next = if dones[t] {
                0.0
            } else if t + 1 < t_len {
                values[t + 1]
            } else {
                bootstrap
            };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    (0..t_len)
        .map(|t| {
            let mut total = 0.0;
            for l in 0..t_len - t {
                total += (gamma * lambda).powi(l as i32) * delta[t + l];
                if dones[t + l] {
                    break;
                }
            }
            total
        })
        .collect()
}

/// Central finite-difference gradient.
pub fn numeric_grad(params: &[f64], h: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = f(&p);
            p[k] = orig - h;
            let down = f(&p);
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
