use cora::action::joint_from_index;
use cora::theory::{
    compatible_projection, exp_tilt, exp_tilt_update, fisher_and_score, hessian_bound_along,
    npg_step_and_verify, two_agent_example, verify_tilt_bounds, TabularSoftmaxGame,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_game(seed: u64) -> TabularSoftmaxGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=3);
    let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=4)).collect();
    TabularSoftmaxGame::random(&counts, &mut rng).unwrap()
}

/// The score features span exactly the tables with zero mean under the
/// agent's policy, so the L² projection is the conditional mean of the
/// credits given the agent's action minus their overall mean.
fn conditional_mean_projection(
    game: &TabularSoftmaxGame,
    agent: usize,
    credits: &[f64],
) -> Vec<f64> {
    let k = game.counts()[agent];
    let mut mass = vec![0.0; k];
    let mut weighted = vec![0.0; k];
    for (j, c) in credits.iter().enumerate() {
        let a = joint_from_index(game.counts(), j)[agent];
        mass[a] += game.joint_prob(j);
        weighted[a] += game.joint_prob(j) * c;
    }
    let overall: f64 = weighted.iter().sum();
    (0..k).map(|a| weighted[a] / mass[a] - overall).collect()
}

#[test]
fn projection_matches_conditional_mean() {
    for seed in 0..40 {
        let game = random_game(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let credits: Vec<f64> = (0..game.joint_size())
            .map(|_| rng.gen_range(-5.0..5.0))
            .collect();
        for agent in 0..game.n() {
            let fast = compatible_projection(&game, agent, &credits, 1e-12).unwrap();
            let slow = conditional_mean_projection(&game, agent, &credits);
            for (a, b) in fast.iter().zip(&slow) {
                assert!(
                    (a - b).abs() < 1e-6,
                    "seed {seed} agent {agent}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn projection_is_idempotent() {
    for seed in 0..20 {
        let game = random_game(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let credits: Vec<f64> = (0..game.joint_size())
            .map(|_| rng.gen_range(-5.0..5.0))
            .collect();
        let once = compatible_projection(&game, 0, &credits, 1e-12).unwrap();
        let expanded: Vec<f64> = (0..game.joint_size())
            .map(|j| once[joint_from_index(game.counts(), j)[0]])
            .collect();
        let twice = compatible_projection(&game, 0, &expanded, 1e-12).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn fisher_matches_monte_carlo() {
    let game = random_game(7);
    let probs = game.probs(0);
    let (psi, f) = fisher_and_score(&game, 0);
    let k = probs.len();
    let samples = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sum = DMatrix::zeros(k, k);
    let mut sum_sq = DMatrix::zeros(k, k);
    for _ in 0..samples {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let a = probs
            .iter()
            .position(|p| {
                acc += p;
                u < acc
            })
            .unwrap_or(k - 1);
        let outer = &psi[a] * psi[a].transpose();
        sum_sq += outer.component_mul(&outer);
        sum += outer;
    }
    let mean = &sum / samples as f64;
    for r in 0..k {
        for c in 0..k {
            let var = sum_sq[(r, c)] / samples as f64 - mean[(r, c)].powi(2);
            let se = (var / samples as f64).sqrt();
            assert!(
                (mean[(r, c)] - f[(r, c)]).abs() <= 3.0 * se + 1e-12,
                "entry ({r},{c})"
            );
        }
    }
}

#[test]
fn fisher_vanishes_for_near_deterministic_policy() {
    let game = TabularSoftmaxGame::new(
        vec![3, 2],
        vec![vec![40.0, 0.0, 0.0], vec![0.0, 0.0]],
        vec![1.0; 6],
    )
    .unwrap();
    let (_, f) = fisher_and_score(&game, 0);
    assert!(f.amax() < 1e-15);
}

#[test]
fn residual_shrinks_quadratically_with_step() {
    let game = two_agent_example();
    let credits = game.core_credits(1e-2).unwrap();
    let resid = |alpha: f64| {
        let r = npg_step_and_verify(&game, &credits, alpha, 1e-10).unwrap();
        r.agents
            .iter()
            .flat_map(|a| {
                a.delta_log_pi
                    .iter()
                    .zip(&a.projected)
                    .map(|(d, p)| (d - alpha * p).abs())
            })
            .fold(0.0, f64::max)
    };
    for alpha in [1e-2, 4e-3, 1e-3] {
        let ratio = resid(alpha / 2.0) / resid(alpha);
        assert!((0.2..=0.3).contains(&ratio), "alpha {alpha}: ratio {ratio}");
    }
}

#[test]
fn report_invariants_hold() {
    for seed in 0..20 {
        let game = random_game(seed);
        let credits = game.core_credits(1e-2).unwrap();
        let report = npg_step_and_verify(&game, &credits, 1e-2, 1e-8).unwrap();
        for a in &report.agents {
            assert!((&a.fisher - a.fisher.transpose()).amax() < 1e-15);
            assert!(a
                .fisher
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .all(|&e| e > -1e-12));
            assert!(a.l_hat >= 0.0 && a.bound_term >= 0.0);
        }
        assert!(report.passed(), "seed {seed}: {:?}", report.failures());
    }
}

#[test]
fn softmax_hessian_bound_is_at_most_one() {
    // λ_max(diag p − ppᵀ) ≤ max p ≤ 1, and is exactly ½ for a uniform pair.
    let step = DVector::from_vec(vec![0.0, 0.0]);
    assert!((hessian_bound_along(&[0.0, 0.0], &step, 10) - 0.5).abs() < 1e-12);
    let step = DVector::from_vec(vec![5.0, -5.0, 0.0]);
    let b = hessian_bound_along(&[0.0, 0.0, 0.0], &step, 100);
    assert!(b > 0.0 && b <= 1.0);
}

#[test]
fn tilt_on_example_game() {
    let game = two_agent_example();
    let credits = game.core_credits(1e-2).unwrap();
    let tilt = exp_tilt_update(&game, 0, &credits, &[0, 0], 0.1).unwrap();
    let total: f64 = tilt.probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-15);
    let report = verify_tilt_bounds(&game, &credits, 0.1).unwrap();
    assert!(report.passed(), "{:?}", report.failures());
    for family in ["tilt_individual", "tilt_coalition", "tilt_mean_credit"] {
        assert!(report.checks.iter().any(|c| c.family == family));
    }
}

#[test]
fn tilt_margin_vanishes_with_eta() {
    let game = random_game(3);
    let credits = game.core_credits(1e-2).unwrap();
    let small = verify_tilt_bounds(&game, &credits, 1e-6).unwrap();
    let indiv: Vec<_> = small
        .checks
        .iter()
        .filter(|c| c.family == "tilt_individual")
        .collect();
    assert!(indiv
        .iter()
        .all(|c| c.lhs.abs() < 1e-4 && c.rhs.abs() < 1e-4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tilt_preserves_normalization(
        probs in prop::collection::vec(0.01f64..1.0, 2..6),
        values in prop::collection::vec(-50.0f64..50.0, 6),
        eta in 0.0f64..5.0,
    ) {
        let s: f64 = probs.iter().sum();
        let p: Vec<f64> = probs.iter().map(|x| x / s).collect();
        let t = exp_tilt(&p, &values[..p.len()], eta).unwrap();
        prop_assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (k, d) in t.delta_log_pi.iter().enumerate() {
            prop_assert!((d - (t.probs[k].ln() - p[k].ln())).abs() < 1e-9);
        }
    }

    #[test]
    fn random_games_satisfy_every_bound(seed in 0u64..100_000) {
        let game = random_game(seed);
        let credits = game.core_credits(1e-2).unwrap();
        for alpha in [1e-3, 1e-2] {
            let r = npg_step_and_verify(&game, &credits, alpha, 1e-8).unwrap();
            prop_assert!(r.passed(), "{:?}", r.failures());
        }
        let t = verify_tilt_bounds(&game, &credits, 0.5).unwrap();
        prop_assert!(t.passed(), "{:?}", t.failures());
    }
}
