#![allow(dead_code)]

use super::{gae_double_sum, numeric_grad, rel_error};
use cora::action::{joint_from_index, Action, ActionDist, ActionSpace};
use cora::coalition::Coalition;
use cora::critics::{
    estimate_coalitional_advantage, gae_advantages, marginal_q_per_head, marginalize_quadratic,
    predict_q_clipped, q_loss_and_grad, value_loss_and_grad, EstimatorConfig, GaeConfig,
    Marginalization, QCriticKind, QuadraticCritic, Transition, TwinQCritic, ValueCritic,
};
use cora::policy::{surrogate_and_grad, Policy, PpoConfig, PpoSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

fn jitter<R: Rng>(params: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    params
        .iter()
        .map(|p| p + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn random_space<R: Rng>(rng: &mut R) -> ActionSpace {
    if rng.gen_bool(0.5) {
        ActionSpace::Discrete {
            n: rng.gen_range(2..6),
        }
    } else {
        ActionSpace::Box {
            dim: rng.gen_range(1..3),
            low: -3.0,
            high: 3.0,
        }
    }
}

/// Samples whose probability ratio sits at least `margin` away from the
/// clip boundaries, so the surrogate is smooth under a finite-difference
/// probe.
fn ppo_batch<R: Rng>(policy: &Policy, obs_dim: usize, clip: f64, rng: &mut R) -> Vec<PpoSample> {
    let mut batch = Vec::new();
    while batch.len() < 8 {
        let obs: Vec<f64> = (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (action, lp) = policy.sample_action(&obs, rng).unwrap();
        let old = lp + rng.gen_range(-0.5..0.5);
        let r = (lp - old).exp();
        if (r - (1.0 - clip)).abs() < 1e-3 || (r - (1.0 + clip)).abs() < 1e-3 {
            continue;
        }
        batch.push(PpoSample {
            obs,
            action,
            old_log_prob: old,
            advantage: rng.gen_range(-2.0..2.0),
        });
    }
    batch
}

pub fn surrogate_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = PpoConfig {
        entropy_coef: 0.05,
        ..PpoConfig::matrix()
    };
    for instance in 0..100 {
        let space = random_space(&mut rng);
        let obs_dim = rng.gen_range(1..4);
        let hidden = if instance % 2 == 0 { vec![] } else { vec![5] };
        let mut policy = Policy::new(&space, obs_dim, &hidden, -0.5, &mut rng);
        let params = jitter(&policy.flat_params(), 0.4, &mut rng);
        policy.set_flat_params(&params).unwrap();
        let batch = ppo_batch(&policy, obs_dim, cfg.clip, &mut rng);
        let (_, _, _, _, grad) = surrogate_and_grad(&policy, &batch, &cfg).unwrap();
        let mut probe = policy.clone();
        let numeric = numeric_grad(&params, FD_STEP, &mut |p| {
            probe.set_flat_params(p).unwrap();
            surrogate_and_grad(&probe, &batch, &cfg).unwrap().0
        });
        let err = rel_error(&grad, &numeric, 1e-8);
        assert!(
            err <= FD_TOL,
            "instance {instance} ({space:?}): relative error {err}"
        );
    }
}

fn transitions<R: Rng>(state_dim: usize, spaces: &[ActionSpace], rng: &mut R) -> Vec<Transition> {
    (0..6)
        .map(|_| Transition {
            state: (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            joint: spaces
                .iter()
                .map(|s| match s {
                    ActionSpace::Discrete { n } => Action::Discrete(rng.gen_range(0..*n)),
                    ActionSpace::Box { dim, low, high } => {
                        Action::Continuous((0..*dim).map(|_| rng.gen_range(*low..*high)).collect())
                    }
                })
                .collect(),
            reward: rng.gen_range(-5.0..5.0),
            next_state: (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: rng.gen_bool(0.2),
        })
        .collect()
}

pub fn critic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for instance in 0..100 {
        let state_dim = rng.gen_range(1..4);
        let n = rng.gen_range(2..4);
        let spaces: Vec<ActionSpace> = (0..n).map(|_| random_space(&mut rng)).collect();
        let batch = transitions(state_dim, &spaces, &mut rng);
        let targets: Vec<f64> = batch.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();

        let mut v = ValueCritic::new(state_dim, &[6], &mut rng);
        let p = jitter(v.net.params(), 0.3, &mut rng);
        v.net.params_mut().copy_from_slice(&p);
        let (_, grad) = value_loss_and_grad(&v, &batch, &targets).unwrap();
        let mut probe = v.clone();
        let numeric = numeric_grad(&p, FD_STEP, &mut |x| {
            probe.net.params_mut().copy_from_slice(x);
            value_loss_and_grad(&probe, &batch, &targets).unwrap().0
        });
        let err = rel_error(&grad, &numeric, 1e-8);
        assert!(err <= FD_TOL, "value instance {instance}: {err}");

        let kind = if spaces.iter().all(ActionSpace::is_discrete) && instance % 2 == 0 {
            QCriticKind::Quadratic
        } else {
            QCriticKind::Mlp
        };
        let hidden = if kind == QCriticKind::Quadratic {
            vec![]
        } else {
            vec![6]
        };
        let mut q = TwinQCritic::new(&kind, state_dim, &spaces, &hidden, &mut rng);
        for head in 0..2 {
            let p = jitter(q.heads[head].params(), 0.3, &mut rng);
            q.heads[head].params_mut().copy_from_slice(&p);
            let (_, grad) = q_loss_and_grad(&q, head, &batch, &targets).unwrap();
            let mut probe = q.clone();
            let numeric = numeric_grad(&p, FD_STEP, &mut |x| {
                probe.heads[head].params_mut().copy_from_slice(x);
                q_loss_and_grad(&probe, head, &batch, &targets).unwrap().0
            });
            let err = rel_error(&grad, &numeric, 1e-8);
            assert!(
                err <= FD_TOL,
                "q head {head} instance {instance} ({kind:?}): {err}"
            );
        }
    }
}

pub fn gae_matches_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let t = rng.gen_range(1..30);
        let rewards: Vec<f64> = (0..t).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let values: Vec<f64> = (0..t).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let dones: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.15)).collect();
        let gamma = rng.gen_range(0.0..0.999);
        let lambda = rng.gen_range(0.0..=1.0);
        let bootstrap = rng.gen_range(-5.0..5.0);
        let fast = gae_advantages(
            &rewards,
            &values,
            bootstrap,
            &GaeConfig { gamma, lambda },
            &dones,
        )
        .unwrap();
        let slow = gae_double_sum(&rewards, &values, bootstrap, gamma, lambda, &dones);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }
}

pub fn gae_rejects_bad_config() {
    assert!(GaeConfig {
        gamma: 1.0,
        lambda: 0.5
    }
    .validate()
    .is_err());
    assert!(GaeConfig {
        gamma: 0.9,
        lambda: 1.5
    }
    .validate()
    .is_err());
    assert!(gae_advantages(
        &[1.0, 2.0],
        &[0.0],
        0.0,
        &GaeConfig::default(),
        &[false, false]
    )
    .is_err());
}

fn random_categoricals<R: Rng>(dims: &[usize], rng: &mut R) -> Vec<ActionDist> {
    dims.iter()
        .map(|&n| {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            ActionDist::Categorical {
                probs: w.iter().map(|x| x / s).collect(),
            }
        })
        .collect()
}

pub fn quadratic_marginal_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.gen_range(2..5);
        let dims: Vec<usize> = (0..n).map(|_| rng.gen_range(2..5)).collect();
        let spaces: Vec<ActionSpace> = dims
            .iter()
            .map(|&k| ActionSpace::Discrete { n: k })
            .collect();
        let state_dim = 3;
        let critic = QuadraticCritic::new(state_dim, &dims, &[4], &mut rng);
        let mut critic = critic;
        let p = jitter(critic.net.params(), 1.0, &mut rng);
        critic.net.params_mut().copy_from_slice(&p);
        let state: Vec<f64> = (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dists = random_categoricals(&dims, &mut rng);
        let joint: Vec<Action> = dims
            .iter()
            .map(|&k| Action::Discrete(rng.gen_range(0..k)))
            .collect();
        let mask = rng.gen_range(1..(1u32 << n) - 1);
        let coalition = Coalition::new(mask, n).unwrap();
        let analytic =
            marginalize_quadratic(&critic, &spaces, &state, coalition, &joint, &dists).unwrap();

        let coeffs = critic.net.forward(&state).unwrap();
        let mut enumerated = 0.0;
        for k in 0..dims.iter().product::<usize>() {
            let b = joint_from_index(&dims, k);
            if (0..n).any(|i| coalition.contains(i) && Action::Discrete(b[i]) != joint[i]) {
                continue;
            }
            let w: f64 = (0..n)
                .filter(|&i| !coalition.contains(i))
                .map(|i| dists[i].probs().unwrap()[b[i]])
                .product();
            let encs: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..dims[i])
                        .map(|a| f64::from(u8::from(a == b[i])))
                        .collect()
                })
                .collect();
            let phi = critic.features(&encs);
            enumerated += w * coeffs.iter().zip(&phi).map(|(c, f)| c * f).sum::<f64>();
        }
        assert!(
            (analytic - enumerated).abs() <= 1e-10,
            "{analytic} vs {enumerated}"
        );
    }
}

pub fn analytic_and_enumerated_estimators_agree_for_twin_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let dims = [3usize, 2, 4];
        let spaces: Vec<ActionSpace> = dims
            .iter()
            .map(|&k| ActionSpace::Discrete { n: k })
            .collect();
        let mut q = TwinQCritic::new(&QCriticKind::Quadratic, 2, &spaces, &[], &mut rng);
        for h in 0..2 {
            let p = jitter(q.heads[h].params(), 1.0, &mut rng);
            q.heads[h].params_mut().copy_from_slice(&p);
        }
        let dists = random_categoricals(&dims, &mut rng);
        let joint: Vec<Action> = dims
            .iter()
            .map(|&k| Action::Discrete(rng.gen_range(0..k)))
            .collect();
        let state = [0.3, -0.7];
        let c = Coalition::from_members(&[1], 3).unwrap();
        let auto = marginal_q_per_head(
            &q,
            &state,
            c,
            &joint,
            &dists,
            &EstimatorConfig::default(),
            0,
        )
        .unwrap();
        let mc = EstimatorConfig {
            samples: 20_000,
            marginalization: Marginalization::MonteCarlo,
        };
        let sampled = marginal_q_per_head(&q, &state, c, &joint, &dists, &mc, 9).unwrap();
        for h in 0..2 {
            // 20k samples of a bounded quantity: the mean is well inside 0.05.
            assert!(
                (auto[h] - sampled[h]).abs() < 0.05,
                "{auto:?} vs {sampled:?}"
            );
        }
    }
}

/// Pointwise and marginal clipped double-Q values never exceed either head.
pub fn clipped_estimate_is_dominated(seed: u64, mask: u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spaces = vec![
        ActionSpace::Discrete { n: 3 },
        ActionSpace::Box {
            dim: 1,
            low: -1.0,
            high: 1.0,
        },
        ActionSpace::Discrete { n: 2 },
    ];
    let q = TwinQCritic::new(&QCriticKind::Mlp, 2, &spaces, &[8], &mut rng);
    let state = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let joint = vec![
        Action::Discrete(rng.gen_range(0..3)),
        Action::Continuous(vec![rng.gen_range(-1.0..1.0)]),
        Action::Discrete(rng.gen_range(0..2)),
    ];
    let both = q.predict_both(&state, &joint).unwrap();
    let clipped = predict_q_clipped(&q, &state, &joint).unwrap();
    assert!(clipped <= both[0] && clipped <= both[1]);
    assert!(clipped == both[0] || clipped == both[1]);

    let dists = vec![
        ActionDist::Categorical {
            probs: vec![0.2, 0.3, 0.5],
        },
        ActionDist::Gaussian {
            mean: vec![0.1],
            std: vec![0.4],
            low: -1.0,
            high: 1.0,
        },
        ActionDist::Categorical {
            probs: vec![0.6, 0.4],
        },
    ];
    let c = Coalition::new(mask, 3).unwrap();
    let heads = marginal_q_per_head(
        &q,
        &state,
        c,
        &joint,
        &dists,
        &EstimatorConfig::default(),
        seed,
    )
    .unwrap();
    let v = rng.gen_range(-1.0..1.0);
    let adv = estimate_coalitional_advantage(
        &q,
        v,
        &state,
        c,
        &joint,
        &dists,
        &EstimatorConfig::default(),
        seed,
    )
    .unwrap();
    assert!(adv <= heads[0] - v + 1e-12 && adv <= heads[1] - v + 1e-12);
}
