//! The quadratic joint-action critic: because `Q` is multilinear in the
//! agents' one-hot encodings, the expectation over the agents outside a
//! coalition is a single forward pass with their probability vectors plugged
//! in. This example checks that against brute-force enumeration and then
//! estimates a coalition's advantage with the clipped twin critic.
//!
//!     cargo run --example quadratic_critic

use cora::action::{joint_from_index, Action, ActionDist, ActionSpace};
use cora::coalition::Coalition;
use cora::critics::{
    estimate_coalitional_advantage, marginalize_quadratic, EstimatorConfig, QCriticKind,
    QuadraticCritic, TwinQCritic,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cora::Result<()> {
    let dims = [3, 2, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let coeffs: Vec<f64> = (0..QuadraticCritic::feature_len(&dims))
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let critic = QuadraticCritic::tabular(&dims, &[coeffs])?;
    let spaces: Vec<ActionSpace> = dims.iter().map(|&n| ActionSpace::Discrete { n }).collect();
    let dists: Vec<ActionDist> = dims
        .iter()
        .map(|&n| {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            ActionDist::Categorical {
                probs: w.iter().map(|x| x / s).collect(),
            }
        })
        .collect();
    let state = [1.0];
    let joint = vec![
        Action::Discrete(2),
        Action::Discrete(1),
        Action::Discrete(0),
    ];

    let coalition = Coalition::from_members(&[0], 3)?;
    let analytic = marginalize_quadratic(&critic, &spaces, &state, coalition, &joint, &dists)?;

    // Enumerate the other two agents' joint actions.
    let counts = [dims[1], dims[2]];
    let mut enumerated = 0.0;
    for k in 0..counts.iter().product::<usize>() {
        let b = joint_from_index(&counts, k);
        let p = dists[1].probs().unwrap()[b[0]] * dists[2].probs().unwrap()[b[1]];
        let encs = vec![one_hot(3, 2), one_hot(2, b[0]), one_hot(4, b[1])];
        enumerated += p * dot(&critic.net.forward(&state)?, &critic.features(&encs));
    }
    println!("E[Q | a_0 = 2]: analytic {analytic:.12}  enumerated {enumerated:.12}");

    let twin = TwinQCritic::new(&QCriticKind::Quadratic, 1, &spaces, &[], &mut rng);
    for members in [vec![0], vec![1, 2], vec![0, 2]] {
        let c = Coalition::from_members(&members, 3)?;
        let adv = estimate_coalitional_advantage(
            &twin,
            0.0,
            &state,
            c,
            &joint,
            &dists,
            &EstimatorConfig::default(),
            0,
        )?;
        println!("A_{c} = {adv:+.6}");
    }
    Ok(())
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    (0..n).map(|i| f64::from(u8::from(i == k))).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
