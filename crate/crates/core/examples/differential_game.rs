//! Continuous-action coordination: agents choose coordinates in a landscape
//! of Gaussian bumps and are paid the landscape height at the joint point.
//! Prints where the learned Gaussian means end up relative to the highest
//! peak.
//!
//!     cargo run --release --example differential_game -- [seed] [agents] [coalition samples]

use cora::coalition::SamplingMode;
use cora::envs::{oracle_optimal_return, DiffGameSpec, EnvSpec, Game};
use cora::trainer::{greedy_joint, train, TrainConfig};

fn main() -> cora::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let agents: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let env = EnvSpec::Differential(DiffGameSpec::seeded(agents, 5, seed));
    let oracle = oracle_optimal_return(&env)?;
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::defaults_for(&env)
    };
    if let Some(m) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.sampling = SamplingMode::FixedCount { count: m };
    }
    let run = train(&cfg, &env)?;
    let game = Game::new(&env)?;
    let means: Vec<f64> = greedy_joint(&game, &run.learner.policies)?
        .iter()
        .flat_map(|a| a.as_continuous().unwrap_or(&[]).to_vec())
        .collect();
    println!("step,eval_return");
    for r in &run.curve {
        println!("{},{:.4}", r.step, r.eval_return_mean);
    }
    let peak = oracle.argmax.unwrap_or_default();
    let dist = means
        .iter()
        .zip(&peak)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    println!("oracle value {:.4} at {:?}", oracle.value, round(&peak));
    println!("learned means {:?}, distance {dist:.4}", round(&means));
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e3).round() / 1e3).collect()
}
