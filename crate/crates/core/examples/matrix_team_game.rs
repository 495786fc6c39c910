//! Trains per-agent policies on a Matrix Team Game and prints the learning
//! curve next to the best achievable return.
//!
//!     cargo run --release --example matrix_team_game -- [seed] [cora|shared|cora_no_std] [peaks]

use cora::envs::{oracle_optimal_return, EnvSpec, MatrixGameSpec};
use cora::trainer::{train, Algorithm, TrainConfig};

fn main() -> cora::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let algorithm = match args.get(1).map(String::as_str) {
        Some("shared") => Algorithm::SharedAdvantage,
        Some("cora_no_std") => Algorithm::CoraNoStd,
        _ => Algorithm::Cora,
    };
    let spec = match args.get(2).and_then(|s| s.parse().ok()) {
        Some(peaks) => MatrixGameSpec::multipeak(2, 5, peaks, seed),
        None => MatrixGameSpec::base(2, 5, seed),
    };
    let env = EnvSpec::Matrix(spec);
    let oracle = oracle_optimal_return(&env)?.value;
    let cfg = TrainConfig {
        algorithm,
        seed,
        ..TrainConfig::defaults_for(&env)
    };
    let started = std::time::Instant::now();
    let run = train(&cfg, &env)?;
    println!("oracle optimum {oracle:.3}");
    println!("step,eval_return,fraction_of_optimum,mean_epsilon");
    for row in &run.curve {
        println!(
            "{},{:.3},{:.3},{:.4}",
            row.step,
            row.eval_return_mean,
            row.eval_return_mean / oracle,
            row.mean_epsilon
        );
    }
    eprintln!(
        "trained {} steps in {:.1?}",
        run.env_steps,
        started.elapsed()
    );
    Ok(())
}
