//! Cost and quality of solving the allocation on a random subset of
//! coalitions instead of all `2^n − 2` of them.
//!
//!     cargo run --release --example approx_benchmark -- [n] [trials]
//!
//! Also prints the sample size the probable-core bound asks for at
//! δ = 0.3, Δ = 0.1 and the violation rate measured on fresh coalitions.

use cora::coalition::{
    probable_core_rate, probable_core_sample_size, proper_count, sample_coalitions, solve_core,
    SamplingPlan, DEFAULT_LAMBDA_REG,
};
use cora::trainer::{bench_csv, random_full_table, run_approx_benchmark};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cora::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(7);
    let trials: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let total = proper_count(n);
    let grid: Vec<usize> = [total / 8, total / 4, total / 2, total]
        .into_iter()
        .filter(|&m| m >= 1)
        .collect();
    print!("{}", bench_csv(&run_approx_benchmark(n, trials, &grid, 0)?));

    let m = probable_core_sample_size(n, 0.3, 0.1)?.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rate = 0.0;
    for t in 0..trials {
        let full = random_full_table(n, &mut rng)?;
        let sampled = full.restrict(&sample_coalitions(n, &SamplingPlan::fixed(m, t as u64))?)?;
        let alloc = solve_core(&sampled, DEFAULT_LAMBDA_REG)?;
        rate += probable_core_rate(&full, &alloc, 10_000, 1000 + t as u64)? / trials as f64;
    }
    println!("m = {m} of {total}: fresh-coalition violation rate {rate:.4} (target ≤ 0.3)");
    Ok(())
}
