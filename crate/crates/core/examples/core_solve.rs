//! Solves the regularized least-ε-core allocation for a coalition table and
//! checks the result against every constraint.
//!
//!     cargo run --example core_solve                 # built-in 3-agent table
//!     cargo run --example core_solve -- game.txt     # plain-text game file
//!
//! Game files hold `n`, then `A_N`, then one `bitmask value` line per
//! coalition (bit i set means agent i is a member).

use cora::coalition::{
    solve_core, solve_core_with, verify_allocation, CoalitionAdvantageTable, CoreSolveOptions,
};

const BUILTIN: &str = "\
3
-2
3 1     # {0,1}
5 0     # {0,2}
6 5     # {1,2}
";

fn main() -> cora::Result<()> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).map_err(|e| cora::Error::Io {
            path: path.into(),
            source: e,
        })?,
        None => BUILTIN.to_string(),
    };
    let table = CoalitionAdvantageTable::parse(&text)?;
    println!(
        "{} agents, A_N = {}, {} coalitions",
        table.n(),
        table.grand_advantage(),
        table.entries().len()
    );

    for lambda in [1e-3, 1e-2, 1e-1, 1.0] {
        let alloc = solve_core(&table, lambda)?;
        let check = verify_allocation(&table, &alloc.per_agent, alloc.epsilon, 1e-6)?;
        println!(
            "lambda {lambda:<6} credits {:?} eps {:.6} objective {:.6} iters {} violations {}",
            round(&alloc.per_agent),
            alloc.epsilon,
            alloc.objective,
            alloc.iterations,
            check.violations
        );
    }

    // λ = 0: minimize ε first, then pick the most balanced allocation at that ε.
    let lex = solve_core_with(&table, &CoreSolveOptions::new(0.0))?;
    println!(
        "lambda 0      credits {:?} eps {:.6}",
        round(&lex.per_agent),
        lex.epsilon
    );
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e6).round() / 1e6).collect()
}
