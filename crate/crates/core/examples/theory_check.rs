//! Policy-improvement bounds on a two-agent, two-action game where every
//! quantity is exact: one natural-gradient step on least-core credits, then
//! one exponential-tilt step, each compared against its bound.
//!
//!     cargo run --release --example theory_check -- [games]
//!
//! With an argument, also runs every suite on that many random games.

use cora::theory::{
    npg_step_and_verify, run_suite, two_agent_example, verify_tilt_bounds, TheorySuite, SUITE_BETA,
};

fn main() -> cora::Result<()> {
    let game = two_agent_example();
    let credits = game.core_credits(1e-2)?;
    println!(
        "profile (0,0): credits {:?}, eps {}",
        credits.credits[0], credits.epsilon[0]
    );

    let report = npg_step_and_verify(&game, &credits, 0.01, SUITE_BETA)?;
    for (i, a) in report.agents.iter().enumerate() {
        println!(
            "agent {i}: L̂ {:.4}  Δlog π {:?}  α·Ā {:?}  bound {:.3e}",
            a.l_hat,
            a.delta_log_pi,
            a.projected
                .iter()
                .map(|p| p * report.alpha)
                .collect::<Vec<_>>(),
            a.bound_term
        );
    }
    println!(
        "npg: {} checks, min margin {:.3e}, passed {}",
        report.checks.len(),
        report.min_margin(),
        report.passed()
    );

    let tilt = verify_tilt_bounds(&game, &credits, 0.1)?;
    println!(
        "tilt: {} checks, min margin {:.3e}, passed {}",
        tilt.checks.len(),
        tilt.min_margin(),
        tilt.passed()
    );

    if let Some(games) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        for suite in [
            TheorySuite::Npg,
            TheorySuite::Concentration,
            TheorySuite::Tilt,
        ] {
            let rows = run_suite(suite, 0, games)?;
            let failed = rows.iter().filter(|r| !r.check.holds).count();
            let min = rows
                .iter()
                .map(|r| r.check.margin)
                .fold(f64::INFINITY, f64::min);
            println!(
                "{suite:?}: {} checks over {games} games, {failed} failed, min margin {min:.3e}",
                rows.len()
            );
        }
    }
    Ok(())
}
