//! Generalized advantage estimation on a short reward trace, including an
//! episode boundary in the middle of the batch.
//!
//!     cargo run --example gae

use cora::critics::{gae_advantages, GaeConfig};

fn main() -> cora::Result<()> {
    let rewards = [1.0, 0.0, 2.0, -1.0, 0.5, 1.0];
    let values = [0.5, 0.4, 1.0, 0.2, 0.3, 0.8];
    let dones = [false, false, true, false, false, false];
    for (gamma, lambda) in [(0.99, 0.95), (0.99, 0.0), (0.99, 1.0)] {
        let cfg = GaeConfig { gamma, lambda };
        cfg.validate()?;
        let adv = gae_advantages(&rewards, &values, 0.7, &cfg, &dones)?;
        let shown: Vec<String> = adv.iter().map(|a| format!("{a:+.4}")).collect();
        println!("gamma {gamma} lambda {lambda:<4} -> [{}]", shown.join(", "));
    }
    Ok(())
}
