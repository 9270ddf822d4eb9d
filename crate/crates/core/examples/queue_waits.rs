//! Waiting times from the Kiefer-Wolfowitz recursion, checked against the
//! Lindley recursion for one server.

use klsens::queue::{kiefer_wolfowitz, lindley, simulate_waits, QueueConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> klsens::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let services: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 2.0).collect();
    let gaps: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 2.2).collect();
    println!(
        "one server: kw {:.6}  lindley {:.6}",
        kiefer_wolfowitz(&services, &gaps, 1),
        lindley(&services, &gaps)
    );

    for servers in [20, 40] {
        let waits = simulate_waits(&QueueConfig::mms(servers, 100), 20_000, 5)?;
        let mean = waits.iter().sum::<f64>() / waits.len() as f64;
        let delayed = waits.iter().filter(|w| **w > 0.0).count() as f64 / waits.len() as f64;
        println!("M/M/{servers}: mean wait {mean:.5}  P(wait > 0) {delayed:.4}");
    }
    Ok(())
}
