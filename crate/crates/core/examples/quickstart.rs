//! Run the default experiment for a few rounds and print the metrics.
//!
//!     cargo run --release --example quickstart

use dslsim::harness::{to_csv, ExperimentConfig, Simulation};

fn main() -> dslsim::Result<()> {
    let cfg = ExperimentConfig {
        rounds: 30,
        ..ExperimentConfig::default()
    };
    let mut sim = Simulation::from_config(cfg)?;
    let rows = sim.run_with(|m| {
        if m.round % 5 == 0 {
            println!(
                "round {:>3}  acc {:.3}  score loss {:.3}  selected {}",
                m.round, m.test_accuracy, m.global_score_loss, m.s_effective
            );
        }
        Ok(())
    })?;
    println!("\nlast row of the metrics file:");
    print!("{}", to_csv(&rows[rows.len() - 1..]));
    Ok(())
}
