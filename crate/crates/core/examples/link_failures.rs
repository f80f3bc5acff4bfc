//! Dropped uplinks and dead nodes: the run keeps going and carries the
//! global model over when nobody gets through.

use dslsim::harness::{run, ExperimentConfig};

fn main() -> dslsim::Result<()> {
    for (drop, dead) in [(0.0, 0.0), (0.3, 0.0), (0.3, 0.2), (0.9, 0.0)] {
        let mut cfg = ExperimentConfig {
            rounds: 100,
            ..ExperimentConfig::default()
        };
        cfg.failures.link_drop_prob = drop;
        cfg.failures.node_fail_prob = dead;
        let rows = run(&cfg.normalized())?;
        let carried = rows.iter().filter(|m| m.s_effective == 0).count();
        println!(
            "link drop {drop}, node failure {dead}: accuracy {:.3}, rounds carried over {carried}",
            rows.last().expect("rounds > 0").test_accuracy
        );
    }
    Ok(())
}
