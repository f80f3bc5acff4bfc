//! Trade scalar uplinks for accuracy with the censoring threshold.

use dslsim::harness::{run, ExperimentConfig};

fn main() -> dslsim::Result<()> {
    let mut cfg = ExperimentConfig {
        rounds: 100,
        ..ExperimentConfig::default()
    };
    let full = (cfg.num_workers * cfg.rounds) as f64;
    for threshold in [0.0, 0.001, 0.003, 0.01] {
        cfg.censoring.enabled = threshold > 0.0;
        cfg.censoring.threshold_init = threshold;
        let rows = run(&cfg.clone().normalized())?;
        let last = rows.last().expect("rounds > 0");
        println!(
            "threshold {threshold:<6}: accuracy {:.3}, scalar uplinks {} ({:.0}% of U*T)",
            last.test_accuracy,
            last.uplink_scalars,
            100.0 * last.uplink_scalars as f64 / full
        );
    }
    Ok(())
}
