//! Sign-flip attackers with and without aggregate screening.

use dslsim::harness::{run, ExperimentConfig};
use dslsim::robustness::AttackKind;

fn main() -> dslsim::Result<()> {
    let mut cfg = ExperimentConfig {
        rounds: 100,
        ..ExperimentConfig::default()
    };
    cfg.attacks.kind = AttackKind::SignFlip;
    cfg.attacks.num_attackers = 10;
    cfg.attacks.magnitude = 10.0;
    for screening in [false, true] {
        cfg.screening.enabled = screening;
        let rows = run(&cfg.clone().normalized())?;
        let last = rows.last().expect("rounds > 0");
        println!(
            "screening {screening:>5}: accuracy {:.3}, rejected aggregates {}",
            last.test_accuracy, last.rejected
        );
    }
    Ok(())
}
