//! DSL against the FL and PSO baselines on the same non-i.i.d. task,
//! through the sweep machinery.

use std::path::Path;

use dslsim::harness::sweep::{run_sweep, SweepSpec};
use dslsim::harness::ExperimentConfig;

const OVERRIDES: &str = r#"
[[variant]]
name = "dsl"

[[variant]]
name = "dsl_no_sharing"
[variant.data]
global_sharing = false

[[variant]]
name = "fl"
algorithm = "fl"
[variant.data]
global_sharing = false

[[variant]]
name = "pso"
algorithm = "pso"
"#;

fn main() -> dslsim::Result<()> {
    let base = ExperimentConfig {
        rounds: 100,
        ..ExperimentConfig::default()
    }
    .normalized();
    let spec = SweepSpec::from_toml_str(OVERRIDES, Path::new("inline"))?;
    let rows = run_sweep(&base, &spec, &[1, 2], None)?;
    for r in rows {
        match (r.final_round, r.error) {
            (Some(m), _) => println!("{:<15} seed {}: accuracy {:.3}", r.variant, r.seed, m.test_accuracy),
            (None, e) => println!("{:<15} seed {}: failed: {}", r.variant, r.seed, e.unwrap_or_default()),
        }
    }
    Ok(())
}
