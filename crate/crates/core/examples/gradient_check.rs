//! Compare the hand-written gradients with central differences.

use dslsim::model::{gradient_check, ModelSpec};

fn main() -> dslsim::Result<()> {
    for spec in [ModelSpec::linear(20, 5), ModelSpec::mlp(20, 16, 5)] {
        let r = gradient_check(&spec, 32, 1e-5, 1)?;
        println!(
            "{:?} ({} params): max relative error {:.2e} over {} directions",
            spec.kind,
            spec.param_dim(),
            r.max_rel_error,
            r.probes
        );
    }
    Ok(())
}
