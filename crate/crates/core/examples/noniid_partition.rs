//! How Dirichlet label skew spreads classes over workers, and what the
//! shared global set looks like.

use dslsim::data::{gen_synthetic, partition_noniid, PartitionMode, PartitionSpec};
use dslsim::RngStream;

fn main() -> dslsim::Result<()> {
    let ds = gen_synthetic(5000, 20, 5, 2.0, &RngStream::new(1, "data"))?;
    for alpha in [100.0, 1.0, 0.1] {
        let spec = PartitionSpec {
            num_workers: 10,
            dirichlet_alpha: alpha,
            global_fraction: 0.01,
            global_split: 0.5,
            mode: PartitionMode::Dirichlet,
        };
        let p = partition_noniid(&ds, &spec, &RngStream::new(1, "partition"))?;
        println!("alpha = {alpha}");
        for (i, local) in p.locals.iter().enumerate().take(4) {
            println!("  worker {i}: {:?}", local.label_histogram());
        }
        println!(
            "  global train {:?}, score {:?}",
            p.global.train_part.label_histogram(),
            p.global.score_part.label_histogram()
        );
    }
    Ok(())
}
