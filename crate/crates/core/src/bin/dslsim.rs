#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x < y)` is deliberate: NaN must fail

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dslsim::harness::sim::{run_to_dir, Simulation, MANIFEST_FILE, METRICS_FILE};
use dslsim::harness::sweep::{parse_seed_range, run_sweep, SweepSpec};
use dslsim::model::{gradient_check, ModelSpec};
use dslsim::{Error, ExperimentConfig, Result};

const GRADCHECK_PROBES: usize = 32;
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "dslsim", version, about = "Distributed swarm learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to output_dir from the config, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every override variant for every seed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        overrides: PathBuf,
        /// Inclusive range such as 1..5.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, value_enum)]
        model: ModelArg,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Mlp,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_file(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let rows = run_to_dir(&cfg, &dir)?;
            if let Some(last) = rows.last() {
                println!(
                    "{} seed {}: {} rounds, test_acc {:.4}, test_loss {:.4}",
                    last.algo,
                    last.seed,
                    rows.len(),
                    last.test_accuracy,
                    last.test_loss
                );
            }
            println!(
                "wrote {} and {}",
                dir.join(METRICS_FILE).display(),
                dir.join(MANIFEST_FILE).display()
            );
        }
        Command::Sweep {
            config,
            overrides,
            seeds,
            out,
        } => {
            let cfg = load(&config)?;
            let spec = SweepSpec::from_file(&overrides)?;
            let seeds = parse_seed_range(&seeds)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let rows = run_sweep(&cfg, &spec, &seeds, Some(&dir))?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("{} seed {}: {}", r.variant, r.seed, r.error.as_deref().unwrap_or(""));
            }
            println!(
                "{} runs ({} failed), summary in {}",
                rows.len(),
                failed,
                dir.join("summary.csv").display()
            );
        }
        Command::Gradcheck { model } => {
            let spec = match model {
                ModelArg::Linear => ModelSpec::linear(5, 3),
                ModelArg::Mlp => ModelSpec::mlp(5, 4, 3),
            };
            let r = gradient_check(&spec, GRADCHECK_PROBES, GRADCHECK_STEP, 0)?;
            println!("probes {} max relative error {:.3e}", r.probes, r.max_rel_error);
            if !(r.max_rel_error < GRADCHECK_TOL) {
                return Err(Error::Check(format!(
                    "relative error {:.3e} exceeds {GRADCHECK_TOL:e}",
                    r.max_rel_error
                )));
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            // building the simulation also checks the data and partition
            let sim = Simulation::from_config(cfg)?;
            println!(
                "ok: {} workers, {} rounds, {} parameters",
                sim.config().num_workers,
                sim.config().rounds,
                dslsim::optimizer::Objective::dim(sim.problem())
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
