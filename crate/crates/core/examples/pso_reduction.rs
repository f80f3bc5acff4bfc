//! With lambda = 1, one selected worker and an ideal channel the hybrid
//! update is plain particle swarm optimisation. Run both side by side.

use dslsim::channel::ChannelModel;
use dslsim::harness::{ExperimentConfig, Simulation};
use dslsim::optimizer::{init_model, PsoSwarm, SphereObjective};
use dslsim::schedule::CoeffMode;
use dslsim::{ParamVector, RngStream};

fn main() -> dslsim::Result<()> {
    let (d, u, rounds) = (10, 20, 300);
    let mut cfg = ExperimentConfig {
        rounds,
        num_workers: u,
        channel: ChannelModel::ideal(),
        ..ExperimentConfig::default()
    };
    let s = &mut cfg.schedules;
    (s.lambda_init, s.lambda_final) = (1.0, 1.0);
    (s.c0_init, s.c0_final) = (0.729, 0.729);
    (s.c1_max, s.c2_max) = (1.49445, 1.49445);
    (s.s_init, s.s_final) = (1, 1);
    s.init_scale = 2.0;
    s.coefficients = CoeffMode::PerCoordinate;
    let cfg = cfg.normalized();

    let obj = SphereObjective {
        center: ParamVector::from_vec(vec![1.0; d])?,
    };
    let start = (0..u)
        .map(|i| init_model(d, 2.0, &RngStream::keyed(cfg.seed, "init", i, 0)))
        .collect();
    let mut swarm = PsoSwarm::new(start, ParamVector::zeros(d));
    let mut sim = Simulation::with_problem(cfg.clone(), obj.clone())?;
    for t in 0..rounds {
        sim.step()?;
        swarm.pso_round(0.729, 1.49445, 1.49445, CoeffMode::PerCoordinate, cfg.seed, t, &obj)?;
        if t % 50 == 49 {
            let gap = sim.global_model().max_abs_diff(&swarm.swarm_best)?;
            println!(
                "round {:>3}: best {:.3e}, |dsl - pso| = {gap:.1e}",
                t + 1,
                swarm.swarm_best_f
            );
        }
    }
    Ok(())
}
