//! Over-the-air aggregation through a Rayleigh channel with truncated
//! channel inversion: who gets excluded, and how big the error is.

use dslsim::channel::{ota_aggregate, realize, sample_gains, ChannelModel};
use dslsim::{ParamVector, RngStream};

fn main() -> dslsim::Result<()> {
    let model = ChannelModel {
        noise_var: 0.04,
        h_min: 0.3,
        ..ChannelModel::default()
    };
    let workers: Vec<usize> = (0..8).collect();
    let models: Vec<ParamVector> = workers
        .iter()
        .map(|&i| ParamVector::from_vec(vec![i as f64, 1.0]))
        .collect::<Result<_, _>>()?;
    for round in 0..4 {
        let gains = sample_gains(&model, &workers, &RngStream::keyed(7, "gain", 0, round));
        let real = realize(&model, &workers, &gains);
        let contribs: Vec<_> = real.iter().map(|r| (&models[r.worker], *r)).collect();
        let (agg, s_eff) = ota_aggregate(&contribs, model.noise_var, &RngStream::keyed(7, "noise", 0, round))?;
        let included: Vec<usize> = real.iter().filter(|r| r.included).map(|r| r.worker).collect();
        let mean = included.iter().map(|&i| i as f64).sum::<f64>() / s_eff as f64;
        println!(
            "round {round}: included {included:?}, aggregate ({:.3}, {:.3}), exact mean ({mean:.3}, 1)",
            agg[0], agg[1]
        );
    }
    Ok(())
}
