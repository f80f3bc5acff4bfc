//! Block-fading uplink with power control and over-the-air aggregation.
//!
//! Every selected worker transmits its vector scaled by `p * h`, where `h`
//! is a scalar block-fading gain held for the whole round. The receiver
//! sees the superposition plus Gaussian noise and divides by the total
//! alignment `sum(p * h)`, which equals `S_eff` under exact inversion.

use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Ideal,
    #[default]
    Rayleigh,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerPolicy {
    /// Truncated channel inversion.
    #[default]
    Inversion,
    /// Best-effort voting: every surviving worker transmits at full power.
    BevMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    /// Per-coordinate receiver noise variance before receiver scaling.
    pub noise_var: f64,
    /// Per-worker transmit amplitude cap.
    pub p_max: f64,
    /// Workers with gain below this stay silent.
    pub h_min: f64,
    pub policy: PowerPolicy,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            kind: ChannelKind::Rayleigh,
            noise_var: 1e-4,
            p_max: 10.0,
            h_min: 0.1,
            policy: PowerPolicy::Inversion,
        }
    }
}

impl ChannelModel {
    pub fn ideal() -> Self {
        ChannelModel {
            kind: ChannelKind::Ideal,
            noise_var: 0.0,
            p_max: 1.0,
            h_min: 0.0,
            policy: PowerPolicy::Inversion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::config("channel.noise_var", "must be >= 0"));
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(Error::config("channel.p_max", "must be > 0"));
        }
        if !(self.h_min.is_finite() && self.h_min >= 0.0) {
            return Err(Error::config("channel.h_min", "must be >= 0"));
        }
        Ok(())
    }

    pub fn effective_noise_var(&self) -> f64 {
        match self.kind {
            ChannelKind::Ideal => 0.0,
            ChannelKind::Rayleigh => self.noise_var,
        }
    }
}

/// Unit mean-square Rayleigh gain `sqrt(x^2 + y^2) / sqrt(2)`.
pub fn rayleigh_gain(rng: &mut impl Rng) -> f64 {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let h = ((x * x + y * y) * 0.5).sqrt();
        if h > 0.0 {
            return h;
        }
    }
}

/// Gains for the given workers in one round. `stream` is the round's gain
/// stream; each worker draws from its own sub-stream.
pub fn sample_gains(model: &ChannelModel, selected: &[usize], stream: &RngStream) -> Vec<f64> {
    selected
        .iter()
        .map(|&w| match model.kind {
            ChannelKind::Ideal => 1.0,
            ChannelKind::Rayleigh => rayleigh_gain(&mut stream.clone().worker(w).rng()),
        })
        .collect()
}

/// Per-worker power decision before the common alignment step.
pub fn power_control(policy: PowerPolicy, gain: f64, p_max: f64, h_min: f64) -> (f64, bool) {
    if gain < h_min {
        return (0.0, false);
    }
    match policy {
        PowerPolicy::Inversion => ((1.0 / gain).min(p_max), true),
        PowerPolicy::BevMax => (p_max, true),
    }
}

/// One worker's transmit setting for a round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRealization {
    pub worker: usize,
    pub gain: f64,
    pub power: f64,
    pub included: bool,
}

/// Power settings for every worker. Under inversion, if any included
/// worker hits the cap, all included workers rescale to a common product
/// `p * h = min_i(p_max * h_i, 1)`.
pub fn realize(model: &ChannelModel, workers: &[usize], gains: &[f64]) -> Vec<ChannelRealization> {
    let ideal = model.kind == ChannelKind::Ideal;
    let mut out: Vec<ChannelRealization> = workers
        .iter()
        .zip(gains)
        .map(|(&worker, &gain)| {
            let (power, included) = if ideal {
                (1.0, true)
            } else {
                power_control(model.policy, gain, model.p_max, model.h_min)
            };
            ChannelRealization {
                worker,
                gain,
                power,
                included,
            }
        })
        .collect();
    if !ideal && model.policy == PowerPolicy::Inversion {
        let capped = out.iter().any(|r| r.included && 1.0 / r.gain > model.p_max);
        if capped {
            let eta = out
                .iter()
                .filter(|r| r.included)
                .map(|r| (model.p_max * r.gain).min(1.0))
                .fold(1.0, f64::min);
            for r in out.iter_mut().filter(|r| r.included) {
                r.power = eta / r.gain;
            }
        }
    }
    out
}

/// Superpose the included contributions, add receiver noise and rescale.
/// Returns the aggregate and the number of included contributors.
pub fn ota_aggregate(
    contributions: &[(&ParamVector, ChannelRealization)],
    noise_var: f64,
    stream: &RngStream,
) -> Result<(ParamVector, usize)> {
    let included: Vec<&(&ParamVector, ChannelRealization)> = contributions.iter().filter(|(_, r)| r.included).collect();
    let Some((first, _)) = included.first() else {
        return Err(Error::Aggregation("no included contributions".into()));
    };
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    let mut alignment = 0.0;
    for (w, r) in &included {
        if w.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: w.len(),
            });
        }
        let a = r.power * r.gain;
        alignment += a;
        for (s, x) in sum.iter_mut().zip(w.iter()) {
            *s += a * x;
        }
    }
    if !(alignment > 0.0) {
        return Err(Error::Aggregation("zero total alignment".into()));
    }
    if noise_var > 0.0 {
        let normal = Normal::new(0.0, noise_var.sqrt()).map_err(|e| Error::Aggregation(e.to_string()))?;
        let mut rng = stream.rng();
        for s in &mut sum {
            *s += rng.sample(normal);
        }
    }
    for s in &mut sum {
        *s /= alignment;
    }
    let out = ParamVector::from_vec(sum).map_err(|_| Error::non_finite("over-the-air aggregate"))?;
    Ok((out, included.len()))
}
