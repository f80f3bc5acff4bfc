//! Byzantine attacks, aggregate screening and node/link failures.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::Objective;
use crate::param::ParamVector;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    /// Send `-magnitude * w`, report the honest score.
    SignFlip,
    /// Send `w + N(0, magnitude^2 I)`, report the honest score.
    GaussianNoise,
    /// Send a noisy model and claim a score of zero.
    ScoreLying,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub num_attackers: usize,
    pub magnitude: f64,
    /// Pick attackers at random instead of the lowest ids.
    pub randomize_ids: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            num_attackers: 0,
            magnitude: 1.0,
            randomize_ids: false,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self, num_workers: usize) -> Result<()> {
        if self.num_attackers > num_workers {
            return Err(Error::config(
                "attacks.num_attackers",
                format!("{} exceeds num_workers {num_workers}", self.num_attackers),
            ));
        }
        if !(self.magnitude.is_finite() && self.magnitude > 0.0) {
            return Err(Error::config("attacks.magnitude", "must be > 0"));
        }
        Ok(())
    }

    pub fn active(&self) -> bool {
        self.kind != AttackKind::None && self.num_attackers > 0
    }

    /// Byzantine worker ids for a run.
    pub fn attacker_ids(&self, num_workers: usize, stream: &RngStream) -> BTreeSet<usize> {
        if !self.active() {
            return BTreeSet::new();
        }
        let k = self.num_attackers.min(num_workers);
        if self.randomize_ids {
            index::sample(&mut stream.rng(), num_workers, k).into_iter().collect()
        } else {
            (0..k).collect()
        }
    }
}

/// What a Byzantine worker sends in place of `(true_w, true_f)`.
pub fn apply_attack(
    spec: &AttackSpec,
    true_w: &ParamVector,
    true_f: f64,
    stream: &RngStream,
) -> Result<(ParamVector, f64)> {
    let noisy = || -> Result<ParamVector> {
        let mut rng = stream.rng();
        let values = true_w
            .iter()
            .map(|x| x + spec.magnitude * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ParamVector::from_vec(values)
    };
    match spec.kind {
        AttackKind::None => Ok((true_w.clone(), true_f)),
        AttackKind::SignFlip => Ok((true_w.scale(-spec.magnitude)?, true_f)),
        AttackKind::GaussianNoise => Ok((noisy()?, true_f)),
        AttackKind::ScoreLying => Ok((noisy()?, 0.0)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningPolicy {
    pub enabled: bool,
    /// Accepted deviation between the aggregate's score and the mean
    /// reported score. When unset, the harness calibrates it from an
    /// attack-free pilot.
    pub tau: Option<f64>,
    pub max_retries: usize,
}

impl Default for ScreeningPolicy {
    fn default() -> Self {
        ScreeningPolicy {
            enabled: false,
            tau: None,
            max_retries: 3,
        }
    }
}

impl ScreeningPolicy {
    pub fn validate(&self) -> Result<()> {
        if let Some(tau) = self.tau {
            if !(tau.is_finite() && tau >= 0.0) {
                return Err(Error::config("screening.tau", "must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Screening {
    pub verdict: Verdict,
    pub aggregate_f: f64,
    pub deviation: f64,
}

/// Score the candidate aggregate and compare it with the mean of the
/// selected workers' reported scores.
pub fn screen_aggregate<O: Objective + ?Sized>(
    candidate: &ParamVector,
    selected_reports: &[f64],
    objective: &O,
    tau: f64,
) -> Result<Screening> {
    if selected_reports.is_empty() {
        return Err(Error::Aggregation("screening needs at least one report".into()));
    }
    let aggregate_f = objective.score(candidate)?;
    let mean = selected_reports.iter().sum::<f64>() / selected_reports.len() as f64;
    let deviation = (aggregate_f - mean).abs();
    let verdict = if deviation <= tau {
        Verdict::Accept
    } else {
        Verdict::Reject
    };
    Ok(Screening {
        verdict,
        aggregate_f,
        deviation,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureSpec {
    /// Per selected worker per round.
    pub link_drop_prob: f64,
    /// Per worker, once per run; failed nodes never participate.
    pub node_fail_prob: f64,
}

impl FailureSpec {
    pub fn validate(&self) -> Result<()> {
        for (key, p) in [
            ("failures.link_drop_prob", self.link_drop_prob),
            ("failures.node_fail_prob", self.node_fail_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, format!("{p} not in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Permanently failed nodes, drawn once before round 0.
    pub fn failed_nodes(&self, num_workers: usize, stream: &RngStream) -> BTreeSet<usize> {
        if self.node_fail_prob <= 0.0 {
            return BTreeSet::new();
        }
        let mut rng = stream.rng();
        (0..num_workers)
            .filter(|_| rng.random::<f64>() < self.node_fail_prob)
            .collect()
    }
}

/// Workers of `selected` whose uplink survives this round. Failed nodes
/// are removed unconditionally; the rest drop independently.
pub fn inject_failures(
    selected: &[usize],
    failed: &BTreeSet<usize>,
    spec: &FailureSpec,
    stream: &RngStream,
) -> Vec<usize> {
    selected
        .iter()
        .copied()
        .filter(|w| !failed.contains(w))
        .filter(|&w| {
            spec.link_drop_prob <= 0.0 || stream.clone().worker(w).rng().random::<f64>() >= spec.link_drop_prob
        })
        .collect()
}
