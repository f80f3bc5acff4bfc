//! Per-round hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::CensorPolicy;

/// Velocity bookkeeping after a DSL step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMode {
    /// Velocity keeps only the swarm displacement, so `lambda = 1` is plain PSO.
    #[default]
    SwarmOnly,
    /// Velocity is the full applied displacement including the gradient part.
    Total,
}

/// How the random cognitive and social coefficients are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffMode {
    /// One `(c1, c2)` pair per worker per round scaling whole vectors.
    #[default]
    Scalar,
    /// Independent draws for every coordinate, as in textbook PSO.
    PerCoordinate,
}

/// Schedules for the swarm/gradient tradeoff, PSO coefficients and the
/// number of selected workers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperSchedule {
    pub lambda_init: f64,
    pub lambda_final: f64,
    pub c0_init: f64,
    pub c0_final: f64,
    pub c1_max: f64,
    pub c2_max: f64,
    /// SGD step size.
    pub alpha: f64,
    /// Proximal weight pulling local models toward the last global model.
    pub mu: f64,
    pub s_init: usize,
    pub s_final: usize,
    /// Total rounds `T`, taken from the experiment's `rounds`.
    #[serde(skip)]
    pub rounds_total: usize,
    /// Half-width of the uniform box used to initialise local models.
    pub init_scale: f64,
    pub velocity_mode: VelocityMode,
    pub coefficients: CoeffMode,
}

impl Default for HyperSchedule {
    fn default() -> Self {
        HyperSchedule {
            lambda_init: 0.8,
            lambda_final: 0.2,
            c0_init: 0.9,
            c0_final: 0.4,
            c1_max: 1.0,
            c2_max: 1.0,
            alpha: 0.1,
            mu: 0.01,
            s_init: 1,
            s_final: 10,
            rounds_total: 200,
            init_scale: 0.05,
            velocity_mode: VelocityMode::SwarmOnly,
            coefficients: CoeffMode::Scalar,
        }
    }
}

/// Hyperparameters in effect for one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundParams {
    pub lambda_t: f64,
    pub c0_t: f64,
    pub s_t: usize,
    pub censor_threshold_t: f64,
}

impl HyperSchedule {
    /// Range checks. `num_workers` bounds the selection counts.
    pub fn validate(&self, num_workers: usize) -> Result<()> {
        let key = |k: &str| format!("schedules.{k}");
        for (name, v) in [("lambda_init", self.lambda_init), ("lambda_final", self.lambda_final)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key(name), format!("{v} not in [0, 1]")));
            }
        }
        for (name, v) in [
            ("c0_init", self.c0_init),
            ("c0_final", self.c0_final),
            ("c1_max", self.c1_max),
            ("c2_max", self.c2_max),
            ("alpha", self.alpha),
            ("init_scale", self.init_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key(name), format!("{v} must be > 0")));
            }
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::config(key("mu"), format!("{} must be >= 0", self.mu)));
        }
        if self.s_init < 1 {
            return Err(Error::config(key("s_init"), "must be >= 1"));
        }
        if self.s_init > self.s_final {
            return Err(Error::config(
                key("s_final"),
                format!("s_init {} exceeds s_final {}", self.s_init, self.s_final),
            ));
        }
        if self.s_final > num_workers {
            return Err(Error::config(
                key("s_final"),
                format!("{} exceeds num_workers {num_workers}", self.s_final),
            ));
        }
        if self.rounds_total == 0 {
            return Err(Error::config(key("rounds_total"), "must be > 0"));
        }
        Ok(())
    }

    fn fraction(&self, t: usize) -> f64 {
        if self.rounds_total <= 1 {
            0.0
        } else {
            t as f64 / (self.rounds_total - 1) as f64
        }
    }
}

fn lerp(from: f64, to: f64, f: f64) -> f64 {
    if from == to {
        return from;
    }
    // this form hits both endpoints exactly
    (1.0 - f) * from + f * to
}

/// Round parameters for round `t`: linear interpolation of `lambda`, `c0`
/// and `S_t` from their initial to final values over `[0, T-1]`, plus the
/// geometric censoring threshold.
pub fn eval_schedule(schedule: &HyperSchedule, censor: &CensorPolicy, t: usize) -> Result<RoundParams> {
    if t >= schedule.rounds_total {
        return Err(Error::RoundOutOfRange {
            t,
            total: schedule.rounds_total,
        });
    }
    let f = schedule.fraction(t);
    let lambda_t = lerp(schedule.lambda_init, schedule.lambda_final, f).clamp(0.0, 1.0);
    let c0_t = lerp(schedule.c0_init, schedule.c0_final, f);
    let s_raw = lerp(schedule.s_init as f64, schedule.s_final as f64, f).round() as usize;
    let s_t = s_raw.clamp(schedule.s_init, schedule.s_final);
    Ok(RoundParams {
        lambda_t,
        c0_t,
        s_t,
        censor_threshold_t: censor.threshold(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(t: usize) -> HyperSchedule {
        HyperSchedule {
            rounds_total: t,
            ..HyperSchedule::default()
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let s = HyperSchedule {
            lambda_init: 0.8,
            lambda_final: 0.2,
            c0_init: 1.0,
            c0_final: 0.4,
            ..sched(100)
        };
        let off = CensorPolicy::default();
        assert_eq!(eval_schedule(&s, &off, 0).unwrap().lambda_t, 0.8);
        assert_eq!(eval_schedule(&s, &off, 99).unwrap().lambda_t, 0.2);
        assert_eq!(eval_schedule(&s, &off, 0).unwrap().c0_t, 1.0);
        assert_eq!(eval_schedule(&s, &off, 99).unwrap().c0_t, 0.4);
    }

    #[test]
    fn selection_count_midpoint() {
        let s = HyperSchedule {
            s_init: 1,
            s_final: 50,
            ..sched(50)
        };
        let rp = eval_schedule(&s, &CensorPolicy::default(), 24).unwrap();
        assert_eq!(rp.s_t, 25);
    }

    #[test]
    fn out_of_range_round() {
        let s = sched(10);
        assert!(matches!(
            eval_schedule(&s, &CensorPolicy::default(), 10),
            Err(Error::RoundOutOfRange { t: 10, total: 10 })
        ));
    }

    #[test]
    fn single_round_schedule_uses_initial_values() {
        let s = sched(1);
        let rp = eval_schedule(&s, &CensorPolicy::default(), 0).unwrap();
        assert_eq!(rp.lambda_t, s.lambda_init);
        assert_eq!(rp.s_t, s.s_init);
    }

    #[test]
    fn validation_names_keys() {
        let bad = HyperSchedule {
            c1_max: 0.0,
            ..sched(10)
        };
        match bad.validate(50) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "schedules.c1_max"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = HyperSchedule {
            s_final: 60,
            ..sched(10)
        };
        assert!(bad.validate(50).is_err());
        let bad = HyperSchedule {
            lambda_init: 1.5,
            ..sched(10)
        };
        assert!(bad.validate(50).is_err());
    }
}
