//! Score uplink with communication censoring, and rank-based worker
//! selection.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::WorkerState;

/// What the server holds for one worker after the reporting phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreReport {
    pub worker: usize,
    pub reported_f: f64,
    /// Transmitted this round, as opposed to reusing the last value.
    pub fresh: bool,
}

/// Geometric censoring threshold `threshold_init * decay^t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CensorPolicy {
    pub enabled: bool,
    pub threshold_init: f64,
    pub decay: f64,
}

impl Default for CensorPolicy {
    fn default() -> Self {
        CensorPolicy {
            enabled: false,
            threshold_init: 0.0,
            decay: 1.0,
        }
    }
}

impl CensorPolicy {
    pub fn threshold(&self, t: usize) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        self.threshold_init * self.decay.powi(t.min(i32::MAX as usize) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold_init.is_nan() || self.threshold_init < 0.0 {
            return Err(Error::config("censoring.threshold_init", "must be >= 0"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(
                "censoring.decay",
                format!("{} not in (0, 1]", self.decay),
            ));
        }
        Ok(())
    }
}

/// Decide whether `worker` transmits `f_current` this round.
///
/// A worker transmits on its first report, whenever the threshold is zero,
/// and whenever its value moved by more than the threshold since the last
/// transmission. Otherwise the server reuses the stale value.
pub fn censor_report(worker: &mut WorkerState, f_current: f64, threshold: f64) -> ScoreReport {
    let send = match worker.last_reported_f {
        None => true,
        Some(_) if threshold <= 0.0 => true,
        Some(last) => (f_current - last).abs() > threshold,
    };
    if send {
        worker.last_reported_f = Some(f_current);
        ScoreReport {
            worker: worker.id,
            reported_f: f_current,
            fresh: true,
        }
    } else {
        ScoreReport {
            worker: worker.id,
            reported_f: worker.last_reported_f.unwrap_or(f_current),
            fresh: false,
        }
    }
}

fn by_score(a: &ScoreReport, b: &ScoreReport) -> Ordering {
    a.reported_f.total_cmp(&b.reported_f).then(a.worker.cmp(&b.worker))
}

/// The `min(s_t, reports.len())` workers with the smallest reported
/// scores, ordered by `(score, id)`.
pub fn select_workers(reports: &[ScoreReport], s_t: usize) -> Result<Vec<usize>> {
    if reports.is_empty() {
        return Err(Error::Aggregation("no score reports to select from".into()));
    }
    Ok(next_best(reports, &BTreeSet::new(), s_t))
}

/// The `k` best-ranked workers outside `excluded`; fewer if not enough
/// candidates remain.
pub fn next_best(reports: &[ScoreReport], excluded: &BTreeSet<usize>, k: usize) -> Vec<usize> {
    let mut candidates: Vec<&ScoreReport> = reports.iter().filter(|r| !excluded.contains(&r.worker)).collect();
    candidates.sort_by(|a, b| by_score(a, b));
    candidates.into_iter().take(k).map(|r| r.worker).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamVector;

    fn reports(scores: &[f64]) -> Vec<ScoreReport> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &f)| ScoreReport {
                worker: i,
                reported_f: f,
                fresh: true,
            })
            .collect()
    }

    fn worker() -> WorkerState {
        WorkerState::new(0, ParamVector::zeros(1), false)
    }

    #[test]
    fn censoring_sequence() {
        let mut w = worker();
        let fresh: Vec<bool> = [1.0, 0.95, 0.5]
            .iter()
            .map(|&f| censor_report(&mut w, f, 0.1).fresh)
            .collect();
        assert_eq!(fresh, [true, false, true]);
        assert_eq!(w.last_reported_f, Some(0.5));
    }

    #[test]
    fn stale_report_reuses_last_value() {
        let mut w = worker();
        censor_report(&mut w, 1.0, 0.1);
        let r = censor_report(&mut w, 0.95, 0.1);
        assert_eq!(r.reported_f, 1.0);
        assert!(!r.fresh);
    }

    #[test]
    fn zero_threshold_always_transmits() {
        let mut w = worker();
        for f in [1.0, 1.0, 0.9, 0.9] {
            let r = censor_report(&mut w, f, 0.0);
            assert!(r.fresh);
            assert_eq!(r.reported_f, f);
        }
    }

    #[test]
    fn infinite_threshold_transmits_once() {
        let mut w = worker();
        let sent = (0..50)
            .filter(|&t| censor_report(&mut w, 1.0 / (t + 1) as f64, f64::INFINITY).fresh)
            .count();
        assert_eq!(sent, 1);
    }

    #[test]
    fn tie_broken_by_id() {
        let r = reports(&[0.3, 0.1, 0.1]);
        assert_eq!(select_workers(&r, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn full_and_single_selection() {
        let r = reports(&[0.5, 0.2, 0.9, 0.1]);
        assert_eq!(select_workers(&r, 4).unwrap(), vec![3, 1, 0, 2]);
        assert_eq!(select_workers(&r, 1).unwrap(), vec![3]);
        assert_eq!(select_workers(&r, 10).unwrap().len(), 4);
        assert!(select_workers(&[], 1).is_err());
    }

    #[test]
    fn next_best_rank_shift() {
        let r = reports(&[0.1, 0.2, 0.3, 0.4]);
        let ex: BTreeSet<usize> = [0, 1].into();
        assert_eq!(next_best(&r, &ex, 1), vec![2]);
        let first = select_workers(&r, 2).unwrap();
        let ex: BTreeSet<usize> = first.into_iter().collect();
        assert_eq!(next_best(&r, &ex, 2), vec![2, 3]);
        let all: BTreeSet<usize> = (0..4).collect();
        assert!(next_best(&r, &all, 3).is_empty());
    }

    #[test]
    fn threshold_schedule() {
        let p = CensorPolicy {
            enabled: true,
            threshold_init: 0.2,
            decay: 0.5,
        };
        assert_eq!(p.threshold(0), 0.2);
        assert_eq!(p.threshold(2), 0.05);
        assert_eq!(CensorPolicy::default().threshold(3), 0.0);
        assert!(CensorPolicy {
            decay: 0.0,
            ..p.clone()
        }
        .validate()
        .is_err());
    }
}
