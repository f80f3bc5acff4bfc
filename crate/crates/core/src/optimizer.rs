//! The hybrid swarm/gradient worker update, local-best bookkeeping, and the
//! federated-averaging and particle-swarm reference algorithms.

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::{draw_coeffs, PsoCoeffs, RngStream};
use crate::schedule::{CoeffMode, RoundParams, VelocityMode};

/// What a worker optimises.
///
/// `gradient` is the local training gradient (it may subsample a
/// minibatch keyed by worker and round). `score` is the fair-value loss
/// every worker evaluates on the same shared data.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn gradient(
        &self,
        worker: usize,
        round: usize,
        w: &ParamVector,
        mu: f64,
        anchor: &ParamVector,
    ) -> Result<ParamVector>;

    fn score(&self, w: &ParamVector) -> Result<f64>;

    /// Fitness a worker can compute from its own data alone. Defaults to
    /// the shared score, which is what a common objective looks like.
    fn local_fitness(&self, _worker: usize, w: &ParamVector) -> Result<f64> {
        self.score(w)
    }
}

/// `|w - center|^2`, the same for every worker.
#[derive(Clone, Debug)]
pub struct SphereObjective {
    pub center: ParamVector,
}

impl Objective for SphereObjective {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn gradient(
        &self,
        _worker: usize,
        _round: usize,
        w: &ParamVector,
        mu: f64,
        anchor: &ParamVector,
    ) -> Result<ParamVector> {
        let mut g = w.sub(&self.center)?.scale(2.0)?;
        if mu != 0.0 {
            g.axpy(mu, &w.sub(anchor)?)?;
        }
        Ok(g)
    }

    fn score(&self, w: &ParamVector) -> Result<f64> {
        Ok(w.sub(&self.center)?.norm_sq())
    }
}

/// One worker's optimiser memory.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState {
    pub id: usize,
    pub w: ParamVector,
    pub v: ParamVector,
    /// Historical best model by fair-value loss.
    pub w_best: ParamVector,
    pub f_best: f64,
    /// Last score transmitted to the server, for censoring.
    pub last_reported_f: Option<f64>,
    pub is_byzantine: bool,
}

impl WorkerState {
    /// Fresh worker at `w` with zero velocity and no recorded best.
    pub fn new(id: usize, w: ParamVector, is_byzantine: bool) -> Self {
        WorkerState {
            id,
            v: ParamVector::zeros(w.len()),
            w_best: w.clone(),
            w,
            f_best: f64::INFINITY,
            last_reported_f: None,
            is_byzantine,
        }
    }
}

/// Initial model: each coordinate uniform in `(-scale, scale)`.
pub fn init_model(dim: usize, scale: f64, stream: &RngStream) -> ParamVector {
    use rand::Rng;
    let mut rng = stream.rng();
    let values = (0..dim).map(|_| rng.random_range(-scale..scale)).collect();
    ParamVector::from_vec(values).expect("uniform draws are finite")
}

/// Step size, proximal weight and velocity bookkeeping for a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub alpha: f64,
    pub mu: f64,
    pub velocity_mode: VelocityMode,
}

/// One hybrid update:
///
/// ```text
/// bi = c0 v + c1 (w_best - w) + c2 (w_global - w)
/// ai = alpha * grad(w; mu, anchor = w_global)
/// w' = w + lambda bi - (1 - lambda) ai
/// ```
///
/// The gradient is skipped when `lambda == 1`.
pub fn dsl_step<O: Objective + ?Sized>(
    worker: &WorkerState,
    rp: &RoundParams,
    coeffs: impl Into<PsoCoeffs>,
    w_global: &ParamVector,
    step: &StepConfig,
    objective: &O,
    round: usize,
) -> Result<WorkerState> {
    let d = worker.w.len();
    for other in [&worker.v, &worker.w_best, w_global] {
        if other.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: other.len(),
            });
        }
    }
    if !(0.0..=1.0).contains(&rp.lambda_t) {
        return Err(Error::config(
            "schedules.lambda",
            format!("lambda_t {} not in [0, 1]", rp.lambda_t),
        ));
    }
    let coeffs = coeffs.into();
    if let PsoCoeffs::PerCoordinate(pairs) = &coeffs {
        if pairs.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: pairs.len(),
            });
        }
    }
    let lambda = rp.lambda_t;
    let w = worker.w.as_slice();
    let v = worker.v.as_slice();
    let wb = worker.w_best.as_slice();
    let wg = w_global.as_slice();

    let bi: Vec<f64> = (0..d)
        .map(|k| {
            let (c1, c2) = coeffs.at(k);
            rp.c0_t * v[k] + c1 * (wb[k] - w[k]) + c2 * (wg[k] - w[k])
        })
        .collect();
    let ai: Option<Vec<f64>> = if lambda < 1.0 {
        let g = objective.gradient(worker.id, round, &worker.w, step.mu, w_global)?;
        Some(g.iter().map(|gk| step.alpha * gk).collect())
    } else {
        None
    };

    let mut w_next = Vec::with_capacity(d);
    let mut v_next = Vec::with_capacity(d);
    for k in 0..d {
        let grad_part = ai.as_ref().map_or(0.0, |a| (1.0 - lambda) * a[k]);
        w_next.push(w[k] + lambda * bi[k] - grad_part);
        v_next.push(match step.velocity_mode {
            VelocityMode::SwarmOnly => bi[k],
            VelocityMode::Total => lambda * bi[k] - grad_part,
        });
    }
    let diagnostics = || {
        format!(
            "worker {} round {round}: |w| = {:.3e}, |v| = {:.3e}, |w_global| = {:.3e}",
            worker.id,
            worker.w.norm(),
            worker.v.norm(),
            w_global.norm()
        )
    };
    let w_next = ParamVector::from_vec(w_next).map_err(|_| Error::non_finite(diagnostics()))?;
    let v_next = ParamVector::from_vec(v_next).map_err(|_| Error::non_finite(diagnostics()))?;
    Ok(WorkerState {
        w: w_next,
        v: v_next,
        ..worker.clone()
    })
}

/// Keep `(w, f_new)` as the local best when it strictly improves on it.
/// Returns whether the memory was overwritten.
pub fn update_local_best(worker: &mut WorkerState, f_new: f64) -> bool {
    if f_new < worker.f_best {
        worker.w_best = worker.w.clone();
        worker.f_best = f_new;
        true
    } else {
        false
    }
}

/// Score the current model and update the local best with it.
pub fn score_and_update<O: Objective + ?Sized>(worker: &mut WorkerState, objective: &O) -> Result<bool> {
    let f = objective.score(&worker.w)?;
    Ok(update_local_best(worker, f))
}

/// Federated-averaging local step: restart from the global model and take
/// one SGD step.
pub fn fl_local_step<O: Objective + ?Sized>(
    worker: &WorkerState,
    w_global: &ParamVector,
    step: &StepConfig,
    objective: &O,
    round: usize,
) -> Result<WorkerState> {
    let g = objective.gradient(worker.id, round, w_global, step.mu, w_global)?;
    let mut w = w_global.clone();
    w.axpy(-step.alpha, &g)
        .map_err(|_| Error::non_finite(format!("fl step worker {} round {round}", worker.id)))?;
    Ok(WorkerState { w, ..worker.clone() })
}

/// One federated round over all workers: local steps, aggregation through
/// `aggregate`, and reset of every worker to the new global model.
pub fn fl_round<O, A>(
    workers: &mut [WorkerState],
    w_global: &ParamVector,
    step: &StepConfig,
    objective: &O,
    round: usize,
    aggregate: A,
) -> Result<ParamVector>
where
    O: Objective + ?Sized,
    A: FnOnce(&[WorkerState]) -> Result<ParamVector>,
{
    for wk in workers.iter_mut() {
        *wk = fl_local_step(wk, w_global, step, objective, round)?;
    }
    let next = aggregate(workers)?;
    for wk in workers.iter_mut() {
        wk.w = next.clone();
    }
    Ok(next)
}

/// Plain arithmetic mean of the workers' current models.
pub fn mean_model(workers: &[WorkerState]) -> Result<ParamVector> {
    let first = workers
        .first()
        .ok_or_else(|| Error::Aggregation("no workers to average".into()))?;
    let mut sum = ParamVector::zeros(first.w.len());
    for wk in workers {
        sum.axpy(1.0, &wk.w)?;
    }
    sum.scale(1.0 / workers.len() as f64)
}

/// Classic synchronous particle swarm with a personal best per particle and
/// one swarm best.
#[derive(Clone, Debug)]
pub struct PsoSwarm {
    pub positions: Vec<ParamVector>,
    pub velocities: Vec<ParamVector>,
    pub personal_best: Vec<ParamVector>,
    pub personal_best_f: Vec<f64>,
    pub swarm_best: ParamVector,
    pub swarm_best_f: f64,
}

impl PsoSwarm {
    /// Particles start at rest at `positions`; `swarm_best` is the initial
    /// attractor before any particle has been evaluated.
    pub fn new(positions: Vec<ParamVector>, swarm_best: ParamVector) -> Self {
        let d = swarm_best.len();
        PsoSwarm {
            velocities: vec![ParamVector::zeros(d); positions.len()],
            personal_best: positions.clone(),
            personal_best_f: vec![f64::INFINITY; positions.len()],
            positions,
            swarm_best,
            swarm_best_f: f64::INFINITY,
        }
    }

    /// One synchronous PSO round with coefficient streams keyed like the
    /// hybrid update: `(seed, "pso", particle, round)`.
    #[allow(clippy::too_many_arguments)]
    pub fn pso_round<O: Objective + ?Sized>(
        &mut self,
        inertia: f64,
        c1_max: f64,
        c2_max: f64,
        mode: CoeffMode,
        seed: u64,
        round: usize,
        objective: &O,
    ) -> Result<()> {
        for i in 0..self.positions.len() {
            let d = self.positions[i].len();
            let coeffs = draw_coeffs(&RngStream::keyed(seed, "pso", i, round), c1_max, c2_max, mode, d);
            let x = self.positions[i].as_slice();
            let v = self.velocities[i].as_slice();
            let p = self.personal_best[i].as_slice();
            let g = self.swarm_best.as_slice();
            let v_next: Vec<f64> = (0..x.len())
                .map(|k| {
                    let (c1, c2) = coeffs.at(k);
                    inertia * v[k] + c1 * (p[k] - x[k]) + c2 * (g[k] - x[k])
                })
                .collect();
            let x_next: Vec<f64> = x.iter().zip(&v_next).map(|(a, b)| a + b).collect();
            self.velocities[i] = ParamVector::from_vec(v_next)?;
            self.positions[i] = ParamVector::from_vec(x_next)?;
            let f = objective.local_fitness(i, &self.positions[i])?;
            if f < self.personal_best_f[i] {
                self.personal_best_f[i] = f;
                self.personal_best[i] = self.positions[i].clone();
            }
        }
        let mut best = 0;
        for i in 1..self.positions.len() {
            if self.personal_best_f[i] < self.personal_best_f[best] {
                best = i;
            }
        }
        if !self.positions.is_empty() {
            self.swarm_best = self.personal_best[best].clone();
            self.swarm_best_f = self.personal_best_f[best];
        }
        Ok(())
    }
}

/// Cumulative communication counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub uplink_scalars: u64,
    pub uplink_vectors: u64,
    pub ota_uses: u64,
    pub rejected: u64,
}

/// Server-side view of the swarm.
#[derive(Clone, Debug)]
pub struct SwarmState {
    pub w_global: ParamVector,
    pub round: usize,
    pub selected: Vec<usize>,
    pub counters: Counters,
}

impl SwarmState {
    pub fn new(dim: usize) -> Self {
        SwarmState {
            w_global: ParamVector::zeros(dim),
            round: 0,
            selected: Vec::new(),
            counters: Counters::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec()).unwrap()
    }

    fn rp(lambda: f64, c0: f64) -> RoundParams {
        RoundParams {
            lambda_t: lambda,
            c0_t: c0,
            s_t: 1,
            censor_threshold_t: 0.0,
        }
    }

    const STEP: StepConfig = StepConfig {
        alpha: 0.1,
        mu: 0.0,
        velocity_mode: VelocityMode::SwarmOnly,
    };

    fn sphere(center: &[f64]) -> SphereObjective {
        SphereObjective { center: pv(center) }
    }

    #[test]
    fn hand_computed_swarm_step() {
        let mut wk = WorkerState::new(0, pv(&[1.0, 0.0]), false);
        wk.v = pv(&[0.0, 1.0]);
        wk.w_best = pv(&[2.0, 0.0]);
        let wg = pv(&[0.0, 0.0]);
        let next = dsl_step(&wk, &rp(1.0, 0.5), (1.0, 2.0), &wg, &STEP, &sphere(&[0.0, 0.0]), 0).unwrap();
        assert_eq!(next.v.as_slice(), &[-1.0, 0.5]);
        assert_eq!(next.w.as_slice(), &[0.0, 0.5]);

        // scalar reference, one coordinate at a time
        let scalar = |w: f64, v: f64, p: f64, g: f64| 0.5 * v + 1.0 * (p - w) + 2.0 * (g - w);
        assert_eq!(next.v[0], scalar(1.0, 0.0, 2.0, 0.0));
        assert_eq!(next.v[1], scalar(0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn lambda_zero_is_sgd() {
        let obj = sphere(&[3.0, -1.0]);
        let mut wk = WorkerState::new(0, pv(&[1.0, 2.0]), false);
        wk.v = pv(&[0.3, 0.3]);
        let wg = pv(&[0.5, 0.5]);
        let next = dsl_step(&wk, &rp(0.0, 0.9), (0.7, 0.2), &wg, &STEP, &obj, 0).unwrap();
        let g = obj.gradient(0, 0, &wk.w, 0.0, &wg).unwrap();
        let expect: Vec<f64> = wk.w.iter().zip(g.iter()).map(|(w, g)| w - 0.1 * g).collect();
        assert_eq!(next.w.as_slice(), expect.as_slice());
        // velocity still tracks the swarm displacement
        let bi0 = 0.9 * 0.3 + 0.7 * (1.0 - 1.0) + 0.2 * (0.5 - 1.0);
        assert_eq!(next.v[0], bi0);
    }

    #[test]
    fn pure_inertia() {
        let mut wk = WorkerState::new(0, pv(&[1.0, 2.0]), false);
        wk.v = pv(&[0.25, -0.5]);
        let next = dsl_step(
            &wk,
            &rp(1.0, 1.0),
            (0.0, 0.0),
            &pv(&[9.0, 9.0]),
            &STEP,
            &sphere(&[0.0, 0.0]),
            0,
        )
        .unwrap();
        assert_eq!(next.w.as_slice(), &[1.25, 1.5]);
    }

    #[test]
    fn total_velocity_mode_includes_gradient() {
        let obj = sphere(&[0.0]);
        let wk = WorkerState::new(0, pv(&[1.0]), false);
        let step = StepConfig {
            velocity_mode: VelocityMode::Total,
            ..STEP
        };
        let next = dsl_step(&wk, &rp(0.5, 0.5), (0.0, 0.0), &pv(&[1.0]), &step, &obj, 0).unwrap();
        assert!((next.v[0] - (next.w[0] - wk.w[0])).abs() < 1e-15);
    }

    #[test]
    fn non_finite_step_reports_worker() {
        let wk = WorkerState::new(4, pv(&[f64::MAX]), false);
        let err = dsl_step(
            &wk,
            &rp(1.0, 1.0),
            (1.0, 1.0),
            &pv(&[-f64::MAX]),
            &STEP,
            &sphere(&[0.0]),
            7,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("worker 4") && msg.contains("round 7"), "{msg}");
    }

    #[test]
    fn local_best_rules() {
        let mut wk = WorkerState::new(0, pv(&[1.0]), false);
        assert!(update_local_best(&mut wk, 5.0)); // from +inf
        wk.w = pv(&[2.0]);
        assert!(!update_local_best(&mut wk, 5.0)); // tie keeps old
        assert_eq!(wk.w_best[0], 1.0);
        assert!(update_local_best(&mut wk, 4.0));
        assert_eq!((wk.w_best[0], wk.f_best), (2.0, 4.0));
    }

    #[test]
    fn fl_two_workers_hand_checked() {
        let obj = sphere(&[1.0, 1.0]);
        let mut ws = vec![
            WorkerState::new(0, pv(&[0.0, 0.0]), false),
            WorkerState::new(1, pv(&[5.0, 5.0]), false),
        ];
        let wg = pv(&[2.0, 0.0]);
        let next = fl_round(&mut ws, &wg, &STEP, &obj, 0, mean_model).unwrap();
        // both restart at wg; grad = 2 (wg - c) = (2, -2); w = wg - 0.1 grad
        assert!(next.max_abs_diff(&pv(&[1.8, 0.2])).unwrap() < 1e-15);
        assert!(ws.iter().all(|w| w.w == next));
    }

    #[test]
    fn pso_without_attraction_freezes() {
        let obj = sphere(&[0.0]);
        let mut swarm = PsoSwarm::new(vec![pv(&[1.0])], pv(&[0.0]));
        swarm.velocities[0] = pv(&[1.0]);
        // c1, c2 draws are scaled by tiny maxima so only inertia matters
        for t in 0..200 {
            swarm
                .pso_round(0.5, 1e-300, 1e-300, CoeffMode::Scalar, 1, t, &obj)
                .unwrap();
        }
        assert!(swarm.velocities[0].norm() < 1e-50);
        assert!((swarm.positions[0][0] - 2.0).abs() < 1e-12);
    }
}
