//! The round loop wiring every module together.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::channel::{ota_aggregate, realize, sample_gains};
use crate::data::{gen_synthetic, merge_global_train, partition_noniid, read_csv, weight_divergence, Dataset};
use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, ExperimentConfig};
use crate::harness::metrics::{MetricsWriter, RoundMetrics};
use crate::model::{self, sample_batch, Batch, ModelSpec};
use crate::optimizer::{
    dsl_step, fl_local_step, init_model, update_local_best, Counters, Objective, StepConfig, SwarmState, WorkerState,
};
use crate::param::ParamVector;
use crate::rng::{draw_coeffs, RngStream};
use crate::robustness::{apply_attack, inject_failures, screen_aggregate, Verdict};
use crate::schedule::{eval_schedule, RoundParams};
use crate::selection::{censor_report, next_best, select_workers, ScoreReport};

/// Test-set view of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// An [`Objective`] that can also report held-out metrics.
pub trait Problem: Objective {
    fn evaluate(&self, w: &ParamVector) -> Result<Evaluation>;
}

impl Problem for crate::optimizer::SphereObjective {
    fn evaluate(&self, w: &ParamVector) -> Result<Evaluation> {
        Ok(Evaluation {
            accuracy: f64::NAN,
            loss: self.score(w)?,
        })
    }
}

/// Classification objective over partitioned data.
#[derive(Clone, Debug)]
pub struct DataObjective {
    pub spec: ModelSpec,
    /// Effective training set per worker.
    pub train: Vec<Dataset>,
    /// Local shards without the shared training part.
    pub locals: Vec<Dataset>,
    pub global_train: Dataset,
    pub score: Dataset,
    pub test: Dataset,
    pub batch_size: usize,
    pub seed: u64,
}

impl DataObjective {
    /// Generate (or load), split and partition the data described by `cfg`.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let seed = cfg.seed;
        let mut ds = match &cfg.data.csv_path {
            Some(path) => read_csv(path)?,
            None => gen_synthetic(
                cfg.data.n_samples,
                cfg.data.d_in,
                cfg.data.classes,
                cfg.data.sep,
                &RngStream::new(seed, "data"),
            )?,
        };
        if cfg.data.standardize {
            ds.standardize();
        }
        let (test, rest) = ds.split_off(cfg.data.test_fraction, &RngStream::new(seed, "test_split"));
        let part = partition_noniid(&rest, &cfg.partition_spec(), &RngStream::new(seed, "partition"))?;
        if part.global.score_part.is_empty() {
            return Err(Error::config(
                "data.global_fraction",
                "scoring part of the global dataset is empty",
            ));
        }
        let train = if cfg.data.global_sharing {
            part.locals
                .iter()
                .map(|l| merge_global_train(l, &part.global))
                .collect::<Result<Vec<_>>>()?
        } else {
            part.locals.clone()
        };
        let spec = cfg.model_spec(ds.dim(), ds.classes());
        spec.validate()?;
        Ok(DataObjective {
            spec,
            train,
            locals: part.locals,
            global_train: part.global.train_part,
            score: part.global.score_part,
            test,
            batch_size: cfg.data.batch_size,
            seed,
        })
    }

    /// Minibatch indices worker `worker` uses in round `round`.
    pub fn batch_indices(&self, worker: usize, round: usize) -> Vec<usize> {
        sample_batch(
            self.train[worker].len(),
            self.batch_size,
            &RngStream::keyed(self.seed, "batch", worker, round),
        )
    }
}

impl Objective for DataObjective {
    fn dim(&self) -> usize {
        self.spec.param_dim()
    }

    fn gradient(
        &self,
        worker: usize,
        round: usize,
        w: &ParamVector,
        mu: f64,
        anchor: &ParamVector,
    ) -> Result<ParamVector> {
        let idx = self.batch_indices(worker, round);
        let batch = Batch::new(&self.train[worker], &idx)?;
        model::grad(&self.spec, w, batch, mu, Some(anchor))
            .map_err(|e| Error::non_finite(format!("worker {worker} round {round}: {e}")))
    }

    fn score(&self, w: &ParamVector) -> Result<f64> {
        model::cross_entropy(&self.spec, w, Batch::full(&self.score))
    }

    fn local_fitness(&self, worker: usize, w: &ParamVector) -> Result<f64> {
        model::cross_entropy(&self.spec, w, Batch::full(&self.train[worker]))
    }
}

impl Problem for DataObjective {
    fn evaluate(&self, w: &ParamVector) -> Result<Evaluation> {
        Ok(Evaluation {
            accuracy: model::accuracy(&self.spec, w, &self.test)?,
            loss: model::cross_entropy(&self.spec, w, Batch::full(&self.test))?,
        })
    }
}

/// Outcome of the aggregation phase of one round.
#[derive(Clone, Debug, Default)]
struct Aggregation {
    accepted: Option<(ParamVector, usize)>,
    deviations: Vec<f64>,
}

/// One experiment in progress.
pub struct Simulation<P: Problem> {
    config: ExperimentConfig,
    problem: P,
    workers: Vec<WorkerState>,
    swarm: SwarmState,
    failed: BTreeSet<usize>,
    tau: Option<f64>,
    /// Record aggregate deviations even with screening off.
    measure: bool,
    deviations: Vec<f64>,
}

impl Simulation<DataObjective> {
    /// Build the data problem from `config`. If screening is enabled without
    /// a tolerance, it is calibrated from an attack-free pilot first. The
    /// FL baseline never screens, so it skips the pilot.
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let problem = DataObjective::from_config(&config)?;
        let mut sim = Simulation::with_problem(config, problem)?;
        if sim.config.screening.enabled && sim.tau.is_none() && sim.config.algorithm != Algorithm::Fl {
            sim.tau = Some(calibrate_tau(&sim.config, sim.problem.clone())?);
        }
        Ok(sim)
    }
}

/// Number of pilot rounds used to measure the honest aggregate deviation.
pub const PILOT_ROUNDS: usize = 5;
/// Calibrated tolerance is this multiple of the largest pilot deviation.
pub const TAU_MULTIPLIER: f64 = 3.0;

/// Three times the largest honest deviation between the aggregate's score
/// and the mean reported score over the first rounds of an attack-free run.
pub fn calibrate_tau<P: Problem>(config: &ExperimentConfig, problem: P) -> Result<f64> {
    let mut pilot = config.clone();
    pilot.attacks = Default::default();
    pilot.screening.enabled = false;
    pilot.screening.tau = None;
    let mut sim = Simulation::with_problem(pilot, problem)?;
    sim.record_deviations();
    for _ in 0..PILOT_ROUNDS.min(config.rounds) {
        sim.step()?;
    }
    let max = sim.deviations.iter().copied().fold(f64::NAN, f64::max);
    if max.is_nan() {
        return Err(Error::config(
            "screening.tau",
            "pilot produced no aggregate to calibrate against; set tau explicitly",
        ));
    }
    Ok(TAU_MULTIPLIER * max)
}

impl<P: Problem> Simulation<P> {
    /// Set up workers for an arbitrary problem. The data sections of the
    /// config are ignored.
    pub fn with_problem(config: ExperimentConfig, problem: P) -> Result<Self> {
        let config = config.normalized();
        config.schedules.validate(config.num_workers)?;
        config.channel.validate()?;
        config.censoring.validate()?;
        config.attacks.validate(config.num_workers)?;
        config.screening.validate()?;
        config.failures.validate()?;
        let seed = config.seed;
        let dim = problem.dim();
        let attackers = config
            .attacks
            .attacker_ids(config.num_workers, &RngStream::new(seed, "attackers"));
        let workers = (0..config.num_workers)
            .map(|i| {
                let w = init_model(dim, config.schedules.init_scale, &RngStream::keyed(seed, "init", i, 0));
                WorkerState::new(i, w, attackers.contains(&i))
            })
            .collect();
        let failed = config
            .failures
            .failed_nodes(config.num_workers, &RngStream::new(seed, "node_failures"));
        let tau = config.screening.tau;
        Ok(Simulation {
            config,
            problem,
            workers,
            swarm: SwarmState::new(dim),
            failed,
            tau,
            measure: false,
            deviations: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    /// Mutable access for tests that set up special initial states.
    pub fn workers_mut(&mut self) -> &mut [WorkerState] {
        &mut self.workers
    }

    pub fn global_model(&self) -> &ParamVector {
        &self.swarm.w_global
    }

    pub fn round(&self) -> usize {
        self.swarm.round
    }

    pub fn counters(&self) -> Counters {
        self.swarm.counters
    }

    pub fn selected(&self) -> &[usize] {
        &self.swarm.selected
    }

    pub fn failed_nodes(&self) -> &BTreeSet<usize> {
        &self.failed
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn is_finished(&self) -> bool {
        self.swarm.round >= self.config.rounds
    }

    fn record_deviations(&mut self) {
        self.deviations.clear();
        self.measure = true;
    }

    fn live(&self) -> Vec<usize> {
        (0..self.workers.len()).filter(|i| !self.failed.contains(i)).collect()
    }

    fn step_config(&self) -> StepConfig {
        StepConfig {
            alpha: self.config.schedules.alpha,
            mu: self.config.schedules.mu,
            velocity_mode: self.config.schedules.velocity_mode,
        }
    }

    fn stream(&self, label: &str, worker: usize, round: usize) -> RngStream {
        RngStream::keyed(self.config.seed, label, worker, round)
    }

    /// Run one round and return its metrics.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let t = self.swarm.round;
        let mut rp = eval_schedule(&self.config.schedules, &self.config.censoring, t)?;
        let locals_before_reset;
        let s_eff = match self.config.algorithm {
            Algorithm::Dsl => {
                self.swarm_round(&rp, false)?;
                locals_before_reset = None;
                self.aggregate_selected(&rp)?
            }
            Algorithm::Pso => {
                rp.lambda_t = 1.0;
                rp.s_t = 1;
                self.swarm_round(&rp, true)?;
                locals_before_reset = None;
                self.aggregate_selected(&rp)?
            }
            Algorithm::Fl => {
                let (s_eff, locals) = self.fl_round()?;
                locals_before_reset = Some(locals);
                s_eff
            }
        };
        self.swarm.round += 1;
        self.metrics(t, s_eff, locals_before_reset)
    }

    /// Local updates and local-best bookkeeping for every live worker.
    fn swarm_round(&mut self, rp: &RoundParams, local_fitness: bool) -> Result<()> {
        let t = self.swarm.round;
        let live = self.live();
        let step = self.step_config();
        let (c1_max, c2_max) = (self.config.schedules.c1_max, self.config.schedules.c2_max);
        let mode = self.config.schedules.coefficients;
        let seed = self.config.seed;
        let wg = &self.swarm.w_global;
        let problem = &self.problem;
        let updated: Vec<WorkerState> = live
            .par_iter()
            .map(|&i| {
                let wk = &self.workers[i];
                let coeffs = draw_coeffs(&RngStream::keyed(seed, "pso", i, t), c1_max, c2_max, mode, wg.len());
                let mut next = dsl_step(wk, rp, coeffs, wg, &step, problem, t)?;
                let f = if local_fitness {
                    problem.local_fitness(i, &next.w)?
                } else {
                    problem.score(&next.w)?
                };
                update_local_best(&mut next, f);
                Ok(next)
            })
            .collect::<Result<_>>()?;
        for next in updated {
            let id = next.id;
            self.workers[id] = next;
        }
        Ok(())
    }

    /// Reports, selection, failures, attacks, over-the-air aggregation and
    /// screening with reselection. Returns the number of contributors to
    /// the accepted aggregate (0 when the global model carried over).
    fn aggregate_selected(&mut self, rp: &RoundParams) -> Result<usize> {
        let t = self.swarm.round;
        let live = self.live();
        if live.is_empty() {
            self.swarm.selected.clear();
            return Ok(0);
        }

        // what each live worker would transmit, and its report
        let mut transmit: BTreeMap<usize, ParamVector> = BTreeMap::new();
        let mut reports: Vec<ScoreReport> = Vec::with_capacity(live.len());
        for &i in &live {
            let (w_tx, f_tx) = if self.workers[i].is_byzantine {
                apply_attack(
                    &self.config.attacks,
                    &self.workers[i].w_best,
                    self.workers[i].f_best,
                    &self.stream("attack", i, t),
                )?
            } else {
                (self.workers[i].w_best.clone(), self.workers[i].f_best)
            };
            let report = censor_report(&mut self.workers[i], f_tx, rp.censor_threshold_t);
            if report.fresh {
                self.swarm.counters.uplink_scalars += 1;
            }
            reports.push(report);
            transmit.insert(i, w_tx);
        }
        let reported: BTreeMap<usize, f64> = reports.iter().map(|r| (r.worker, r.reported_f)).collect();

        let mut candidates = select_workers(&reports, rp.s_t)?;
        self.swarm.selected = candidates.clone();
        let screening = self.config.screening.enabled && self.tau.is_some();
        let measuring = self.measure;
        let attempts = if screening {
            1 + self.config.screening.max_retries
        } else {
            1
        };
        let mut excluded: BTreeSet<usize> = BTreeSet::new();
        let mut outcome = Aggregation::default();

        for attempt in 0..attempts {
            let survivors = inject_failures(
                &candidates,
                &self.failed,
                &self.config.failures,
                &self.stream("link", attempt, t),
            );
            if survivors.is_empty() {
                break;
            }
            let gains = sample_gains(&self.config.channel, &survivors, &self.stream("gain", 0, t));
            let realization = realize(&self.config.channel, &survivors, &gains);
            let contributions: Vec<(&ParamVector, _)> =
                realization.iter().map(|r| (&transmit[&r.worker], *r)).collect();
            let included: Vec<usize> = realization.iter().filter(|r| r.included).map(|r| r.worker).collect();
            if included.is_empty() {
                break;
            }
            self.swarm.counters.ota_uses += 1;
            self.swarm.counters.uplink_vectors += included.len() as u64;
            let (candidate, s_eff) = ota_aggregate(
                &contributions,
                self.config.channel.effective_noise_var(),
                &self.stream("noise", attempt, t),
            )?;

            if screening || measuring {
                let scores: Vec<f64> = included.iter().map(|i| reported[i]).collect();
                let tau = self.tau.unwrap_or(f64::INFINITY);
                let check = screen_aggregate(&candidate, &scores, &self.problem, tau)?;
                outcome.deviations.push(check.deviation);
                if screening && check.verdict == Verdict::Reject {
                    self.swarm.counters.rejected += 1;
                    excluded.extend(candidates.iter().copied());
                    candidates = next_best(&reports, &excluded, rp.s_t);
                    if candidates.is_empty() {
                        break;
                    }
                    continue;
                }
            }
            outcome.accepted = Some((candidate, s_eff));
            break;
        }

        self.deviations.extend(outcome.deviations);
        match outcome.accepted {
            Some((w, s_eff)) => {
                self.swarm.w_global = w;
                Ok(s_eff)
            }
            None => Ok(0),
        }
    }

    /// Federated averaging: every live worker restarts from the global
    /// model, takes one SGD step, and the server averages what arrives.
    fn fl_round(&mut self) -> Result<(usize, Vec<ParamVector>)> {
        let t = self.swarm.round;
        let live = self.live();
        let step = self.step_config();
        let wg = self.swarm.w_global.clone();
        let problem = &self.problem;
        let updated: Vec<WorkerState> = live
            .par_iter()
            .map(|&i| {
                let mut next = fl_local_step(&self.workers[i], &wg, &step, problem, t)?;
                let f = problem.score(&next.w)?;
                update_local_best(&mut next, f);
                Ok(next)
            })
            .collect::<Result<_>>()?;
        for next in updated {
            let id = next.id;
            self.workers[id] = next;
        }
        let locals: Vec<ParamVector> = live.iter().map(|&i| self.workers[i].w.clone()).collect();
        self.swarm.selected = live.clone();

        let survivors = inject_failures(&live, &self.failed, &self.config.failures, &self.stream("link", 0, t));
        let mut s_eff = 0;
        if !survivors.is_empty() {
            let mut transmit = BTreeMap::new();
            for &i in &survivors {
                let wk = &self.workers[i];
                let w_tx = if wk.is_byzantine {
                    apply_attack(&self.config.attacks, &wk.w, wk.f_best, &self.stream("attack", i, t))?.0
                } else {
                    wk.w.clone()
                };
                transmit.insert(i, w_tx);
            }
            let gains = sample_gains(&self.config.channel, &survivors, &self.stream("gain", 0, t));
            let realization = realize(&self.config.channel, &survivors, &gains);
            let contributions: Vec<(&ParamVector, _)> =
                realization.iter().map(|r| (&transmit[&r.worker], *r)).collect();
            let included = realization.iter().filter(|r| r.included).count();
            if included > 0 {
                self.swarm.counters.ota_uses += 1;
                self.swarm.counters.uplink_vectors += included as u64;
                let (w, s) = ota_aggregate(
                    &contributions,
                    self.config.channel.effective_noise_var(),
                    &self.stream("noise", 0, t),
                )?;
                self.swarm.w_global = w;
                s_eff = s;
            }
        }
        for &i in &live {
            self.workers[i].w = self.swarm.w_global.clone();
        }
        Ok((s_eff, locals))
    }

    fn metrics(&self, t: usize, s_eff: usize, locals: Option<Vec<ParamVector>>) -> Result<RoundMetrics> {
        let wg = &self.swarm.w_global;
        let eval = self.problem.evaluate(wg)?;
        let score = self.problem.score(wg)?;
        let live = self.live();
        let fbest: Vec<f64> = live.iter().map(|&i| self.workers[i].f_best).collect();
        let mean_fbest = if fbest.is_empty() {
            f64::NAN
        } else {
            fbest.iter().sum::<f64>() / fbest.len() as f64
        };
        let models = locals.unwrap_or_else(|| live.iter().map(|&i| self.workers[i].w.clone()).collect());
        let div = weight_divergence(&models, wg)?;
        let c = self.swarm.counters;
        Ok(RoundMetrics {
            round: t,
            algo: self.config.algorithm.as_str(),
            seed: self.config.seed,
            test_accuracy: eval.accuracy,
            test_loss: eval.loss,
            global_score_loss: score,
            mean_local_f_best: mean_fbest,
            weight_divergence: div.value,
            uplink_scalars: c.uplink_scalars,
            uplink_vectors: c.uplink_vectors,
            ota_uses: c.ota_uses,
            s_effective: s_eff,
            rejected: c.rejected,
        })
    }

    /// Run the remaining rounds, handing each record to `sink` as soon as
    /// it exists.
    pub fn run_with<F>(&mut self, mut sink: F) -> Result<Vec<RoundMetrics>>
    where
        F: FnMut(&RoundMetrics) -> Result<()>,
    {
        let mut out = Vec::with_capacity(self.config.rounds);
        while !self.is_finished() {
            let m = self.step()?;
            sink(&m)?;
            out.push(m);
        }
        Ok(out)
    }
}

/// Run a data experiment to completion and return its metrics.
pub fn run(config: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    Simulation::from_config(config.clone())?.run_with(|_| Ok(()))
}

/// File names used inside a run's output directory.
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Run and persist: metrics CSV flushed per round plus a manifest echoing
/// the resolved config. On a mid-run failure the rows written so far stay
/// on disk and the error is returned.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<Vec<RoundMetrics>> {
    fs::create_dir_all(dir)?;
    let mut sim = Simulation::from_config(config.clone())?;
    let manifest = json!({
        "seed": sim.config().seed,
        "algorithm": sim.config().algorithm.as_str(),
        "screening_tau": sim.tau(),
        "param_dim": sim.problem().dim(),
        "config": sim.config(),
    });
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    sim.run_with(|m| writer.write(m))
}
