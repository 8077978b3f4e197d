//! Experiment harness: builds tasks, injects faults, runs paired
//! baseline/controlled arms over many seeds, and aggregates the results.
//!
//! Randomness is organized so that experiments are reproducible and arms are
//! comparable:
//!
//! * the dataset and the probe split derive from the master seed alone, so
//!   every seed of an experiment trains on the *same* data;
//! * parameter initialization and batch selection derive from the master
//!   seed plus the seed index, so seeds differ only where they should;
//! * the baseline and controlled arms of one seed share everything — data,
//!   initial parameters, batch schedule, fault — and therefore stay
//!   bit-identical until the first rollback separates them.
//!
//! The fault model is gradient amplification: while active, the raw batch
//! gradient is multiplied by `zeta` before it reaches the optimizer, the
//! same way a corrupted reduction or a bad batch would reach it in a real
//! system.
//!
//! Wall-clock accounting is split into training time (gradient, optimizer,
//! parameter update) and probe time so the controller's overhead can be
//! compared against its cost model. Timing never influences any decision;
//! reruns produce bit-identical records and losses.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, EpsilonSpec, TaskKind};
use crate::controller::{Controller, ControllerConfig, Decision, StepRecord};
use crate::data::{make_blobs, make_char_task, split_probe, BatchStream, Dataset, ProbeSet};
use crate::error::{Error, Result};
use crate::model::{init_params, loss_and_grad, probe_loss, MlpSpec};
use crate::numerics::l2_norm;
use crate::optim::Optimizer;
use crate::rng::RngStream;

/// Fixed stream identities under the master seed. Data and probe selection
/// use the master seed directly (shared across seeds); initialization and
/// batching branch further by seed index.
const STREAM_DATA: u64 = 1;
const STREAM_PROBE: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_BATCH: u64 = 4;

/// Number of fault-free steps measured to calibrate the threshold. The
/// window is long on purpose: it has to sample the converged plateau, not
/// just the tail of the descent, because the plateau's innovation noise is
/// what the threshold must sit above.
pub const CALIBRATION_STEPS: u64 = 150;
/// Unscreened steps run before the calibration window opens. The reference
/// lags the loss by roughly `1/alpha` steps, so during the steep initial
/// descent the innovation carries a large negative trend; measuring too
/// early inflates its spread and yields a threshold far above the noise
/// floor the controller actually has to discriminate against.
pub const CALIBRATION_WARMUP: u64 = 50;
/// Calibrated threshold: this many population standard deviations of the
/// fault-free innovation.
pub const CALIBRATION_SIGMA: f64 = 6.0;

/// A gradient-amplification fault: steps `onset ..= onset + duration - 1`
/// (1-based) see their gradient scaled by `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaultSpec {
    pub onset: u64,
    pub duration: u64,
    pub zeta: f64,
}

impl FaultSpec {
    pub fn from_config(cfg: &Config) -> FaultSpec {
        FaultSpec {
            onset: cfg.fault_onset,
            duration: cfg.fault_duration,
            zeta: cfg.fault_zeta,
        }
    }

    pub fn active(&self, step: u64) -> bool {
        step >= self.onset && step < self.onset + self.duration
    }

    /// First step after the fault window.
    pub fn end(&self) -> u64 {
        self.onset + self.duration
    }
}

/// Scales a gradient in place, the way an upstream corruption would.
pub fn apply_fault(grad: &mut [f64], zeta: f64) {
    for g in grad.iter_mut() {
        *g *= zeta;
    }
}

/// A fully built task: training data, held-out probe set, and model shape.
#[derive(Debug, Clone)]
pub struct Task {
    pub train: Dataset,
    pub probe: ProbeSet,
    pub spec: MlpSpec,
}

/// Builds the task a configuration describes. Depends only on the master
/// seed, never on the per-run seed index: all seeds of an experiment see the
/// same data and the same probe set.
pub fn build_task(cfg: &Config) -> Result<Task> {
    let mut data_rng = RngStream::new(cfg.master_seed, STREAM_DATA);
    let full = match cfg.task {
        TaskKind::Vision => make_blobs(
            &mut data_rng,
            cfg.train_size + cfg.probe_size,
            cfg.dim,
            cfg.classes,
            cfg.separation,
        )?,
        TaskKind::Sequence => make_char_task(&cfg.phrase, cfg.window)?,
    };
    let mut probe_rng = RngStream::new(cfg.master_seed, STREAM_PROBE);
    let (train, probe) = split_probe(&full, cfg.probe_size, &mut probe_rng)?;
    let mut layers = Vec::with_capacity(cfg.hidden.len() + 2);
    layers.push(train.input_dim());
    layers.extend_from_slice(&cfg.hidden);
    layers.push(train.num_classes());
    let spec = MlpSpec::new(layers)?;
    if train.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training examples left after the probe split",
            cfg.batch_size,
            train.len()
        )));
    }
    Ok(Task { train, probe, spec })
}

/// The parameter-initialization stream for one seed of the sweep. Public so
/// external checks (e.g. gradient oracles) can reproduce a run's exact
/// starting point.
pub fn init_stream(cfg: &Config, seed_index: u32) -> RngStream {
    RngStream::new(cfg.master_seed, STREAM_INIT).substream(seed_index as u64)
}

fn batch_stream(cfg: &Config, seed_index: u32) -> RngStream {
    RngStream::new(cfg.master_seed, STREAM_BATCH).substream(seed_index as u64)
}

/// Which arm of the pair a run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// The optimizer applies every update unscreened.
    Baseline,
    /// Every update goes through the controller.
    Controlled,
}

/// What a step looked like, handed to an observer as it happens. Observers
/// are read-only instrumentation: verification auditors and tests use them
/// to shadow a run without the run knowing.
pub struct StepView<'a> {
    pub step: u64,
    /// The gradient the optimizer consumed, after any fault scaling.
    pub grad: &'a [f64],
    /// Parameters after the step's decision.
    pub params: &'a [f64],
    /// Optimizer after the step's decision.
    pub optimizer: &'a Optimizer,
    pub record: &'a StepRecord,
}

type Observer<'a> = &'a mut dyn FnMut(&StepView<'_>);

/// Everything recorded about one run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub seed: u32,
    pub arm: Arm,
    /// One record per step. Baseline records carry NaN probe fields and an
    /// `accept` decision, since the baseline takes every update.
    pub records: Vec<StepRecord>,
    /// Probe loss of the parameters actually held after each step. NaN on
    /// steps the controlled arm did not probe.
    pub loss: Vec<f64>,
    pub rollbacks: u64,
    pub accepts: u64,
    pub probe_evals: u64,
    pub probe_seconds: f64,
    pub train_seconds: f64,
    pub final_params: Vec<f64>,
    /// The controller's last snapshot (controlled arm only).
    pub final_snapshot: Option<FinalSnapshot>,
}

/// The controller's snapshot at the end of a run, ready for storage.
#[derive(Debug, Clone)]
pub struct FinalSnapshot {
    pub params: Vec<f64>,
    pub optimizer_state: Vec<u8>,
    pub y_hat: f64,
    pub step_taken_at: u64,
}

/// Runs one arm of one seed. `fault: None` runs fault-free.
pub fn run_one(
    cfg: &Config,
    task: &Task,
    seed_index: u32,
    epsilon: f64,
    arm: Arm,
    fault: Option<&FaultSpec>,
) -> Result<RunData> {
    run_arm(cfg, task, seed_index, epsilon, arm, fault, None)
}

/// Runs both arms of one seed with optional per-step observers, sharing
/// initialization, batch schedule, and fault.
pub fn run_pair_observed(
    cfg: &Config,
    task: &Task,
    seed_index: u32,
    epsilon: f64,
    fault: Option<&FaultSpec>,
    baseline_observer: Option<Observer<'_>>,
    controlled_observer: Option<Observer<'_>>,
) -> Result<(RunData, RunData)> {
    let baseline = run_arm(
        cfg,
        task,
        seed_index,
        epsilon,
        Arm::Baseline,
        fault,
        baseline_observer,
    )?;
    let controlled = run_arm(
        cfg,
        task,
        seed_index,
        epsilon,
        Arm::Controlled,
        fault,
        controlled_observer,
    )?;
    Ok((baseline, controlled))
}

/// [`run_pair_observed`] without instrumentation.
pub fn run_pair(
    cfg: &Config,
    task: &Task,
    seed_index: u32,
    epsilon: f64,
    fault: Option<&FaultSpec>,
) -> Result<(RunData, RunData)> {
    run_pair_observed(cfg, task, seed_index, epsilon, fault, None, None)
}

fn run_arm(
    cfg: &Config,
    task: &Task,
    seed_index: u32,
    epsilon: f64,
    arm: Arm,
    fault: Option<&FaultSpec>,
    mut observer: Option<Observer<'_>>,
) -> Result<RunData> {
    let params0 = init_params(&task.spec, &mut init_stream(cfg, seed_index));
    let optimizer = Optimizer::new(cfg.optimizer_config(), params0.len())?;
    let batches = BatchStream::new(task.train.len(), cfg.batch_size, batch_stream(cfg, seed_index))?;
    let probe = |p: &[f64]| {
        probe_loss(p, &task.probe, &task.spec)
            .expect("probe set and model spec are validated at task build")
    };

    let mut records = Vec::with_capacity(cfg.steps as usize);
    let mut loss = Vec::with_capacity(cfg.steps as usize);
    let mut train_seconds = 0.0;

    match arm {
        Arm::Controlled => {
            let controller_config = ControllerConfig {
                epsilon,
                alpha: cfg.alpha,
                probe_interval: cfg.probe_interval,
            };
            let mut ctl = Controller::new(params0, optimizer, probe, controller_config)?;
            // Probe loss of the parameters currently held; kept current on
            // accepted steps, untouched on rollbacks (the restored snapshot
            // is the state whose loss was recorded last).
            let mut y_safe = ctl.y_hat();
            for step in 1..=cfg.steps {
                let idx = batches.indices(step);
                let probe_before = ctl.probe_seconds();
                let start = Instant::now();
                let (_, mut grad) = loss_and_grad(ctl.params(), &task.train, &idx, &task.spec)?;
                if let Some(f) = fault {
                    if f.active(step) {
                        apply_fault(&mut grad, f.zeta);
                    }
                }
                let record = ctl.step(&grad)?;
                let elapsed = start.elapsed().as_secs_f64();
                train_seconds += elapsed - (ctl.probe_seconds() - probe_before);
                match record.decision {
                    Decision::Accept => y_safe = record.y_prop,
                    Decision::Rollback => {}
                    Decision::Skipped => {}
                }
                loss.push(if record.decision == Decision::Skipped {
                    f64::NAN
                } else {
                    y_safe
                });
                records.push(record);
                if let Some(obs) = observer.as_mut() {
                    obs(&StepView {
                        step,
                        grad: &grad,
                        params: ctl.params(),
                        optimizer: ctl.optimizer(),
                        record: &record,
                    });
                }
            }
            let supervisor = ctl.supervisor();
            let snap = supervisor.snapshot();
            let final_snapshot = FinalSnapshot {
                params: snap.params.to_vec(),
                optimizer_state: snap.state.serialize_state(),
                y_hat: snap.y_hat,
                step_taken_at: snap.step,
            };
            Ok(RunData {
                seed: seed_index,
                arm,
                loss,
                rollbacks: supervisor.rollback_count(),
                accepts: supervisor.accept_count(),
                probe_evals: ctl.probe_evals(),
                probe_seconds: ctl.probe_seconds(),
                train_seconds,
                final_params: ctl.params().to_vec(),
                final_snapshot: Some(final_snapshot),
                records,
            })
        }
        Arm::Baseline => {
            let mut params = params0;
            let mut opt = optimizer;
            for step in 1..=cfg.steps {
                let idx = batches.indices(step);
                let start = Instant::now();
                let (_, mut grad) = loss_and_grad(&params, &task.train, &idx, &task.spec)?;
                if let Some(f) = fault {
                    if f.active(step) {
                        apply_fault(&mut grad, f.zeta);
                    }
                }
                let delta = opt.propose_update(&params, &grad)?;
                for (p, d) in params.iter_mut().zip(&delta) {
                    *p += d;
                }
                train_seconds += start.elapsed().as_secs_f64();
                // Measurement only: the baseline has no controller, so this
                // probe is not part of any overhead accounting.
                loss.push(probe(&params));
                let record = StepRecord {
                    step,
                    y_prop: f64::NAN,
                    y_hat: f64::NAN,
                    nu: f64::NAN,
                    decision: Decision::Accept,
                    param_l2: l2_norm(&params),
                    probe_ms: 0.0,
                };
                records.push(record);
                if let Some(obs) = observer.as_mut() {
                    obs(&StepView {
                        step,
                        grad: &grad,
                        params: &params,
                        optimizer: &opt,
                        record: &record,
                    });
                }
            }
            Ok(RunData {
                seed: seed_index,
                arm,
                loss,
                rollbacks: 0,
                accepts: cfg.steps,
                probe_evals: 0,
                probe_seconds: 0.0,
                train_seconds,
                final_params: params,
                final_snapshot: None,
                records,
            })
        }
    }
}

/// Threshold calibration: a fault-free shadow pass on seed 0.
///
/// The optimizer runs unscreened for [`CALIBRATION_WARMUP`] steps so the
/// reference settles out of the steep initial descent, then for
/// [`CALIBRATION_STEPS`] more while a shadow reference tracks the probe loss
/// exactly as the controller would on an all-accept trajectory. The
/// threshold is [`CALIBRATION_SIGMA`] standard deviations of the nominal
/// innovations in that window.
///
/// The standard deviation only measures what the window shows it, so the
/// window must sample the loss regime the threshold will police. Measured
/// too early, while the loss still descends steeply, the lagging reference
/// holds the innovation near `-delta / alpha` for a per-step descent rate
/// `delta`, and the deceleration of that drift sweeps a range far wider
/// than the nominal wander; the resulting threshold can be loose enough to
/// accept a faulted step, whose amplified gradient then poisons the
/// snapshotted momentum. The default task configurations level off inside
/// the window, so the measured spread is the plateau wander the controller
/// actually needs to tolerate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CalibrationReport {
    pub epsilon: f64,
    pub nu_mean: f64,
    /// Innovation spread over the window; the threshold is a multiple of it.
    pub nu_std: f64,
    /// Steps the window covered.
    pub steps: u64,
    /// Unmeasured steps run before the window opened.
    pub warmup: u64,
}

pub fn calibrate_epsilon(cfg: &Config, task: &Task) -> Result<CalibrationReport> {
    let total = (CALIBRATION_WARMUP + CALIBRATION_STEPS).min(cfg.steps);
    let measured = CALIBRATION_STEPS.min(total);
    let warmup = total - measured;
    let mut params = init_params(&task.spec, &mut init_stream(cfg, 0));
    let mut opt = Optimizer::new(cfg.optimizer_config(), params.len())?;
    let batches = BatchStream::new(task.train.len(), cfg.batch_size, batch_stream(cfg, 0))?;

    let mut y_hat = probe_loss(&params, &task.probe, &task.spec)?;
    if !y_hat.is_finite() {
        return Err(Error::Init(format!(
            "initial probe loss is not finite ({y_hat}); cannot calibrate"
        )));
    }
    let mut nus = Vec::with_capacity(measured as usize);
    for step in 1..=total {
        let idx = batches.indices(step);
        let (_, grad) = loss_and_grad(&params, &task.train, &idx, &task.spec)?;
        let delta = opt.propose_update(&params, &grad)?;
        for (p, d) in params.iter_mut().zip(&delta) {
            *p += d;
        }
        let y = probe_loss(&params, &task.probe, &task.spec)?;
        if step > warmup {
            nus.push(y - y_hat);
        }
        y_hat = (1.0 - cfg.alpha) * y_hat + cfg.alpha * y;
    }
    let nu_mean = mean(&nus);
    let nu_std = population_std(&nus);
    let epsilon = CALIBRATION_SIGMA * nu_std;
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::Init(format!(
            "calibration produced a degenerate threshold {epsilon} \
             (innovation spread over {measured} fault-free steps was {nu_std})"
        )));
    }
    Ok(CalibrationReport {
        epsilon,
        nu_mean,
        nu_std,
        steps: measured,
        warmup,
    })
}

/// Resolves the configured threshold, calibrating when it is `auto`.
/// Returns the threshold and the calibration report when one was run.
pub fn resolve_epsilon(cfg: &Config, task: &Task) -> Result<(f64, Option<CalibrationReport>)> {
    match cfg.epsilon {
        EpsilonSpec::Fixed(eps) => Ok((eps, None)),
        EpsilonSpec::Auto => {
            let report = calibrate_epsilon(cfg, task)?;
            Ok((report.epsilon, Some(report)))
        }
    }
}

/// Derived per-run metrics, computed from the loss series and the decision
/// records alone so they can be recomputed exactly from the emitted CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u32,
    /// Last probed loss of the run.
    pub final_loss: f64,
    /// Highest probed loss from the fault onset onward (whole run when
    /// fault-free): the spike the run suffered.
    pub peak_loss: f64,
    /// Steps past the end of the fault window until the loss first returns
    /// to within 10% of its pre-fault mean. `None` if it never does.
    pub steps_to_recovery: Option<u64>,
    pub rollbacks: u64,
    pub accepts: u64,
    /// Probe evaluations implied by the records (screened steps plus the
    /// seeding probe); equals the controller's own count on controlled runs.
    pub probe_evals: u64,
}

/// Highest non-NaN loss from the fault onset onward; over the whole series
/// when there is no fault window.
pub fn peak_loss(loss: &[f64], fault: Option<&FaultSpec>) -> f64 {
    let start = match fault {
        Some(f) if f.duration > 0 => (f.onset as usize).saturating_sub(1).min(loss.len()),
        _ => 0,
    };
    loss[start..]
        .iter()
        .copied()
        .filter(|x| !x.is_nan())
        .fold(f64::NAN, f64::max)
}

/// Steps from the end of the fault window until the loss first returns to
/// within 10% of its pre-fault mean (the mean over up to 20 steps before the
/// onset). 1 means the very first post-fault step was already recovered.
pub fn steps_to_recovery(loss: &[f64], fault: &FaultSpec) -> Option<u64> {
    if fault.duration == 0 || fault.onset < 2 {
        return None;
    }
    let fault_end = fault.onset + fault.duration - 1;
    if fault_end >= loss.len() as u64 {
        return None;
    }
    let pre_start = fault.onset.saturating_sub(20).max(1);
    let pre: Vec<f64> = (pre_start..fault.onset)
        .map(|t| loss[(t - 1) as usize])
        .filter(|x| !x.is_nan())
        .collect();
    if pre.is_empty() {
        return None;
    }
    let threshold = 1.1 * mean(&pre);
    for t in fault.end()..=loss.len() as u64 {
        let l = loss[(t - 1) as usize];
        if !l.is_nan() && l <= threshold {
            return Some(t - fault_end);
        }
    }
    None
}

/// Builds the per-run summary from the run's series. Pure function of
/// `(loss, records, fault)`.
pub fn summarize_run(data: &RunData, fault: Option<&FaultSpec>) -> RunSummary {
    let mut rollbacks = 0;
    let mut accepts = 0;
    let mut screened = 0;
    for r in &data.records {
        match r.decision {
            Decision::Accept => {
                accepts += 1;
                screened += 1;
            }
            Decision::Rollback => {
                rollbacks += 1;
                screened += 1;
            }
            Decision::Skipped => {}
        }
    }
    let probe_evals = match data.arm {
        Arm::Controlled => screened + 1,
        Arm::Baseline => 0,
    };
    let final_loss = data
        .loss
        .iter()
        .rev()
        .copied()
        .find(|x| !x.is_nan())
        .unwrap_or(f64::NAN);
    RunSummary {
        seed: data.seed,
        final_loss,
        peak_loss: peak_loss(&data.loss, fault),
        steps_to_recovery: fault.and_then(|f| steps_to_recovery(&data.loss, f)),
        rollbacks,
        accepts,
        probe_evals,
    }
}

/// Population mean. NaN on an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (denominator N). Zero for a single observation.
pub fn population_var(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn population_std(xs: &[f64]) -> f64 {
    population_var(xs).sqrt()
}

/// Per-index mean and population standard deviation across several series
/// of equal length, skipping NaN entries index by index.
pub fn series_mean_std(series: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    if series.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = series[0].len();
    debug_assert!(series.iter().all(|s| s.len() == len));
    let mut means = Vec::with_capacity(len);
    let mut stds = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(series.len());
    for i in 0..len {
        column.clear();
        column.extend(series.iter().map(|s| s[i]).filter(|x| !x.is_nan()));
        if column.is_empty() {
            means.push(f64::NAN);
            stds.push(f64::NAN);
        } else {
            means.push(mean(&column));
            stds.push(population_std(&column));
        }
    }
    (means, stds)
}

/// Aggregates over one arm of an experiment. Unrecovered runs enter the
/// recovery statistics at the cap `steps - fault_end + 1`, one past the
/// largest observable recovery time, so they penalize the mean instead of
/// silently dropping out.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ArmAggregate {
    pub final_loss_mean: f64,
    pub final_loss_var: f64,
    pub peak_loss_mean: f64,
    pub peak_loss_var: f64,
    pub recovery_mean: f64,
    pub recovery_var: f64,
    pub recovered_runs: u32,
    pub total_runs: u32,
    pub rollbacks_mean: f64,
}

/// The capped value substituted for runs that never recover.
pub fn recovery_cap(cfg: &Config) -> u64 {
    let fault_end = cfg.fault_onset + cfg.fault_duration - 1;
    cfg.steps.saturating_sub(fault_end) + 1
}

pub fn aggregate_arm(summaries: &[RunSummary], cap: u64) -> ArmAggregate {
    let finals: Vec<f64> = summaries.iter().map(|s| s.final_loss).collect();
    let peaks: Vec<f64> = summaries.iter().map(|s| s.peak_loss).collect();
    let recoveries: Vec<f64> = summaries
        .iter()
        .map(|s| s.steps_to_recovery.unwrap_or(cap) as f64)
        .collect();
    let rollbacks: Vec<f64> = summaries.iter().map(|s| s.rollbacks as f64).collect();
    ArmAggregate {
        final_loss_mean: mean(&finals),
        final_loss_var: population_var(&finals),
        peak_loss_mean: mean(&peaks),
        peak_loss_var: population_var(&peaks),
        recovery_mean: mean(&recoveries),
        recovery_var: population_var(&recoveries),
        recovered_runs: summaries
            .iter()
            .filter(|s| s.steps_to_recovery.is_some())
            .count() as u32,
        total_runs: summaries.len() as u32,
        rollbacks_mean: mean(&rollbacks),
    }
}

/// One seed's pair of runs.
#[derive(Debug, Clone)]
pub struct RunPair {
    pub seed: u32,
    pub baseline: RunData,
    pub controlled: RunData,
}

/// A complete experiment: every seed, both arms, plus aggregates.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub epsilon: f64,
    pub calibration: Option<CalibrationReport>,
    pub fault: FaultSpec,
    pub pairs: Vec<RunPair>,
    pub baseline_summaries: Vec<RunSummary>,
    pub controlled_summaries: Vec<RunSummary>,
    pub baseline_agg: ArmAggregate,
    pub controlled_agg: ArmAggregate,
    /// Mean baseline peak over mean controlled peak: how much larger the
    /// uncontrolled spike is.
    pub peak_separation: f64,
}

/// Runs the full experiment the configuration describes: resolves the
/// threshold, runs every seed's baseline/controlled pair (in parallel when
/// `jobs` allows), and aggregates. Results are bit-identical for any `jobs`
/// value: seeds never share mutable state and are aggregated in seed order.
pub fn run_experiment(cfg: &Config, jobs: Option<usize>) -> Result<ExperimentResult> {
    let task = build_task(cfg)?;
    let (epsilon, calibration) = resolve_epsilon(cfg, &task)?;
    let fault = FaultSpec::from_config(cfg);

    let run_seed = |seed: &u32| -> Result<RunPair> {
        let (baseline, controlled) = run_pair(cfg, &task, *seed, epsilon, Some(&fault))
            .map_err(|e| Error::for_seed(*seed, e))?;
        Ok(RunPair {
            seed: *seed,
            baseline,
            controlled,
        })
    };

    let seeds: Vec<u32> = (0..cfg.seeds).collect();
    let pairs: Result<Vec<RunPair>> = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Init(format!("cannot build thread pool: {e}")))?
            .install(|| seeds.par_iter().map(run_seed).collect()),
        None => seeds.par_iter().map(run_seed).collect(),
    };
    let pairs = pairs?;

    let baseline_summaries: Vec<RunSummary> = pairs
        .iter()
        .map(|p| summarize_run(&p.baseline, Some(&fault)))
        .collect();
    let controlled_summaries: Vec<RunSummary> = pairs
        .iter()
        .map(|p| summarize_run(&p.controlled, Some(&fault)))
        .collect();
    let cap = recovery_cap(cfg);
    let baseline_agg = aggregate_arm(&baseline_summaries, cap);
    let controlled_agg = aggregate_arm(&controlled_summaries, cap);
    let peak_separation = baseline_agg.peak_loss_mean / controlled_agg.peak_loss_mean;

    Ok(ExperimentResult {
        epsilon,
        calibration,
        fault,
        pairs,
        baseline_summaries,
        controlled_summaries,
        baseline_agg,
        controlled_agg,
        peak_separation,
    })
}

/// How many probed steps before fault onset define the nominal noise floor,
/// and the separation a detectable fault must clear against it.
///
/// The lookback deliberately stops short of early training: while the loss is
/// still falling fast the smoothed reference trails it by roughly one
/// smoothing time-constant, so those innovations measure lag, not noise.
/// Runs should hold at least this many pre-fault steps so the floor is read
/// from settled behavior.
pub const ADMISSIBILITY_LOOKBACK: u64 = 30;

/// Separation ratio above which the fault signal counts as admissible.
pub const ADMISSIBILITY_BAR: f64 = 5.0;

/// Admissibility of the innovation signal on one controlled run: the margin
/// between fault-window innovations and nominal noise, plus the probe count
/// the records imply.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AdmissibilityReport {
    /// Largest |innovation| over the [`ADMISSIBILITY_LOOKBACK`] probed steps
    /// before fault onset (all probed steps when there is no fault window).
    pub nominal_max_abs_nu: f64,
    /// Largest innovation over probed steps inside the fault window; `None`
    /// when the run had no fault window.
    pub fault_max_nu: Option<f64>,
    /// `fault_max_nu / nominal_max_abs_nu`.
    pub separation_ratio: Option<f64>,
    /// Whether the ratio clears [`ADMISSIBILITY_BAR`]; `None` without a
    /// fault window.
    pub admissible: Option<bool>,
    pub probe_evals: u64,
    pub expected_probe_evals: u64,
}

pub fn admissibility_report(
    data: &RunData,
    fault: Option<&FaultSpec>,
    probe_interval: u64,
) -> AdmissibilityReport {
    // A zero-duration window is no fault at all.
    let fault = fault.filter(|f| f.duration > 0);
    // Nominal window: the lookback stretch just before onset, clamped to the
    // start of the run when onset comes early. Without a fault spec every
    // probed step is nominal.
    let nominal_range = fault.map(|f| (f.onset.saturating_sub(ADMISSIBILITY_LOOKBACK).max(1), f.onset));
    let mut nominal: f64 = f64::NAN;
    let mut in_fault: f64 = f64::NAN;
    let mut any_fault_step = false;
    for r in &data.records {
        if r.decision == Decision::Skipped {
            continue;
        }
        let faulted = fault.map(|f| f.active(r.step)).unwrap_or(false);
        if faulted {
            any_fault_step = true;
            if !r.nu.is_nan() {
                in_fault = in_fault.max(r.nu);
            }
        } else if nominal_range.is_none_or(|(lo, hi)| r.step >= lo && r.step < hi) && !r.nu.is_nan()
        {
            nominal = nominal.max(r.nu.abs());
        }
    }
    let steps = data.records.len() as u64;
    let expected = steps.div_ceil(probe_interval) + 1;
    let fault_max_nu = if any_fault_step { Some(in_fault) } else { None };
    let separation_ratio = fault_max_nu.map(|m| m / nominal);
    AdmissibilityReport {
        nominal_max_abs_nu: nominal,
        fault_max_nu,
        separation_ratio,
        admissible: separation_ratio.map(|r| r > ADMISSIBILITY_BAR),
        probe_evals: data.probe_evals,
        expected_probe_evals: expected,
    }
}

/// The controller's nominal cost model: probing costs `probe_size` forward
/// passes against a training step's roughly `3 * batch_size`
/// forward-equivalents (one forward plus a backward that costs about two).
pub fn overhead_ratio(probe_size: usize, batch_size: usize) -> f64 {
    probe_size as f64 / (3.0 * batch_size as f64)
}

/// Measured probe cost per unit of training cost.
pub fn measured_overhead(probe_seconds: f64, train_seconds: f64) -> f64 {
    probe_seconds / train_seconds
}
