//! Independent verification of the controller's guarantees.
//!
//! Everything in this module re-derives a property from first principles
//! instead of trusting the code that is supposed to enforce it:
//!
//! * the analytic gradient is compared against central finite differences,
//! * the acceptance bound is re-checked row by row from the decision log,
//! * the reference dynamics (EWMA on accept, frozen on reject) are replayed
//!   bitwise from the log,
//! * the safety envelope is checked against the realized loss trajectory,
//! * rollbacks are audited by an observer that keeps its own copy of the
//!   last accepted state and compares bits after every restore,
//! * the baseline and controlled arms are compared step by step up to the
//!   first rollback, where — and only where — they may diverge.
//!
//! Floating-point comparisons that re-evaluate arithmetic the controller
//! already performed are exact (bit equality); comparisons against *derived*
//! bounds allow a relative slack of [`INVARIANT_SLACK_REL`], enough for the
//! bound's own rounding and nothing else.

use rayon::prelude::*;

use crate::config::Config;
use crate::controller::{innovation, Decision, StepRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::{
    self, build_task, resolve_epsilon, run_pair_observed, FaultSpec, StepView, Task,
};
use crate::model::{batch_loss, init_params, loss_and_grad, MlpSpec};
use crate::optim::Optimizer;

/// Relative slack for checks against derived bounds.
pub const INVARIANT_SLACK_REL: f64 = 1e-12;

/// Step size for the finite-difference gradient check.
pub const GRAD_CHECK_H: f64 = 1e-5;
/// Largest tolerated relative error between analytic and numeric gradients.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

fn slack_for(bound: f64) -> f64 {
    INVARIANT_SLACK_REL * bound.abs().max(1.0)
}

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// All checks for one seed.
#[derive(Debug, Clone)]
pub struct InvariantReport {
    pub seed: u32,
    pub checks: Vec<CheckResult>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Relative error between two values against a floor of 1e-6, so near-zero
/// coordinates do not produce meaningless ratios.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares the analytic batch gradient against central finite differences,
/// coordinate by coordinate.
pub fn grad_check(
    params: &[f64],
    data: &Dataset,
    idx: &[usize],
    spec: &MlpSpec,
    h: f64,
) -> Result<CheckResult> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::Parameter(format!("step size must be positive, got {h}")));
    }
    let (_, grad) = loss_and_grad(params, data, idx, spec)?;
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let original = work[i];
        work[i] = original + h;
        let plus = batch_loss(&work, data, idx, spec)?;
        work[i] = original - h;
        let minus = batch_loss(&work, data, idx, spec)?;
        work[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(rel_err(grad[i], numeric));
    }
    Ok(CheckResult {
        name: "gradient-check",
        passed: worst < GRAD_CHECK_TOL,
        detail: format!(
            "max relative error {worst:.3e} over {} coordinates (h = {h:.0e})",
            params.len()
        ),
    })
}

/// Every record's innovation must equal `innovation(y_prop, y_hat)` bit for
/// bit — the log is self-consistent.
pub fn check_innovation_definition(records: &[StepRecord]) -> CheckResult {
    let mut checked = 0;
    for r in records {
        if r.decision == Decision::Skipped {
            continue;
        }
        checked += 1;
        let expect = innovation(r.y_prop, r.y_hat);
        let same = expect.to_bits() == r.nu.to_bits() || (expect.is_nan() && r.nu.is_nan());
        if !same {
            return CheckResult {
                name: "innovation-definition",
                passed: false,
                detail: format!(
                    "step {}: recorded nu = {}, y_prop - y_hat = {expect}",
                    r.step, r.nu
                ),
            };
        }
    }
    CheckResult {
        name: "innovation-definition",
        passed: true,
        detail: format!("{checked} probed steps consistent"),
    }
}

/// Every accepted step satisfies `y_prop <= y_hat + epsilon` up to slack:
/// no update worse than the threshold ever got through.
pub fn check_bounded_deviation(records: &[StepRecord], epsilon: f64) -> CheckResult {
    let mut accepted = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    for r in records {
        if r.decision != Decision::Accept {
            continue;
        }
        accepted += 1;
        let bound = r.y_hat + epsilon;
        let margin = r.y_prop - bound;
        worst_margin = worst_margin.max(margin);
        let within = margin <= slack_for(bound); // NaN margins fail closed
        if !within {
            return CheckResult {
                name: "bounded-deviation",
                passed: false,
                detail: format!(
                    "step {}: accepted y_prop = {} exceeds y_hat + epsilon = {bound}",
                    r.step, r.y_prop
                ),
            };
        }
    }
    CheckResult {
        name: "bounded-deviation",
        passed: true,
        detail: format!("{accepted} accepted steps within bound (worst margin {worst_margin:.3e})"),
    }
}

/// Replays the reference dynamics bitwise: `y_hat` follows the EWMA after
/// every accept and stays frozen through rollbacks and skipped steps.
pub fn check_reference_dynamics(records: &[StepRecord], alpha: f64) -> CheckResult {
    let Some(first) = records.first() else {
        return CheckResult {
            name: "reference-dynamics",
            passed: true,
            detail: "no steps".to_string(),
        };
    };
    let mut expected = first.y_hat;
    for r in records {
        if r.y_hat.to_bits() != expected.to_bits() {
            return CheckResult {
                name: "reference-dynamics",
                passed: false,
                detail: format!(
                    "step {}: reference drifted to {} (expected {expected}); \
                     a rejection or skip must leave it frozen",
                    r.step, r.y_hat
                ),
            };
        }
        if r.decision == Decision::Accept {
            // Same expression, same order as the controller.
            expected = (1.0 - alpha) * expected + alpha * r.y_prop;
        }
    }
    CheckResult {
        name: "reference-dynamics",
        passed: true,
        detail: format!("{} records replayed bitwise", records.len()),
    }
}

/// The realized probe loss never exceeds `y0 + t * epsilon`: each step can
/// cost at most one threshold's worth of regression.
pub fn check_safety_envelope(loss: &[f64], y0: f64, epsilon: f64) -> CheckResult {
    let mut checked = 0;
    for (i, &l) in loss.iter().enumerate() {
        if l.is_nan() {
            continue;
        }
        checked += 1;
        let t = (i + 1) as f64;
        let bound = y0 + t * epsilon;
        let within = l <= bound + slack_for(bound); // NaN bounds fail closed
        if !within {
            return CheckResult {
                name: "safety-envelope",
                passed: false,
                detail: format!("step {}: loss {} exceeds envelope {bound}", i + 1, l),
            };
        }
    }
    CheckResult {
        name: "safety-envelope",
        passed: true,
        detail: format!("{checked} probed losses inside the envelope"),
    }
}

/// The two arms of a pair must hold bit-identical parameters on every step
/// before the controlled arm's first rollback; nothing but a rollback is
/// allowed to separate them.
pub fn check_paired_prefix(
    baseline: &[Vec<u64>],
    controlled: &[Vec<u64>],
    first_rollback: Option<u64>,
) -> CheckResult {
    if baseline.len() != controlled.len() {
        return CheckResult {
            name: "paired-prefix",
            passed: false,
            detail: format!(
                "arms recorded {} and {} steps",
                baseline.len(),
                controlled.len()
            ),
        };
    }
    let prefix = match first_rollback {
        Some(step) => (step - 1) as usize,
        None => baseline.len(),
    };
    for t in 0..prefix {
        if baseline[t] != controlled[t] {
            return CheckResult {
                name: "paired-prefix",
                passed: false,
                detail: format!(
                    "arms diverged at step {} before any rollback",
                    t + 1
                ),
            };
        }
    }
    CheckResult {
        name: "paired-prefix",
        passed: true,
        detail: match first_rollback {
            Some(step) => format!("{prefix} shared steps before the rollback at step {step}"),
            None => format!("all {prefix} steps shared (no rollback)"),
        },
    }
}

/// Observer that audits rollbacks against its own copy of the last accepted
/// state. It shadows the snapshot discipline from outside: accepted steps
/// overwrite the shadow, skipped steps leave it alone, and a rollback must
/// land exactly on it — parameters and serialized optimizer state both.
pub struct RecoveryAuditor {
    shadow_params: Vec<u64>,
    shadow_state: Vec<u8>,
    rollbacks_checked: u64,
    first_mismatch: Option<u64>,
}

impl RecoveryAuditor {
    /// The shadow starts at the initial state, which is also the
    /// controller's first snapshot.
    pub fn new(params0: &[f64], optimizer0: &Optimizer) -> Self {
        RecoveryAuditor {
            shadow_params: params0.iter().map(|p| p.to_bits()).collect(),
            shadow_state: optimizer0.serialize_state(),
            rollbacks_checked: 0,
            first_mismatch: None,
        }
    }

    pub fn observe(&mut self, view: &StepView<'_>) {
        match view.record.decision {
            Decision::Accept => {
                self.shadow_params.clear();
                self.shadow_params.extend(view.params.iter().map(|p| p.to_bits()));
                self.shadow_state = view.optimizer.serialize_state();
            }
            Decision::Skipped => {}
            Decision::Rollback => {
                self.rollbacks_checked += 1;
                let params_match = view.params.len() == self.shadow_params.len()
                    && view
                        .params
                        .iter()
                        .zip(&self.shadow_params)
                        .all(|(p, s)| p.to_bits() == *s);
                let state_match = view.optimizer.serialize_state() == self.shadow_state;
                if !(params_match && state_match) && self.first_mismatch.is_none() {
                    self.first_mismatch = Some(view.step);
                }
            }
        }
    }

    pub fn rollbacks_checked(&self) -> u64 {
        self.rollbacks_checked
    }

    pub fn result(self) -> CheckResult {
        match self.first_mismatch {
            Some(step) => CheckResult {
                name: "one-step-recovery",
                passed: false,
                detail: format!(
                    "rollback at step {step} did not restore the last accepted state bit-exactly"
                ),
            },
            None => CheckResult {
                name: "one-step-recovery",
                passed: true,
                detail: format!(
                    "{} rollbacks restored bit-exactly",
                    self.rollbacks_checked
                ),
            },
        }
    }
}

fn param_bits(params: &[f64]) -> Vec<u64> {
    params.iter().map(|p| p.to_bits()).collect()
}

/// Re-runs one seed's pair under full instrumentation and checks every
/// invariant.
pub fn verify_run(
    cfg: &Config,
    task: &Task,
    seed: u32,
    epsilon: f64,
    fault: Option<&FaultSpec>,
) -> Result<InvariantReport> {
    // Reconstruct the run's initial state for the auditor's first shadow;
    // the derivation is pure, so this matches what the run itself uses.
    let params0 = init_params(&task.spec, &mut harness::init_stream(cfg, seed));
    let optimizer0 = Optimizer::new(cfg.optimizer_config(), params0.len())?;
    let mut auditor = RecoveryAuditor::new(&params0, &optimizer0);

    let mut baseline_trace: Vec<Vec<u64>> = Vec::with_capacity(cfg.steps as usize);
    let mut controlled_trace: Vec<Vec<u64>> = Vec::with_capacity(cfg.steps as usize);
    let mut baseline_obs = |v: &StepView<'_>| baseline_trace.push(param_bits(v.params));
    let mut controlled_obs = |v: &StepView<'_>| {
        auditor.observe(v);
        controlled_trace.push(param_bits(v.params));
    };
    let (_, controlled) = run_pair_observed(
        cfg,
        task,
        seed,
        epsilon,
        fault,
        Some(&mut baseline_obs),
        Some(&mut controlled_obs),
    )?;

    let first_rollback = controlled
        .records
        .iter()
        .find(|r| r.decision == Decision::Rollback)
        .map(|r| r.step);
    let y0 = controlled.records.first().map(|r| r.y_hat).unwrap_or(0.0);

    let checks = vec![
        check_innovation_definition(&controlled.records),
        check_bounded_deviation(&controlled.records, epsilon),
        check_reference_dynamics(&controlled.records, cfg.alpha),
        check_safety_envelope(&controlled.loss, y0, epsilon),
        auditor.result(),
        check_paired_prefix(&baseline_trace, &controlled_trace, first_rollback),
    ];
    Ok(InvariantReport { seed, checks })
}

/// Everything `verify` produces: the per-seed invariant reports plus the
/// one-off gradient check.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub epsilon: f64,
    pub grad: CheckResult,
    pub reports: Vec<InvariantReport>,
    pub passed: bool,
}

/// Builds the task, resolves the threshold, and verifies every seed of the
/// configured experiment.
pub fn verify_experiment(cfg: &Config, jobs: Option<usize>) -> Result<VerifyOutcome> {
    let task = build_task(cfg)?;
    let (epsilon, _) = resolve_epsilon(cfg, &task)?;
    let fault = FaultSpec::from_config(cfg);

    let params0 = init_params(&task.spec, &mut harness::init_stream(cfg, 0));
    let idx: Vec<usize> = (0..task.train.len().min(8)).collect();
    let grad = grad_check(&params0, &task.train, &idx, &task.spec, GRAD_CHECK_H)?;

    let verify_seed = |seed: &u32| -> Result<InvariantReport> {
        verify_run(cfg, &task, *seed, epsilon, Some(&fault))
            .map_err(|e| Error::for_seed(*seed, e))
    };
    let seeds: Vec<u32> = (0..cfg.seeds).collect();
    let reports: Result<Vec<InvariantReport>> = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Init(format!("cannot build thread pool: {e}")))?
            .install(|| seeds.par_iter().map(verify_seed).collect()),
        None => seeds.par_iter().map(verify_seed).collect(),
    };
    let reports = reports?;
    let passed = grad.passed && reports.iter().all(|r| r.all_passed());
    Ok(VerifyOutcome {
        epsilon,
        grad,
        reports,
        passed,
    })
}
