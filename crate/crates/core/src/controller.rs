//! The stability controller: innovation screening plus bit-exact rollback.
//!
//! The controller sits between the optimizer and the parameter vector. Each
//! step the optimizer proposes an update; the controller evaluates the probe
//! loss of the *proposed* parameters, forms the innovation
//!
//! ```text
//! nu = y_proposed - y_hat
//! ```
//!
//! against a smoothed reference `y_hat`, and either accepts the step
//! (`nu <= epsilon`) or rejects it. Acceptance commits the proposal, advances
//! the snapshot to the new `(params, optimizer)` pair, and folds the probe
//! value into the reference, `y_hat <- (1 - alpha) * y_hat + alpha * y_prop`.
//! Rejection restores parameters *and* optimizer state bit for bit from the
//! snapshot and leaves `y_hat` frozen, so a transient fault cannot drag the
//! reference upward and mask itself.
//!
//! Non-finite probe values (NaN or infinite) are treated as an infinite
//! innovation and always rejected; divergence is just a very large fault.
//!
//! The logic is split in two layers:
//!
//! * [`Supervisor`] is the decision core, generic over an opaque cloneable
//!   optimizer state `S`. It owns the accepted parameters, the reference,
//!   the snapshot, and the decision log. Everything it does is driven by
//!   values handed to it — it never computes a loss or a gradient itself.
//! * [`Controller`] binds a `Supervisor<Optimizer>` to a probe function and
//!   an optimizer, turning "here is a gradient" into a full
//!   propose/probe/decide step, and accounting for probe cost as it goes.
//!
//! The C interface wraps `Supervisor<Vec<u8>>` directly, which is why the
//! split exists.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::{axpy, l2_norm};
use crate::optim::{self, Optimizer};

/// Innovation of a proposed probe value against the reference: how much
/// worse the proposal is than recent accepted history. Non-finite proposals
/// map to `+inf` so they can never be accepted.
pub fn innovation(y_prop: f64, y_hat: f64) -> f64 {
    if !y_prop.is_finite() {
        return f64::INFINITY;
    }
    y_prop - y_hat
}

/// What the controller did with a proposed update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// The proposal was screened and committed.
    Accept,
    /// The proposal was screened and discarded; state was restored from the
    /// snapshot.
    Rollback,
    /// The step fell between probes and was committed unscreened.
    Skipped,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Decision::Accept => "accept",
            Decision::Rollback => "rollback",
            Decision::Skipped => "skipped",
        };
        f.write_str(s)
    }
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accept" => Ok(Decision::Accept),
            "rollback" => Ok(Decision::Rollback),
            "skipped" => Ok(Decision::Skipped),
            other => Err(Error::Format(format!("unknown decision {other:?}"))),
        }
    }
}

/// The acceptance rule. A tie (`nu == epsilon`) accepts: the threshold is
/// the largest tolerated regression, not the smallest rejected one.
pub fn decide(nu: f64, epsilon: f64) -> Decision {
    if nu <= epsilon {
        Decision::Accept
    } else {
        Decision::Rollback
    }
}

/// Controller policy knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Acceptance threshold on the innovation. Must be positive: a zero
    /// threshold rejects every neutral step and stalls on noise.
    pub epsilon: f64,
    /// EWMA coefficient for the reference update. `1.0` tracks the last
    /// accepted probe exactly; small values smooth harder. Must be in
    /// `(0, 1]` — zero would freeze the reference forever.
    pub alpha: f64,
    /// Probe every `probe_interval`-th step (1 = every step). The first
    /// step is always probed so no update lands unscreened at startup.
    pub probe_interval: u64,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Parameter(format!(
                "epsilon must be a positive finite number, got {}",
                self.epsilon
            )));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha > 1.0 {
            return Err(Error::Parameter(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.probe_interval == 0 {
            return Err(Error::Parameter("probe_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the decision log.
///
/// `y_hat` is the reference the innovation was measured against, i.e. the
/// value *before* any EWMA update this step, so `nu == innovation(y_prop,
/// y_hat)` holds row by row. `param_l2` is the norm of the parameters after
/// the decision — the trajectory actually followed. Skipped steps carry NaN
/// in `y_prop` and `nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub y_prop: f64,
    pub y_hat: f64,
    pub nu: f64,
    pub decision: Decision,
    pub param_l2: f64,
    pub probe_ms: f64,
}

/// Borrowed view of the current snapshot.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotRef<'a, S> {
    pub params: &'a [f64],
    pub state: &'a S,
    pub y_hat: f64,
    /// The step whose acceptance produced this snapshot (0 = initial state).
    pub step: u64,
}

#[derive(Debug, Clone)]
struct Snapshot<S> {
    params: Vec<f64>,
    state: S,
    y_hat: f64,
    step: u64,
}

/// The decision core. Generic over the optimizer state `S`, which it only
/// ever clones and swaps — rollback is a clone of buffers captured at the
/// last accepted step, which is what makes recovery bit-exact.
#[derive(Debug, Clone)]
pub struct Supervisor<S: Clone> {
    params: Vec<f64>,
    state: S,
    y_hat: f64,
    snapshot: Snapshot<S>,
    config: ControllerConfig,
    step: u64,
    accept_count: u64,
    rollback_count: u64,
    records: Vec<StepRecord>,
}

impl<S: Clone> Supervisor<S> {
    /// Starts supervision at `(params0, state0)` with initial probe value
    /// `y0`. The initial pair becomes the first snapshot.
    pub fn new(params0: Vec<f64>, state0: S, y0: f64, config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        if params0.is_empty() {
            return Err(Error::Init("parameter vector is empty".into()));
        }
        if !y0.is_finite() {
            return Err(Error::Init(format!(
                "initial probe value must be finite, got {y0}"
            )));
        }
        let snapshot = Snapshot {
            params: params0.clone(),
            state: state0.clone(),
            y_hat: y0,
            step: 0,
        };
        Ok(Supervisor {
            params: params0,
            state: state0,
            y_hat: y0,
            snapshot,
            config,
            step: 0,
            accept_count: 0,
            rollback_count: 0,
            records: Vec::new(),
        })
    }

    /// Screens one proposed update. `y_prop` is the probe value of
    /// `proposed_params`; `proposed_state` is the optimizer state after it
    /// produced the proposal. Returns the record it appended to the log.
    pub fn submit(
        &mut self,
        proposed_params: Vec<f64>,
        proposed_state: S,
        y_prop: f64,
        probe_ms: f64,
    ) -> Result<StepRecord> {
        if proposed_params.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "proposal has {} parameters, supervisor tracks {}",
                proposed_params.len(),
                self.params.len()
            )));
        }
        self.step += 1;
        let reference = self.y_hat;
        let nu = innovation(y_prop, reference);
        let decision = decide(nu, self.config.epsilon);
        match decision {
            Decision::Accept => {
                self.params = proposed_params;
                self.state = proposed_state;
                self.y_hat = (1.0 - self.config.alpha) * self.y_hat + self.config.alpha * y_prop;
                self.snapshot = Snapshot {
                    params: self.params.clone(),
                    state: self.state.clone(),
                    y_hat: self.y_hat,
                    step: self.step,
                };
                self.accept_count += 1;
            }
            Decision::Rollback => {
                // Restore both halves of the training state from the
                // snapshot; y_hat stays frozen so the reference cannot be
                // dragged toward the fault.
                self.params = self.snapshot.params.clone();
                self.state = self.snapshot.state.clone();
                self.rollback_count += 1;
            }
            Decision::Skipped => unreachable!("decide never returns Skipped"),
        }
        let record = StepRecord {
            step: self.step,
            y_prop,
            y_hat: reference,
            nu,
            decision,
            param_l2: l2_norm(&self.params),
            probe_ms,
        };
        self.records.push(record);
        Ok(record)
    }

    /// Commits an update without screening it, for steps that fall between
    /// probes. Neither the reference nor the snapshot moves: the next probed
    /// step is judged — and can be rolled back — against the last *screened*
    /// state.
    pub fn advance_unprobed(&mut self, proposed_params: Vec<f64>, proposed_state: S) -> Result<StepRecord> {
        if proposed_params.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "proposal has {} parameters, supervisor tracks {}",
                proposed_params.len(),
                self.params.len()
            )));
        }
        self.step += 1;
        self.params = proposed_params;
        self.state = proposed_state;
        let record = StepRecord {
            step: self.step,
            y_prop: f64::NAN,
            y_hat: self.y_hat,
            nu: f64::NAN,
            decision: Decision::Skipped,
            param_l2: l2_norm(&self.params),
            probe_ms: 0.0,
        };
        self.records.push(record);
        Ok(record)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn y_hat(&self) -> f64 {
        self.y_hat
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    /// Steps screened or skipped so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn accept_count(&self) -> u64 {
        self.accept_count
    }

    pub fn rollback_count(&self) -> u64 {
        self.rollback_count
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn snapshot(&self) -> SnapshotRef<'_, S> {
        SnapshotRef {
            params: &self.snapshot.params,
            state: &self.snapshot.state,
            y_hat: self.snapshot.y_hat,
            step: self.snapshot.step,
        }
    }

    /// Writes the decision log as CSV. Floats go through `{}` formatting,
    /// which round-trips `f64` exactly (including NaN for skipped steps), so
    /// the log supports bit-level offline checks.
    pub fn write_decision_log<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,y_prop,y_hat,nu,decision,param_l2,probe_ms")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step, r.y_prop, r.y_hat, r.nu, r.decision, r.param_l2, r.probe_ms
            )?;
        }
        Ok(())
    }

    /// Test hook: mutable access to the snapshot buffers, so verification
    /// tests can corrupt a snapshot and prove the recovery audit actually
    /// compares bits.
    #[cfg(test)]
    pub(crate) fn snapshot_buffers_mut(&mut self) -> (&mut Vec<f64>, &mut S) {
        (&mut self.snapshot.params, &mut self.snapshot.state)
    }
}

/// A supervisor bound to a concrete optimizer and a probe function: the
/// full training-loop-facing interface. `probe` must be a pure function of
/// the parameters — it is evaluated on proposed (possibly garbage)
/// parameters and its value decides acceptance.
pub struct Controller<F: Fn(&[f64]) -> f64> {
    supervisor: Supervisor<Optimizer>,
    probe: F,
    probe_evals: u64,
    probe_seconds: f64,
}

impl<F: Fn(&[f64]) -> f64> Controller<F> {
    /// Probes `params0` once to seed the reference, then starts supervising.
    pub fn new(
        params0: Vec<f64>,
        optimizer: Optimizer,
        probe: F,
        config: ControllerConfig,
    ) -> Result<Self> {
        if optimizer.dim() != params0.len() {
            return Err(Error::Dimension(format!(
                "optimizer is sized for {} parameters, got {}",
                optimizer.dim(),
                params0.len()
            )));
        }
        let start = Instant::now();
        let y0 = probe(&params0);
        let seconds = start.elapsed().as_secs_f64();
        let supervisor = Supervisor::new(params0, optimizer, y0, config)?;
        Ok(Controller {
            supervisor,
            probe,
            probe_evals: 1,
            probe_seconds: seconds,
        })
    }

    /// Runs one full controlled step from a gradient: propose, probe (on
    /// probe steps), decide. Returns the appended log record.
    pub fn step(&mut self, grad: &[f64]) -> Result<StepRecord> {
        let mut optimizer = self.supervisor.state().clone();
        let delta = optimizer.propose_update(self.supervisor.params(), grad)?;
        let proposed = axpy(1.0, &delta, self.supervisor.params())?;
        // Probe steps are 1, 1+k, 1+2k, ... so the first update is screened.
        let probed = self
            .supervisor
            .step_count()
            .is_multiple_of(self.supervisor.config().probe_interval);
        if probed {
            let start = Instant::now();
            let y_prop = (self.probe)(&proposed);
            let seconds = start.elapsed().as_secs_f64();
            self.probe_evals += 1;
            self.probe_seconds += seconds;
            self.supervisor.submit(proposed, optimizer, y_prop, seconds * 1e3)
        } else {
            self.supervisor.advance_unprobed(proposed, optimizer)
        }
    }

    pub fn supervisor(&self) -> &Supervisor<Optimizer> {
        &self.supervisor
    }

    pub fn params(&self) -> &[f64] {
        self.supervisor.params()
    }

    pub fn optimizer(&self) -> &Optimizer {
        self.supervisor.state()
    }

    pub fn y_hat(&self) -> f64 {
        self.supervisor.y_hat()
    }

    pub fn rollback_count(&self) -> u64 {
        self.supervisor.rollback_count()
    }

    /// Probe evaluations so far, including the seeding probe at
    /// construction.
    pub fn probe_evals(&self) -> u64 {
        self.probe_evals
    }

    /// Wall-clock seconds spent inside the probe function.
    pub fn probe_seconds(&self) -> f64 {
        self.probe_seconds
    }

    #[cfg(test)]
    pub(crate) fn supervisor_mut(&mut self) -> &mut Supervisor<Optimizer> {
        &mut self.supervisor
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"SNAP";
const SNAPSHOT_VERSION: u8 = 1;

/// A snapshot decoded from its on-disk form.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub params: Vec<f64>,
    /// Serialized optimizer state, as produced by
    /// [`Optimizer::serialize_state`].
    pub optimizer_state: Vec<u8>,
    pub y_hat: f64,
    pub step_taken_at: u64,
}

/// Encodes a snapshot for storage:
///
/// ```text
/// "SNAP" | version: u8 | optimizer state blob | params: f64 LE .. |
/// y_hat: f64 LE | step: u64 LE
/// ```
///
/// The optimizer blob carries its own length in its header, so the
/// parameter count is recovered from what remains.
pub fn encode_snapshot(
    params: &[f64],
    optimizer_state: &[u8],
    y_hat: f64,
    step_taken_at: u64,
) -> Result<Vec<u8>> {
    // Reject blobs we could not decode again.
    let blob_len = optim::state_blob_len(optimizer_state)?;
    if blob_len != optimizer_state.len() {
        return Err(Error::Format(format!(
            "optimizer state blob has trailing bytes: {} past its {blob_len}-byte payload",
            optimizer_state.len() - blob_len
        )));
    }
    let mut out = Vec::with_capacity(5 + optimizer_state.len() + params.len() * 8 + 16);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.push(SNAPSHOT_VERSION);
    out.extend_from_slice(optimizer_state);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&y_hat.to_le_bytes());
    out.extend_from_slice(&step_taken_at.to_le_bytes());
    Ok(out)
}

/// Decodes bytes written by [`encode_snapshot`].
pub fn decode_snapshot(bytes: &[u8]) -> Result<SnapshotFile> {
    if bytes.len() < 5 {
        return Err(Error::Format(format!(
            "snapshot too short: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(Error::Format("snapshot has wrong magic".into()));
    }
    if bytes[4] != SNAPSHOT_VERSION {
        return Err(Error::Format(format!(
            "unsupported snapshot version {}",
            bytes[4]
        )));
    }
    let rest = &bytes[5..];
    let blob_len = optim::state_blob_len(rest)?;
    let optimizer_state = rest[..blob_len].to_vec();
    let tail = &rest[blob_len..];
    if tail.len() < 16 || !(tail.len() - 16).is_multiple_of(8) {
        return Err(Error::Format(format!(
            "snapshot parameter section has invalid length {}",
            tail.len()
        )));
    }
    let n_params = (tail.len() - 16) / 8;
    let mut params = Vec::with_capacity(n_params);
    for i in 0..n_params {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&tail[i * 8..i * 8 + 8]);
        params.push(f64::from_le_bytes(raw));
    }
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&tail[n_params * 8..n_params * 8 + 8]);
    let y_hat = f64::from_le_bytes(raw);
    raw.copy_from_slice(&tail[n_params * 8 + 8..]);
    let step_taken_at = u64::from_le_bytes(raw);
    Ok(SnapshotFile {
        params,
        optimizer_state,
        y_hat,
        step_taken_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerConfig;

    fn config(epsilon: f64) -> ControllerConfig {
        ControllerConfig {
            epsilon,
            alpha: 0.25,
            probe_interval: 1,
        }
    }

    fn sgd(dim: usize) -> Optimizer {
        Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: 0.9 }, dim).unwrap()
    }

    #[test]
    fn innovation_is_a_plain_difference_when_finite() {
        assert_eq!(innovation(1.5, 1.0), 0.5);
        assert_eq!(innovation(0.25, 1.0), -0.75);
    }

    #[test]
    fn non_finite_probe_values_are_infinitely_bad() {
        assert_eq!(innovation(f64::NAN, 1.0), f64::INFINITY);
        assert_eq!(innovation(f64::INFINITY, 1.0), f64::INFINITY);
        assert_eq!(innovation(f64::NEG_INFINITY, 1.0), f64::INFINITY);
    }

    #[test]
    fn decide_accepts_up_to_and_including_the_threshold() {
        assert_eq!(decide(0.09, 0.1), Decision::Accept);
        assert_eq!(decide(0.1, 0.1), Decision::Accept);
        assert_eq!(decide(0.1 + 1e-12, 0.1), Decision::Rollback);
        assert_eq!(decide(f64::INFINITY, 0.1), Decision::Rollback);
        assert_eq!(decide(-5.0, 0.1), Decision::Accept);
    }

    #[test]
    fn config_is_validated() {
        assert!(config(0.0).validate().is_err());
        assert!(config(-1.0).validate().is_err());
        assert!(config(f64::NAN).validate().is_err());
        let mut c = config(0.1);
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        c.alpha = 1.0;
        assert!(c.validate().is_ok());
        c.alpha = 1.5;
        assert!(c.validate().is_err());
        c.alpha = 0.5;
        c.probe_interval = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn supervisor_rejects_bad_initial_state() {
        assert!(Supervisor::new(vec![], (), 1.0, config(0.1)).is_err());
        assert!(Supervisor::new(vec![1.0], (), f64::NAN, config(0.1)).is_err());
        assert!(Supervisor::new(vec![1.0], (), f64::INFINITY, config(0.1)).is_err());
    }

    #[test]
    fn accept_commits_and_updates_the_reference() {
        let mut sup = Supervisor::new(vec![0.0, 0.0], 7u32, 1.0, config(0.5)).unwrap();
        let rec = sup.submit(vec![0.5, 0.5], 8u32, 1.2, 0.0).unwrap();
        assert_eq!(rec.decision, Decision::Accept);
        assert_eq!(rec.y_hat, 1.0, "record carries the pre-update reference");
        assert_eq!(rec.nu.to_bits(), (1.2f64 - 1.0).to_bits());
        assert_eq!(sup.params(), &[0.5, 0.5]);
        assert_eq!(*sup.state(), 8);
        // y_hat <- 0.75 * 1.0 + 0.25 * 1.2, written exactly as computed.
        assert_eq!(sup.y_hat().to_bits(), (0.75 * 1.0 + 0.25 * 1.2f64).to_bits());
        assert_eq!(sup.snapshot().step, 1);
        assert_eq!(sup.snapshot().params, &[0.5, 0.5]);
        assert_eq!(sup.accept_count(), 1);
        assert_eq!(sup.rollback_count(), 0);
    }

    #[test]
    fn rollback_restores_bit_exact_state_and_freezes_the_reference() {
        let mut sup = Supervisor::new(vec![0.1, -0.2], vec![1u8, 2, 3], 1.0, config(0.5)).unwrap();
        sup.submit(vec![0.2, -0.1], vec![4, 5, 6], 1.1, 0.0).unwrap();
        let params_before: Vec<u64> = sup.params().iter().map(|p| p.to_bits()).collect();
        let state_before = sup.state().clone();
        let y_hat_before = sup.y_hat().to_bits();

        let rec = sup.submit(vec![9.0, 9.0], vec![7, 8, 9], 50.0, 0.0).unwrap();
        assert_eq!(rec.decision, Decision::Rollback);
        let params_after: Vec<u64> = sup.params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(params_after, params_before);
        assert_eq!(*sup.state(), state_before);
        assert_eq!(sup.y_hat().to_bits(), y_hat_before);
        assert_eq!(sup.rollback_count(), 1);
        // The snapshot still points at the last accepted step.
        assert_eq!(sup.snapshot().step, 1);
    }

    #[test]
    fn a_tie_with_epsilon_accepts() {
        let mut sup = Supervisor::new(vec![0.0], (), 1.0, config(0.5)).unwrap();
        let rec = sup.submit(vec![1.0], (), 1.5, 0.0).unwrap();
        assert_eq!(rec.decision, Decision::Accept);
        assert_eq!(rec.nu, 0.5);
    }

    #[test]
    fn nan_probe_value_forces_rollback() {
        let mut sup = Supervisor::new(vec![0.0], (), 1.0, config(1e9)).unwrap();
        let rec = sup.submit(vec![1.0], (), f64::NAN, 0.0).unwrap();
        assert_eq!(rec.decision, Decision::Rollback);
        assert_eq!(rec.nu, f64::INFINITY);
        assert_eq!(sup.params(), &[0.0]);
    }

    #[test]
    fn skipped_steps_move_params_but_not_the_reference_or_snapshot() {
        let mut sup = Supervisor::new(vec![0.0], (), 1.0, config(0.5)).unwrap();
        sup.submit(vec![1.0], (), 1.1, 0.0).unwrap();
        let y_hat = sup.y_hat().to_bits();
        let rec = sup.advance_unprobed(vec![2.0], ()).unwrap();
        assert_eq!(rec.decision, Decision::Skipped);
        assert!(rec.y_prop.is_nan());
        assert!(rec.nu.is_nan());
        assert_eq!(sup.params(), &[2.0]);
        assert_eq!(sup.y_hat().to_bits(), y_hat);
        assert_eq!(sup.snapshot().step, 1);
        assert_eq!(sup.snapshot().params, &[1.0]);
        assert_eq!(sup.step_count(), 2);
    }

    #[test]
    fn rollback_after_skipped_steps_returns_to_the_screened_state() {
        let mut sup = Supervisor::new(vec![0.0], (), 1.0, config(0.5)).unwrap();
        sup.submit(vec![1.0], (), 1.1, 0.0).unwrap();
        sup.advance_unprobed(vec![2.0], ()).unwrap();
        sup.advance_unprobed(vec![3.0], ()).unwrap();
        let rec = sup.submit(vec![100.0], (), 99.0, 0.0).unwrap();
        assert_eq!(rec.decision, Decision::Rollback);
        // Not back to 3.0 — back to the last *screened* params.
        assert_eq!(sup.params(), &[1.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut sup = Supervisor::new(vec![0.0, 0.0], (), 1.0, config(0.5)).unwrap();
        assert!(matches!(
            sup.submit(vec![1.0], (), 1.0, 0.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            sup.advance_unprobed(vec![1.0, 2.0, 3.0], ()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn records_recompute_their_own_innovation() {
        let mut sup = Supervisor::new(vec![0.0], (), 1.0, config(0.05)).unwrap();
        for (params, y) in [(0.1, 1.01), (0.2, 1.2), (0.3, 0.99), (0.4, f64::NAN)] {
            sup.submit(vec![params], (), y, 0.0).unwrap();
        }
        for rec in sup.records() {
            assert_eq!(
                rec.nu.to_bits(),
                innovation(rec.y_prop, rec.y_hat).to_bits(),
                "step {}",
                rec.step
            );
        }
    }

    #[test]
    fn controller_descends_a_quadratic_and_rejects_a_poisoned_step() {
        // Probe = squared norm; its gradient is 2 * params. Descending from
        // (1, 1) with a small learning rate every step improves the probe,
        // so everything is accepted until a poisoned gradient arrives.
        let probe = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.05, momentum: 0.0 }, 2).unwrap();
        let mut ctl = Controller::new(
            vec![1.0, 1.0],
            opt,
            probe,
            ControllerConfig {
                epsilon: 0.01,
                alpha: 0.25,
                probe_interval: 1,
            },
        )
        .unwrap();
        assert_eq!(ctl.probe_evals(), 1);

        for _ in 0..10 {
            let grad: Vec<f64> = ctl.params().iter().map(|p| 2.0 * p).collect();
            let rec = ctl.step(&grad).unwrap();
            assert_eq!(rec.decision, Decision::Accept);
        }
        let before: Vec<u64> = ctl.params().iter().map(|p| p.to_bits()).collect();
        let opt_before = ctl.optimizer().serialize_state();

        let rec = ctl.step(&[1e6, -1e6]).unwrap();
        assert_eq!(rec.decision, Decision::Rollback);
        let after: Vec<u64> = ctl.params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(after, before);
        assert_eq!(ctl.optimizer().serialize_state(), opt_before);
        assert_eq!(ctl.rollback_count(), 1);
        assert_eq!(ctl.probe_evals(), 12);
    }

    #[test]
    fn probe_interval_screens_on_the_expected_cadence() {
        let probe = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.01, momentum: 0.0 }, 1).unwrap();
        let mut ctl = Controller::new(
            vec![1.0],
            opt,
            probe,
            ControllerConfig {
                epsilon: 0.5,
                alpha: 0.5,
                probe_interval: 3,
            },
        )
        .unwrap();
        let mut pattern = Vec::new();
        for _ in 0..7 {
            let grad = vec![2.0 * ctl.params()[0]];
            pattern.push(ctl.step(&grad).unwrap().decision);
        }
        use Decision::*;
        assert_eq!(
            pattern,
            vec![Accept, Skipped, Skipped, Accept, Skipped, Skipped, Accept]
        );
        // ceil(7 / 3) probed steps plus the seeding probe.
        assert_eq!(ctl.probe_evals(), 3 + 1);
    }

    #[test]
    fn controller_rejects_mismatched_optimizer() {
        let probe = |_: &[f64]| 0.0;
        let opt = sgd(3);
        assert!(Controller::new(vec![1.0, 2.0], opt, probe, config(0.1)).is_err());
    }

    #[test]
    fn controller_rejects_non_finite_initial_probe() {
        let probe = |_: &[f64]| f64::NAN;
        let opt = sgd(2);
        assert!(matches!(
            Controller::new(vec![1.0, 2.0], opt, probe, config(0.1)),
            Err(Error::Init(_))
        ));
    }

    #[test]
    fn decision_log_round_trips_through_csv() {
        let mut sup = Supervisor::new(vec![0.0], (), 1.0, config(0.05)).unwrap();
        sup.submit(vec![0.1], (), 1.01, 0.125).unwrap();
        sup.submit(vec![0.2], (), 7.5, 0.25).unwrap();
        sup.advance_unprobed(vec![0.3], ()).unwrap();
        let mut buf = Vec::new();
        sup.write_decision_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,y_prop,y_hat,nu,decision,param_l2,probe_ms"
        );
        for (line, rec) in lines.zip(sup.records()) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 7);
            assert_eq!(fields[0].parse::<u64>().unwrap(), rec.step);
            let y_prop: f64 = fields[1].parse().unwrap();
            assert_eq!(y_prop.to_bits(), rec.y_prop.to_bits());
            let nu: f64 = fields[3].parse().unwrap();
            assert_eq!(nu.to_bits(), rec.nu.to_bits());
            assert_eq!(fields[4].parse::<Decision>().unwrap(), rec.decision);
        }
    }

    #[test]
    fn snapshot_encoding_round_trips_bit_exactly() {
        let mut opt = sgd(3);
        opt.propose_update(&[1.0, 2.0, 3.0], &[0.1, -0.2, 0.3]).unwrap();
        let blob = opt.serialize_state();
        // An off-by-one-ulp value: round-tripping must preserve it exactly.
        let params = vec![0.5, -0.25, f64::from_bits(1.0f64.to_bits() + 1)];
        let bytes = encode_snapshot(&params, &blob, 1.375, 42).unwrap();
        let decoded = decode_snapshot(&bytes).unwrap();
        assert_eq!(decoded.optimizer_state, blob);
        assert_eq!(decoded.y_hat.to_bits(), 1.375f64.to_bits());
        assert_eq!(decoded.step_taken_at, 42);
        let bits: Vec<u64> = decoded.params.iter().map(|p| p.to_bits()).collect();
        let expect: Vec<u64> = params.iter().map(|p| p.to_bits()).collect();
        assert_eq!(bits, expect);
        // Re-encoding reproduces the bytes.
        assert_eq!(
            encode_snapshot(&decoded.params, &decoded.optimizer_state, decoded.y_hat, 42).unwrap(),
            bytes
        );
    }

    #[test]
    fn snapshot_decoding_rejects_malformed_input() {
        let opt = sgd(2);
        let blob = opt.serialize_state();
        let good = encode_snapshot(&[1.0, 2.0], &blob, 0.5, 3).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_snapshot(&bad_magic).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(decode_snapshot(&bad_version).is_err());

        // Drop one byte: the parameter section is no longer a whole number
        // of floats plus the 16-byte tail.
        assert!(decode_snapshot(&good[..good.len() - 1]).is_err());
        assert!(decode_snapshot(&good[..4]).is_err());

        // Trailing bytes after the optimizer blob are caught at encode time.
        let mut padded = blob.clone();
        padded.push(0);
        assert!(encode_snapshot(&[1.0], &padded, 0.5, 3).is_err());
    }
}
