//! First-order optimizers with fully serializable state.
//!
//! The controller's rollback guarantee covers the optimizer as well as the
//! parameters: restoring a snapshot must reproduce the optimizer's internal
//! buffers bit for bit, otherwise momentum or second-moment terms would
//! smuggle the rejected step's influence forward. Both optimizers here keep
//! their entire mutable state in plain `f64` buffers plus a step counter,
//! and [`Optimizer::serialize_state`] / [`Optimizer::restore_state`] move
//! that state through a fixed little-endian wire format:
//!
//! ```text
//! "OPT1" | kind: u8 | dim: u64 LE | buffers: f64 LE .. | step_count: u64 LE
//! ```
//!
//! where `kind` is 0 for SGD-momentum (one buffer: velocity) and 1 for AdamW
//! (two buffers: first and second moment). The step counter is carried for
//! both kinds so the layout stays uniform, even though plain SGD never reads
//! it.
//!
//! `propose_update` is pure in the functional sense: the same state and the
//! same gradient produce a bit-identical update vector. Nothing here owns a
//! clock, an RNG, or global state.

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OPT1";
const KIND_SGD: u8 = 0;
const KIND_ADAMW: u8 = 1;
/// magic + kind + dim.
const HEADER_LEN: usize = 4 + 1 + 8;
/// trailing step counter.
const FOOTER_LEN: usize = 8;

/// Hyperparameters of an optimizer. Immutable over a run; only the state
/// buffers evolve.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerConfig {
    /// Stochastic gradient descent with classical momentum:
    /// `v <- momentum * v + g`, `delta = -lr * v`.
    Sgd { lr: f64, momentum: f64 },
    /// AdamW with decoupled weight decay: the decay term `-lr * wd * theta`
    /// is added to the update directly instead of being folded into the
    /// gradient, so it never touches the moment estimates.
    AdamW {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerConfig {
    /// Short lowercase name used in configs and logs.
    pub fn kind(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd { .. } => "sgd",
            OptimizerConfig::AdamW { .. } => "adamw",
        }
    }

    fn kind_byte(&self) -> u8 {
        match self {
            OptimizerConfig::Sgd { .. } => KIND_SGD,
            OptimizerConfig::AdamW { .. } => KIND_ADAMW,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let check_unit = |name: &str, v: f64| -> Result<()> {
            if !v.is_finite() || !(0.0..1.0).contains(&v) {
                return Err(Error::Parameter(format!("{name} must be in [0, 1), got {v}")));
            }
            Ok(())
        };
        match *self {
            OptimizerConfig::Sgd { lr, momentum } => {
                if !lr.is_finite() || lr <= 0.0 {
                    return Err(Error::Parameter(format!("lr must be positive, got {lr}")));
                }
                check_unit("momentum", momentum)
            }
            OptimizerConfig::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                if !lr.is_finite() || lr <= 0.0 {
                    return Err(Error::Parameter(format!("lr must be positive, got {lr}")));
                }
                check_unit("beta1", beta1)?;
                check_unit("beta2", beta2)?;
                if !eps.is_finite() || eps <= 0.0 {
                    return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
                }
                if !weight_decay.is_finite() || weight_decay < 0.0 {
                    return Err(Error::Parameter(format!(
                        "weight_decay must be >= 0, got {weight_decay}"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum State {
    Sgd { velocity: Vec<f64> },
    AdamW { m: Vec<f64>, v: Vec<f64> },
}

/// An optimizer instance: hyperparameters plus mutable state for a fixed
/// parameter dimension. `Clone` is cheap enough at desk scale and is what
/// the snapshot machinery uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: State,
    step_count: u64,
    dim: usize,
}

impl Optimizer {
    /// Fresh optimizer with zeroed buffers for `dim` parameters.
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::Parameter("optimizer dimension must be >= 1".into()));
        }
        let state = match config {
            OptimizerConfig::Sgd { .. } => State::Sgd {
                velocity: vec![0.0; dim],
            },
            OptimizerConfig::AdamW { .. } => State::AdamW {
                m: vec![0.0; dim],
                v: vec![0.0; dim],
            },
        };
        Ok(Optimizer {
            config,
            state,
            step_count: 0,
            dim,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of updates proposed since construction or the last restore.
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Advances the state one step and returns the proposed parameter
    /// update `delta`, to be applied as `theta + delta`. The caller decides
    /// whether the step is accepted; a rejected step is undone by restoring
    /// state serialized before the call.
    pub fn propose_update(&mut self, params: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        if params.len() != self.dim || grad.len() != self.dim {
            return Err(Error::Dimension(format!(
                "optimizer dim {} but params/grad have {}/{} elements",
                self.dim,
                params.len(),
                grad.len()
            )));
        }
        self.step_count += 1;
        let delta = match (&self.config, &mut self.state) {
            (OptimizerConfig::Sgd { lr, momentum }, State::Sgd { velocity }) => {
                let mut delta = Vec::with_capacity(self.dim);
                for i in 0..self.dim {
                    velocity[i] = momentum * velocity[i] + grad[i];
                    delta.push(-lr * velocity[i]);
                }
                delta
            }
            (
                OptimizerConfig::AdamW {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                },
                State::AdamW { m, v },
            ) => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let mut delta = Vec::with_capacity(self.dim);
                for i in 0..self.dim {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    delta.push(-lr * (m_hat / (v_hat.sqrt() + eps)) - lr * weight_decay * params[i]);
                }
                delta
            }
            // Construction pairs config and state by kind; they cannot drift.
            _ => unreachable!("optimizer state kind does not match config kind"),
        };
        Ok(delta)
    }

    /// Serializes the mutable state (not the hyperparameters) into the wire
    /// format described in the module docs. Byte-level deterministic.
    pub fn serialize_state(&self) -> Vec<u8> {
        let buffers: Vec<&[f64]> = match &self.state {
            State::Sgd { velocity } => vec![velocity],
            State::AdamW { m, v } => vec![m, v],
        };
        let floats: usize = buffers.iter().map(|b| b.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + floats * 8 + FOOTER_LEN);
        out.extend_from_slice(MAGIC);
        out.push(self.config.kind_byte());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for buf in buffers {
            for x in buf {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step_count.to_le_bytes());
        out
    }

    /// Restores state from bytes produced by [`serialize_state`] on an
    /// optimizer of the same kind and dimension. Restoring then serializing
    /// again reproduces the input bytes exactly.
    ///
    /// [`serialize_state`]: Optimizer::serialize_state
    pub fn restore_state(&mut self, bytes: &[u8]) -> Result<()> {
        let (kind, dim) = parse_header(bytes)?;
        if kind != self.config.kind_byte() {
            return Err(Error::Format(format!(
                "state blob is for optimizer kind {kind}, this optimizer is {}",
                self.config.kind()
            )));
        }
        if dim != self.dim {
            return Err(Error::Format(format!(
                "state blob is for dimension {dim}, this optimizer has {}",
                self.dim
            )));
        }
        let expected = state_blob_len_for(kind, dim);
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "optimizer state blob has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut cursor = HEADER_LEN;
        let mut read_buf = |len: usize| -> Vec<f64> {
            let mut buf = Vec::with_capacity(len);
            for _ in 0..len {
                let mut raw = [0u8; 8];
                raw.copy_from_slice(&bytes[cursor..cursor + 8]);
                buf.push(f64::from_le_bytes(raw));
                cursor += 8;
            }
            buf
        };
        self.state = match kind {
            KIND_SGD => State::Sgd {
                velocity: read_buf(dim),
            },
            KIND_ADAMW => {
                let m = read_buf(dim);
                let v = read_buf(dim);
                State::AdamW { m, v }
            }
            _ => unreachable!("parse_header rejects unknown kinds"),
        };
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&bytes[cursor..cursor + 8]);
        self.step_count = u64::from_le_bytes(raw);
        Ok(())
    }
}

fn parse_header(bytes: &[u8]) -> Result<(u8, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "optimizer state blob too short: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("optimizer state blob has wrong magic".into()));
    }
    let kind = bytes[4];
    if kind != KIND_SGD && kind != KIND_ADAMW {
        return Err(Error::Format(format!("unknown optimizer kind byte {kind}")));
    }
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&bytes[5..13]);
    let dim = u64::from_le_bytes(raw);
    let dim = usize::try_from(dim)
        .map_err(|_| Error::Format(format!("optimizer state dimension {dim} overflows usize")))?;
    if dim == 0 {
        return Err(Error::Format("optimizer state has dimension 0".into()));
    }
    Ok((kind, dim))
}

fn state_blob_len_for(kind: u8, dim: usize) -> usize {
    let buffers = match kind {
        KIND_SGD => 1,
        _ => 2,
    };
    HEADER_LEN + buffers * dim * 8 + FOOTER_LEN
}

/// Length in bytes of the optimizer state blob at the front of `bytes`,
/// determined from its own header. Used when a blob is embedded in a larger
/// record (snapshot files) and the boundary has to be recovered.
pub(crate) fn state_blob_len(bytes: &[u8]) -> Result<usize> {
    let (kind, dim) = parse_header(bytes)?;
    let len = state_blob_len_for(kind, dim);
    if bytes.len() < len {
        return Err(Error::Format(format!(
            "optimizer state blob truncated: header promises {len} bytes, {} present",
            bytes.len()
        )));
    }
    Ok(len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd(lr: f64, momentum: f64, dim: usize) -> Optimizer {
        Optimizer::new(OptimizerConfig::Sgd { lr, momentum }, dim).unwrap()
    }

    fn adamw(lr: f64, weight_decay: f64, dim: usize) -> Optimizer {
        Optimizer::new(
            OptimizerConfig::AdamW {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay,
            },
            dim,
        )
        .unwrap()
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut opt = sgd(0.5, 0.0, 2);
        let delta = opt.propose_update(&[0.0, 0.0], &[2.0, -2.0]).unwrap();
        assert_eq!(delta, vec![-1.0, 1.0]);
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        let mut opt = sgd(0.1, 0.9, 1);
        let d1 = opt.propose_update(&[0.0], &[1.0]).unwrap();
        let d2 = opt.propose_update(&[0.0], &[1.0]).unwrap();
        assert_eq!(d1[0].to_bits(), (-(0.1 * 1.0f64)).to_bits());
        let v2: f64 = 0.9 * 1.0 + 1.0;
        assert_eq!(d2[0].to_bits(), (-(0.1 * v2)).to_bits());
    }

    #[test]
    fn adamw_first_step_moves_by_roughly_lr_per_coordinate() {
        // Bias correction cancels the (1 - beta) factors on step one, so the
        // update is -lr * g / (|g| + eps): about lr in magnitude whatever the
        // gradient scale.
        let mut opt = adamw(0.001, 0.0, 2);
        let delta = opt.propose_update(&[0.0, 0.0], &[1.0, -3.0]).unwrap();
        assert!((delta[0] + 0.001).abs() < 1e-10, "got {}", delta[0]);
        assert!((delta[1] - 0.001).abs() < 1e-10, "got {}", delta[1]);
    }

    #[test]
    fn adamw_first_step_is_gradient_scale_invariant() {
        // Invariance is exact only up to the eps regularizer in the
        // denominator, which perturbs the update by O(eps / |g|) relative.
        let mut a = adamw(0.01, 0.0, 1);
        let mut b = adamw(0.01, 0.0, 1);
        let da = a.propose_update(&[0.5], &[2.0]).unwrap();
        let db = b.propose_update(&[0.5], &[200.0]).unwrap();
        assert!(
            (da[0] - db[0]).abs() < 1e-8 * da[0].abs(),
            "scaled gradient changed the update: {} vs {}",
            da[0],
            db[0]
        );
    }

    #[test]
    fn adamw_weight_decay_is_decoupled() {
        // Zero gradient leaves the moments at zero, so the whole update is
        // the decay term -lr * wd * theta.
        let mut opt = adamw(0.1, 0.01, 2);
        let delta = opt.propose_update(&[2.0, -4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(delta[0].to_bits(), (-(0.1 * 0.01 * 2.0f64)).to_bits());
        assert_eq!(delta[1].to_bits(), (-(0.1 * 0.01 * -4.0f64)).to_bits());
    }

    #[test]
    fn proposals_are_pure_given_state() {
        let mut a = adamw(0.001, 0.01, 3);
        let params = [1.0, -2.0, 0.5];
        let grad = [0.3, 0.1, -0.7];
        a.propose_update(&params, &grad).unwrap();
        let mut b = a.clone();
        let da = a.propose_update(&params, &grad).unwrap();
        let db = b.propose_update(&params, &grad).unwrap();
        assert!(da.iter().zip(&db).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn serialize_round_trips_bit_exactly() {
        for mut opt in [sgd(0.1, 0.9, 4), adamw(0.001, 0.01, 4)] {
            let params = [1.0, 2.0, 3.0, 4.0];
            for step in 0..5 {
                let grad = [0.1 * step as f64, -0.2, 0.3, 0.05];
                opt.propose_update(&params, &grad).unwrap();
            }
            let bytes = opt.serialize_state();
            let mut fresh = Optimizer::new(opt.config().clone(), 4).unwrap();
            fresh.restore_state(&bytes).unwrap();
            assert_eq!(fresh.serialize_state(), bytes);
            assert_eq!(fresh.step_count(), 5);

            // The restored optimizer proposes the same next step.
            let grad = [0.5, -0.5, 0.25, -0.25];
            let da = opt.propose_update(&params, &grad).unwrap();
            let db = fresh.propose_update(&params, &grad).unwrap();
            assert!(da.iter().zip(&db).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn wire_format_layout_is_frozen() {
        let opt = sgd(0.1, 0.9, 3);
        let bytes = opt.serialize_state();
        assert_eq!(&bytes[0..4], b"OPT1");
        assert_eq!(bytes[4], 0);
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 4 + 1 + 8 + 3 * 8 + 8);

        let opt = adamw(0.001, 0.0, 3);
        let bytes = opt.serialize_state();
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes.len(), 4 + 1 + 8 + 2 * 3 * 8 + 8);
    }

    #[test]
    fn restore_rejects_malformed_blobs() {
        let mut opt = sgd(0.1, 0.9, 2);
        let good = opt.serialize_state();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(opt.restore_state(&bad_magic), Err(Error::Format(_))));

        let mut bad_kind = good.clone();
        bad_kind[4] = 7;
        assert!(matches!(opt.restore_state(&bad_kind), Err(Error::Format(_))));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(opt.restore_state(truncated), Err(Error::Format(_))));

        // Kind mismatch: SGD blob into an AdamW optimizer.
        let mut other = adamw(0.001, 0.0, 2);
        assert!(matches!(other.restore_state(&good), Err(Error::Format(_))));

        // Dimension mismatch.
        let mut wider = sgd(0.1, 0.9, 3);
        assert!(matches!(wider.restore_state(&good), Err(Error::Format(_))));
    }

    #[test]
    fn state_blob_len_reads_embedded_blobs() {
        let opt = adamw(0.001, 0.0, 5);
        let mut bytes = opt.serialize_state();
        let blob_len = bytes.len();
        bytes.extend_from_slice(b"trailing payload");
        assert_eq!(state_blob_len(&bytes).unwrap(), blob_len);
        assert!(state_blob_len(&bytes[..10]).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_hyperparameters() {
        assert!(Optimizer::new(OptimizerConfig::Sgd { lr: 0.0, momentum: 0.9 }, 2).is_err());
        assert!(Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: 1.0 }, 2).is_err());
        assert!(Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: -0.1 }, 2).is_err());
        assert!(Optimizer::new(
            OptimizerConfig::AdamW {
                lr: 0.001,
                beta1: 1.0,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0
            },
            2
        )
        .is_err());
        assert!(Optimizer::new(
            OptimizerConfig::AdamW {
                lr: 0.001,
                beta1: 0.9,
                beta2: 0.999,
                eps: 0.0,
                weight_decay: 0.0
            },
            2
        )
        .is_err());
        assert!(Optimizer::new(
            OptimizerConfig::AdamW {
                lr: 0.001,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: -0.1
            },
            2
        )
        .is_err());
        assert!(Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: 0.0 }, 0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut opt = sgd(0.1, 0.0, 3);
        assert!(matches!(
            opt.propose_update(&[0.0; 2], &[0.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            opt.propose_update(&[0.0; 3], &[0.0; 2]),
            Err(Error::Dimension(_))
        ));
    }
}
