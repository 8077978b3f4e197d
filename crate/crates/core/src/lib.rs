//! Runtime stability controller for neural-network training.
//!
//! The library wraps an existing training loop with a supervisory layer that
//! screens every optimizer-proposed update before it is committed. A small
//! held-out probe set is evaluated on the proposed parameters; the controller
//! compares the probe loss against an exponentially weighted reference and
//! rejects any update whose *innovation* (probe loss minus reference) exceeds
//! a threshold. Rejected updates are undone by restoring a bit-exact snapshot
//! of both the parameters and the optimizer state, so a single corrupted step
//! can never contaminate subsequent training.
//!
//! The crate ships a complete desk-scale stack for exercising the controller:
//!
//! * [`numerics`] / [`rng`] — deterministic `f64` kernels and a counter-based
//!   splittable random number generator,
//! * [`data`] / [`model`] — synthetic classification tasks and a tanh MLP
//!   with hand-derived backpropagation,
//! * [`optim`] — SGD-with-momentum and AdamW with byte-serializable state,
//! * [`controller`] — the accept/rollback decision core,
//! * [`harness`] — fault injection, paired baseline/controlled runs, and
//!   aggregate metrics over many seeds,
//! * [`verify`] — independent invariant checks over recorded trajectories,
//! * [`config`] / [`output`] / [`plot`] — the flat key=value experiment
//!   configuration, CSV/JSON emission, and dependency-free SVG charts.
//!
//! The `trainstab` binary exposes the whole pipeline as `run`, `verify`,
//! `plot`, and `calibrate` subcommands.

pub mod config;
pub mod controller;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod output;
pub mod plot;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
