//! Experiment configuration: a flat `key = value` file format.
//!
//! The format is deliberately small: one assignment per line, `#` starts a
//! comment, blank lines are ignored, keys and values are trimmed, and a key
//! assigned twice takes its last value. Every key has a default, so an empty
//! file is a valid experiment.
//!
//! Resolution order, lowest to highest precedence:
//!
//! 1. built-in defaults for the selected task (`task` itself is looked up
//!    across the file *and* the command-line overrides first, since it
//!    decides which default block applies),
//! 2. assignments from the file, top to bottom,
//! 3. `--set key=value` command-line overrides, left to right.
//!
//! Unknown keys are errors, not warnings: a typo that silently fell back to
//! a default would invalidate an experiment without a trace.
//!
//! [`Config::write_echo`] emits the fully resolved configuration in this
//! same format (with the calibrated threshold substituted for `auto`), so
//! every result directory carries a file that reproduces the run exactly.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;

/// Which synthetic task the experiment trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Gaussian blob classification in a low-dimensional space.
    Vision,
    /// Next-character prediction over a fixed phrase.
    Sequence,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Vision => "vision",
            TaskKind::Sequence => "sequence",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" => Ok(TaskKind::Vision),
            "sequence" => Ok(TaskKind::Sequence),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected vision or sequence)"
            ))),
        }
    }
}

/// The acceptance threshold, either fixed by the user or calibrated from a
/// fault-free run before the experiment starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSpec {
    Auto,
    Fixed(f64),
}

/// Default phrase for the sequence task: four pangrams, long enough for a
/// few hundred training windows with broad character coverage. Ends in
/// a period rather than a space on purpose: values are whitespace-trimmed
/// during parsing, so a phrase ending in a space would not survive an
/// echo/parse round trip.
pub const DEFAULT_PHRASE: &str = "the quick brown fox jumps over the lazy dog. \
                                  pack my box with five dozen liquor jugs. \
                                  how vexingly quick daft zebras jump. \
                                  sphinx of black quartz judge my vow.";

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub task: TaskKind,
    pub steps: u64,
    pub seeds: u32,
    pub master_seed: u64,
    pub batch_size: usize,
    /// Hidden layer widths, input to output. May be empty (a linear model).
    pub hidden: Vec<usize>,
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub probe_size: usize,
    pub probe_interval: u64,
    pub alpha: f64,
    pub epsilon: EpsilonSpec,
    /// First step (1-based) at which the gradient fault is active.
    pub fault_onset: u64,
    /// Number of consecutive faulty steps.
    pub fault_duration: u64,
    /// Gradient amplification factor while the fault is active.
    pub fault_zeta: f64,
    // Vision-task shape. Ignored by the sequence task.
    pub train_size: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    // Sequence-task shape. Ignored by the vision task.
    pub phrase: String,
    pub window: usize,
}

impl Config {
    /// Built-in defaults for `task`.
    pub fn defaults(task: TaskKind) -> Config {
        let common = Config {
            task,
            steps: 250,
            seeds: 20,
            master_seed: 42,
            batch_size: 128,
            hidden: vec![32],
            // SGD with momentum, not AdamW, for the fault experiments.
            // AdamW's second-moment normalization is invariant to gradient
            // scale: a multiplied gradient inflates both the numerator and
            // the denominator, so each faulted step is clamped near
            // `3 * lr` per coordinate and the injected fault is largely
            // absorbed instead of producing the runaway the baseline arm
            // exists to demonstrate. SGD applies the amplified gradient
            // as-is, and with momentum it compounds across the window.
            optimizer: "sgd".to_string(),
            lr: 0.05,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            probe_size: 16,
            probe_interval: 1,
            alpha: 0.1,
            epsilon: EpsilonSpec::Auto,
            fault_onset: 120,
            fault_duration: 10,
            fault_zeta: 300.0,
            train_size: 512,
            dim: 2,
            // Five classes at this separation overlap, leaving irreducible
            // error: the optimum is interior and oversized parameter steps
            // in any direction climb measurably back up the loss bowl. On a
            // cleanly separable task the loss keeps falling along amplified
            // gradient directions, so a faulted step can lower the probe
            // loss; such a step is accepted — the screen only sees the probe
            // — and its amplified gradient is baked into the snapshotted
            // momentum, after which every healthy proposal replays the
            // poisoned velocity and is rejected. Overlap closes that route.
            classes: 5,
            separation: 2.5,
            phrase: DEFAULT_PHRASE.to_string(),
            window: 8,
        };
        match task {
            TaskKind::Vision => common,
            // A 3-character context appears many times in the phrase with
            // different successors, so next-character prediction keeps an
            // irreducible entropy floor — an interior optimum, for the same
            // reason the blobs above overlap. (At window sizes where every
            // context is unique the task is fully memorizable, and the
            // poisoned-momentum route described above opens up.) The higher
            // rate gets the task onto its plateau well before the default
            // fault onset; momentum steps at this scale would destabilize
            // the wider vision landscape, but this loss bowl tolerates them.
            TaskKind::Sequence => Config {
                batch_size: 64,
                hidden: vec![64],
                lr: 0.1,
                window: 3,
                ..common
            },
        }
    }

    /// Parses configuration text plus `--set` overrides on top of the task
    /// defaults, then validates the result.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Config> {
        let entries = parse_entries(text)?;

        // The task decides which default block everything else lands on, so
        // find its final value before applying anything.
        let mut task = TaskKind::Vision;
        for (key, value, _) in &entries {
            if key == "task" {
                task = value.parse()?;
            }
        }
        for (key, value) in overrides {
            if key == "task" {
                task = value.parse()?;
            }
        }

        let mut config = Config::defaults(task);
        for (key, value, line) in &entries {
            config
                .apply(key, value)
                .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        for (key, value) in overrides {
            config
                .apply(key, value)
                .map_err(|e| Error::Config(format!("--set {key}: {e}")))?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Reads and parses a configuration file. A missing or unreadable file
    /// is a configuration error that names the path, not a bare I/O error.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Config::from_text(&text, overrides)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = value.parse()?,
            "steps" => self.steps = parse_num(key, value)?,
            "seeds" => self.seeds = parse_num(key, value)?,
            "master_seed" => self.master_seed = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "hidden" => self.hidden = parse_hidden(value)?,
            "optimizer" => match value {
                "sgd" | "adamw" => self.optimizer = value.to_string(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown optimizer {other:?} (expected sgd or adamw)"
                    )))
                }
            },
            "lr" => self.lr = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "probe_size" => self.probe_size = parse_num(key, value)?,
            "probe_interval" => self.probe_interval = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "epsilon" => {
                self.epsilon = if value == "auto" {
                    EpsilonSpec::Auto
                } else {
                    let eps: f64 = parse_num(key, value)?;
                    if !eps.is_finite() || eps <= 0.0 {
                        return Err(Error::Config(format!(
                            "epsilon must be auto or a positive finite number, got {value:?}"
                        )));
                    }
                    EpsilonSpec::Fixed(eps)
                }
            }
            "fault_onset" => self.fault_onset = parse_num(key, value)?,
            "fault_duration" => self.fault_duration = parse_num(key, value)?,
            "fault_zeta" => self.fault_zeta = parse_num(key, value)?,
            "train_size" => self.train_size = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "classes" => self.classes = parse_num(key, value)?,
            "separation" => self.separation = parse_num(key, value)?,
            "phrase" => self.phrase = value.to_string(),
            "window" => self.window = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Checks every field against its admissible range.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
            Ok(())
        };
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.probe_size == 0 {
            return Err(Error::Config("probe_size must be >= 1".into()));
        }
        if self.probe_interval == 0 {
            return Err(Error::Config("probe_interval must be >= 1".into()));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha > 1.0 {
            return Err(Error::Config(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if let EpsilonSpec::Fixed(eps) = self.epsilon {
            positive("epsilon", eps)?;
        }
        positive("fault_zeta", self.fault_zeta)?;
        // Optimizer hyperparameters share the optimizer's own validation so
        // the two can never disagree.
        self.optimizer_config().validate()?;
        match self.task {
            TaskKind::Vision => {
                if self.dim == 0 {
                    return Err(Error::Config("dim must be >= 1".into()));
                }
                if self.classes < 2 {
                    return Err(Error::Config("classes must be >= 2".into()));
                }
                if self.train_size < 2 {
                    return Err(Error::Config("train_size must be >= 2".into()));
                }
                if !self.separation.is_finite() || self.separation < 0.0 {
                    return Err(Error::Config(format!(
                        "separation must be a finite non-negative number, got {}",
                        self.separation
                    )));
                }
            }
            TaskKind::Sequence => {
                if self.phrase.is_empty() {
                    return Err(Error::Config("phrase must not be empty".into()));
                }
                if self.window == 0 {
                    return Err(Error::Config("window must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// The optimizer hyperparameters as the optimizer module's own type.
    pub fn optimizer_config(&self) -> OptimizerConfig {
        match self.optimizer.as_str() {
            "sgd" => OptimizerConfig::Sgd {
                lr: self.lr,
                momentum: self.momentum,
            },
            "adamw" => OptimizerConfig::AdamW {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            },
            other => unreachable!("optimizer field validated at parse time, got {other:?}"),
        }
    }

    /// Writes the resolved configuration back out in the input format, with
    /// `epsilon` pinned to the concrete threshold the run used. Parsing the
    /// echo reproduces this configuration exactly.
    pub fn write_echo<W: Write>(&self, resolved_epsilon: f64, mut w: W) -> Result<()> {
        if matches!(self.epsilon, EpsilonSpec::Auto) {
            writeln!(w, "# epsilon was calibrated from a fault-free run")?;
        }
        writeln!(w, "task = {}", self.task)?;
        writeln!(w, "steps = {}", self.steps)?;
        writeln!(w, "seeds = {}", self.seeds)?;
        writeln!(w, "master_seed = {}", self.master_seed)?;
        writeln!(w, "batch_size = {}", self.batch_size)?;
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        writeln!(w, "hidden = {}", hidden.join(","))?;
        writeln!(w, "optimizer = {}", self.optimizer)?;
        writeln!(w, "lr = {}", self.lr)?;
        writeln!(w, "momentum = {}", self.momentum)?;
        writeln!(w, "beta1 = {}", self.beta1)?;
        writeln!(w, "beta2 = {}", self.beta2)?;
        writeln!(w, "adam_eps = {}", self.adam_eps)?;
        writeln!(w, "weight_decay = {}", self.weight_decay)?;
        writeln!(w, "probe_size = {}", self.probe_size)?;
        writeln!(w, "probe_interval = {}", self.probe_interval)?;
        writeln!(w, "alpha = {}", self.alpha)?;
        writeln!(w, "epsilon = {}", resolved_epsilon)?;
        writeln!(w, "fault_onset = {}", self.fault_onset)?;
        writeln!(w, "fault_duration = {}", self.fault_duration)?;
        writeln!(w, "fault_zeta = {}", self.fault_zeta)?;
        writeln!(w, "train_size = {}", self.train_size)?;
        writeln!(w, "dim = {}", self.dim)?;
        writeln!(w, "classes = {}", self.classes)?;
        writeln!(w, "separation = {}", self.separation)?;
        writeln!(w, "phrase = {}", self.phrase)?;
        writeln!(w, "window = {}", self.window)?;
        Ok(())
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_hidden(value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            let width: usize = part
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("hidden = {value:?}: {e}")))?;
            if width == 0 {
                return Err(Error::Config(format!(
                    "hidden = {value:?}: layer widths must be >= 1"
                )));
            }
            Ok(width)
        })
        .collect()
}

/// Splits text into `(key, value, line_number)` entries, dropping comments
/// and blank lines.
fn parse_entries(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value, got {line:?}",
                i + 1
            )));
        };
        entries.push((key.trim().to_string(), value.trim().to_string(), i + 1));
    }
    Ok(entries)
}

/// Parses one `--set key=value` argument.
pub fn parse_set_arg(s: &str) -> Result<(String, String)> {
    let Some((key, value)) = s.split_once('=') else {
        return Err(Error::Config(format!(
            "--set expects key=value, got {s:?}"
        )));
    };
    Ok((key.trim().to_string(), value.trim().to_string()))
}
