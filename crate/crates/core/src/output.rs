//! Result directory layout and serialization.
//!
//! One experiment writes one directory:
//!
//! ```text
//! <root>/
//!   config.txt      resolved configuration echo (reparseable, reproduces
//!                   the run; epsilon pinned to the value actually used)
//!   summary.json    per-seed summaries and aggregates for both arms
//!   timings.json    wall-clock accounting (the only file allowed to differ
//!                   between reruns)
//!   <seed>/
//!     baseline.csv    per-step series of the unscreened arm
//!     controlled.csv  per-step series of the controlled arm
//!     final.snap      the controller's last snapshot, binary
//! ```
//!
//! CSV floats are written with `{}` formatting, which round-trips `f64`
//! exactly — `summary.json` can be recomputed bit-for-bit from the CSVs.
//! Timing measurements are quarantined in `timings.json` precisely so that
//! everything else is byte-identical across reruns.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::Config;
use crate::controller::{encode_snapshot, StepRecord};
use crate::error::{Error, Result};
use crate::harness::{
    admissibility_report, measured_overhead, overhead_ratio, ExperimentResult, RunData,
};

/// The canonical file locations under one experiment's root directory.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    root: PathBuf,
}

impl OutputPaths {
    pub fn new<P: Into<PathBuf>>(root: P) -> Self {
        OutputPaths { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_txt(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn timings_json(&self) -> PathBuf {
        self.root.join("timings.json")
    }

    pub fn seed_dir(&self, seed: u32) -> PathBuf {
        self.root.join(seed.to_string())
    }

    pub fn baseline_csv(&self, seed: u32) -> PathBuf {
        self.seed_dir(seed).join("baseline.csv")
    }

    pub fn controlled_csv(&self, seed: u32) -> PathBuf {
        self.seed_dir(seed).join("controlled.csv")
    }

    pub fn final_snap(&self, seed: u32) -> PathBuf {
        self.seed_dir(seed).join("final.snap")
    }

    pub fn chart(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.svg"))
    }
}

const CSV_HEADER: &str = "step,loss,y_prop,y_hat,nu,decision,param_l2";

/// Writes one run's per-step series. `loss` is the probe loss of the
/// parameters actually held after each step; the remaining columns come
/// from the decision record.
pub fn write_run_csv<W: Write>(data: &RunData, mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for (r, loss) in data.records.iter().zip(&data.loss) {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step, loss, r.y_prop, r.y_hat, r.nu, r.decision, r.param_l2
        )?;
    }
    Ok(())
}

/// One run as loaded back from its CSV. `probe_ms` is not part of the CSV
/// (timing lives in `timings.json`), so reloaded records carry zero there.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub loss: Vec<f64>,
    pub records: Vec<StepRecord>,
}

pub fn read_run_csv<R: BufRead>(r: R) -> Result<LoadedRun> {
    let mut lines = r.lines();
    match lines.next() {
        Some(first) => {
            let first = first?;
            if first != CSV_HEADER {
                return Err(Error::Format(format!(
                    "unexpected CSV header {first:?}"
                )));
            }
        }
        None => return Err(Error::Format("empty CSV".into())),
    }
    let mut loss = Vec::new();
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Format(format!(
                "CSV row {}: expected 7 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Format(format!("CSV row {}: {what}: {e}", i + 2)))
        };
        let step: u64 = fields[0]
            .parse()
            .map_err(|e| Error::Format(format!("CSV row {}: step: {e}", i + 2)))?;
        loss.push(parse_f(fields[1], "loss")?);
        records.push(StepRecord {
            step,
            y_prop: parse_f(fields[2], "y_prop")?,
            y_hat: parse_f(fields[3], "y_hat")?,
            nu: parse_f(fields[4], "nu")?,
            decision: fields[5].parse()?,
            param_l2: parse_f(fields[6], "param_l2")?,
            probe_ms: 0.0,
        });
    }
    Ok(LoadedRun { loss, records })
}

pub fn read_run_csv_file(path: &Path) -> Result<LoadedRun> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    read_run_csv(std::io::BufReader::new(file))
}

fn config_json(cfg: &Config, epsilon: f64) -> serde_json::Value {
    json!({
        "task": cfg.task.to_string(),
        "steps": cfg.steps,
        "seeds": cfg.seeds,
        "master_seed": cfg.master_seed,
        "batch_size": cfg.batch_size,
        "hidden": cfg.hidden,
        "optimizer": cfg.optimizer,
        "lr": cfg.lr,
        "momentum": cfg.momentum,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "adam_eps": cfg.adam_eps,
        "weight_decay": cfg.weight_decay,
        "probe_size": cfg.probe_size,
        "probe_interval": cfg.probe_interval,
        "alpha": cfg.alpha,
        "epsilon": epsilon,
        "fault_onset": cfg.fault_onset,
        "fault_duration": cfg.fault_duration,
        "fault_zeta": cfg.fault_zeta,
        "train_size": cfg.train_size,
        "dim": cfg.dim,
        "classes": cfg.classes,
        "separation": cfg.separation,
        "phrase": cfg.phrase,
        "window": cfg.window,
    })
}

/// Writes the complete result tree for an experiment.
pub fn write_experiment(
    paths: &OutputPaths,
    cfg: &Config,
    result: &ExperimentResult,
) -> Result<()> {
    fs::create_dir_all(paths.root())?;

    let mut echo = Vec::new();
    cfg.write_echo(result.epsilon, &mut echo)?;
    fs::write(paths.config_txt(), echo)?;

    for pair in &result.pairs {
        fs::create_dir_all(paths.seed_dir(pair.seed))?;
        write_csv_file(&paths.baseline_csv(pair.seed), &pair.baseline)?;
        write_csv_file(&paths.controlled_csv(pair.seed), &pair.controlled)?;
        let snap = pair
            .controlled
            .final_snapshot
            .as_ref()
            .expect("controlled runs always carry a final snapshot");
        let bytes = encode_snapshot(
            &snap.params,
            &snap.optimizer_state,
            snap.y_hat,
            snap.step_taken_at,
        )?;
        fs::write(paths.final_snap(pair.seed), bytes)?;
    }

    let admissibility: Vec<serde_json::Value> = result
        .pairs
        .iter()
        .map(|p| {
            let report =
                admissibility_report(&p.controlled, Some(&result.fault), cfg.probe_interval);
            json!({ "seed": p.seed, "report": report })
        })
        .collect();

    let summary = json!({
        "config": config_json(cfg, result.epsilon),
        "epsilon": result.epsilon,
        "calibration": result.calibration,
        "fault": result.fault,
        "baseline": {
            "runs": result.baseline_summaries,
            "aggregate": result.baseline_agg,
        },
        "controlled": {
            "runs": result.controlled_summaries,
            "aggregate": result.controlled_agg,
        },
        "admissibility": admissibility,
        "peak_separation": result.peak_separation,
        "nominal_overhead": overhead_ratio(cfg.probe_size, cfg.batch_size),
    });
    write_json_file(&paths.summary_json(), &summary)?;

    let per_seed: Vec<serde_json::Value> = result
        .pairs
        .iter()
        .map(|p| {
            json!({
                "seed": p.seed,
                "baseline_train_s": p.baseline.train_seconds,
                "controlled_train_s": p.controlled.train_seconds,
                "probe_s": p.controlled.probe_seconds,
                "probe_evals": p.controlled.probe_evals,
            })
        })
        .collect();
    let total_train: f64 = result.pairs.iter().map(|p| p.controlled.train_seconds).sum();
    let total_probe: f64 = result.pairs.iter().map(|p| p.controlled.probe_seconds).sum();
    let timings = json!({
        "per_seed": per_seed,
        "total_controlled_train_s": total_train,
        "total_probe_s": total_probe,
        "measured_overhead": measured_overhead(total_probe, total_train),
        "nominal_overhead": overhead_ratio(cfg.probe_size, cfg.batch_size),
    });
    write_json_file(&paths.timings_json(), &timings)?;
    Ok(())
}

fn write_csv_file(path: &Path, data: &RunData) -> Result<()> {
    let mut buf = Vec::new();
    write_run_csv(data, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn write_json_file(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
