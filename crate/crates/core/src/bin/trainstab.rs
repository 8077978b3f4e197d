//! Command-line front end.
//!
//! * `run`        execute the paired-arm experiment, write a result tree
//! * `verify`     re-run the experiment and check every runtime invariant
//! * `plot`       render charts for an existing result tree
//! * `calibrate`  measure the acceptance threshold and print it
//!
//! Exit codes: 0 on success, 1 when a run or verification fails, 2 for
//! usage errors (bad flags, unreadable or invalid configuration).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trainstab::config::{parse_set_arg, Config};
use trainstab::error::Result;
use trainstab::harness::{
    admissibility_report, build_task, calibrate_epsilon, run_experiment, ArmAggregate,
    ADMISSIBILITY_BAR,
};
use trainstab::output::{write_experiment, OutputPaths};
use trainstab::plot::render_charts;
use trainstab::verify::verify_experiment;

#[derive(Parser)]
#[command(
    name = "trainstab",
    version,
    about = "Screened training with rollback recovery: every optimizer update \
             must keep the held-out probe loss near its reference, or the \
             step is rolled back to the last good snapshot."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the baseline/controlled experiment and write a result directory
    Run(RunArgs),
    /// Re-run the experiment and check every runtime invariant
    Verify(VerifyArgs),
    /// Render charts for a result directory written by `run`
    Plot(PlotArgs),
    /// Calibrate the acceptance threshold on a fault-free run and print it
    Calibrate(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override one configuration key, e.g. --set steps=100 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed override (shorthand for --set master_seed=N)
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker threads (default: all available cores)
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker threads (default: all available cores)
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Parent directory for result trees
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Result subdirectory name (default: the task name)
    #[arg(long, value_name = "NAME")]
    tag: Option<String>,
    /// Also render charts into the result directory
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Result directory written by `run`
    #[arg(long, value_name = "DIR")]
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Plot(args) => cmd_plot(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    }
}

fn load_config(args: &ConfigArgs) -> Result<Config> {
    let overrides = args
        .set
        .iter()
        .map(|s| parse_set_arg(s))
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = Config::load(&args.config, &overrides)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.config)?;
    let result = run_experiment(&cfg, args.jobs)?;
    let tag = args.tag.unwrap_or_else(|| cfg.task.to_string());
    let paths = OutputPaths::new(args.out.join(tag));
    write_experiment(&paths, &cfg, &result)?;

    // epsilon is printed with `{}` so it round-trips: paste it back into a
    // config to freeze the calibrated threshold
    match &result.calibration {
        Some(cal) => println!(
            "epsilon = {} (calibrated over {} steps: nu mean {:.3e}, std {:.3e})",
            result.epsilon, cal.steps, cal.nu_mean, cal.nu_std
        ),
        None => println!("epsilon = {} (fixed)", result.epsilon),
    }
    for (b, c) in result
        .baseline_summaries
        .iter()
        .zip(&result.controlled_summaries)
    {
        let recovery = match c.steps_to_recovery {
            Some(t) => t.to_string(),
            None => "-".to_string(),
        };
        println!(
            "seed {:>2}: baseline peak {:>10.3e}  controlled peak {:>10.3e}  rollbacks {:>3}  recovery {recovery}",
            b.seed, b.peak_loss, c.peak_loss, c.rollbacks
        );
    }
    print_aggregate("baseline  ", &result.baseline_agg);
    print_aggregate("controlled", &result.controlled_agg);
    println!("peak separation: {:.1}x", result.peak_separation);
    let ratios: Vec<f64> = result
        .pairs
        .iter()
        .filter_map(|p| {
            admissibility_report(&p.controlled, Some(&result.fault), cfg.probe_interval)
                .separation_ratio
        })
        .collect();
    if !ratios.is_empty() {
        let admissible = ratios.iter().filter(|&&r| r > ADMISSIBILITY_BAR).count();
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "admissibility: ratio > {ADMISSIBILITY_BAR:.0} on {admissible}/{} seeds (min {min:.1})",
            ratios.len()
        );
    }
    if args.plot {
        for path in render_charts(&paths)? {
            println!("wrote {}", path.display());
        }
    }
    println!("results in {}", paths.root().display());
    Ok(ExitCode::SUCCESS)
}

fn print_aggregate(label: &str, agg: &ArmAggregate) {
    println!(
        "{label}: peak loss {:.3e} +/- {:.3e}, recovery {:.1} +/- {:.1} steps ({}/{} recovered), final loss {:.3e}",
        agg.peak_loss_mean,
        agg.peak_loss_var.sqrt(),
        agg.recovery_mean,
        agg.recovery_var.sqrt(),
        agg.recovered_runs,
        agg.total_runs,
        agg.final_loss_mean
    );
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.config)?;
    let outcome = verify_experiment(&cfg, args.jobs)?;
    println!("epsilon = {}", outcome.epsilon);
    println!("{}", outcome.grad);
    for report in &outcome.reports {
        if report.all_passed() {
            println!(
                "seed {:>2}: all {} checks passed",
                report.seed,
                report.checks.len()
            );
        } else {
            println!("seed {:>2}:", report.seed);
            for check in &report.checks {
                println!("  {check}");
            }
        }
    }
    if outcome.passed {
        println!("verification passed ({} seeds)", outcome.reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verification FAILED");
        Ok(ExitCode::from(1))
    }
}

fn cmd_plot(args: PlotArgs) -> Result<ExitCode> {
    let paths = OutputPaths::new(args.dir);
    for path in render_charts(&paths)? {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: ConfigArgs) -> Result<ExitCode> {
    let cfg = load_config(&args)?;
    let task = build_task(&cfg)?;
    let report = calibrate_epsilon(&cfg, &task)?;
    println!(
        "calibration over {} fault-free steps (after {} warm-up): \
         nu mean {:.6e}, std {:.6e}",
        report.steps, report.warmup, report.nu_mean, report.nu_std
    );
    println!("epsilon = {}", report.epsilon);
    Ok(ExitCode::SUCCESS)
}
