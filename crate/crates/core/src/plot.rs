//! SVG charts over a result directory.
//!
//! Charts are rendered by hand into plain SVG text: the output is small,
//! deterministic, diffable, and carries no dependency weight. Everything is
//! reconstructed from `config.txt` plus the per-seed CSVs — `summary.json`
//! is never consulted, so the charts double as an independent read of the
//! raw series. Four charts are produced:
//!
//! * `recovery.svg`    probe loss mean ± std across seeds, both arms, log y
//! * `innovation.svg`  per-seed innovation against the acceptance threshold
//! * `norms.svg`       parameter L2 norm mean across seeds, both arms, log y
//! * `paired.svg`      seed 0's baseline and controlled loss overlaid
//!
//! The innovation chart clips its values to `[-4e, 8e]` (e the threshold):
//! a fault drives the innovation many orders of magnitude past the
//! threshold, and without clipping the threshold line would be invisible.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use crate::config::{Config, EpsilonSpec};
use crate::error::{Error, Result};
use crate::harness::{series_mean_std, FaultSpec};
use crate::output::{read_run_csv_file, LoadedRun, OutputPaths};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 704.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 432.0;

const BASELINE_COLOR: &str = "#c44e52";
const CONTROLLED_COLOR: &str = "#4c72b0";
const THRESHOLD_COLOR: &str = "#2a7e43";
const FAULT_COLOR: &str = "#999999";

const STYLE: &str = r#"<style>
.axis { stroke: #333333; stroke-width: 1; }
.grid { stroke: #dddddd; stroke-width: 0.5; }
.series { fill: none; stroke-width: 1.5; }
.thin { stroke-width: 1; stroke-opacity: 0.65; }
.band { stroke: none; fill-opacity: 0.18; }
.threshold { fill: none; stroke-width: 1.2; stroke-dasharray: 6 3; }
.fault { stroke: none; fill-opacity: 0.18; }
.title { font-size: 14px; fill: #111111; }
.axis-label, .tick-label, .legend-label { font-size: 11px; fill: #333333; }
</style>
"#;

/// Renders the four standard charts next to the files they are read from
/// and returns the paths written.
pub fn render_charts(paths: &OutputPaths) -> Result<Vec<PathBuf>> {
    // A broken or absent echo means the directory is not a result tree; that
    // is damaged data, not a configuration mistake.
    let cfg = Config::load(&paths.config_txt(), &[]).map_err(|e| {
        Error::Format(format!("{} is not a result directory: {e}", paths.root().display()))
    })?;
    let epsilon = match cfg.epsilon {
        EpsilonSpec::Fixed(e) => e,
        EpsilonSpec::Auto => {
            return Err(Error::Format(
                "config.txt does not pin epsilon; point `plot` at a directory written by `run`"
                    .into(),
            ))
        }
    };

    let mut baseline = Vec::with_capacity(cfg.seeds as usize);
    let mut controlled = Vec::with_capacity(cfg.seeds as usize);
    for seed in 0..cfg.seeds {
        baseline.push(read_run_csv_file(&paths.baseline_csv(seed))?);
        controlled.push(read_run_csv_file(&paths.controlled_csv(seed))?);
    }
    if baseline[0].records.is_empty() {
        return Err(Error::Format("run CSVs contain no rows".into()));
    }
    let fault = FaultSpec::from_config(&cfg);
    let fault = (fault.duration > 0).then_some(fault);

    let charts = [
        ("recovery", chart_recovery(&baseline, &controlled, fault.as_ref())),
        ("innovation", chart_innovation(&controlled, epsilon, fault.as_ref())),
        ("norms", chart_norms(&baseline, &controlled, fault.as_ref())),
        ("paired", chart_paired(&baseline[0], &controlled[0], fault.as_ref())),
    ];
    let mut written = Vec::with_capacity(charts.len());
    for (name, svg) in charts {
        let path = paths.chart(name);
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

fn chart_recovery(
    baseline: &[LoadedRun],
    controlled: &[LoadedRun],
    fault: Option<&FaultSpec>,
) -> String {
    let b_loss: Vec<&[f64]> = baseline.iter().map(|r| r.loss.as_slice()).collect();
    let c_loss: Vec<&[f64]> = controlled.iter().map(|r| r.loss.as_slice()).collect();
    let (bm, bs) = series_mean_std(&b_loss);
    let (cm, cs) = series_mean_std(&c_loss);
    let n = bm.len().max(cm.len());

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (mean, std) in [(&bm, &bs), (&cm, &cs)] {
        for (&m, &s) in mean.iter().zip(std.iter()) {
            if !m.is_finite() {
                continue;
            }
            let up = m + s;
            if up.is_finite() {
                hi = hi.max(up);
            }
            // the band's lower edge can cross zero; the mean itself is a
            // valid positive floor for the log axis
            let down = m - s;
            lo = lo.min(if down > 0.0 { down } else { m });
        }
    }
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0) {
        lo = 1e-3;
        hi = 1.0;
    }

    let frame = Frame::new(1.0, n as f64, lo, hi, true);
    let mut c = Chart::new(
        "Probe loss across seeds (mean and std band)",
        "step",
        "probe loss",
        frame,
    );
    if let Some(f) = fault {
        c.fault_span(f);
    }
    c.band(&bm, &bs, BASELINE_COLOR, "band baseline");
    c.band(&cm, &cs, CONTROLLED_COLOR, "band controlled");
    c.xy_series(&indexed(&bm), BASELINE_COLOR, "series baseline");
    c.xy_series(&indexed(&cm), CONTROLLED_COLOR, "series controlled");
    c.legend(&[
        (BASELINE_COLOR, None, "baseline"),
        (CONTROLLED_COLOR, None, "controlled"),
    ]);
    c.finish()
}

fn chart_innovation(
    controlled: &[LoadedRun],
    epsilon: f64,
    fault: Option<&FaultSpec>,
) -> String {
    let n = controlled[0].records.len();
    let (lo, hi) = (-4.0 * epsilon, 8.0 * epsilon);
    let frame = Frame::new(1.0, n as f64, lo, hi, false);
    let mut c = Chart::new(
        "Innovation per step (clipped for display)",
        "step",
        "innovation",
        frame,
    );
    if let Some(f) = fault {
        c.fault_span(f);
    }
    for run in controlled {
        let pts: Vec<(f64, f64)> = run
            .records
            .iter()
            .map(|r| (r.step as f64, clip(r.nu, lo, hi)))
            .collect();
        c.xy_series(&pts, CONTROLLED_COLOR, "series thin");
    }
    c.threshold(epsilon);
    c.legend(&[
        (CONTROLLED_COLOR, None, "innovation (per seed)"),
        (THRESHOLD_COLOR, Some("6 3"), "threshold"),
    ]);
    c.finish()
}

fn chart_norms(
    baseline: &[LoadedRun],
    controlled: &[LoadedRun],
    fault: Option<&FaultSpec>,
) -> String {
    let norms = |runs: &[LoadedRun]| -> Vec<Vec<f64>> {
        runs.iter()
            .map(|r| r.records.iter().map(|rec| rec.param_l2).collect())
            .collect()
    };
    let (b, c_) = (norms(baseline), norms(controlled));
    let b_refs: Vec<&[f64]> = b.iter().map(|v| v.as_slice()).collect();
    let c_refs: Vec<&[f64]> = c_.iter().map(|v| v.as_slice()).collect();
    let (bm, _) = series_mean_std(&b_refs);
    let (cm, _) = series_mean_std(&c_refs);
    let n = bm.len().max(cm.len());

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in bm.iter().chain(cm.iter()) {
        if v.is_finite() && v > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        lo = 1e-3;
        hi = 1.0;
    }

    let frame = Frame::new(1.0, n as f64, lo, hi, true);
    let mut c = Chart::new(
        "Parameter L2 norm (mean across seeds)",
        "step",
        "parameter L2 norm",
        frame,
    );
    if let Some(f) = fault {
        c.fault_span(f);
    }
    c.xy_series(&indexed(&bm), BASELINE_COLOR, "series baseline");
    c.xy_series(&indexed(&cm), CONTROLLED_COLOR, "series controlled");
    c.legend(&[
        (BASELINE_COLOR, None, "baseline"),
        (CONTROLLED_COLOR, None, "controlled"),
    ]);
    c.finish()
}

fn chart_paired(
    baseline: &LoadedRun,
    controlled: &LoadedRun,
    fault: Option<&FaultSpec>,
) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in baseline.loss.iter().chain(controlled.loss.iter()) {
        if v.is_finite() && v > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        lo = 1e-3;
        hi = 1.0;
    }

    let n = baseline.loss.len().max(controlled.loss.len());
    let frame = Frame::new(1.0, n as f64, lo, hi, true);
    let mut c = Chart::new(
        "Seed 0 probe loss, baseline vs controlled",
        "step",
        "probe loss",
        frame,
    );
    if let Some(f) = fault {
        c.fault_span(f);
    }
    c.xy_series(&indexed(&baseline.loss), BASELINE_COLOR, "series baseline");
    c.xy_series(&indexed(&controlled.loss), CONTROLLED_COLOR, "series controlled");
    c.legend(&[
        (BASELINE_COLOR, None, "baseline"),
        (CONTROLLED_COLOR, None, "controlled"),
    ]);
    c.finish()
}

/// Pairs a per-step series with its 1-based step numbers.
fn indexed(values: &[f64]) -> Vec<(f64, f64)> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64, v))
        .collect()
}

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    // NaN passes through so the series still breaks at unprobed steps
    v.clamp(lo, hi)
}

/// Splits a series into contiguous runs of finite points; non-finite y
/// values (unprobed steps, poisoned probes) become gaps in the line.
fn split_finite(pts: &[(f64, f64)]) -> Vec<Vec<(f64, f64)>> {
    let mut segments = Vec::new();
    let mut current = Vec::new();
    for &(x, y) in pts {
        if y.is_finite() {
            current.push((x, y));
        } else if !current.is_empty() {
            segments.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

/// Maps data coordinates into the fixed plot area, optionally through a
/// logarithmic y axis. The y range is padded by 5% (in transformed space)
/// so series do not sit on the border.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    log_y: bool,
}

impl Frame {
    fn new(x_min: f64, x_max: f64, y_lo: f64, y_hi: f64, log_y: bool) -> Frame {
        debug_assert!(!log_y || y_lo > 0.0, "log axis needs positive bounds");
        let (a, b) = if log_y { (y_lo.ln(), y_hi.ln()) } else { (y_lo, y_hi) };
        let span = if b > a { b - a } else { 1.0 };
        let (a, b) = (a - 0.05 * span, b + 0.05 * span);
        let (y_min, y_max) = if log_y { (a.exp(), b.exp()) } else { (a, b) };
        Frame { x_min, x_max, y_min, y_max, log_y }
    }

    fn x_px(&self, x: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::MIN_POSITIVE);
        LEFT + (x - self.x_min) / span * (RIGHT - LEFT)
    }

    fn y_px(&self, y: f64) -> f64 {
        let (v, lo, hi) = if self.log_y {
            // values at or below zero (a band's lower edge after a wild
            // step) are pinned to the bottom of the axis
            (y.max(self.y_min).ln(), self.y_min.ln(), self.y_max.ln())
        } else {
            (y, self.y_min, self.y_max)
        };
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        BOTTOM - (v - lo) / span * (BOTTOM - TOP)
    }
}

/// Tick positions at a 1/2/5 step covering `[lo, hi]`.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !span.is_finite() || span <= 0.0 {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm < 1.5 {
            1.0
        } else if norm < 3.5 {
            2.0
        } else if norm < 7.5 {
            5.0
        } else {
            10.0
        };
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

/// Powers of ten inside `[lo, hi]`, thinned when the range spans many
/// decades; falls back to the endpoints when no power of ten fits.
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let e0 = lo.log10().ceil() as i64;
    let e1 = hi.log10().floor() as i64;
    if e1 < e0 {
        return vec![lo, hi];
    }
    let stride = ((e1 - e0) / 6 + 1).max(1) as usize;
    (e0..=e1)
        .step_by(stride)
        .map(|e| 10f64.powi(e as i32))
        .collect()
}

/// Tick-label formatting: short decimal inside a comfortable range,
/// exponent notation outside it.
fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        return format!("{v:e}");
    }
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One chart under construction: a fixed frame plus an SVG body that
/// elements are appended to in paint order.
struct Chart {
    frame: Frame,
    body: String,
}

impl Chart {
    fn new(title: &str, x_label: &str, y_label: &str, frame: Frame) -> Chart {
        let mut body = String::with_capacity(16 * 1024);
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="Helvetica, Arial, sans-serif">"#
        );
        body.push('\n');
        body.push_str(STYLE);
        let _ = writeln!(
            body,
            r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
        );
        let mut chart = Chart { frame, body };
        chart.text(WIDTH / 2.0, 22.0, "middle", "title", title);

        for &t in &linear_ticks(frame.x_min, frame.x_max) {
            let x = frame.x_px(t);
            chart.line(x, TOP, x, BOTTOM, "grid");
            chart.line(x, BOTTOM, x, BOTTOM + 4.0, "axis");
            chart.text(x, BOTTOM + 16.0, "middle", "tick-label", &fmt_tick(t));
        }
        let y_ticks = if frame.log_y {
            log_ticks(frame.y_min, frame.y_max)
        } else {
            linear_ticks(frame.y_min, frame.y_max)
        };
        for &t in &y_ticks {
            let y = frame.y_px(t);
            chart.line(LEFT, y, RIGHT, y, "grid");
            chart.line(LEFT - 4.0, y, LEFT, y, "axis");
            chart.text(LEFT - 8.0, y + 4.0, "end", "tick-label", &fmt_tick(t));
        }
        chart.line(LEFT, TOP, LEFT, BOTTOM, "axis");
        chart.line(LEFT, BOTTOM, RIGHT, BOTTOM, "axis");
        chart.text((LEFT + RIGHT) / 2.0, HEIGHT - 10.0, "middle", "axis-label", x_label);
        let (cx, cy) = (18.0, (TOP + BOTTOM) / 2.0);
        let _ = writeln!(
            chart.body,
            r#"<text x="{}" y="{}" text-anchor="middle" class="axis-label" transform="rotate(-90 {} {})">{}</text>"#,
            px(cx),
            px(cy),
            px(cx),
            px(cy),
            esc(y_label)
        );
        chart
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
            px(x1),
            px(y1),
            px(x2),
            px(y2)
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, class: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" class="{class}">{}</text>"#,
            px(x),
            px(y),
            esc(content)
        );
    }

    fn points_attr(pts: &[(f64, f64)]) -> String {
        let mut s = String::with_capacity(pts.len() * 14);
        for (i, &(x, y)) in pts.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{},{}", px(x), px(y));
        }
        s
    }

    /// Draws a series, breaking the line wherever y is non-finite. A run
    /// of one point (an isolated probe between gaps) becomes a dot.
    fn xy_series(&mut self, pts: &[(f64, f64)], color: &str, class: &str) {
        for seg in split_finite(pts) {
            if seg.len() == 1 {
                let (x, y) = seg[0];
                let _ = writeln!(
                    self.body,
                    r#"<circle cx="{}" cy="{}" r="2" fill="{color}"/>"#,
                    px(self.frame.x_px(x)),
                    px(self.frame.y_px(y))
                );
            } else {
                let projected: Vec<(f64, f64)> = seg
                    .iter()
                    .map(|&(x, y)| (self.frame.x_px(x), self.frame.y_px(y)))
                    .collect();
                let _ = writeln!(
                    self.body,
                    r#"<polyline class="{class}" stroke="{color}" points="{}"/>"#,
                    Chart::points_attr(&projected)
                );
            }
        }
    }

    /// Shades mean ± std as a polygon per contiguous finite run.
    fn band(&mut self, mean: &[f64], std: &[f64], color: &str, class: &str) {
        let upper: Vec<(f64, f64)> = mean
            .iter()
            .zip(std)
            .enumerate()
            .map(|(i, (&m, &s))| ((i + 1) as f64, m + s))
            .collect();
        for seg in split_finite(&upper) {
            if seg.len() < 2 {
                continue;
            }
            let mut poly: Vec<(f64, f64)> = Vec::with_capacity(seg.len() * 2);
            for &(x, up) in &seg {
                poly.push((self.frame.x_px(x), self.frame.y_px(up)));
            }
            for &(x, _) in seg.iter().rev() {
                let i = x as usize - 1;
                poly.push((self.frame.x_px(x), self.frame.y_px(mean[i] - std[i])));
            }
            let _ = writeln!(
                self.body,
                r#"<polygon class="{class}" fill="{color}" points="{}"/>"#,
                Chart::points_attr(&poly)
            );
        }
    }

    fn fault_span(&mut self, fault: &FaultSpec) {
        let x0 = self.frame.x_px(fault.onset as f64);
        let x1 = self.frame.x_px(fault.end() as f64);
        let _ = writeln!(
            self.body,
            r#"<rect class="fault" x="{}" y="{}" width="{}" height="{}" fill="{FAULT_COLOR}"/>"#,
            px(x0),
            px(TOP),
            px((x1 - x0).max(1.0)),
            px(BOTTOM - TOP)
        );
    }

    fn threshold(&mut self, y: f64) {
        let py = self.frame.y_px(y);
        let _ = writeln!(
            self.body,
            r#"<line class="threshold" stroke="{THRESHOLD_COLOR}" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
            px(LEFT),
            px(py),
            px(RIGHT),
            px(py)
        );
    }

    fn legend(&mut self, entries: &[(&str, Option<&str>, &str)]) {
        let x = RIGHT - 170.0;
        let mut y = TOP + 14.0;
        for &(color, dash, label) in entries {
            let dash_attr = match dash {
                Some(d) => format!(r#" stroke-dasharray="{d}""#),
                None => String::new(),
            };
            let _ = writeln!(
                self.body,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="1.5"{dash_attr}/>"#,
                px(x),
                px(y - 4.0),
                px(x + 24.0),
                px(y - 4.0)
            );
            self.text(x + 30.0, y, "start", "legend-label", label);
            y += 16.0;
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}
