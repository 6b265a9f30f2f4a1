//! The three bench experiments (sine tracking, admittance placement and
//! holding, layered-tissue insertion), their metrics and pass/fail gates.
//!
//! Gates are stored with each metric so a report can be re-evaluated offline
//! from its serialized form.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{AdmittanceMode, GainSet, VirtualImpedance};
use crate::error::{Error, Result};
use crate::insertion::{ModuleConfig, ToolSpec};
use crate::scenario::{ArmConfig, Mode, Scenario, TissueConfig, TrajectoryConfig, WrenchInterval};
use crate::sim::{run, EventFlags, LogRecord};
use crate::tissue::STANDARD_SETUP_LABELS;
use crate::trajectory::InsertionProfile;

pub const TRACKING_MEAN_LIMIT: f64 = 1e-3;
/// Error standard deviation limit as a fraction of the sine amplitude.
pub const TRACKING_STD_FRACTION: f64 = 0.06;
pub const HOLD_DRIFT_LIMIT: f64 = 5e-4;
pub const STEP_RESPONSE_TOLERANCE: f64 = 0.01;
pub const ZERO_SCHEDULE_TOLERANCE: f64 = 1e-6;
pub const INSERTION_ERROR_LIMIT_PERCENT: f64 = 2.0;
pub const SKIN_PUNCTURE_DEPTH: f64 = 2e-3;
pub const SKIN_PUNCTURE_TOLERANCE: f64 = 5e-4;
/// Smallest step-to-step decrease in `|F_t|` counted as a force drop.
pub const FORCE_DROP_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gate {
    Below { limit: f64 },
    AtMost { limit: f64 },
    Above { limit: f64 },
    Within { center: f64, tolerance: f64 },
    Equals { target: f64 },
}

impl Gate {
    pub fn passes(&self, value: f64) -> bool {
        match *self {
            Gate::Below { limit } => value < limit,
            Gate::AtMost { limit } => value <= limit,
            Gate::Above { limit } => value > limit,
            Gate::Within { center, tolerance } => (value - center).abs() <= tolerance,
            Gate::Equals { target } => value == target,
        }
    }

    fn describe(&self) -> String {
        match *self {
            Gate::Below { limit } => format!("< {limit}"),
            Gate::AtMost { limit } => format!("<= {limit}"),
            Gate::Above { limit } => format!("> {limit}"),
            Gate::Within { center, tolerance } => format!("{center} +/- {tolerance}"),
            Gate::Equals { target } => format!("== {target}"),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Gate::Below { .. } => "below",
            Gate::AtMost { .. } => "at_most",
            Gate::Above { .. } => "above",
            Gate::Within { .. } => "within",
            Gate::Equals { .. } => "equals",
        }
    }

    fn params(&self) -> (f64, Option<f64>) {
        match *self {
            Gate::Below { limit } | Gate::AtMost { limit } | Gate::Above { limit } => (limit, None),
            Gate::Within { center, tolerance } => (center, Some(tolerance)),
            Gate::Equals { target } => (target, None),
        }
    }

    fn from_parts(kind: &str, threshold: Option<f64>, tolerance: Option<f64>) -> Result<Option<Self>> {
        let need = |v: Option<f64>| v.ok_or_else(|| Error::Parse(format!("gate '{kind}' needs a threshold")));
        Ok(Some(match kind {
            "" => return Ok(None),
            "below" => Gate::Below { limit: need(threshold)? },
            "at_most" => Gate::AtMost { limit: need(threshold)? },
            "above" => Gate::Above { limit: need(threshold)? },
            "equals" => Gate::Equals { target: need(threshold)? },
            "within" => Gate::Within {
                center: need(threshold)?,
                tolerance: need(tolerance)?,
            },
            other => return Err(Error::Parse(format!("unknown gate kind '{other}'"))),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub experiment: String,
    pub scenario: String,
    pub name: String,
    pub value: f64,
    pub unit: String,
    pub gate: Option<Gate>,
}

impl Metric {
    pub fn passed(&self) -> bool {
        self.gate.is_none_or(|g| g.passes(self.value))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Text,
    Csv,
    JsonLines,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Text => "txt",
            ReportFormat::Csv => "csv",
            ReportFormat::JsonLines => "jsonl",
        }
    }
}

/// Flat CSV row; the column order is the field order.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    experiment: String,
    scenario: String,
    metric: String,
    value: f64,
    unit: String,
    gate: String,
    threshold: Option<f64>,
    tolerance: Option<f64>,
    passed: bool,
}

pub const REPORT_CSV_COLUMNS: [&str; 9] = [
    "experiment", "scenario", "metric", "value", "unit", "gate", "threshold", "tolerance", "passed",
];

impl MetricsReport {
    fn push(&mut self, experiment: &str, scenario: &str, name: &str, value: f64, unit: &str, gate: Option<Gate>) {
        self.metrics.push(Metric {
            experiment: experiment.into(),
            scenario: scenario.into(),
            name: name.into(),
            value,
            unit: unit.into(),
            gate,
        });
    }

    pub fn extend(&mut self, other: MetricsReport) {
        self.metrics.extend(other.metrics);
    }

    /// True when every gated metric passes.
    pub fn passed(&self) -> bool {
        self.metrics.iter().all(Metric::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Metric> {
        self.metrics.iter().filter(|m| !m.passed())
    }

    pub fn find(&self, scenario: &str, name: &str) -> Option<&Metric> {
        self.metrics
            .iter()
            .find(|m| m.scenario == scenario && m.name == name)
    }

    pub fn emit(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Text => Ok(self.to_text()),
            ReportFormat::JsonLines => {
                let mut out = String::new();
                for m in &self.metrics {
                    out.push_str(&serde_json::to_string(m).map_err(|e| Error::Parse(e.to_string()))?);
                    out.push('\n');
                }
                Ok(out)
            }
            ReportFormat::Csv => {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
                w.write_record(REPORT_CSV_COLUMNS).map_err(csv_error)?;
                for m in &self.metrics {
                    let (threshold, tolerance) = m.gate.map(|g| g.params()).unzip();
                    w.serialize(CsvRow {
                        experiment: m.experiment.clone(),
                        scenario: m.scenario.clone(),
                        metric: m.name.clone(),
                        value: m.value,
                        unit: m.unit.clone(),
                        gate: m.gate.map(|g| g.kind()).unwrap_or("").into(),
                        threshold,
                        tolerance: tolerance.flatten(),
                        passed: m.passed(),
                    })
                    .map_err(csv_error)?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
                String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
            }
        }
    }

    /// Inverse of [`MetricsReport::emit`] for the CSV and JSON-lines formats.
    pub fn parse(text: &str, format: ReportFormat) -> Result<Self> {
        let mut report = MetricsReport::default();
        match format {
            ReportFormat::Text => {
                return Err(Error::Parse("the text report format is not parseable".into()))
            }
            ReportFormat::JsonLines => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    report
                        .metrics
                        .push(serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?);
                }
            }
            ReportFormat::Csv => {
                let mut r = csv::Reader::from_reader(text.as_bytes());
                let headers = r.headers().map_err(csv_error)?.clone();
                if headers.iter().ne(REPORT_CSV_COLUMNS) {
                    return Err(Error::Parse(format!("unexpected report columns {headers:?}")));
                }
                for row in r.deserialize::<CsvRow>() {
                    let row = row.map_err(csv_error)?;
                    report.metrics.push(Metric {
                        gate: Gate::from_parts(&row.gate, row.threshold, row.tolerance)?,
                        experiment: row.experiment,
                        scenario: row.scenario,
                        name: row.metric,
                        value: row.value,
                        unit: row.unit,
                    });
                }
            }
        }
        Ok(report)
    }

    fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            let verdict = match m.gate {
                None => "info".to_string(),
                Some(g) => format!("{} (gate {})", if m.passed() { "PASS" } else { "FAIL" }, g.describe()),
            };
            let _ = writeln!(
                out,
                "{:<11} {:<34} {:<28} {:>14.6e} {:<4} {}",
                m.experiment, m.scenario, m.name, m.value, m.unit, verdict
            );
        }
        let gated = self.metrics.iter().filter(|m| m.gate.is_some()).count();
        let failed = self.failures().count();
        let _ = writeln!(out, "{} gated metrics, {} failed", gated, failed);
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.emit(format)?.as_bytes())?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSettings {
    pub amplitude: f64,
    pub period: f64,
    pub periods: f64,
}

impl Default for TrackingSettings {
    fn default() -> Self {
        Self {
            amplitude: 0.05,
            period: 8.0,
            periods: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmittanceSettings {
    pub pushes: usize,
    /// Push magnitude range, N.
    pub force: [f64; 2],
    /// Push duration range, s.
    pub push_duration: [f64; 2],
    /// Zero-force placement time after each push, letting the operator's
    /// hand come to rest before holding engages.
    pub release: f64,
    pub hold: f64,
    /// Holding-mode step used for the push-release response check.
    pub step_force: f64,
    pub step_duration: f64,
    pub step_observe: f64,
}

impl Default for AdmittanceSettings {
    fn default() -> Self {
        Self {
            pushes: 4,
            force: [1.0, 3.0],
            push_duration: [0.3, 0.6],
            release: 0.4,
            hold: 1.5,
            step_force: 2.0,
            step_duration: 1.0,
            step_observe: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InsertionSettings {
    pub speeds: Vec<f64>,
    pub depth: f64,
    /// Time simulated after the ramp reaches full depth.
    pub settle: f64,
    pub haptic_scale: f64,
    pub tool: ToolSpec,
    pub module: ModuleConfig,
}

impl Default for InsertionSettings {
    fn default() -> Self {
        Self {
            speeds: vec![0.001, 0.002],
            depth: 0.010,
            settle: 2.0,
            haptic_scale: 1.0,
            tool: ToolSpec::default(),
            module: ModuleConfig::default(),
        }
    }
}

/// Everything the experiment runner can be configured with. All fields
/// default, so an empty TOML file is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dt: f64,
    pub gains: GainSet,
    pub impedance: VirtualImpedance,
    pub arm: ArmConfig,
    pub tracking: TrackingSettings,
    pub admittance: AdmittanceSettings,
    pub insertion: InsertionSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dt: 1e-3,
            gains: GainSet::default(),
            impedance: VirtualImpedance::default(),
            arm: ArmConfig::default(),
            tracking: TrackingSettings::default(),
            admittance: AdmittanceSettings::default(),
            insertion: InsertionSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn base(&self, name: String, mode: Mode, duration: f64) -> Scenario {
        let mut s = Scenario::new(name, mode, duration);
        s.dt = self.dt;
        s.seed = self.seed;
        s.gains = self.gains.clone();
        s.impedance = self.impedance.clone();
        s.arm = self.arm.clone();
        s
    }
}

/// A report plus the raw logs it was computed from, keyed by scenario name.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub logs: Vec<(String, Vec<LogRecord>)>,
}

const AXES: [&str; 3] = ["x", "y", "z"];

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn tracking_scenarios(cfg: &ExperimentConfig) -> Vec<Scenario> {
    let t = &cfg.tracking;
    AXES.iter()
        .enumerate()
        .map(|(axis, name)| {
            let mut s = cfg.base(format!("sine-{name}"), Mode::Track, t.period * t.periods);
            s.trajectory = TrajectoryConfig::Sine {
                axis,
                amplitude: t.amplitude,
                period: t.period,
                start: None,
            };
            s
        })
        .collect()
}

pub fn experiment_tracking(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let t = &cfg.tracking;
    if !(t.amplitude > 0.0) || !(t.period > 0.0) || !(t.periods > 0.0) {
        return Err(Error::Config("tracking needs amplitude, period and periods > 0".into()));
    }
    let scenarios = tracking_scenarios(cfg);
    let logs = scenarios
        .par_iter()
        .map(|s| run(s).map(|log| (s.name.clone(), log)))
        .collect::<Result<Vec<_>>>()?;

    let mut report = MetricsReport::default();
    let std_limit = TRACKING_STD_FRACTION * t.amplitude;
    for (name, log) in &logs {
        for (k, axis) in AXES.iter().enumerate() {
            let err: Vec<f64> = log.iter().map(|r| r.task_error[k]).collect();
            let abs: Vec<f64> = err.iter().map(|e| e.abs()).collect();
            let (mean_abs, _) = mean_std(&abs);
            let (_, std) = mean_std(&err);
            let sem = std / (err.len() as f64).sqrt();
            let max = abs.iter().cloned().fold(0.0, f64::max);
            report.push("tracking", name, &format!("mean_abs_error_{axis}"), mean_abs, "m", Some(Gate::Below { limit: TRACKING_MEAN_LIMIT }));
            report.push("tracking", name, &format!("error_std_{axis}"), std, "m", Some(Gate::Below { limit: std_limit }));
            report.push("tracking", name, &format!("error_std_pct_{axis}"), 100.0 * std / t.amplitude, "%", None);
            report.push("tracking", name, &format!("error_sem_{axis}"), sem, "m", None);
            report.push("tracking", name, &format!("max_abs_error_{axis}"), max, "m", None);
        }
    }
    Ok(ExperimentOutput { report, logs })
}

/// One scripted placement push and the hold that follows it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushSegment {
    pub axis: usize,
    pub force: f64,
    pub push_start: f64,
    pub push_end: f64,
    pub hold_start: f64,
    pub hold_end: f64,
}

/// Seeded random pushes on the translational axes, each followed by a
/// zero-force release and a holding phase.
pub fn admittance_schedule(settings: &AdmittanceSettings, seed: u64) -> (Vec<PushSegment>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.5;
    let mut segments = Vec::with_capacity(settings.pushes);
    for _ in 0..settings.pushes {
        let axis = rng.random_range(0..3);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let magnitude = rng.random_range(settings.force[0]..=settings.force[1]);
        let duration = rng.random_range(settings.push_duration[0]..=settings.push_duration[1]);
        let push_end = t + duration;
        let hold_start = push_end + settings.release;
        segments.push(PushSegment {
            axis,
            force: sign * magnitude,
            push_start: t,
            push_end,
            hold_start,
            hold_end: hold_start + settings.hold,
        });
        t = hold_start + settings.hold;
    }
    (segments, t)
}

pub fn admittance_placement_scenario(cfg: &ExperimentConfig) -> (Scenario, Vec<PushSegment>) {
    let (segments, end) = admittance_schedule(&cfg.admittance, cfg.seed);
    let mut s = cfg.base("placement-hold".into(), Mode::Admittance, end);
    for seg in &segments {
        let mut wrench = [0.0; 6];
        wrench[seg.axis] = seg.force;
        s.wrench_schedule.push(WrenchInterval {
            t_start: seg.push_start,
            t_end: seg.push_end,
            wrench,
            mode: AdmittanceMode::Placement,
        });
        s.wrench_schedule.push(WrenchInterval {
            t_start: seg.push_end,
            t_end: seg.hold_start,
            wrench: [0.0; 6],
            mode: AdmittanceMode::Placement,
        });
    }
    (s, segments)
}

/// Response of `m·ẍ + b·ẋ + k·x = u(t)` from rest to a unit step at `t = 0`.
pub fn second_order_step(m: f64, b: f64, k: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let wn = (k / m).sqrt();
    let zeta = b / (2.0 * (k * m).sqrt());
    let shape = if (zeta - 1.0).abs() < 1e-9 {
        1.0 - (1.0 + wn * t) * (-wn * t).exp()
    } else if zeta < 1.0 {
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        1.0 - (-zeta * wn * t).exp() * ((wd * t).cos() + zeta * wn / wd * (wd * t).sin())
    } else {
        let root = (zeta * zeta - 1.0).sqrt();
        let s1 = -wn * (zeta - root);
        let s2 = -wn * (zeta + root);
        1.0 + (s2 * (s1 * t).exp() - s1 * (s2 * t).exp()) / (s1 - s2)
    };
    shape / k
}

pub fn admittance_step_scenario(cfg: &ExperimentConfig) -> Scenario {
    let a = &cfg.admittance;
    let mut s = cfg.base("holding-step".into(), Mode::Admittance, 0.5 + a.step_duration + a.step_observe);
    s.wrench_schedule.push(WrenchInterval {
        t_start: 0.5,
        t_end: 0.5 + a.step_duration,
        wrench: [a.step_force, 0.0, 0.0, 0.0, 0.0, 0.0],
        mode: AdmittanceMode::Holding,
    });
    s
}

fn position(r: &LogRecord) -> Vector3<f64> {
    r.pose.position
}

fn index_at(log: &[LogRecord], t: f64, dt: f64) -> usize {
    ((t / dt).round() as usize).min(log.len() - 1)
}

pub fn experiment_admittance(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (placement, segments) = admittance_placement_scenario(cfg);
    let step = admittance_step_scenario(cfg);
    let mut zero = cfg.base("zero-wrench".into(), Mode::Admittance, 2.0);
    zero.wrench_schedule.clear();

    let scenarios = [placement, step, zero];
    let logs = scenarios
        .par_iter()
        .map(|s| run(s).map(|log| (s.name.clone(), log)))
        .collect::<Result<Vec<_>>>()?;
    let dt = cfg.dt;
    let mut report = MetricsReport::default();

    let log = &logs[0].1;
    let name = &logs[0].0;
    let mut final_anchor = position(&log[0]);
    for (i, seg) in segments.iter().enumerate() {
        let p0 = position(&log[index_at(log, seg.push_start, dt)]);
        let p1 = position(&log[index_at(log, seg.hold_start, dt)]);
        let moved = (p1[seg.axis] - p0[seg.axis]) * seg.force.signum();
        report.push("admittance", name, &format!("push{}_displacement_{}", i + 1, AXES[seg.axis]), moved, "m", Some(Gate::Above { limit: 0.0 }));
        let h0 = index_at(log, seg.hold_start, dt);
        let h1 = index_at(log, seg.hold_end, dt);
        let anchor = position(&log[h0]);
        let drift = log[h0..=h1]
            .iter()
            .map(|r| (position(r) - anchor).norm())
            .fold(0.0, f64::max);
        report.push("admittance", name, &format!("hold{}_drift", i + 1), drift, "m", Some(Gate::Below { limit: HOLD_DRIFT_LIMIT }));
        final_anchor = anchor;
    }
    let retained = (position(log.last().expect("non-empty log")) - final_anchor).norm();
    report.push("admittance", name, "final_hold_offset", retained, "m", Some(Gate::Below { limit: HOLD_DRIFT_LIMIT }));

    // holding-mode push and release against the analytic spring response
    let (name, log) = (&logs[1].0, &logs[1].1);
    let a = &cfg.admittance;
    let (m, b, k) = (cfg.impedance.mass[0], cfg.impedance.damping[0], cfg.impedance.stiffness[0]);
    let x0 = log[0].pose.position.x;
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for r in log {
        let t = r.t - 0.5;
        let ode = a.step_force * (second_order_step(m, b, k, t) - second_order_step(m, b, k, t - a.step_duration));
        worst = worst.max((r.pose.position.x - x0 - ode).abs());
        peak = peak.max(ode.abs());
    }
    report.push("admittance", name, "peak_displacement", peak, "m", None);
    report.push("admittance", name, "max_response_deviation", worst, "m", None);
    report.push("admittance", name, "response_deviation_rel", worst / peak, "1", Some(Gate::Below { limit: STEP_RESPONSE_TOLERANCE }));

    let (name, log) = (&logs[2].0, &logs[2].1);
    let offset = (position(log.last().expect("non-empty log")) - position(&log[0])).norm();
    report.push("admittance", name, "end_offset", offset, "m", Some(Gate::Below { limit: ZERO_SCHEDULE_TOLERANCE }));

    Ok(ExperimentOutput {
        report,
        logs: logs.into_iter().collect(),
    })
}

/// Insertion-axis quantities needed for the insertion metrics, extracted
/// either from a simulation log or from a teleoperation state stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertionSample {
    pub t: f64,
    pub haptic_target: f64,
    pub depth: f64,
    pub force: f64,
    pub drive_force: f64,
    pub puncture: bool,
}

impl From<&LogRecord> for InsertionSample {
    fn from(r: &LogRecord) -> Self {
        Self {
            t: r.t,
            haptic_target: r.haptic_target,
            depth: r.depth,
            force: r.sensed_force,
            drive_force: r.drive_force,
            puncture: r.events.contains(EventFlags::PUNCTURE),
        }
    }
}

pub fn insertion_scenario_name(setup: usize, speed: f64) -> String {
    format!("setup{}-{}mm_s", setup, speed * 1e3)
}

/// Insert-mode scenario for standard setup `setup` (1..=4) at `speed` m/s.
pub fn insertion_scenario(cfg: &ExperimentConfig, setup: usize, speed: f64) -> Result<Scenario> {
    let ins = &cfg.insertion;
    let profile = InsertionProfile::new(speed, ins.depth)?;
    let mut s = cfg.base(insertion_scenario_name(setup, speed), Mode::Insert, profile.ramp_time() + ins.settle);
    s.tool = ins.tool.clone();
    s.module = ins.module.clone();
    s.insertion.profile = Some(profile);
    s.insertion.haptic_scale = ins.haptic_scale;
    s.tissue = TissueConfig {
        setup: Some(setup),
        label: None,
        layers: None,
    };
    s.validate()?;
    Ok(s)
}

/// Metrics of one insertion run. `layers` is the number of tissue layers
/// and `force_limit` the module's axial force limit.
pub fn insertion_metrics(
    scenario: &str,
    samples: &[InsertionSample],
    commanded_depth: f64,
    layers: usize,
    force_limit: f64,
) -> MetricsReport {
    let mut report = MetricsReport::default();
    let max_err = samples
        .iter()
        .map(|s| (s.haptic_target - s.depth).abs())
        .fold(0.0, f64::max);
    report.push("insertion", scenario, "max_tracking_error_pct", 100.0 * max_err / commanded_depth.abs(), "%", Some(Gate::Below { limit: INSERTION_ERROR_LIMIT_PERCENT }));

    let drops: Vec<usize> = (1..samples.len())
        .filter(|&i| samples[i - 1].force.abs() - samples[i].force.abs() > FORCE_DROP_THRESHOLD)
        .collect();
    let punctures: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].puncture).collect();
    let skin = drops.first().map(|&i| samples[i].depth).unwrap_or(f64::NAN);
    report.push("insertion", scenario, "skin_puncture_depth", skin, "m", Some(Gate::Within { center: SKIN_PUNCTURE_DEPTH, tolerance: SKIN_PUNCTURE_TOLERANCE }));
    report.push("insertion", scenario, "force_drops", drops.len() as f64, "1", Some(Gate::Equals { target: layers as f64 }));
    report.push("insertion", scenario, "puncture_events", punctures.len() as f64, "1", Some(Gate::Equals { target: layers as f64 }));
    let unmatched = punctures.iter().filter(|i| !drops.contains(i)).count();
    report.push("insertion", scenario, "punctures_without_drop", unmatched as f64, "1", Some(Gate::Equals { target: 0.0 }));

    let max_drive = samples.iter().map(|s| s.drive_force).fold(f64::NEG_INFINITY, f64::max);
    let over = samples.iter().filter(|s| s.drive_force > force_limit).count();
    report.push("insertion", scenario, "max_delivered_force", max_drive, "N", Some(Gate::AtMost { limit: force_limit }));
    report.push("insertion", scenario, "steps_over_force_limit", over as f64, "1", Some(Gate::Equals { target: 0.0 }));
    let final_depth = samples.last().map(|s| s.depth).unwrap_or(0.0);
    report.push("insertion", scenario, "final_depth", final_depth, "m", None);
    report
}

pub fn experiment_insertion(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let ins = &cfg.insertion;
    if ins.speeds.is_empty() {
        return Err(Error::Config("insertion experiment needs at least one speed".into()));
    }
    let mut scenarios = Vec::new();
    for setup in 1..=STANDARD_SETUP_LABELS.len() {
        for &speed in &ins.speeds {
            scenarios.push(insertion_scenario(cfg, setup, speed)?);
        }
    }
    let logs = scenarios
        .par_iter()
        .map(|s| run(s).map(|log| (s.name.clone(), log)))
        .collect::<Result<Vec<_>>>()?;

    let mut report = MetricsReport::default();
    for (scenario, (name, log)) in scenarios.iter().zip(&logs) {
        let samples: Vec<InsertionSample> = log.iter().map(InsertionSample::from).collect();
        let layers = scenario.tissue.sample()?.layers().len();
        report.extend(insertion_metrics(
            name,
            &samples,
            ins.depth * ins.haptic_scale,
            layers,
            scenario.tool.max_insertion_force,
        ));
    }
    Ok(ExperimentOutput { report, logs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Tracking,
    Admittance,
    Insertion,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::Tracking, Experiment::Admittance, Experiment::Insertion];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Tracking => "tracking",
            Experiment::Admittance => "admittance",
            Experiment::Insertion => "insertion",
        }
    }

    pub fn run(&self, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
        match self {
            Experiment::Tracking => experiment_tracking(cfg),
            Experiment::Admittance => experiment_admittance(cfg),
            Experiment::Insertion => experiment_insertion(cfg),
        }
    }
}
