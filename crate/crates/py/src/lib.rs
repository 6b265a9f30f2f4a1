use insertion_core::control::{insertion_control as insertion_law, GainSet};
use insertion_core::dynamics::{dynamics_terms, inverse_dynamics as rnea, STANDARD_GRAVITY};
use insertion_core::experiments::{insertion_scenario, Experiment, ExperimentConfig, MetricsReport, ReportFormat};
use insertion_core::kinematics::{forward_kinematics as fk, geometric_jacobian, JointState, KinematicChain};
use insertion_core::scenario::{Mode, Scenario};
use insertion_core::sim::{csv_header, csv_string, run as run_scenario, write_csv_file, LogRecord, Simulation};
use insertion_core::Error;
use insertion_teleop::protocol::{decode_command, encode_command};
use nalgebra::{DVector, Vector3, Vector6};
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(insertion_sim, SimulationError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Domain(_) | Error::Parse(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Singular { .. } | Error::Numerical(_) | Error::Simulation { .. } => SimulationError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "track" => Ok(Mode::Track),
        "admittance" => Ok(Mode::Admittance),
        "insert" => Ok(Mode::Insert),
        other => Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
    }
}

fn record_dict<'py>(py: Python<'py>, r: &LogRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", r.t)?;
    d.set_item("q", r.q.as_slice().to_vec())?;
    d.set_item("dq", r.dq.as_slice().to_vec())?;
    d.set_item("position", r.pose.position.as_slice().to_vec())?;
    d.set_item("rotvec", r.pose.rotvec().as_slice().to_vec())?;
    d.set_item("desired_position", r.desired.position.as_slice().to_vec())?;
    d.set_item("task_error", r.task_error.as_slice().to_vec())?;
    d.set_item("tau", r.tau.as_slice().to_vec())?;
    d.set_item("depth", r.depth)?;
    d.set_item("theta", r.theta)?;
    d.set_item("v", r.velocity)?;
    d.set_item("F_t", r.sensed_force)?;
    d.set_item("haptic_target", r.haptic_target)?;
    d.set_item("drive_force", r.drive_force)?;
    d.set_item("events", r.events.0)?;
    Ok(d)
}

/// A scenario description, loaded from TOML or built from the presets.
#[pyclass(name = "Scenario", module = "insertion_sim", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Scenario::from_toml_str(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Scenario::from_toml_file(path).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Standard insertion run for tissue `setup` (1..=4) at `speed` m/s.
    #[staticmethod]
    fn insertion(setup: usize, speed: f64) -> PyResult<Self> {
        insertion_scenario(&ExperimentConfig::default(), setup, speed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[setter]
    fn set_duration(&mut self, duration: f64) {
        self.inner.duration = duration;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, mode={:?}, dt={}, duration={})",
            self.inner.name,
            self.inner.mode.as_str(),
            self.inner.dt,
            self.inner.duration
        )
    }
}

/// Recorded run; one row per tick including the initial state.
#[pyclass(name = "Log", module = "insertion_sim")]
struct PyLog {
    records: Vec<LogRecord>,
}

#[pymethods]
impl PyLog {
    fn __len__(&self) -> usize {
        self.records.len()
    }

    fn columns(&self) -> Vec<String> {
        let dof = self.records.first().map_or(0, |r| r.q.len());
        csv_header(dof).split(',').map(str::to_owned).collect()
    }

    /// One CSV column as a list of floats.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let index = self
            .columns()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| PyKeyError::new_err(name.to_owned()))?;
        Ok(self.records.iter().map(|r| r.row()[index]).collect())
    }

    fn record<'py>(&self, py: Python<'py>, index: isize) -> PyResult<Bound<'py, PyDict>> {
        let n = self.records.len() as isize;
        let i = if index < 0 { n + index } else { index };
        if !(0..n).contains(&i) {
            return Err(pyo3::exceptions::PyIndexError::new_err("record index out of range"));
        }
        record_dict(py, &self.records[i as usize])
    }

    fn to_csv(&self) -> String {
        csv_string(&self.records)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        write_csv_file(path, &self.records).map_err(to_py)
    }
}

/// Live simulation driven step by step.
#[pyclass(name = "Simulation", module = "insertion_sim")]
struct PySimulation {
    inner: Simulation,
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(scenario: &PyScenario) -> PyResult<Self> {
        Simulation::new(scenario.inner.clone()).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    #[getter]
    fn tick(&self) -> u64 {
        self.inner.tick()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode().as_str()
    }

    /// Latest record as a dict.
    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        record_dict(py, self.inner.record())
    }

    /// Advances `ticks` steps and returns the final record.
    #[pyo3(signature = (ticks = 1))]
    fn step<'py>(&mut self, py: Python<'py>, ticks: u64) -> PyResult<Bound<'py, PyDict>> {
        for _ in 0..ticks {
            self.inner.step().map_err(to_py)?;
        }
        self.state(py)
    }

    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.set_mode(parse_mode(mode)?).map_err(to_py)
    }

    fn set_haptic_target(&mut self, x_h: f64) -> PyResult<()> {
        self.inner.set_haptic_target(x_h).map_err(to_py)
    }

    fn jog(&mut self, axis: usize, delta: f64) -> PyResult<()> {
        self.inner.jog(axis, delta).map_err(to_py)
    }

    fn apply_wrench(&mut self, wrench: [f64; 6], duration: f64) -> PyResult<()> {
        self.inner.apply_wrench(Vector6::from(wrench), duration).map_err(to_py)
    }

    fn reset(&mut self) -> PyResult<()> {
        self.inner.reset().map_err(to_py)
    }
}

/// Metrics and gate verdicts of one or more experiments.
#[pyclass(name = "Report", module = "insertion_sim")]
struct PyReport {
    inner: MetricsReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .metrics
            .iter()
            .map(|m| {
                let d = PyDict::new(py);
                d.set_item("experiment", &m.experiment)?;
                d.set_item("scenario", &m.scenario)?;
                d.set_item("name", &m.name)?;
                d.set_item("value", m.value)?;
                d.set_item("unit", &m.unit)?;
                d.set_item("passed", m.passed())?;
                d.set_item("gated", m.gate.is_some())?;
                Ok(d)
            })
            .collect()
    }

    fn value(&self, scenario: &str, name: &str) -> PyResult<f64> {
        self.inner
            .find(scenario, name)
            .map(|m| m.value)
            .ok_or_else(|| PyKeyError::new_err(format!("{scenario}/{name}")))
    }

    /// Serialised report; `format` is "text", "csv" or "jsonl".
    #[pyo3(signature = (format = "text"))]
    fn emit(&self, format: &str) -> PyResult<String> {
        let format = match format {
            "text" | "txt" => ReportFormat::Text,
            "csv" => ReportFormat::Csv,
            "jsonl" | "json-lines" => ReportFormat::JsonLines,
            other => return Err(PyValueError::new_err(format!("unknown report format '{other}'"))),
        };
        self.inner.emit(format).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.metrics.len()
    }
}


#[pyfunction]
fn run(py: Python<'_>, scenario: &PyScenario) -> PyResult<PyLog> {
    let s = scenario.inner.clone();
    let records = py.detach(move || run_scenario(&s)).map_err(to_py)?;
    Ok(PyLog { records })
}

/// Runs "tracking", "admittance", "insertion" or "all".
#[pyfunction]
#[pyo3(signature = (name = "all", config = None, seed = None))]
fn run_experiment(py: Python<'_>, name: &str, config: Option<&str>, seed: Option<u64>) -> PyResult<PyReport> {
    let mut cfg = match config {
        Some(text) => ExperimentConfig::from_toml_str(text).map_err(to_py)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let selected: Vec<Experiment> = match name {
        "all" => Experiment::ALL.to_vec(),
        other => vec![Experiment::ALL
            .into_iter()
            .find(|e| e.name() == other)
            .ok_or_else(|| PyValueError::new_err(format!("unknown experiment '{other}'")))?],
    };
    let report = py
        .detach(move || -> insertion_core::Result<MetricsReport> {
            let mut report = MetricsReport::default();
            for e in selected {
                report.extend(e.run(&cfg)?.report);
            }
            Ok(report)
        })
        .map_err(to_py)?;
    Ok(PyReport { inner: report })
}

fn arm_state(q: Vec<f64>, dq: Option<Vec<f64>>) -> PyResult<(KinematicChain, JointState)> {
    let chain = KinematicChain::default_arm();
    let n = q.len();
    let dq = dq.unwrap_or_else(|| vec![0.0; n]);
    if n != chain.dof() || dq.len() != n {
        return Err(PyValueError::new_err(format!("the default arm has {} joints", chain.dof())));
    }
    Ok((chain, JointState::new(DVector::from_vec(q), DVector::from_vec(dq))))
}

/// Tool pose of the default arm: (position, rotation vector).
#[pyfunction]
fn forward_kinematics(q: Vec<f64>) -> PyResult<([f64; 3], [f64; 3])> {
    let (chain, state) = arm_state(q, None)?;
    let pose = fk(&chain, &state.q).map_err(to_py)?;
    Ok((pose.position.into(), pose.rotvec().into()))
}

/// 6×n geometric Jacobian of the default arm, rows [v; ω].
#[pyfunction]
fn jacobian(q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let (chain, state) = arm_state(q, None)?;
    let j = geometric_jacobian(&chain, &state.q).map_err(to_py)?;
    Ok(j.row_iter().map(|r| r.iter().copied().collect()).collect())
}

#[pyfunction]
fn inverse_dynamics(q: Vec<f64>, dq: Vec<f64>, ddq: Vec<f64>) -> PyResult<Vec<f64>> {
    let (chain, state) = arm_state(q, Some(dq))?;
    if ddq.len() != chain.dof() {
        return Err(PyValueError::new_err("ddq has the wrong length"));
    }
    let tau = rnea(&chain, &state, &DVector::from_vec(ddq), &Vector3::from(STANDARD_GRAVITY)).map_err(to_py)?;
    Ok(tau.as_slice().to_vec())
}

#[pyfunction]
fn mass_matrix(q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let (chain, state) = arm_state(q, None)?;
    let m = dynamics_terms(&chain, &state, &Vector3::from(STANDARD_GRAVITY)).map_err(to_py)?.mass_matrix;
    Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Insertion velocity command with the default or given gains.
#[pyfunction]
#[pyo3(signature = (x_h, x_t, v_t, f_t, kp = None, kd = None, ko = None))]
fn insertion_control(x_h: f64, x_t: f64, v_t: f64, f_t: f64, kp: Option<f64>, kd: Option<f64>, ko: Option<f64>) -> f64 {
    let base = GainSet::default();
    let gains = GainSet {
        insertion_kp: kp.unwrap_or(base.insertion_kp),
        insertion_kd: kd.unwrap_or(base.insertion_kd),
        insertion_ko: ko.unwrap_or(base.insertion_ko),
        ..base
    };
    insertion_law(x_h, x_t, v_t, f_t, &gains)
}

/// Validates a teleop command line and returns its canonical encoding.
#[pyfunction]
fn canonical_command(line: &str) -> PyResult<String> {
    decode_command(line)
        .map(|msg| encode_command(&msg))
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn insertion_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PySimulation>()?;
    m.add_class::<PyLog>()?;
    m.add_class::<PyReport>()?;
    m.add("SimulationError", m.py().get_type::<SimulationError>())?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(jacobian, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(mass_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(insertion_control, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_command, m)?)?;
    Ok(())
}
