//! Deterministic fixed-step simulation loop.
//!
//! Each tick samples the operator/trajectory inputs at `t = k·dt`, evaluates
//! the controller for the active mode, advances the arm plant (and, in
//! insert mode, the insertion module against the tissue), then logs the
//! state at `t = (k+1)·dt`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DVector, Vector3, Vector6};

use crate::control::{
    admittance_step, computed_torque, insertion_control, pseudo_inverse, task_error, to_dmatrix,
    AdmittanceMode, AdmittanceState, DesiredMotion, GainSet,
};
use crate::dynamics::forward_dynamics;
use crate::error::{Error, Result};
use crate::insertion::{InsertionModule, InsertionState};
use crate::kinematics::{
    forward_kinematics, geometric_jacobian, task_state, JointState, KinematicChain, Pose,
};
use crate::scenario::{Integrator, Mode, Scenario, TrajectoryConfig};
use crate::tissue::TissueSample;
use crate::trajectory::TrajectorySpec;

/// Bit flags attached to each log record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct EventFlags(pub u8);

impl EventFlags {
    pub const PUNCTURE: u8 = 1;
    pub const FORCE_SATURATED: u8 = 2;
    pub const SPEED_SATURATED: u8 = 4;
    pub const SPIN_SATURATED: u8 = 8;

    pub fn contains(&self, flag: u8) -> bool {
        self.0 & flag != 0
    }

    pub fn set(&mut self, flag: u8, on: bool) {
        if on {
            self.0 |= flag;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
    pub pose: Pose,
    pub desired: Pose,
    /// `[p̃; φ̃]` at `t`.
    pub task_error: Vector6<f64>,
    /// Torque applied over the step that ended at `t`.
    pub tau: DVector<f64>,
    pub depth: f64,
    pub theta: f64,
    pub velocity: f64,
    pub sensed_force: f64,
    /// Haptic target the insertion law saw during the step.
    pub haptic_target: f64,
    /// Axial force delivered by the insertion drive during the step.
    pub drive_force: f64,
    pub events: EventFlags,
}

/// Advances the arm by one step under constant torque and wrench.
pub fn step_plant(
    chain: &KinematicChain,
    state: &JointState,
    tau: &DVector<f64>,
    wrench: &Vector6<f64>,
    gravity: &Vector3<f64>,
    dt: f64,
    integrator: Integrator,
) -> Result<JointState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("plant step needs dt > 0, got {dt}")));
    }
    let next = match integrator {
        Integrator::SemiImplicitEuler => {
            let ddq = forward_dynamics(chain, state, tau, wrench, gravity)?;
            let dq = &state.dq + ddq * dt;
            let q = &state.q + &dq * dt;
            JointState::new(q, dq)
        }
        Integrator::Rk4 => {
            let f = |s: &JointState| -> Result<(DVector<f64>, DVector<f64>)> {
                Ok((s.dq.clone(), forward_dynamics(chain, s, tau, wrench, gravity)?))
            };
            let shifted = |k: &(DVector<f64>, DVector<f64>), h: f64| {
                JointState::new(&state.q + &k.0 * h, &state.dq + &k.1 * h)
            };
            let k1 = f(state)?;
            let k2 = f(&shifted(&k1, dt / 2.0))?;
            let k3 = f(&shifted(&k2, dt / 2.0))?;
            let k4 = f(&shifted(&k3, dt))?;
            let q = &state.q + (&k1.0 + &k2.0 * 2.0 + &k3.0 * 2.0 + &k4.0) * (dt / 6.0);
            let dq = &state.dq + (&k1.1 + &k2.1 * 2.0 + &k3.1 * 2.0 + &k4.1) * (dt / 6.0);
            JointState::new(q, dq)
        }
    };
    if next.q.iter().chain(next.dq.iter()).all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::Numerical("non-finite joint state after plant step".into()))
    }
}

#[derive(Debug, Clone)]
enum Reference {
    Trajectory(TrajectorySpec),
    Hold(Pose),
}

/// One live simulation. [`run`] drives it from the scenario alone; the
/// teleoperation service drives it from operator commands.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    chain: KinematicChain,
    gravity: Vector3<f64>,
    mode: Mode,
    gains: GainSet,
    reference: Reference,
    jog: Vector6<f64>,
    arm: JointState,
    admittance: AdmittanceState,
    admittance_mode: AdmittanceMode,
    module: InsertionModule,
    tissue: TissueSample,
    haptic_override: Option<f64>,
    operator_wrench: Option<(Vector6<f64>, u64)>,
    tick: u64,
    last: LogRecord,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let chain = scenario.arm.chain()?;
        let q0 = scenario.initial_q();
        let pose0 = forward_kinematics(&chain, &q0)?;
        let reference = match &scenario.trajectory {
            TrajectoryConfig::Sine {
                axis,
                amplitude,
                period,
                start,
            } => Reference::Trajectory(TrajectorySpec::sine(
                *axis,
                *amplitude,
                *period,
                start.map(|s| s.pose()).unwrap_or(pose0),
            )?),
            TrajectoryConfig::PointToPoint {
                start,
                goal,
                duration,
            } => Reference::Trajectory(TrajectorySpec::point_to_point(
                start.map(|s| s.pose()).unwrap_or(pose0),
                goal.pose(),
                *duration,
            )?),
            TrajectoryConfig::Hold => Reference::Hold(pose0),
        };

        let dq0 = match (&scenario.arm.initial_dq, &reference, scenario.mode) {
            (Some(dq), _, _) => DVector::from_vec(dq.clone()),
            (None, Reference::Trajectory(spec), Mode::Track) => {
                let twist = spec.sample(0.0)?.state.twist;
                let jac = to_dmatrix(&geometric_jacobian(&chain, &q0)?);
                pseudo_inverse(&jac, 0.0) * DVector::from_column_slice(twist.as_slice())
            }
            _ => DVector::zeros(chain.dof()),
        };
        let arm = JointState::new(q0, dq0);
        let module = InsertionModule::new(scenario.tool.clone(), scenario.module.clone(), scenario.seed)?;
        let tissue = scenario.tissue.sample()?;

        let mut sim = Self {
            gravity: scenario.gravity_vector(),
            mode: scenario.mode,
            gains: scenario.gains.clone(),
            chain,
            reference,
            jog: Vector6::zeros(),
            admittance: AdmittanceState::at(pose0),
            admittance_mode: AdmittanceMode::Holding,
            arm,
            module,
            tissue,
            haptic_override: None,
            operator_wrench: None,
            tick: 0,
            last: LogRecord {
                t: 0.0,
                q: DVector::zeros(0),
                dq: DVector::zeros(0),
                pose: pose0,
                desired: pose0,
                task_error: Vector6::zeros(),
                tau: DVector::zeros(0),
                depth: 0.0,
                theta: 0.0,
                velocity: 0.0,
                sensed_force: 0.0,
                haptic_target: 0.0,
                drive_force: 0.0,
                events: EventFlags::default(),
            },
            scenario,
        };
        let tau0 = DVector::zeros(sim.chain.dof());
        sim.last = sim.make_record(tau0, 0.0, 0.0, EventFlags::default())?;
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.dt
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn gains(&self) -> &GainSet {
        &self.gains
    }

    pub fn arm(&self) -> &JointState {
        &self.arm
    }

    pub fn insertion(&self) -> &InsertionState {
        self.module.state()
    }

    pub fn tissue(&self) -> &TissueSample {
        &self.tissue
    }

    pub fn admittance(&self) -> &AdmittanceState {
        &self.admittance
    }

    /// Record describing the current state.
    pub fn record(&self) -> &LogRecord {
        &self.last
    }

    fn current_pose(&self) -> Result<Pose> {
        forward_kinematics(&self.chain, &self.arm.q)
    }

    /// Switches control mode, re-anchoring the new mode at the current pose.
    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        if mode == self.mode {
            return Ok(());
        }
        let pose = self.current_pose()?;
        match mode {
            Mode::Track => {
                self.gains.validate_tracking()?;
                self.reference = Reference::Hold(pose);
                self.jog = Vector6::zeros();
            }
            Mode::Admittance => {
                self.admittance = AdmittanceState::at(pose);
                self.admittance_mode = AdmittanceMode::Holding;
            }
            Mode::Insert => {
                self.reference = Reference::Hold(pose);
                self.jog = Vector6::zeros();
            }
        }
        self.mode = mode;
        Ok(())
    }

    pub fn set_gains(&mut self, gains: GainSet) -> Result<()> {
        gains.validate()?;
        self.gains = gains;
        Ok(())
    }

    /// Offsets the tracked reference along one task axis.
    pub fn jog(&mut self, axis: usize, delta: f64) -> Result<()> {
        if axis > 5 || !delta.is_finite() {
            return Err(Error::Domain(format!("invalid jog axis {axis} or delta {delta}")));
        }
        self.jog[axis] += delta;
        Ok(())
    }

    pub fn set_haptic_target(&mut self, x_h: f64) -> Result<()> {
        if !x_h.is_finite() {
            return Err(Error::Domain("haptic target must be finite".into()));
        }
        self.haptic_override = Some(x_h);
        Ok(())
    }

    /// Applies an operator wrench for `duration` seconds (rounded to ticks).
    pub fn apply_wrench(&mut self, wrench: Vector6<f64>, duration: f64) -> Result<()> {
        if wrench.iter().any(|w| !w.is_finite()) || !(duration >= 0.0) {
            return Err(Error::Domain("wrench must be finite and duration >= 0".into()));
        }
        let ticks = (duration / self.scenario.dt).round() as u64;
        self.operator_wrench = (ticks > 0).then_some((wrench, ticks));
        Ok(())
    }

    fn desired_at(&self, t: f64) -> Result<DesiredMotion> {
        let mut desired = match self.mode {
            Mode::Admittance => return Ok(self.admittance.desired_motion()),
            Mode::Track | Mode::Insert => match &self.reference {
                Reference::Trajectory(spec) if self.mode == Mode::Track => spec.sample(t)?,
                Reference::Trajectory(spec) => DesiredMotion::hold(spec.start()),
                Reference::Hold(pose) => DesiredMotion::hold(*pose),
            },
        };
        if self.jog != Vector6::zeros() {
            let pose = &mut desired.state.pose;
            pose.position += self.jog.fixed_rows::<3>(0);
            pose.orientation =
                nalgebra::Rotation3::new(self.jog.fixed_rows::<3>(3).into_owned()) * pose.orientation;
        }
        Ok(desired)
    }

    fn external_wrench(&self, t: f64) -> (Vector6<f64>, Option<AdmittanceMode>) {
        let (mut wrench, mut mode) = self.scenario.scheduled_wrench(t);
        if let Some((w, _)) = self.operator_wrench {
            wrench += w;
            mode.get_or_insert(if w == Vector6::zeros() {
                AdmittanceMode::Holding
            } else {
                AdmittanceMode::Placement
            });
        }
        (wrench, mode)
    }

    fn haptic_target(&self, t: f64) -> f64 {
        let raw = match (self.haptic_override, &self.scenario.insertion.profile) {
            (Some(x), _) => x,
            (None, Some(profile)) => profile.target(t),
            (None, None) => 0.0,
        };
        raw * self.scenario.insertion.haptic_scale
    }

    fn make_record(
        &self,
        tau: DVector<f64>,
        haptic_target: f64,
        drive_force: f64,
        events: EventFlags,
    ) -> Result<LogRecord> {
        let measured = task_state(&self.chain, &self.arm)?;
        let desired = self.desired_at(self.time())?;
        let err = task_error(&desired.state, &measured);
        let ins = self.module.state();
        Ok(LogRecord {
            t: self.time(),
            q: self.arm.q.clone(),
            dq: self.arm.dq.clone(),
            pose: measured.pose,
            desired: desired.state.pose,
            task_error: err.pose_error(),
            tau,
            depth: ins.depth,
            theta: ins.theta,
            velocity: ins.velocity,
            sensed_force: ins.sensed_force,
            haptic_target,
            drive_force,
            events,
        })
    }

    /// Advances one tick and returns the record at the new time.
    pub fn step(&mut self) -> Result<&LogRecord> {
        let dt = self.scenario.dt;
        let t = self.time();
        let (wrench, requested) = self.external_wrench(t);

        let desired = if self.mode == Mode::Admittance {
            let adm_mode = requested.unwrap_or(AdmittanceMode::Holding);
            if adm_mode == AdmittanceMode::Holding && self.admittance_mode == AdmittanceMode::Placement {
                // placement finished: hold where the operator left the arm
                let here = self.admittance.reference;
                self.admittance = AdmittanceState::at(here);
            }
            self.admittance_mode = adm_mode;
            let next = admittance_step(&self.admittance, &wrench, &self.scenario.impedance, adm_mode, dt)?;
            let desired = DesiredMotion {
                state: crate::kinematics::TaskState {
                    pose: self.admittance.reference,
                    twist: self.admittance.velocity,
                },
                acceleration: next.acceleration,
            };
            self.admittance = next;
            desired
        } else {
            self.desired_at(t)?
        };

        let mut tau = computed_torque(&self.chain, &self.arm, &desired, &self.gains, &self.gravity)?.torque;
        if self.mode == Mode::Admittance && wrench != Vector6::zeros() {
            // the measured operator wrench is cancelled at the joints; it
            // acts on the arm only through the admittance reference
            let jac = geometric_jacobian(&self.chain, &self.arm.q)?;
            tau -= jac.transpose() * wrench;
        }
        self.arm = step_plant(
            &self.chain,
            &self.arm,
            &tau,
            &wrench,
            &self.gravity,
            dt,
            self.scenario.integrator,
        )?;

        let mut events = EventFlags::default();
        let mut haptic = 0.0;
        let mut drive_force = 0.0;
        if self.mode == Mode::Insert {
            haptic = self.haptic_target(t);
            let ins = *self.module.state();
            let u = insertion_control(haptic, ins.depth, ins.velocity, ins.sensed_force, &self.gains);
            let tool = self.module.tool();
            let v_cmd = u.clamp(-tool.max_speed, tool.max_speed);
            let spin = match self.scenario.insertion.helix_pitch {
                Some(pitch) => std::f64::consts::TAU * v_cmd / pitch,
                None => 0.0,
            };
            let contact = self.tissue.axial_force(ins.depth.max(0.0), v_cmd)?;
            let report = self.module.actuate(u, spin, contact.force, dt)?;
            drive_force = report.delivered_force;
            events.set(EventFlags::PUNCTURE, !contact.punctured.is_empty());
            events.set(EventFlags::FORCE_SATURATED, report.force_saturated);
            events.set(EventFlags::SPEED_SATURATED, report.speed_saturated);
            events.set(EventFlags::SPIN_SATURATED, report.spin_saturated);
        }

        if let Some((w, ticks)) = self.operator_wrench {
            self.operator_wrench = (ticks > 1).then_some((w, ticks - 1));
        }
        self.tick += 1;
        self.last = self.make_record(tau, haptic, drive_force, events)?;
        Ok(&self.last)
    }

    /// Back to the scenario's initial state, keeping the operator's mode.
    pub fn reset(&mut self) -> Result<()> {
        *self = Simulation::new(self.scenario.clone())?;
        Ok(())
    }
}

/// Runs a scenario to completion; the log holds `step_count() + 1` records.
pub fn run(scenario: &Scenario) -> Result<Vec<LogRecord>> {
    let mut sim = Simulation::new(scenario.clone())?;
    let steps = scenario.step_count();
    let mut records = Vec::with_capacity(steps as usize + 1);
    records.push(sim.record().clone());
    for k in 0..steps {
        match sim.step() {
            Ok(r) => records.push(r.clone()),
            Err(e) => {
                return Err(Error::Simulation {
                    step: k,
                    last_valid: records.len() - 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

impl LogRecord {
    /// Values in the column order of [`csv_header`]; the event bitmask is
    /// the last entry.
    pub fn row(&self) -> Vec<f64> {
        let mut row = vec![self.t];
        row.extend(self.q.iter());
        row.extend(self.dq.iter());
        row.extend(self.pose.position.iter());
        row.extend(self.pose.rotvec().iter());
        row.extend(self.desired.position.iter());
        row.extend(self.desired.rotvec().iter());
        row.extend(self.task_error.iter());
        row.extend(self.tau.iter());
        row.extend([self.depth, self.theta, self.velocity, self.sensed_force, f64::from(self.events.0)]);
        row
    }
}

/// CSV header for a chain with `dof` joints.
pub fn csv_header(dof: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=dof).map(|i| format!("q{i}")));
    cols.extend((1..=dof).map(|i| format!("dq{i}")));
    cols.extend(["px", "py", "pz", "ox", "oy", "oz"].map(String::from));
    cols.extend(["xd_px", "xd_py", "xd_pz", "xd_ox", "xd_oy", "xd_oz"].map(String::from));
    cols.extend(["err_px", "err_py", "err_pz", "err_ox", "err_oy", "err_oz"].map(String::from));
    cols.extend((1..=dof).map(|i| format!("tau{i}")));
    cols.extend(["depth", "theta", "v", "F_t", "event_flags"].map(String::from));
    cols.join(",")
}

fn csv_row(r: &LogRecord) -> String {
    let mut line = String::new();
    for (i, v) in r.row().iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{v}");
    }
    line
}

/// Writes the log in the fixed column order of [`csv_header`].
pub fn write_csv<W: Write>(mut out: W, records: &[LogRecord]) -> Result<()> {
    let dof = records.first().map(|r| r.q.len()).unwrap_or(0);
    writeln!(out, "{}", csv_header(dof))?;
    for r in records {
        writeln!(out, "{}", csv_row(r))?;
    }
    Ok(())
}

pub fn csv_string(records: &[LogRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, records).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv is ascii")
}

pub fn write_csv_file(path: impl AsRef<Path>, records: &[LogRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::PoseConfig;

    #[test]
    fn single_step_gives_two_records() {
        let mut s = Scenario::new("one", Mode::Track, 1e-3);
        s.trajectory = TrajectoryConfig::Hold;
        let log = run(&s).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].t, 0.0);
        assert_eq!(log[1].t, 1e-3);
    }

    #[test]
    fn timestamps_are_exact_multiples() {
        let mut s = Scenario::new("ts", Mode::Track, 0.05);
        s.trajectory = TrajectoryConfig::Hold;
        for (k, r) in run(&s).unwrap().iter().enumerate() {
            assert_eq!(r.t, k as f64 * s.dt);
        }
    }

    #[test]
    fn resting_plant_without_inputs_is_unchanged() {
        let chain = KinematicChain::default_arm();
        let state = JointState::at_rest(DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5]));
        let next = step_plant(&chain, &state, &DVector::zeros(5), &Vector6::zeros(), &Vector3::zeros(), 1e-3, Integrator::SemiImplicitEuler).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn equilibrium_hold_stays_put() {
        let mut s = Scenario::new("hold", Mode::Track, 1.0);
        let pose = forward_kinematics(&KinematicChain::default_arm(), &s.initial_q()).unwrap();
        s.trajectory = TrajectoryConfig::PointToPoint {
            start: None,
            goal: PoseConfig::from_pose(&pose),
            duration: 0.5,
        };
        let log = run(&s).unwrap();
        let worst = log.iter().map(|r| r.task_error.fixed_rows::<3>(0).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "max error {worst}");
    }

    #[test]
    fn csv_header_column_order() {
        let h = csv_header(5);
        assert!(h.starts_with("t,q1,q2,q3,q4,q5,dq1,"));
        assert!(h.ends_with("tau5,depth,theta,v,F_t,event_flags"));
        assert_eq!(h.split(',').count(), 1 + 5 + 5 + 6 + 6 + 6 + 5 + 5);
    }

    #[test]
    fn csv_rows_match_header_width() {
        let mut s = Scenario::new("w", Mode::Insert, 0.01);
        s.insertion.profile = Some(crate::trajectory::InsertionProfile::new(0.001, 0.01).unwrap());
        let text = csv_string(&run(&s).unwrap());
        let widths: Vec<usize> = text.lines().map(|l| l.split(',').count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(text.lines().count(), 12);
    }
}
