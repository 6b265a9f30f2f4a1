//! Two-motor tool insertion end-effector.
//!
//! Motor `m2` drives the actuation roller that pushes the tool along its
//! axis; motor `m1` spins the clutching unit about the tool axis. The roller
//! transmission is quasi-static: the drive delivers whatever axial force the
//! tissue opposes, up to the module's force limit, beyond which the advance
//! speed is scaled down.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotorState {
    /// rad
    pub angle: f64,
    /// rad/s
    pub velocity: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InsertionState {
    /// m, positive into the tissue
    pub depth: f64,
    /// rad
    pub theta: f64,
    /// m/s
    pub velocity: f64,
    /// rad/s
    pub omega: f64,
    /// Axial force reported by the sensor (N, negative resists advance).
    pub sensed_force: f64,
    pub motor_m1: MotorState,
    pub motor_m2: MotorState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolSpec {
    /// m
    pub diameter: f64,
    /// Narrowest tool the spring-loaded clamp holds (m).
    pub min_clamp: f64,
    /// Widest tool the spring-loaded clamp holds (m).
    pub max_clamp: f64,
    /// N
    pub max_insertion_force: f64,
    /// m/s
    pub max_speed: f64,
    /// rad/s
    pub max_spin: f64,
}

impl Default for ToolSpec {
    fn default() -> Self {
        Self {
            diameter: 0.0017,
            min_clamp: 0.0004,
            max_clamp: 0.003,
            max_insertion_force: 10.0,
            max_speed: 0.01,
            max_spin: 2.0 * TAU,
        }
    }
}

impl ToolSpec {
    pub fn clamp_range(&self) -> ClampRange {
        ClampRange {
            min: self.min_clamp,
            max: self.max_clamp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.diameter,
            self.min_clamp,
            self.max_clamp,
            self.max_insertion_force,
            self.max_speed,
            self.max_spin,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("tool limits must be positive and finite".into()));
        }
        if self.min_clamp > self.max_clamp {
            return Err(Error::Config("min_clamp exceeds max_clamp".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClampRejection {
    TooSmall,
    TooLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClampVerdict {
    Accepted,
    Rejected(ClampRejection),
}

/// Whether the spring-loaded clamp holds a tool of this diameter.
pub fn clamp_check(tool: &ToolSpec, range: ClampRange) -> ClampVerdict {
    if tool.diameter < range.min {
        ClampVerdict::Rejected(ClampRejection::TooSmall)
    } else if tool.diameter > range.max {
        ClampVerdict::Rejected(ClampRejection::TooLarge)
    } else {
        ClampVerdict::Accepted
    }
}

/// Translation and spin commands for a helix of `pitch` metres per turn
/// advanced at `speed`.
pub fn helical_command(pitch: f64, speed: f64) -> Result<(f64, f64)> {
    if !(pitch > 0.0) {
        return Err(Error::Domain(format!("helix pitch must be > 0, got {pitch}")));
    }
    if !(speed >= 0.0) {
        return Err(Error::Domain(format!("helix speed must be >= 0, got {speed}")));
    }
    Ok((speed, TAU * speed / pitch))
}

/// Transmission and sensing parameters of the module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModuleConfig {
    /// Actuation roller radius (m).
    pub roller_radius: f64,
    /// Roller turns per `m2` motor turn.
    pub m2_ratio: f64,
    /// Tool turns per `m1` motor turn.
    pub m1_ratio: f64,
    /// Roller slip per newton of transmitted force (0 disables slip).
    pub slip_per_newton: f64,
    /// Sensor delay in control steps.
    pub sensor_latency_steps: usize,
    /// Standard deviation of additive force-sensor noise (N).
    pub sensor_noise_std: f64,
}

impl Default for ModuleConfig {
    fn default() -> Self {
        Self {
            roller_radius: 0.006,
            m2_ratio: 1.0 / 20.0,
            m1_ratio: 1.0 / 10.0,
            slip_per_newton: 0.0,
            sensor_latency_steps: 0,
            sensor_noise_std: 0.0,
        }
    }
}

impl ModuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.roller_radius > 0.0) || !(self.m2_ratio > 0.0) || !(self.m1_ratio > 0.0) {
            return Err(Error::Config("transmission parameters must be positive".into()));
        }
        if !(self.slip_per_newton >= 0.0) || !(self.sensor_noise_std >= 0.0) {
            return Err(Error::Config("slip and noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// What happened during one actuation step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActuationReport {
    /// Axial force delivered by the roller (N, ≥ 0 while pushing).
    pub delivered_force: f64,
    pub speed_saturated: bool,
    pub spin_saturated: bool,
    pub force_saturated: bool,
}

#[derive(Debug, Clone)]
pub struct InsertionModule {
    tool: ToolSpec,
    config: ModuleConfig,
    state: InsertionState,
    sensor_queue: VecDeque<f64>,
    rng: ChaCha8Rng,
}

impl InsertionModule {
    pub fn new(tool: ToolSpec, config: ModuleConfig, seed: u64) -> Result<Self> {
        tool.validate()?;
        config.validate()?;
        Ok(Self {
            tool,
            config,
            state: InsertionState::default(),
            sensor_queue: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn state(&self) -> &InsertionState {
        &self.state
    }

    pub fn tool(&self) -> &ToolSpec {
        &self.tool
    }

    pub fn config(&self) -> &ModuleConfig {
        &self.config
    }

    /// Tool depth implied by the accumulated `m2` rotation.
    pub fn depth_from_m2(&self) -> f64 {
        self.config.roller_radius * self.config.m2_ratio * self.state.motor_m2.angle
    }

    /// Advance the module by `dt` under commanded axial velocity `u_v`, spin
    /// `u_w`, and the axial force the environment applies to the tool.
    pub fn actuate(
        &mut self,
        u_v: f64,
        u_w: f64,
        external_force: f64,
        dt: f64,
    ) -> Result<ActuationReport> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("actuation needs dt > 0, got {dt}")));
        }
        if !u_v.is_finite() || !u_w.is_finite() || !external_force.is_finite() {
            return Err(Error::Domain("actuation inputs must be finite".into()));
        }
        let tool = &self.tool;
        let mut report = ActuationReport::default();

        let mut v = u_v.clamp(-tool.max_speed, tool.max_speed);
        report.speed_saturated = v != u_v;
        let w = u_w.clamp(-tool.max_spin, tool.max_spin);
        report.spin_saturated = w != u_w;

        // quasi-static roller: the drive balances the tissue reaction
        let required = -external_force;
        if v > 0.0 && required > tool.max_insertion_force {
            v *= tool.max_insertion_force / required;
            report.force_saturated = true;
            report.delivered_force = tool.max_insertion_force;
        } else {
            report.delivered_force = required.min(tool.max_insertion_force);
        }

        let slip = (self.config.slip_per_newton * report.delivered_force.abs()).min(1.0);
        let tool_velocity = v * (1.0 - slip);

        let m2_velocity = v / (self.config.roller_radius * self.config.m2_ratio);
        let m1_velocity = w / self.config.m1_ratio;
        let s = &mut self.state;
        s.motor_m2.velocity = m2_velocity;
        s.motor_m2.angle += m2_velocity * dt;
        s.motor_m1.velocity = m1_velocity;
        s.motor_m1.angle += m1_velocity * dt;
        s.velocity = tool_velocity;
        s.omega = w;
        s.depth += tool_velocity * dt;
        s.theta += w * dt;

        let noise = if self.config.sensor_noise_std > 0.0 {
            Normal::new(0.0, self.config.sensor_noise_std)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(&mut self.rng)
        } else {
            0.0
        };
        self.sensor_queue.push_back(external_force + noise);
        while self.sensor_queue.len() > self.config.sensor_latency_steps {
            s.sensed_force = self.sensor_queue.pop_front().unwrap_or(0.0);
        }
        Ok(report)
    }

    pub fn reset(&mut self) {
        self.state = InsertionState::default();
        self.sensor_queue.clear();
    }
}
