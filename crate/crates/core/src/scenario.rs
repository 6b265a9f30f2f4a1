//! Scenario files.
//!
//! A scenario is a TOML document; every table except `mode` has defaults.
//!
//! ```toml
//! name = "track-x"
//! mode = "track"                 # track | admittance | insert
//! dt = 0.001                     # s
//! duration = 24.0                # s
//! seed = 1
//! gravity = [0.0, 0.0, -9.81]
//! integrator = "semi_implicit_euler"   # or "rk4"
//!
//! [arm]
//! initial_q = [0.0, 0.5, 1.3, 1.3416, 0.0]
//! # initial_dq = [...]         # defaults to rest, or to the trajectory's
//! #                            # initial twist in track mode
//! # chain = { ... }            # inline chain, see `ChainConfig`
//!
//! [trajectory]
//! kind = "sine"                  # sine | point_to_point | hold
//! axis = 0
//! amplitude = 0.05
//! period = 8.0
//! # start = { xyz = [...], rotvec = [...] }   # defaults to the initial pose
//!
//! [gains]        # GainSet fields
//! [impedance]    # VirtualImpedance fields
//! [tool]         # ToolSpec fields
//! [module]       # ModuleConfig fields
//!
//! [insertion]
//! profile = { speed = 0.001, depth = 0.010 }
//! haptic_scale = 1.0
//! # helix_pitch = 0.002         # m/rev; spins the tool with the advance
//!
//! [tissue]
//! setup = 1                      # 1..=4, or give `layers = [...]`
//!
//! [[wrench_schedule]]
//! t_start = 1.0
//! t_end = 2.0
//! wrench = [5.0, 0.0, 0.0, 0.0, 0.0, 0.0]
//! mode = "placement"             # admittance behaviour while active
//! ```

use std::path::Path;

use nalgebra::{DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::control::{AdmittanceMode, GainSet, VirtualImpedance};
use crate::dynamics::STANDARD_GRAVITY;
use crate::error::{Error, Result};
use crate::insertion::{ModuleConfig, ToolSpec};
use crate::kinematics::{ChainConfig, KinematicChain, Pose};
use crate::tissue::{standard_samples, TissueLayer, TissueSample};
use crate::trajectory::InsertionProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Track,
    Admittance,
    Insert,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Track => "track",
            Mode::Admittance => "admittance",
            Mode::Insert => "insert",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    SemiImplicitEuler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rotvec: [f64; 3],
}

impl PoseConfig {
    pub fn pose(&self) -> Pose {
        Pose::from_rotvec(Vector3::from(self.xyz), Vector3::from(self.rotvec))
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Self {
            xyz: pose.position.into(),
            rotvec: pose.rotvec().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Sine {
        axis: usize,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        start: Option<PoseConfig>,
    },
    PointToPoint {
        #[serde(default)]
        start: Option<PoseConfig>,
        goal: PoseConfig,
        duration: f64,
    },
    Hold,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self::Hold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmConfig {
    pub chain: Option<ChainConfig>,
    pub initial_q: Vec<f64>,
    pub initial_dq: Option<Vec<f64>>,
}

/// Working posture of the default arm: tool axis pointing straight down.
pub const DEFAULT_INITIAL_Q: [f64; 5] = [0.0, 0.5, 1.3, std::f64::consts::PI - 1.8, 0.0];

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            chain: None,
            initial_q: DEFAULT_INITIAL_Q.to_vec(),
            initial_dq: None,
        }
    }
}

impl ArmConfig {
    pub fn chain(&self) -> Result<KinematicChain> {
        match &self.chain {
            Some(cfg) => cfg.build(),
            None => Ok(KinematicChain::default_arm()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InsertionConfig {
    pub profile: Option<InsertionProfile>,
    pub haptic_scale: f64,
    pub helix_pitch: Option<f64>,
}

impl Default for InsertionConfig {
    fn default() -> Self {
        Self {
            profile: None,
            haptic_scale: 1.0,
            helix_pitch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TissueConfig {
    /// One of the four standard phantoms (1-based).
    pub setup: Option<usize>,
    pub label: Option<String>,
    pub layers: Option<Vec<TissueLayer>>,
}

impl Default for TissueConfig {
    fn default() -> Self {
        Self {
            setup: Some(1),
            label: None,
            layers: None,
        }
    }
}

impl TissueConfig {
    pub fn sample(&self) -> Result<TissueSample> {
        match (&self.layers, self.setup) {
            (Some(layers), _) => TissueSample::new(
                self.label.clone().unwrap_or_else(|| "custom".into()),
                layers.clone(),
            ),
            (None, Some(n)) if (1..=4).contains(&n) => Ok(standard_samples().swap_remove(n - 1)),
            (None, Some(n)) => Err(Error::Config(format!("tissue setup {n} not in 1..=4"))),
            (None, None) => Err(Error::Config("tissue needs a setup or layers".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrenchInterval {
    pub t_start: f64,
    pub t_end: f64,
    pub wrench: [f64; 6],
    #[serde(default = "default_interval_mode")]
    pub mode: AdmittanceMode,
}

fn default_interval_mode() -> AdmittanceMode {
    AdmittanceMode::Placement
}

impl WrenchInterval {
    pub fn is_active(&self, t: f64) -> bool {
        self.t_start <= t && t < self.t_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub mode: Mode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub arm: ArmConfig,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub gains: GainSet,
    #[serde(default)]
    pub impedance: VirtualImpedance,
    #[serde(default)]
    pub tool: ToolSpec,
    #[serde(default)]
    pub module: ModuleConfig,
    #[serde(default)]
    pub insertion: InsertionConfig,
    #[serde(default)]
    pub tissue: TissueConfig,
    #[serde(default)]
    pub wrench_schedule: Vec<WrenchInterval>,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_dt() -> f64 {
    1e-3
}

fn default_gravity() -> [f64; 3] {
    STANDARD_GRAVITY
}

impl Scenario {
    /// Minimal scenario with every table at its default.
    pub fn new(name: impl Into<String>, mode: Mode, duration: f64) -> Self {
        Self {
            name: name.into(),
            mode,
            dt: default_dt(),
            duration,
            seed: 0,
            gravity: default_gravity(),
            integrator: Integrator::default(),
            arm: ArmConfig::default(),
            trajectory: TrajectoryConfig::default(),
            gains: GainSet::default(),
            impedance: VirtualImpedance::default(),
            tool: ToolSpec::default(),
            module: ModuleConfig::default(),
            insertion: InsertionConfig::default(),
            tissue: TissueConfig::default(),
            wrench_schedule: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    /// Number of fixed steps; the log holds one more record than this.
    pub fn step_count(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.duration >= self.dt) || !self.duration.is_finite() {
            return Err(Error::Config(format!(
                "duration {} must be at least one step ({})",
                self.duration, self.dt
            )));
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("gravity must be finite".into()));
        }
        let chain = self.arm.chain()?;
        if self.arm.initial_q.len() != chain.dof() {
            return Err(Error::Dimension {
                what: "initial joint positions",
                expected: chain.dof(),
                got: self.arm.initial_q.len(),
            });
        }
        if let Some(dq) = &self.arm.initial_dq {
            if dq.len() != chain.dof() {
                return Err(Error::Dimension {
                    what: "initial joint velocities",
                    expected: chain.dof(),
                    got: dq.len(),
                });
            }
        }
        match self.mode {
            Mode::Track => self.gains.validate_tracking()?,
            _ => self.gains.validate()?,
        }
        self.impedance.validate()?;
        self.tool.validate()?;
        self.module.validate()?;
        self.tissue.sample()?;
        if let Some(p) = &self.insertion.profile {
            p.validate()?;
        }
        if !(self.insertion.haptic_scale.is_finite()) {
            return Err(Error::Config("haptic scale must be finite".into()));
        }
        if let Some(pitch) = self.insertion.helix_pitch {
            if !(pitch > 0.0) {
                return Err(Error::Config("helix pitch must be > 0".into()));
            }
        }
        self.validate_schedule()
    }

    fn validate_schedule(&self) -> Result<()> {
        for w in &self.wrench_schedule {
            if !(w.t_end > w.t_start) || w.t_start < 0.0 {
                return Err(Error::Config(format!(
                    "wrench interval [{}, {}) is empty or negative",
                    w.t_start, w.t_end
                )));
            }
            if w.wrench.iter().any(|f| !f.is_finite()) {
                return Err(Error::Config("wrench must be finite".into()));
            }
        }
        for (i, a) in self.wrench_schedule.iter().enumerate() {
            for b in &self.wrench_schedule[i + 1..] {
                let overlap = a.t_start < b.t_end && b.t_start < a.t_end;
                let shared_axis = (0..6).any(|k| a.wrench[k] != 0.0 && b.wrench[k] != 0.0);
                if overlap && shared_axis {
                    return Err(Error::Config(format!(
                        "wrench intervals [{}, {}) and [{}, {}) overlap on an axis",
                        a.t_start, a.t_end, b.t_start, b.t_end
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn initial_q(&self) -> DVector<f64> {
        DVector::from_vec(self.arm.initial_q.clone())
    }

    /// Scheduled wrench at `t` and the admittance behaviour it requests.
    pub fn scheduled_wrench(&self, t: f64) -> (Vector6<f64>, Option<AdmittanceMode>) {
        let mut total = Vector6::zeros();
        let mut mode = None;
        for w in self.wrench_schedule.iter().filter(|w| w.is_active(t)) {
            total += Vector6::from(w.wrench);
            mode.get_or_insert(w.mode);
        }
        (total, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml() {
        let s = Scenario::from_toml_str("mode = \"track\"\nduration = 1.0\n[trajectory]\nkind = \"sine\"\naxis = 0\namplitude = 0.05\nperiod = 8.0\n").unwrap();
        assert_eq!(s.dt, 1e-3);
        assert_eq!(s.step_count(), 1000);
        assert_eq!(s.arm.initial_q.len(), 5);
    }

    #[test]
    fn round_trip_through_toml() {
        let mut s = Scenario::new("rt", Mode::Admittance, 2.0);
        s.wrench_schedule.push(WrenchInterval {
            t_start: 0.5,
            t_end: 1.0,
            wrench: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            mode: AdmittanceMode::Holding,
        });
        let text = s.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), s);
    }

    #[test]
    fn rejects_bad_timing() {
        let mut s = Scenario::new("bad", Mode::Track, 0.0);
        assert!(s.validate().is_err());
        s.duration = 1.0;
        s.dt = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_overlap_on_shared_axis() {
        let mut s = Scenario::new("overlap", Mode::Admittance, 3.0);
        let push = |a: f64, b: f64, w: [f64; 6]| WrenchInterval { t_start: a, t_end: b, wrench: w, mode: AdmittanceMode::Placement };
        s.wrench_schedule = vec![push(0.0, 1.0, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), push(0.5, 1.5, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0])];
        assert!(s.validate().is_ok());
        s.wrench_schedule.push(push(0.9, 2.0, [2.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert!(s.validate().is_err());
    }

    #[test]
    fn tissue_selection() {
        let cfg = TissueConfig { setup: Some(4), ..TissueConfig::default() };
        assert!((cfg.sample().unwrap().total_thickness() - 0.019).abs() < 1e-15);
        let cfg = TissueConfig { setup: Some(5), ..TissueConfig::default() };
        assert!(cfg.sample().is_err());
    }
}
