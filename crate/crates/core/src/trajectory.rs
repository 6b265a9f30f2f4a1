//! Desired task-space trajectories.

use std::f64::consts::TAU;

use nalgebra::{Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::control::DesiredMotion;
use crate::error::{Error, Result};
use crate::kinematics::{log_rotation, Pose, TaskState};

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec {
    /// `A·sin(2πt/T)` along one task axis (0..=2 translation, 3..=5 rotation
    /// about the base axes), every other axis held at `start`.
    Sine {
        axis: usize,
        amplitude: f64,
        period: f64,
        start: Pose,
    },
    /// Quintic rest-to-rest move, holding `goal` after `duration`.
    PointToPoint {
        start: Pose,
        goal: Pose,
        duration: f64,
    },
}

impl TrajectorySpec {
    pub fn sine(axis: usize, amplitude: f64, period: f64, start: Pose) -> Result<Self> {
        let spec = Self::Sine {
            axis,
            amplitude,
            period,
            start,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn point_to_point(start: Pose, goal: Pose, duration: f64) -> Result<Self> {
        let spec = Self::PointToPoint {
            start,
            goal,
            duration,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Sine {
                axis,
                amplitude,
                period,
                ..
            } => {
                if *axis > 5 {
                    return Err(Error::Config(format!("sine axis {axis} out of range 0..=5")));
                }
                if !(*amplitude > 0.0) || !(*period > 0.0) {
                    return Err(Error::Config("sine needs amplitude > 0 and period > 0".into()));
                }
            }
            Self::PointToPoint { duration, .. } => {
                if !(*duration > 0.0) {
                    return Err(Error::Config("point-to-point needs duration > 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn start(&self) -> Pose {
        match self {
            Self::Sine { start, .. } | Self::PointToPoint { start, .. } => *start,
        }
    }

    pub fn sample(&self, t: f64) -> Result<DesiredMotion> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("trajectory time must be >= 0, got {t}")));
        }
        Ok(match self {
            Self::Sine {
                axis,
                amplitude,
                period,
                start,
            } => sample_sine(*axis, *amplitude, *period, start, t),
            Self::PointToPoint {
                start,
                goal,
                duration,
            } => sample_quintic(start, goal, *duration, t),
        })
    }
}

fn sample_sine(axis: usize, amplitude: f64, period: f64, start: &Pose, t: f64) -> DesiredMotion {
    let w = TAU / period;
    let (s, c) = (w * t).sin_cos();
    let disp = amplitude * s;
    let vel = amplitude * w * c;
    let acc = -amplitude * w * w * s;

    let mut pose = *start;
    let mut twist = Vector6::zeros();
    let mut accel = Vector6::zeros();
    if axis < 3 {
        pose.position[axis] += disp;
    } else {
        let mut rotvec = Vector3::zeros();
        rotvec[axis - 3] = disp;
        pose.orientation = Rotation3::new(rotvec) * start.orientation;
    }
    twist[axis] = vel;
    accel[axis] = acc;
    DesiredMotion {
        state: TaskState { pose, twist },
        acceleration: accel,
    }
}

/// Minimum-jerk blend `s(τ) = 10τ³ − 15τ⁴ + 6τ⁵` and its first two
/// derivatives with respect to τ.
fn quintic_blend(tau: f64) -> (f64, f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (
        t3 * (10.0 - 15.0 * tau + 6.0 * t2),
        30.0 * t2 * (1.0 - 2.0 * tau + t2),
        60.0 * tau * (1.0 - 3.0 * tau + 2.0 * t2),
    )
}

fn sample_quintic(start: &Pose, goal: &Pose, duration: f64, t: f64) -> DesiredMotion {
    if t >= duration {
        return DesiredMotion::hold(*goal);
    }
    let (s, ds, dds) = quintic_blend(t / duration);
    let ds = ds / duration;
    let dds = dds / (duration * duration);

    let dp = goal.position - start.position;
    // body-frame rotation from start to goal; its base-frame direction is
    // constant along the blend
    let body = log_rotation(&(start.orientation.inverse() * goal.orientation));
    let spatial = start.orientation * body;

    let pose = Pose::new(
        start.position + dp * s,
        start.orientation * Rotation3::new(body * s),
    );
    let mut twist = Vector6::zeros();
    let mut accel = Vector6::zeros();
    twist.fixed_rows_mut::<3>(0).copy_from(&(dp * ds));
    twist.fixed_rows_mut::<3>(3).copy_from(&(spatial * ds));
    accel.fixed_rows_mut::<3>(0).copy_from(&(dp * dds));
    accel.fixed_rows_mut::<3>(3).copy_from(&(spatial * dds));
    DesiredMotion {
        state: TaskState { pose, twist },
        acceleration: accel,
    }
}

/// Constant-speed haptic ramp `x_h(t) = min(speed·t, depth)` replaying an
/// operator's insertion command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsertionProfile {
    pub speed: f64,
    pub depth: f64,
}

impl InsertionProfile {
    pub fn new(speed: f64, depth: f64) -> Result<Self> {
        let p = Self { speed, depth };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0) || !(self.depth > 0.0) {
            return Err(Error::Config("insertion profile needs speed > 0 and depth > 0".into()));
        }
        Ok(())
    }

    pub fn target(&self, t: f64) -> f64 {
        (self.speed * t.max(0.0)).min(self.depth)
    }

    /// Time at which the ramp reaches full depth.
    pub fn ramp_time(&self) -> f64 {
        self.depth / self.speed
    }
}

pub fn insertion_profile(speed: f64, depth: f64) -> Result<InsertionProfile> {
    InsertionProfile::new(speed, depth)
}
