//! Simulation and control of a 5-DOF arm carrying a two-motor tool-insertion
//! end-effector: rigid-body dynamics, task-space computed-torque and
//! admittance control, the insertion-axis law, a layered tissue model, a
//! deterministic fixed-step simulator and the experiment harness built on it.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod insertion;
pub mod kinematics;
pub mod scenario;
pub mod sim;
pub mod tissue;
pub mod trajectory;

pub use error::{Error, Result};
