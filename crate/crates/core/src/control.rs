//! Task-space computed-torque tracking, task-space admittance and the scalar
//! insertion-axis law.

use nalgebra::{DMatrix, DVector, Matrix6xX, OMatrix, Rotation3, Vector3, Vector6, Dyn, U6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{dynamics_terms, inverse_dynamics};
use crate::error::{check_finite, Error, Result};
use crate::kinematics::{
    geometric_jacobian, log_rotation, jacobian_time_derivative, task_state, JointState, KinematicChain, Pose,
    TaskState,
};

/// Singular value below which damping is applied to the pseudo-inverse.
pub const DAMPING_THRESHOLD: f64 = 1e-3;

/// Controller gains. Task-space gains are the diagonals of `K_P` and `K_D`,
/// ordered `[x, y, z, rx, ry, rz]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainSet {
    pub kp: [f64; 6],
    pub kd: [f64; 6],
    pub insertion_kp: f64,
    pub insertion_kd: f64,
    pub insertion_ko: f64,
    /// Damping of the least-squares pseudo-inverse, used only when the
    /// smallest singular value of `J` drops below [`DAMPING_THRESHOLD`].
    pub damping_lambda: f64,
}

impl Default for GainSet {
    fn default() -> Self {
        Self {
            kp: [400.0, 400.0, 400.0, 400.0, 400.0, 400.0],
            kd: [40.0, 40.0, 40.0, 40.0, 40.0, 40.0],
            insertion_kp: 20.0,
            insertion_kd: 0.05,
            insertion_ko: 1e-4,
            damping_lambda: 1e-4,
        }
    }
}

impl GainSet {
    pub fn validate_tracking(&self) -> Result<()> {
        self.validate()?;
        if self.kp.iter().all(|k| *k == 0.0) {
            return Err(Error::Config("tracking needs at least one positive kp".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .kp
            .iter()
            .chain(&self.kd)
            .chain([&self.insertion_kp, &self.insertion_kd, &self.damping_lambda]);
        for v in all {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(Error::Config("gains must be finite and non-negative".into()));
            }
        }
        if !self.insertion_ko.is_finite() {
            return Err(Error::Config("insertion_ko must be finite".into()));
        }
        Ok(())
    }
}

/// Per-axis virtual mass, damping and stiffness rendered by admittance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VirtualImpedance {
    pub mass: [f64; 6],
    pub damping: [f64; 6],
    pub stiffness: [f64; 6],
}

impl Default for VirtualImpedance {
    fn default() -> Self {
        Self {
            mass: [2.0, 2.0, 2.0, 0.05, 0.05, 0.05],
            damping: [40.0, 40.0, 40.0, 1.0, 1.0, 1.0],
            stiffness: [200.0, 200.0, 200.0, 5.0, 5.0, 5.0],
        }
    }
}

impl VirtualImpedance {
    pub fn validate(&self) -> Result<()> {
        if self.mass.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Config("virtual mass must be strictly positive".into()));
        }
        if self
            .damping
            .iter()
            .chain(&self.stiffness)
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::Config("virtual damping and stiffness must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskError {
    pub position: Vector3<f64>,
    /// Rotation vector of `R_d·R_mᵀ`, norm in `[0, π]`.
    pub orientation: Vector3<f64>,
    pub twist: Vector6<f64>,
}

impl TaskError {
    /// `[p̃; φ̃]`
    pub fn pose_error(&self) -> Vector6<f64> {
        let mut e = Vector6::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&self.position);
        e.fixed_rows_mut::<3>(3).copy_from(&self.orientation);
        e
    }
}

pub fn task_error(desired: &TaskState, measured: &TaskState) -> TaskError {
    let rel = desired.pose.orientation * measured.pose.orientation.inverse();
    TaskError {
        position: desired.pose.position - measured.pose.position,
        orientation: log_rotation(&rel),
        twist: desired.twist - measured.twist,
    }
}

/// Desired task-space motion at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredMotion {
    pub state: TaskState,
    pub acceleration: Vector6<f64>,
}

impl DesiredMotion {
    pub fn hold(pose: Pose) -> Self {
        Self {
            state: TaskState::at_rest(pose),
            acceleration: Vector6::zeros(),
        }
    }
}

/// Damped least-squares pseudo-inverse `Jᵀ(JJᵀ + λ²I)⁻¹`, evaluated through
/// the SVD so that `λ = 0` yields the Moore–Penrose inverse for any shape.
pub fn pseudo_inverse(jac: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let (rows, cols) = jac.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = jac.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let lambda2 = lambda * lambda;
    let largest = svd.singular_values.max();
    let cutoff = if lambda == 0.0 {
        largest * f64::EPSILON * rows.max(cols) as f64
    } else {
        0.0
    };
    let inv = svd.singular_values.map(|s| {
        if s <= cutoff {
            0.0
        } else {
            s / (s * s + lambda2)
        }
    });
    v_t.transpose() * DMatrix::from_diagonal(&inv) * u.transpose()
}

fn min_singular_value(jac: &Matrix6xX<f64>) -> f64 {
    jac.clone().svd(false, false).singular_values.min()
}

/// Computed-torque intermediates, exposed for logging and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputedTorque {
    pub torque: DVector<f64>,
    pub joint_acceleration: DVector<f64>,
    pub task_acceleration: Vector6<f64>,
    pub error: TaskError,
}

/// Commanded task acceleration `ẍ_d + K_P·x̃ + K_D·ẋ̃`.
pub fn task_acceleration(desired: &DesiredMotion, error: &TaskError, gains: &GainSet) -> Vector6<f64> {
    let kp = Vector6::from(gains.kp);
    let kd = Vector6::from(gains.kd);
    desired.acceleration + kp.component_mul(&error.pose_error()) + kd.component_mul(&error.twist)
}

/// Task-space computed-torque law with exact compensation of the modelled
/// joint friction.
pub fn computed_torque(
    chain: &KinematicChain,
    state: &JointState,
    desired: &DesiredMotion,
    gains: &GainSet,
    gravity: &Vector3<f64>,
) -> Result<ComputedTorque> {
    let measured = task_state(chain, state)?;
    let error = task_error(&desired.state, &measured);
    if error.orientation.norm() >= std::f64::consts::PI - 1e-9 {
        return Err(Error::Domain(
            "orientation error at the antipode; log map is ambiguous".into(),
        ));
    }
    let accel = task_acceleration(desired, &error, gains);

    let jac = geometric_jacobian(chain, &state.q)?;
    let sigma_min = min_singular_value(&jac);
    let lambda = if sigma_min < DAMPING_THRESHOLD {
        if gains.damping_lambda == 0.0 {
            return Err(Error::Singular {
                min_singular_value: sigma_min,
            });
        }
        gains.damping_lambda
    } else {
        0.0
    };
    let jdot = jacobian_time_derivative(chain, state)?;
    let drift = &jdot * &state.dq;
    let pinv = pseudo_inverse(&to_dmatrix(&jac), lambda);
    let rhs = DVector::from_column_slice((accel - drift).as_slice());
    let ddq = pinv * rhs;

    let mut torque = inverse_dynamics(chain, state, &ddq, gravity)?;
    torque += chain.viscous_friction().component_mul(&state.dq);
    Ok(ComputedTorque {
        torque,
        joint_acceleration: ddq,
        task_acceleration: accel,
        error,
    })
}

/// `c(q, q̇) + g(q) + b⊙q̇`: cancels every modelled internal torque so that
/// external forces alone drive the arm.
pub fn compensation_torque(
    chain: &KinematicChain,
    state: &JointState,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>> {
    let terms = dynamics_terms(chain, state, gravity)?;
    Ok(terms.bias + terms.gravity + chain.viscous_friction().component_mul(&state.dq))
}

/// Admittance behaviour selected per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmittanceMode {
    /// No virtual stiffness; the anchor follows the reference.
    Placement,
    /// Virtual spring pulls the reference back to the anchor.
    Holding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmittanceState {
    pub reference: Pose,
    pub velocity: Vector6<f64>,
    pub anchor: Pose,
    /// Reference acceleration of the last step, fed forward to tracking.
    pub acceleration: Vector6<f64>,
}

impl AdmittanceState {
    pub fn at(pose: Pose) -> Self {
        Self {
            reference: pose,
            velocity: Vector6::zeros(),
            anchor: pose,
            acceleration: Vector6::zeros(),
        }
    }

    /// Displacement of the reference from the anchor, `[Δp; log(R·R_aᵀ)]`.
    pub fn displacement(&self) -> Vector6<f64> {
        let mut d = Vector6::zeros();
        d.fixed_rows_mut::<3>(0)
            .copy_from(&(self.reference.position - self.anchor.position));
        d.fixed_rows_mut::<3>(3).copy_from(
            &log_rotation(&(self.reference.orientation * self.anchor.orientation.inverse())),
        );
        d
    }

    pub fn desired_motion(&self) -> DesiredMotion {
        DesiredMotion {
            state: TaskState {
                pose: self.reference,
                twist: self.velocity,
            },
            acceleration: self.acceleration,
        }
    }
}

/// One semi-implicit Euler step of `M_v·ẍ + B_v·ẋ + K_v·δx = F_ext`.
pub fn admittance_step(
    adm: &AdmittanceState,
    wrench: &Vector6<f64>,
    imp: &VirtualImpedance,
    mode: AdmittanceMode,
    dt: f64,
) -> Result<AdmittanceState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("admittance step needs dt > 0, got {dt}")));
    }
    check_finite("external wrench", wrench.iter())?;
    let stiffness = match mode {
        AdmittanceMode::Placement => Vector6::zeros(),
        AdmittanceMode::Holding => Vector6::from(imp.stiffness),
    };
    let mass = Vector6::from(imp.mass);
    let damping = Vector6::from(imp.damping);
    let disp = adm.displacement();

    let accel = (wrench - damping.component_mul(&adm.velocity) - stiffness.component_mul(&disp))
        .component_div(&mass);
    let velocity = adm.velocity + accel * dt;

    let lin = velocity.fixed_rows::<3>(0).into_owned();
    let ang = velocity.fixed_rows::<3>(3).into_owned();
    let mut reference = Pose::new(
        adm.reference.position + lin * dt,
        Rotation3::new(ang * dt) * adm.reference.orientation,
    );
    reference.orientation.renormalize();

    let anchor = match mode {
        AdmittanceMode::Placement => reference,
        AdmittanceMode::Holding => adm.anchor,
    };
    Ok(AdmittanceState {
        reference,
        velocity,
        anchor,
        acceleration: accel,
    })
}

/// Insertion-axis law `u = k_p·x̃_t + k_d·ẋ̃_t + k_o·F_t`, returning a
/// velocity command (m/s) for the insertion drive.
///
/// The haptic target is held between samples, so `ẋ̃_t = −v_t`. `F_t` is
/// negative when the tissue resists advance, so a positive `k_o` slows the
/// tool down under load.
pub fn insertion_control(
    haptic_target: f64,
    tool_depth: f64,
    tool_velocity: f64,
    sensed_force: f64,
    gains: &GainSet,
) -> f64 {
    let error = haptic_target - tool_depth;
    let error_rate = -tool_velocity;
    gains.insertion_kp * error + gains.insertion_kd * error_rate + gains.insertion_ko * sensed_force
}

/// `DMatrix` view of a 6×n jacobian.
pub fn to_dmatrix(jac: &OMatrix<f64, U6, Dyn>) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, jac.ncols(), jac.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::STANDARD_GRAVITY;
    use crate::kinematics::forward_kinematics;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn arm_state() -> JointState {
        JointState::at_rest(DVector::from_vec(vec![0.2, 0.5, 1.3, 1.34, 0.1]))
    }

    #[test]
    fn identical_states_have_zero_error() {
        let ts = TaskState::at_rest(Pose::from_rotvec(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.3, -0.2, 0.1)));
        let e = task_error(&ts, &ts);
        assert_eq!(e.pose_error(), Vector6::zeros());
        assert_eq!(e.twist, Vector6::zeros());
    }

    #[test]
    fn quarter_turn_about_z() {
        let measured = TaskState::at_rest(Pose::from_rotvec(Vector3::zeros(), Vector3::new(0.2, 0.0, 0.0)));
        let mut desired = measured;
        desired.pose.orientation = Rotation3::new(Vector3::new(0.0, 0.0, FRAC_PI_2)) * measured.pose.orientation;
        let e = task_error(&desired, &measured);
        assert_relative_eq!(e.orientation, Vector3::new(0.0, 0.0, FRAC_PI_2), epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_returns_gravity_vector() {
        let chain = KinematicChain::default_arm();
        let state = arm_state();
        let pose = forward_kinematics(&chain, &state.q).unwrap();
        let g = Vector3::from(STANDARD_GRAVITY);
        let out = computed_torque(&chain, &state, &DesiredMotion::hold(pose), &GainSet::default(), &g).unwrap();
        let terms = dynamics_terms(&chain, &state, &g).unwrap();
        assert!(out.joint_acceleration.iter().all(|v| *v == 0.0));
        assert_eq!(out.torque, terms.gravity);
    }

    #[test]
    fn diagonal_gain_scales_position_error() {
        let chain = KinematicChain::default_arm();
        let state = arm_state();
        let mut pose = forward_kinematics(&chain, &state.q).unwrap();
        pose.position.x += 0.002;
        let mut gains = GainSet::default();
        gains.kp = [100.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        gains.kd = [0.0; 6];
        let out = computed_torque(&chain, &state, &DesiredMotion::hold(pose), &gains, &Vector3::zeros()).unwrap();
        assert_relative_eq!(out.task_acceleration[0], 100.0 * 0.002, epsilon = 1e-12);
        assert!(out.task_acceleration.rows(1, 5).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn singular_jacobian_without_damping_is_an_error() {
        let chain = KinematicChain::default_arm();
        // straight up: joints 1 and 5 share an axis
        let state = JointState::zeros(5);
        let pose = forward_kinematics(&chain, &state.q).unwrap();
        let mut gains = GainSet::default();
        gains.damping_lambda = 0.0;
        let err = computed_torque(&chain, &state, &DesiredMotion::hold(pose), &gains, &Vector3::zeros()).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
        gains.damping_lambda = 1e-4;
        assert!(computed_torque(&chain, &state, &DesiredMotion::hold(pose), &gains, &Vector3::zeros()).is_ok());
    }

    #[test]
    fn identity_pseudo_inverse() {
        let pinv = pseudo_inverse(&DMatrix::identity(6, 6), 0.0);
        assert_relative_eq!(pinv, DMatrix::identity(6, 6), epsilon = 1e-15);
    }

    #[test]
    fn damped_pseudo_inverse_is_bounded() {
        let mut jac = DMatrix::zeros(6, 5);
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1e-9;
        jac[(2, 2)] = 1e-5;
        let lambda = 1e-4;
        let pinv = pseudo_inverse(&jac, lambda);
        assert!(pinv.iter().all(|v| v.is_finite()));
        let norm = pinv.clone().svd(false, false).singular_values.max();
        assert!(norm <= 1.0 / (2.0 * lambda) + 1e-9);
    }

    #[test]
    fn admittance_rest_is_a_fixed_point() {
        let adm = AdmittanceState::at(Pose::from_rotvec(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.5, 0.0)));
        for mode in [AdmittanceMode::Placement, AdmittanceMode::Holding] {
            let next = admittance_step(&adm, &Vector6::zeros(), &VirtualImpedance::default(), mode, 1e-3).unwrap();
            assert_eq!(next.reference.position, adm.reference.position);
            assert_eq!(next.velocity, Vector6::zeros());
        }
    }

    #[test]
    fn admittance_holding_settles_at_spring_balance() {
        let imp = VirtualImpedance::default();
        let mut adm = AdmittanceState::at(Pose::identity());
        let force = Vector6::new(0.0, 4.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..20_000 {
            adm = admittance_step(&adm, &force, &imp, AdmittanceMode::Holding, 1e-3).unwrap();
        }
        assert_relative_eq!(adm.reference.position.y, 4.0 / imp.stiffness[1], epsilon = 1e-9);
    }

    #[test]
    fn placement_reanchors() {
        let imp = VirtualImpedance::default();
        let mut adm = AdmittanceState::at(Pose::identity());
        let force = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.2);
        for _ in 0..100 {
            adm = admittance_step(&adm, &force, &imp, AdmittanceMode::Placement, 1e-3).unwrap();
            assert_eq!(adm.anchor, adm.reference);
        }
        assert!(adm.reference.position.x > 0.0);
        assert!(Pose::new(Vector3::zeros(), adm.reference.orientation).orthonormality_error() < 1e-10);
    }

    #[test]
    fn admittance_rejects_bad_dt() {
        let adm = AdmittanceState::at(Pose::identity());
        for dt in [0.0, -1e-3, f64::NAN] {
            let r = admittance_step(&adm, &Vector6::zeros(), &VirtualImpedance::default(), AdmittanceMode::Holding, dt);
            assert!(matches!(r, Err(Error::Config(_))));
        }
    }

    #[test]
    fn compensation_at_rest_is_gravity() {
        let chain = KinematicChain::default_arm();
        let state = arm_state();
        let g = Vector3::from(STANDARD_GRAVITY);
        let tau = compensation_torque(&chain, &state, &g).unwrap();
        assert_eq!(tau, dynamics_terms(&chain, &state, &g).unwrap().gravity);
        let tau0 = compensation_torque(&chain, &state, &Vector3::zeros()).unwrap();
        assert!(tau0.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn insertion_law_examples() {
        let gains = GainSet {
            insertion_kp: 1.0,
            insertion_kd: 0.0,
            insertion_ko: 0.0,
            ..GainSet::default()
        };
        assert_eq!(insertion_control(0.004, 0.004, 0.0, 0.0, &GainSet::default()), 0.0);
        assert_relative_eq!(insertion_control(0.005, 0.0, 0.0, 0.0, &gains), 0.005, epsilon = 1e-18);

        let gains = GainSet::default();
        let loaded = insertion_control(0.003, 0.001, 0.001, -2.0, &gains);
        let free = insertion_control(0.003, 0.001, 0.001, 0.0, &gains);
        assert_relative_eq!(loaded - free, gains.insertion_ko * -2.0, epsilon = 1e-15);
        // with the error terms at zero the force term is isolated bit for bit
        assert_eq!(insertion_control(0.001, 0.001, 0.0, -2.0, &gains), gains.insertion_ko * -2.0);
    }

    #[test]
    fn gain_validation() {
        let mut g = GainSet::default();
        assert!(g.validate_tracking().is_ok());
        g.kp = [0.0; 6];
        assert!(g.validate_tracking().is_err());
        let mut g = GainSet::default();
        g.kd[2] = -1.0;
        assert!(g.validate().is_err());
        let mut imp = VirtualImpedance::default();
        imp.mass[0] = 0.0;
        assert!(imp.validate().is_err());
    }
}
