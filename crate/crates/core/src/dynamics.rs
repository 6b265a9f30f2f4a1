//! Rigid-body dynamics of the arm.
//!
//! Inverse dynamics is a base-frame recursive Newton–Euler pass. The joint
//! space terms `M`, `c` and `g` are extracted from it by probing, which keeps
//! every quantity consistent with a single implementation of the equations
//! of motion.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use crate::error::{check_finite, check_len, Error, Result};
use crate::kinematics::{geometric_jacobian, JointState, KinematicChain};

pub const STANDARD_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

/// Joint-space terms of `τ = M(q)·q̈ + c(q, q̇) + g(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub mass_matrix: DMatrix<f64>,
    /// Centrifugal and Coriolis torques.
    pub bias: DVector<f64>,
    pub gravity: DVector<f64>,
}

fn rnea(
    chain: &KinematicChain,
    q: &DVector<f64>,
    dq: &DVector<f64>,
    ddq: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>> {
    let frames = chain.link_frames(q)?;
    let n = chain.dof();

    let mut axes = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    let mut forces = Vec::with_capacity(n);
    let mut moments = Vec::with_capacity(n);
    let mut com_offsets = Vec::with_capacity(n);

    // base acceleration carries gravity
    let mut omega = Vector3::zeros();
    let mut alpha = Vector3::zeros();
    let mut acc = -gravity;
    let mut prev_origin = Vector3::zeros();

    for (i, frame) in frames.iter().enumerate() {
        let joint = &chain.joints()[i];
        let link = &chain.links()[i];
        let rot = frame.rotation.to_rotation_matrix();
        let axis = rot * joint.axis.into_inner();
        let origin = frame.translation.vector;

        let r = origin - prev_origin;
        acc += alpha.cross(&r) + omega.cross(&omega.cross(&r));

        let joint_rate = axis * dq[i];
        alpha += axis * ddq[i] + omega.cross(&joint_rate);
        omega += joint_rate;

        let rc = rot * link.com;
        let acc_com = acc + alpha.cross(&rc) + omega.cross(&omega.cross(&rc));
        let inertia = rot.matrix() * link.inertia * rot.matrix().transpose();

        forces.push(acc_com * link.mass);
        moments.push(inertia * alpha + omega.cross(&(inertia * omega)));
        com_offsets.push(rc);
        axes.push(axis);
        origins.push(origin);
        prev_origin = origin;
    }

    let mut tau = DVector::zeros(n);
    let mut f_next = Vector3::zeros();
    let mut n_next = Vector3::zeros();
    let mut next_origin = Vector3::zeros();
    for i in (0..n).rev() {
        let lever = if i + 1 < n {
            next_origin - origins[i]
        } else {
            Vector3::zeros()
        };
        let moment = moments[i] + com_offsets[i].cross(&forces[i]) + n_next + lever.cross(&f_next);
        let force = forces[i] + f_next;
        tau[i] = axes[i].dot(&moment);
        f_next = force;
        n_next = moment;
        next_origin = origins[i];
    }
    Ok(tau)
}

fn check_state(chain: &KinematicChain, state: &JointState) -> Result<()> {
    chain.check_q(&state.q)?;
    check_len("joint velocities", chain.dof(), state.dq.len())?;
    check_finite("joint velocities", state.dq.iter())
}

/// Joint torques realizing `ddq` from `state` under `gravity` (m/s²).
pub fn inverse_dynamics(
    chain: &KinematicChain,
    state: &JointState,
    ddq: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>> {
    check_state(chain, state)?;
    check_len("joint accelerations", chain.dof(), ddq.len())?;
    check_finite("joint accelerations", ddq.iter())?;
    check_finite("gravity", gravity.iter())?;
    rnea(chain, &state.q, &state.dq, ddq, gravity)
}

pub fn dynamics_terms(
    chain: &KinematicChain,
    state: &JointState,
    gravity: &Vector3<f64>,
) -> Result<DynamicsTerms> {
    check_state(chain, state)?;
    check_finite("gravity", gravity.iter())?;
    let n = chain.dof();
    let zero = DVector::zeros(n);
    let no_gravity = Vector3::zeros();

    let mut mass_matrix = DMatrix::zeros(n, n);
    let mut probe = DVector::zeros(n);
    for i in 0..n {
        probe[i] = 1.0;
        let column = rnea(chain, &state.q, &zero, &probe, &no_gravity)?;
        mass_matrix.set_column(i, &column);
        probe[i] = 0.0;
    }
    let bias = if state.dq.iter().all(|v| *v == 0.0) {
        DVector::zeros(n)
    } else {
        rnea(chain, &state.q, &state.dq, &zero, &no_gravity)?
    };
    let gravity = rnea(chain, &state.q, &zero, &zero, gravity)?;
    Ok(DynamicsTerms {
        mass_matrix,
        bias,
        gravity,
    })
}

/// Joint accelerations solving `M·q̈ = τ + Jᵀ·F_ext − c − g − b⊙q̇`, where
/// `b` is the configured viscous friction of each joint.
pub fn forward_dynamics(
    chain: &KinematicChain,
    state: &JointState,
    tau: &DVector<f64>,
    external_wrench: &Vector6<f64>,
    gravity: &Vector3<f64>,
) -> Result<DVector<f64>> {
    check_len("joint torques", chain.dof(), tau.len())?;
    check_finite("joint torques", tau.iter())?;
    check_finite("external wrench", external_wrench.iter())?;
    let terms = dynamics_terms(chain, state, gravity)?;
    let mut rhs = tau - &terms.bias - &terms.gravity;
    rhs -= chain.viscous_friction().component_mul(&state.dq);
    if external_wrench.iter().any(|v| *v != 0.0) {
        let jac = geometric_jacobian(chain, &state.q)?;
        rhs += jac.transpose() * external_wrench;
    }
    let chol = terms.mass_matrix.clone().cholesky().ok_or_else(|| {
        Error::Numerical("mass matrix is not positive definite".into())
    })?;
    let ddq = chol.solve(&rhs);
    if ddq.iter().all(|v| v.is_finite()) {
        Ok(ddq)
    } else {
        Err(Error::Numerical(format!(
            "non-finite joint accelerations at q = {:?}",
            state.q.as_slice()
        )))
    }
}

/// `½·q̇ᵀ·M(q)·q̇`.
pub fn kinetic_energy(chain: &KinematicChain, state: &JointState) -> Result<f64> {
    let terms = dynamics_terms(chain, state, &Vector3::zeros())?;
    Ok(0.5 * state.dq.dot(&(&terms.mass_matrix * &state.dq)))
}

/// Base-frame center of mass of every link.
pub fn link_com_positions(chain: &KinematicChain, q: &DVector<f64>) -> Result<Vec<Vector3<f64>>> {
    let frames = chain.link_frames(q)?;
    Ok(frames
        .iter()
        .zip(chain.links())
        .map(|(f, l)| f.transform_point(&l.com.into()).coords)
        .collect())
}

/// Gravitational potential energy `−Σ mᵢ·gᵀ·pᵢ`.
pub fn potential_energy(
    chain: &KinematicChain,
    q: &DVector<f64>,
    gravity: &Vector3<f64>,
) -> Result<f64> {
    Ok(link_com_positions(chain, q)?
        .iter()
        .zip(chain.links())
        .map(|(p, l)| -l.mass * gravity.dot(p))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{ChainConfig, FrameConfig, JointConfig, LinkConfig};
    use approx::assert_relative_eq;

    fn pendulum(mass: f64, com: f64, izz: f64) -> KinematicChain {
        // rotation about y so that gravity along -z acts in the swing plane
        ChainConfig {
            name: "pendulum".into(),
            joints: vec![JointConfig {
                axis: [0.0, 1.0, 0.0],
                origin_xyz: [0.0; 3],
                origin_rotvec: [0.0; 3],
                limits: None,
                friction: 0.0,
                link: LinkConfig {
                    mass,
                    com: [com, 0.0, 0.0],
                    inertia: [izz, izz, izz, 0.0, 0.0, 0.0],
                },
            }],
            tool: FrameConfig {
                xyz: [2.0 * com, 0.0, 0.0],
                rotvec: [0.0; 3],
            },
        }
        .build()
        .unwrap()
    }

    fn gravity() -> Vector3<f64> {
        Vector3::from(STANDARD_GRAVITY)
    }

    #[test]
    fn horizontal_pendulum_static_torque() {
        let chain = pendulum(1.0, 0.5, 0.02);
        let tau = inverse_dynamics(&chain, &JointState::zeros(1), &DVector::zeros(1), &gravity())
            .unwrap();
        // gravity pulls the link down (towards +q about +y), holding needs -m·g·l
        assert_relative_eq!(tau[0], -4.905, epsilon = 1e-12);
    }

    #[test]
    fn zero_everything_gives_zero_torque() {
        let chain = KinematicChain::default_arm();
        let state = JointState::at_rest(DVector::from_vec(vec![0.2, 0.4, 1.0, -0.3, 0.7]));
        let tau = inverse_dynamics(&chain, &state, &DVector::zeros(5), &Vector3::zeros()).unwrap();
        assert!(tau.iter().all(|t| t.abs() < 1e-15));
    }

    #[test]
    fn pendulum_inertia_is_constant() {
        let chain = pendulum(1.0, 0.5, 0.02);
        for q in [-2.0, 0.0, 0.7, 3.0] {
            let terms = dynamics_terms(&chain, &JointState::at_rest(DVector::from_element(1, q)), &gravity())
                .unwrap();
            assert_relative_eq!(terms.mass_matrix[(0, 0)], 0.02 + 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn bias_vanishes_at_rest() {
        let chain = KinematicChain::default_arm();
        let state = JointState::at_rest(DVector::from_vec(vec![0.1, -0.5, 0.9, 0.3, 1.0]));
        let terms = dynamics_terms(&chain, &state, &gravity()).unwrap();
        assert!(terms.bias.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn terms_reassemble_inverse_dynamics() {
        let chain = KinematicChain::default_arm();
        let state = JointState::new(
            DVector::from_vec(vec![0.1, -0.5, 0.9, 0.3, 1.0]),
            DVector::from_vec(vec![0.4, -1.0, 0.3, 0.8, -0.2]),
        );
        let ddq = DVector::from_vec(vec![1.0, 0.5, -2.0, 0.1, 0.3]);
        let terms = dynamics_terms(&chain, &state, &gravity()).unwrap();
        let tau = inverse_dynamics(&chain, &state, &ddq, &gravity()).unwrap();
        let rebuilt = &terms.mass_matrix * &ddq + &terms.bias + &terms.gravity;
        assert_relative_eq!(tau, rebuilt, epsilon = 1e-9);
    }

    #[test]
    fn exact_compensation_gives_zero_acceleration() {
        let chain = KinematicChain::default_arm();
        let state = JointState::new(
            DVector::from_vec(vec![0.1, -0.5, 0.9, 0.3, 1.0]),
            DVector::from_vec(vec![0.4, -1.0, 0.3, 0.8, -0.2]),
        );
        let terms = dynamics_terms(&chain, &state, &gravity()).unwrap();
        let tau = &terms.bias + &terms.gravity;
        let ddq = forward_dynamics(&chain, &state, &tau, &Vector6::zeros(), &gravity()).unwrap();
        assert!(ddq.amax() < 1e-10);
    }

    #[test]
    fn pendulum_forward_dynamics_is_scalar_division() {
        let chain = pendulum(1.0, 0.5, 0.02);
        let state = JointState::at_rest(DVector::from_element(1, 0.3));
        let tau = DVector::from_element(1, 1.5);
        let ddq = forward_dynamics(&chain, &state, &tau, &Vector6::zeros(), &gravity()).unwrap();
        let g = -9.81 * 0.5 * 0.3_f64.cos();
        assert_relative_eq!(ddq[0], (1.5 - g) / 0.27, epsilon = 1e-12);
    }

    #[test]
    fn external_wrench_enters_through_jacobian_transpose() {
        // a vertical force at the tip of the horizontal pendulum
        let chain = pendulum(1.0, 0.5, 0.02);
        let state = JointState::zeros(1);
        let wrench = Vector6::new(0.0, 0.0, 2.0, 0.0, 0.0, 0.0);
        let ddq = forward_dynamics(&chain, &state, &DVector::zeros(1), &wrench, &Vector3::zeros()).unwrap();
        // tip at (1, 0, 0): lifting by 2 N gives -2 N·m about +y
        assert_relative_eq!(ddq[0], -2.0 / 0.27, epsilon = 1e-12);
    }

    #[test]
    fn viscous_friction_opposes_motion() {
        let mut cfg = ChainConfig::default_arm();
        cfg.joints[0].friction = 0.5;
        let chain = cfg.build().unwrap();
        let state = JointState::new(DVector::zeros(5), DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0]));
        let ddq = forward_dynamics(&chain, &state, &DVector::zeros(5), &Vector6::zeros(), &Vector3::zeros())
            .unwrap();
        assert!(ddq[0] < 0.0);
    }

    #[test]
    fn dimension_errors() {
        let chain = KinematicChain::default_arm();
        let state = JointState::zeros(5);
        assert!(inverse_dynamics(&chain, &state, &DVector::zeros(4), &gravity()).is_err());
        assert!(forward_dynamics(&chain, &state, &DVector::zeros(6), &Vector6::zeros(), &gravity()).is_err());
        assert!(dynamics_terms(&chain, &JointState::zeros(3), &gravity()).is_err());
    }
}
