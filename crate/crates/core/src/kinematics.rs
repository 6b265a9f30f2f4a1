//! Serial-chain kinematics for revolute arms.
//!
//! Frame convention: every pose, twist and Jacobian is expressed in the base
//! frame. Twists are stacked `[v; ω]`, where `v` is the linear velocity of the
//! end-effector mount point and `ω` the angular velocity.
//!
//! Joint `i` sits at the origin of frame `i`, which is obtained from frame
//! `i-1` by the fixed `origin` offset followed by the joint rotation about
//! `axis` (expressed in frame `i` before rotation). Link `i` is rigidly
//! attached to frame `i`. The end-effector mount is the last frame composed
//! with the fixed `tool` offset.

use std::path::Path;

use nalgebra::{
    DVector, Isometry3, Matrix3, Matrix6xX, Rotation3, Translation3, Unit, UnitQuaternion,
    Vector3, Vector6,
};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

const UNIT_AXIS_TOL: f64 = 1e-12;

/// Step for the directional difference used by [`jacobian_time_derivative`].
pub const JDOT_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RevoluteJoint {
    pub axis: Unit<Vector3<f64>>,
    pub origin: Isometry3<f64>,
    pub lower_limit: f64,
    pub upper_limit: f64,
    /// Viscous friction coefficient of the joint (N·m·s/rad).
    pub viscous_friction: f64,
}

/// Inertial parameters of one link, in the link frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass.
    pub inertia: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    name: String,
    joints: Vec<RevoluteJoint>,
    links: Vec<LinkInertia>,
    tool: Isometry3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, dq: DVector<f64>) -> Self {
        Self { q, dq }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            dq: DVector::zeros(n),
        }
    }

    pub fn zeros(dof: usize) -> Self {
        Self::at_rest(DVector::zeros(dof))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: Rotation3<f64>,
}

/// Rotation vector of `r`, norm in `[0, π]`.
///
/// Goes through the quaternion and `atan2`, so it stays finite and accurate
/// for matrices that drifted slightly off SO(3) through round-off (where the
/// trace-based `acos` formula returns NaN) and for very small angles.
pub fn log_rotation(r: &Rotation3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let n = v.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    v * (2.0 * n.atan2(w) / n)
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: Rotation3<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Rotation3::identity())
    }

    /// Build a pose from a position and a rotation vector (axis·angle).
    pub fn from_rotvec(position: Vector3<f64>, rotvec: Vector3<f64>) -> Self {
        Self::new(position, Rotation3::new(rotvec))
    }

    pub fn rotvec(&self) -> Vector3<f64> {
        log_rotation(&self.orientation)
    }

    fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation.to_rotation_matrix())
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.orientation.matrix();
        let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
        gram.max((r.determinant() - 1.0).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskState {
    pub pose: Pose,
    /// `[v; ω]` in the base frame.
    pub twist: Vector6<f64>,
}

impl TaskState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            pose,
            twist: Vector6::zeros(),
        }
    }
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<RevoluteJoint>,
        links: Vec<LinkInertia>,
        tool: Isometry3<f64>,
    ) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Config("chain needs at least one joint".into()));
        }
        check_len("link parameters", joints.len(), links.len())?;
        for (i, j) in joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > UNIT_AXIS_TOL {
                return Err(Error::Config(format!("joint {i}: axis is not a unit vector")));
            }
            if !(j.lower_limit <= j.upper_limit) {
                return Err(Error::Config(format!("joint {i}: lower limit above upper limit")));
            }
            if !(j.viscous_friction >= 0.0) {
                return Err(Error::Config(format!("joint {i}: negative friction")));
            }
        }
        for (i, l) in links.iter().enumerate() {
            if !(l.mass > 0.0) {
                return Err(Error::Config(format!("link {i}: mass must be positive")));
            }
            let sym_err = (l.inertia - l.inertia.transpose()).abs().max();
            if sym_err > 1e-12 {
                return Err(Error::Config(format!("link {i}: inertia is not symmetric")));
            }
            let min_eig = l.inertia.symmetric_eigenvalues().min();
            if !(min_eig > 0.0) {
                return Err(Error::Config(format!(
                    "link {i}: inertia is not positive definite"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            joints,
            links,
            tool,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[RevoluteJoint] {
        &self.joints
    }

    pub fn links(&self) -> &[LinkInertia] {
        &self.links
    }

    pub fn tool(&self) -> &Isometry3<f64> {
        &self.tool
    }

    pub fn viscous_friction(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.viscous_friction))
    }

    /// Checks dimensions, finiteness and joint limits of a state.
    pub fn check_state(&self, state: &JointState) -> Result<()> {
        self.check_q(&state.q)?;
        check_len("joint velocities", self.dof(), state.dq.len())?;
        check_finite("joint velocities", state.dq.iter())?;
        for (i, (q, j)) in state.q.iter().zip(&self.joints).enumerate() {
            if *q < j.lower_limit || *q > j.upper_limit {
                return Err(Error::Domain(format!(
                    "joint {i} position {q} outside [{}, {}]",
                    j.lower_limit, j.upper_limit
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        check_len("joint positions", self.dof(), q.len())?;
        check_finite("joint positions", q.iter())
    }

    /// Base-frame transform of every link frame, in joint order.
    pub fn link_frames(&self, q: &DVector<f64>) -> Result<Vec<Isometry3<f64>>> {
        self.check_q(q)?;
        let mut frames = Vec::with_capacity(self.dof());
        let mut current = Isometry3::identity();
        for (joint, &angle) in self.joints.iter().zip(q.iter()) {
            current = current
                * joint.origin
                * UnitQuaternion::from_axis_angle(&joint.axis, angle);
            frames.push(current);
        }
        Ok(frames)
    }

    /// Loads a chain from the TOML schema described by [`ChainConfig`].
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ChainConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.build()
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Approximate 5-DOF youBot-like arm with the insertion subsystem mounted
    /// at the wrist flange. Link lengths and masses follow public datasheet
    /// order of magnitude; they are not calibrated values.
    pub fn default_arm() -> Self {
        ChainConfig::default_arm()
            .build()
            .expect("built-in arm parameters are valid")
    }
}

pub fn forward_kinematics(chain: &KinematicChain, q: &DVector<f64>) -> Result<Pose> {
    let frames = chain.link_frames(q)?;
    let last = frames.last().copied().unwrap_or_else(Isometry3::identity);
    Ok(Pose::from_isometry(&(last * chain.tool)))
}

pub fn geometric_jacobian(chain: &KinematicChain, q: &DVector<f64>) -> Result<Matrix6xX<f64>> {
    let frames = chain.link_frames(q)?;
    let tip = (frames[frames.len() - 1] * chain.tool).translation.vector;
    let mut jac = Matrix6xX::zeros(chain.dof());
    for (i, (frame, joint)) in frames.iter().zip(&chain.joints).enumerate() {
        let axis = frame.rotation * joint.axis.into_inner();
        let origin = frame.translation.vector;
        let linear = axis.cross(&(tip - origin));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&linear);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
    }
    Ok(jac)
}

/// `dJ/dt` along the current joint velocity by a central directional
/// difference of width [`JDOT_STEP`].
pub fn jacobian_time_derivative(
    chain: &KinematicChain,
    state: &JointState,
) -> Result<Matrix6xX<f64>> {
    chain.check_q(&state.q)?;
    check_len("joint velocities", chain.dof(), state.dq.len())?;
    check_finite("joint velocities", state.dq.iter())?;
    if state.dq.iter().all(|v| *v == 0.0) {
        return Ok(Matrix6xX::zeros(chain.dof()));
    }
    let half = &state.dq * (JDOT_STEP / 2.0);
    let ahead = geometric_jacobian(chain, &(&state.q + &half))?;
    let behind = geometric_jacobian(chain, &(&state.q - &half))?;
    Ok((ahead - behind) / JDOT_STEP)
}

pub fn task_state(chain: &KinematicChain, state: &JointState) -> Result<TaskState> {
    check_len("joint velocities", chain.dof(), state.dq.len())?;
    check_finite("joint velocities", state.dq.iter())?;
    let pose = forward_kinematics(chain, &state.q)?;
    let jac = geometric_jacobian(chain, &state.q)?;
    Ok(TaskState {
        pose,
        twist: jac * &state.dq,
    })
}

// ---------------------------------------------------------------------------
// Configuration schema

/// TOML description of a chain.
///
/// ```toml
/// name = "two-link"
///
/// [[joints]]
/// axis = [0.0, 0.0, 1.0]
/// origin_xyz = [0.0, 0.0, 0.0]
/// origin_rotvec = [0.0, 0.0, 0.0]   # axis-angle, radians
/// limits = [-3.14, 3.14]            # optional
/// friction = 0.0                    # optional, N·m·s/rad
/// link = { mass = 1.0, com = [0.15, 0.0, 0.0], inertia = [0.01, 0.01, 0.01, 0.0, 0.0, 0.0] }
///
/// [tool]
/// xyz = [0.3, 0.0, 0.0]
/// rotvec = [0.0, 0.0, 0.0]
/// ```
///
/// `inertia` lists `[ixx, iyy, izz, ixy, ixz, iyz]` about the link's center
/// of mass, in the link frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    #[serde(default = "default_chain_name")]
    pub name: String,
    pub joints: Vec<JointConfig>,
    #[serde(default)]
    pub tool: FrameConfig,
}

fn default_chain_name() -> String {
    "chain".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin_xyz: [f64; 3],
    #[serde(default)]
    pub origin_rotvec: [f64; 3],
    #[serde(default)]
    pub limits: Option<[f64; 2]>,
    #[serde(default)]
    pub friction: f64,
    pub link: LinkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rotvec: [f64; 3],
}

impl FrameConfig {
    fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.xyz)),
            UnitQuaternion::from_scaled_axis(Vector3::from(self.rotvec)),
        )
    }
}

impl ChainConfig {
    pub fn build(&self) -> Result<KinematicChain> {
        let mut joints = Vec::with_capacity(self.joints.len());
        let mut links = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            let axis = Vector3::from(j.axis);
            let norm = axis.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Config(format!("joint {i}: axis must be non-zero")));
            }
            let origin = FrameConfig {
                xyz: j.origin_xyz,
                rotvec: j.origin_rotvec,
            }
            .isometry();
            let [lo, hi] = j.limits.unwrap_or([f64::NEG_INFINITY, f64::INFINITY]);
            joints.push(RevoluteJoint {
                axis: Unit::new_normalize(axis),
                origin,
                lower_limit: lo,
                upper_limit: hi,
                viscous_friction: j.friction,
            });
            let [ixx, iyy, izz, ixy, ixz, iyz] = j.link.inertia;
            links.push(LinkInertia {
                mass: j.link.mass,
                com: Vector3::from(j.link.com),
                inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
            });
        }
        KinematicChain::new(self.name.clone(), joints, links, self.tool.isometry())
    }

    /// Approximate youBot-style arm: yaw base, three parallel pitch joints
    /// and a roll joint about the tool axis. Zero configuration points the
    /// arm straight up.
    pub fn default_arm() -> Self {
        let joint = |axis: [f64; 3], xyz: [f64; 3], limits: [f64; 2], link: LinkConfig| JointConfig {
            axis,
            origin_xyz: xyz,
            origin_rotvec: [0.0; 3],
            limits: Some(limits),
            friction: 0.0,
            link,
        };
        let link = |mass: f64, com: [f64; 3], inertia: [f64; 6]| LinkConfig { mass, com, inertia };
        ChainConfig {
            name: "youbot-approximate".into(),
            joints: vec![
                joint(
                    [0.0, 0.0, 1.0],
                    [0.0, 0.0, 0.072],
                    [-2.95, 2.95],
                    link(1.390, [0.016, 0.0, 0.035], [0.0029, 0.0060, 0.0054, 0.0, 0.0, 0.0]),
                ),
                joint(
                    [0.0, 1.0, 0.0],
                    [0.033, 0.0, 0.075],
                    [-2.6, 2.6],
                    link(1.318, [0.0, 0.0, 0.078], [0.0031, 0.0031, 0.0007, 0.0, 0.0, 0.0]),
                ),
                joint(
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 0.155],
                    [-2.6, 2.6],
                    link(0.821, [0.0, 0.0, 0.068], [0.0017, 0.0017, 0.0003, 0.0, 0.0, 0.0]),
                ),
                joint(
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 0.135],
                    [-2.6, 2.6],
                    link(0.769, [0.0, 0.0, 0.040], [0.0007, 0.0007, 0.0003, 0.0, 0.0, 0.0]),
                ),
                // roll joint carrying the insertion subsystem
                joint(
                    [0.0, 0.0, 1.0],
                    [0.0, 0.0, 0.081],
                    [-2.9, 2.9],
                    link(0.687, [0.0, 0.0, 0.060], [0.0012, 0.0012, 0.0004, 0.0, 0.0, 0.0]),
                ),
            ],
            tool: FrameConfig {
                xyz: [0.0, 0.0, 0.137],
                rotvec: [0.0; 3],
            },
        }
    }
}
