//! Independent reference models used by the integration tests. Nothing here
//! calls into the dynamics or control code under test.

#![allow(dead_code)]

use std::f64::consts::PI;

use insertion_core::kinematics::{KinematicChain, LinkInertia, RevoluteJoint};
use nalgebra::{Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;

pub const G: f64 = 9.81;

#[derive(Debug, Clone, Copy)]
pub struct PlanarLink {
    pub length: f64,
    pub com: f64,
    pub mass: f64,
    /// Inertia about the joint axis, through the center of mass.
    pub inertia: f64,
}

/// Serial arm moving in the x–z plane (z up). Joints turn about −y so a
/// positive angle lifts the link toward +z; angles are measured from +x.
pub fn planar_chain(links: &[PlanarLink]) -> KinematicChain {
    let mut joints = Vec::new();
    let mut inertias = Vec::new();
    let mut offset = 0.0;
    for l in links {
        joints.push(RevoluteJoint {
            axis: Unit::new_normalize(Vector3::new(0.0, -1.0, 0.0)),
            origin: Isometry3::translation(offset, 0.0, 0.0),
            lower_limit: f64::NEG_INFINITY,
            upper_limit: f64::INFINITY,
            viscous_friction: 0.0,
        });
        // off-plane principal moments do not enter planar motion; any
        // positive values will do
        inertias.push(LinkInertia {
            mass: l.mass,
            com: Vector3::new(l.com, 0.0, 0.0),
            inertia: Matrix3::from_diagonal(&Vector3::new(0.3 * l.inertia, l.inertia, 1.1 * l.inertia)),
        });
        offset = l.length;
    }
    KinematicChain::new("planar", joints, inertias, Isometry3::translation(offset, 0.0, 0.0))
        .expect("valid planar chain")
}

/// Closed-form Euler–Lagrange torques of a one-link planar arm.
pub fn lagrange_one_link(l: &PlanarLink, th: f64, ddth: f64) -> f64 {
    (l.inertia + l.mass * l.com * l.com) * ddth + l.mass * G * l.com * th.cos()
}

/// Closed-form Euler–Lagrange torques of a two-link planar arm.
pub fn lagrange_two_link(a: &PlanarLink, b: &PlanarLink, th: [f64; 2], dth: [f64; 2], ddth: [f64; 2]) -> [f64; 2] {
    let (l1, c1, c2) = (a.length, a.com, b.com);
    let (m1, m2) = (a.mass, b.mass);
    let cos2 = th[1].cos();
    let h = m2 * l1 * c2 * th[1].sin();
    let m11 = a.inertia + b.inertia + m1 * c1 * c1 + m2 * (l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * cos2);
    let m12 = b.inertia + m2 * (c2 * c2 + l1 * c2 * cos2);
    let m22 = b.inertia + m2 * c2 * c2;
    let cor1 = -h * (2.0 * dth[0] * dth[1] + dth[1] * dth[1]);
    let cor2 = h * dth[0] * dth[0];
    let g1 = (m1 * c1 + m2 * l1) * G * th[0].cos() + m2 * c2 * G * (th[0] + th[1]).cos();
    let g2 = m2 * c2 * G * (th[0] + th[1]).cos();
    [
        m11 * ddth[0] + m12 * ddth[1] + cor1 + g1,
        m12 * ddth[0] + m22 * ddth[1] + cor2 + g2,
    ]
}

pub fn random_planar_link(rng: &mut impl Rng) -> PlanarLink {
    let length = rng.random_range(0.1..0.6);
    PlanarLink {
        length,
        com: rng.random_range(0.1..0.9) * length,
        mass: rng.random_range(0.2..3.0),
        inertia: rng.random_range(1e-3..5e-2),
    }
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.2 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Chain with random axes, joint offsets and inertial parameters.
pub fn random_chain(rng: &mut impl Rng, dof: usize) -> KinematicChain {
    let mut joints = Vec::new();
    let mut links = Vec::new();
    for _ in 0..dof {
        let xyz = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.0..0.3));
        let rot = UnitQuaternion::from_scaled_axis(random_unit(rng) * rng.random_range(0.0..PI));
        joints.push(RevoluteJoint {
            axis: Unit::new_normalize(random_unit(rng)),
            origin: Isometry3::from_parts(Translation3::from(xyz), rot),
            lower_limit: f64::NEG_INFINITY,
            upper_limit: f64::INFINITY,
            viscous_friction: 0.0,
        });
        let a = Matrix3::from_fn(|_, _| rng.random_range(-0.1..0.1));
        links.push(LinkInertia {
            mass: rng.random_range(0.2..3.0),
            com: Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.0..0.2)),
            inertia: a * a.transpose() + Matrix3::identity() * 1e-3,
        });
    }
    let tool = Isometry3::translation(0.0, 0.0, rng.random_range(0.05..0.2));
    KinematicChain::new("random", joints, links, tool).expect("valid random chain")
}

/// `x(t)` for `ẍ + kd·ẋ + kp·x = 0`, `x(0) = 1`, `ẋ(0) = 0`.
pub fn free_response(kp: f64, kd: f64, t: f64) -> f64 {
    let wn = kp.sqrt();
    let zeta = kd / (2.0 * wn);
    if (zeta - 1.0).abs() < 1e-12 {
        (1.0 + wn * t) * (-wn * t).exp()
    } else if zeta < 1.0 {
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        (-zeta * wn * t).exp() * ((wd * t).cos() + zeta * wn / wd * (wd * t).sin())
    } else {
        let r = (zeta * zeta - 1.0).sqrt();
        let (s1, s2) = (-wn * (zeta - r), -wn * (zeta + r));
        (s2 * (s1 * t).exp() - s1 * (s2 * t).exp()) / (s2 - s1)
    }
}

/// `x(t)` for `m·ẍ + b·ẋ + k·x = f` from rest, with a constant force `f`
/// switched on at `t = 0`.
pub fn forced_response(m: f64, b: f64, k: f64, f: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    (f / k) * (1.0 - free_response(k / m, b / m, t))
}
