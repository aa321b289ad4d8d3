//! Planar forward kinematics and point Jacobians.
//!
//! Generalized coordinates are laid out as `[x, z, φ, q_0 .. q_{n-1}]`: the
//! root position, the root angle, then joint angles. Angles are measured
//! counter-clockwise from +x toward +z.

use super::model::RobotModel;
use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

/// Number of generalized coordinates of the root block.
pub const ROOT_DOFS: usize = 3;

#[inline]
pub fn unit(angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c, s]
}

/// Rotation by +90°: `ω × r` for a scalar planar angular velocity is
/// `ω · perp(r)`.
#[inline]
pub fn perp(v: Vec2) -> Vec2 {
    [-v[1], v[0]]
}

#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Rotate `v` by `-angle` (world to a frame rotated by `angle`).
#[inline]
pub fn rotate_into(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// A point fixed on a link where ground contact is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSite {
    pub link: usize,
    pub pos: Vec2,
}

/// World-frame pose of every link for one configuration.
#[derive(Debug, Clone)]
pub struct LinkFrames {
    /// Joint location (root position for link 0).
    pub origin: Vec<Vec2>,
    /// Absolute axis angle.
    pub angle: Vec<f64>,
}

impl LinkFrames {
    pub fn compute(model: &RobotModel, root_pos: Vec2, root_angle: f64, q: &[f64]) -> Self {
        let nl = model.n_links();
        let mut origin = Vec::with_capacity(nl);
        let mut angle = Vec::with_capacity(nl);
        origin.push(root_pos);
        angle.push(root_angle + model.root_rest_angle);
        for j in 0..model.n_joints() {
            let p = model.joint_parents[j];
            let o = add(origin[p], scale(unit(angle[p]), model.joint_offsets[j]));
            origin.push(o);
            angle.push(angle[p] + model.joint_rest_angles[j] + q[j]);
        }
        LinkFrames { origin, angle }
    }

    /// Point at distance `along` on link `i`'s axis.
    #[inline]
    pub fn point(&self, i: usize, along: f64) -> Vec2 {
        add(self.origin[i], scale(unit(self.angle[i]), along))
    }

    pub fn proximal(&self, model: &RobotModel, i: usize) -> Vec2 {
        self.point(i, model.link_proximal[i])
    }

    pub fn distal(&self, model: &RobotModel, i: usize) -> Vec2 {
        self.point(i, model.link_proximal[i] + model.link_lengths[i])
    }

    pub fn com(&self, model: &RobotModel, i: usize) -> Vec2 {
        self.point(i, model.link_coms[i])
    }

    pub fn keypoints(&self, model: &RobotModel) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(model.n_keypoints());
        out.push(self.origin[0]);
        out.extend(model.keypoint_links.iter().map(|&l| self.distal(model, l)));
        out
    }

    /// Contact sites: the distal endpoint of every link, plus the proximal
    /// endpoint of the root and of any link whose proximal end is offset from
    /// its joint.
    pub fn contact_sites(&self, model: &RobotModel) -> Vec<ContactSite> {
        let mut sites = Vec::with_capacity(model.n_links() + 3);
        for i in 0..model.n_links() {
            if i == 0 || model.link_proximal[i] != 0.0 {
                sites.push(ContactSite { link: i, pos: self.proximal(model, i) });
            }
            sites.push(ContactSite { link: i, pos: self.distal(model, i) });
        }
        sites
    }

    pub fn com_total(&self, model: &RobotModel) -> Vec2 {
        let mut acc = [0.0, 0.0];
        for i in 0..model.n_links() {
            acc = add(acc, scale(self.com(model, i), model.link_masses[i]));
        }
        scale(acc, 1.0 / model.total_mass())
    }

    /// Column `d` of the translational Jacobian of a world point `x` rigidly
    /// attached to `link`, for every generalized coordinate. Columns of
    /// coordinates not on the link's path are zero.
    pub fn point_jacobian(&self, model: &RobotModel, link: usize, x: Vec2) -> Vec<Vec2> {
        let mut cols = vec![[0.0, 0.0]; ROOT_DOFS + model.n_joints()];
        cols[0] = [1.0, 0.0];
        cols[1] = [0.0, 1.0];
        cols[2] = perp(sub(x, self.origin[0]));
        let mut l = link;
        while l > 0 {
            cols[ROOT_DOFS + l - 1] = perp(sub(x, self.origin[l]));
            l = model.joint_parents[l - 1];
        }
        cols
    }
}

/// Validated forward kinematics: the root position followed by the distal
/// endpoint of each keypoint link.
pub fn forward_kinematics(
    model: &RobotModel,
    root_pos: Vec2,
    root_angle: f64,
    q: &[f64],
) -> Result<Vec<Vec2>> {
    if q.len() != model.n_joints() {
        return Err(Error::DimensionMismatch {
            expected: model.n_joints(),
            got: q.len(),
            context: "joint positions",
        });
    }
    if !root_pos.iter().all(|v| v.is_finite())
        || !root_angle.is_finite()
        || !q.iter().all(|v| v.is_finite())
    {
        return Err(Error::invalid("forward kinematics requires finite inputs"));
    }
    Ok(LinkFrames::compute(model, root_pos, root_angle, q).keypoints(model))
}

/// Generalized velocity vector `[ẋ, ż, φ̇, q̇...]`.
pub fn generalized_velocity(root_linvel: Vec2, root_angvel: f64, qdot: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(ROOT_DOFS + qdot.len());
    v.extend_from_slice(&[root_linvel[0], root_linvel[1], root_angvel]);
    v.extend_from_slice(qdot);
    v
}

/// World velocity of a point rigidly attached to `link`.
pub fn point_velocity(
    frames: &LinkFrames,
    model: &RobotModel,
    link: usize,
    x: Vec2,
    gen_vel: &[f64],
) -> Vec2 {
    let mut v = [gen_vel[0], gen_vel[1]];
    v = add(v, scale(perp(sub(x, frames.origin[0])), gen_vel[2]));
    let mut l = link;
    while l > 0 {
        v = add(v, scale(perp(sub(x, frames.origin[l])), gen_vel[ROOT_DOFS + l - 1]));
        l = model.joint_parents[l - 1];
    }
    v
}

/// Absolute angular velocity of `link`.
pub fn link_angular_velocity(model: &RobotModel, link: usize, gen_vel: &[f64]) -> f64 {
    let mut w = gen_vel[2];
    let mut l = link;
    while l > 0 {
        w += gen_vel[ROOT_DOFS + l - 1];
        l = model.joint_parents[l - 1];
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::model::BaseMode;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn two_link() -> RobotModel {
        RobotModel::serial_chain(&[1.0, 1.0], &[1.0, 1.0], BaseMode::Fixed)
    }

    fn tip(root_angle: f64, q: f64) -> Vec2 {
        let kp = forward_kinematics(&two_link(), [0.0, 0.0], root_angle, &[q]).unwrap();
        *kp.last().unwrap()
    }

    #[test]
    fn straight_chain() {
        let t = tip(0.0, 0.0);
        assert!((t[0] - 2.0).abs() < 1e-12 && t[1].abs() < 1e-12);
    }

    #[test]
    fn rigid_rotation() {
        let t = tip(FRAC_PI_2, 0.0);
        assert!(t[0].abs() < 1e-12 && (t[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn composed_rotations() {
        // Hand composition: first segment R(π/2)·(1,0) = (0,1); the second is
        // rotated by π/2 − π/2 = 0 and adds (1,0).
        let r1 = [[0.0, -1.0], [1.0, 0.0]];
        let first = [r1[0][0], r1[1][0]];
        let second = [1.0, 0.0];
        let expected = add(first, second);
        let t = tip(FRAC_PI_2, -FRAC_PI_2);
        assert!((t[0] - expected[0]).abs() < 1e-12);
        assert!((t[1] - expected[1]).abs() < 1e-12);
        assert!((t[0] - 1.0).abs() < 1e-12 && (t[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn root_keypoint_is_root_position() {
        let m = RobotModel::planar_biped();
        let kp = forward_kinematics(&m, [0.3, 0.7], 0.2, &[0.1; 7]).unwrap();
        assert_eq!(kp[0], [0.3, 0.7]);
        assert_eq!(kp.len(), 8);
    }

    #[test]
    fn rejects_bad_input() {
        let m = two_link();
        assert!(forward_kinematics(&m, [f64::NAN, 0.0], 0.0, &[0.0]).is_err());
        assert!(forward_kinematics(&m, [0.0, 0.0], 0.0, &[f64::INFINITY]).is_err());
        assert!(matches!(
            forward_kinematics(&m, [0.0, 0.0], 0.0, &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
        assert!(wrap_angle(4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let m = RobotModel::planar_biped();
        let q = [0.1, 0.3, -0.5, 0.2, -0.2, -0.3, 0.1];
        let root = [0.2, 0.85];
        let ang = 0.1;
        let link = 7;
        let frames = LinkFrames::compute(&m, root, ang, &q);
        let x = frames.distal(&m, link);
        let jac = frames.point_jacobian(&m, link, x);
        let eps = 1e-6;
        for d in 0..ROOT_DOFS + 7 {
            let perturb = |s: f64| {
                let mut r = root;
                let mut a = ang;
                let mut qq = q.to_vec();
                match d {
                    0 => r[0] += s,
                    1 => r[1] += s,
                    2 => a += s,
                    _ => qq[d - ROOT_DOFS] += s,
                }
                LinkFrames::compute(&m, r, a, &qq).distal(&m, link)
            };
            let (p, n) = (perturb(eps), perturb(-eps));
            for k in 0..2 {
                let fd = (p[k] - n[k]) / (2.0 * eps);
                assert!((fd - jac[d][k]).abs() < 1e-7, "dof {d} axis {k}");
            }
        }
    }

    proptest! {
        #[test]
        fn link_endpoints_are_rigid(
            q in proptest::collection::vec(-3.0f64..3.0, 7),
            ang in -3.0f64..3.0,
            x in -5.0f64..5.0,
            z in -5.0f64..5.0,
        ) {
            let m = RobotModel::planar_biped();
            let f = LinkFrames::compute(&m, [x, z], ang, &q);
            for i in 0..m.n_links() {
                let d = norm(sub(f.distal(&m, i), f.proximal(&m, i)));
                prop_assert!((d - m.link_lengths[i]).abs() < 1e-9);
            }
        }
    }
}
