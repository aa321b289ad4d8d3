//! Planar rigid-body dynamics in world-frame spatial coordinates.
//!
//! A planar spatial motion vector is `[ω, vx, vz]` where `(vx, vz)` is the
//! velocity of the body-fixed point currently at the world origin; a spatial
//! force is `[n, fx, fz]` with `n` the moment about the world origin. With
//! every quantity expressed in the world frame no coordinate transforms are
//! needed between bodies, which keeps both recursions short.

use nalgebra::DMatrix;

use super::kinematics::{cross, LinkFrames, Vec2, ROOT_DOFS};
use super::model::RobotModel;

pub type Spatial = [f64; 3];

#[inline]
fn sadd(a: Spatial, b: Spatial) -> Spatial {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn sscale(a: Spatial, s: f64) -> Spatial {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
fn dot(a: Spatial, b: Spatial) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Motion cross product `v ×ₘ m`.
#[inline]
pub fn cross_motion(v: Spatial, m: Spatial) -> Spatial {
    [0.0, -v[0] * m[2] + m[0] * v[2], v[0] * m[1] - m[0] * v[1]]
}

/// Force cross product `v ×* f`.
#[inline]
pub fn cross_force(v: Spatial, f: Spatial) -> Spatial {
    [v[1] * f[2] - v[2] * f[1], -v[0] * f[2], v[0] * f[1]]
}

/// Symmetric 3×3 spatial inertia, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialInertia(pub [[f64; 3]; 3]);

impl SpatialInertia {
    pub const ZERO: SpatialInertia = SpatialInertia([[0.0; 3]; 3]);

    /// Body of mass `m` with centroidal inertia `ic` and centre of mass at
    /// world point `c`.
    pub fn from_body(m: f64, ic: f64, c: Vec2) -> Self {
        let [cx, cz] = c;
        SpatialInertia([
            [ic + m * (cx * cx + cz * cz), -m * cz, m * cx],
            [-m * cz, m, 0.0],
            [m * cx, 0.0, m],
        ])
    }

    #[inline]
    pub fn apply(&self, v: Spatial) -> Spatial {
        let r = &self.0;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn add_assign(&mut self, o: &SpatialInertia) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += o.0[i][j];
            }
        }
    }
}

/// External force applied at a world point on a link.
#[derive(Debug, Clone, Copy)]
pub struct PointForce {
    pub link: usize,
    pub point: Vec2,
    pub force: Vec2,
}

impl PointForce {
    fn spatial(&self) -> Spatial {
        [cross(self.point, self.force), self.force[0], self.force[1]]
    }
}

/// Motion-subspace columns of each body's joint, in world coordinates.
pub struct MotionSubspace {
    /// `cols[i]` holds the (dof index, column) pairs for body `i`.
    pub cols: Vec<Vec<(usize, Spatial)>>,
}

impl MotionSubspace {
    pub fn new(model: &RobotModel, frames: &LinkFrames) -> Self {
        let p = frames.origin[0];
        let mut cols = Vec::with_capacity(model.n_links());
        cols.push(vec![
            (0, [0.0, 1.0, 0.0]),
            (1, [0.0, 0.0, 1.0]),
            (2, revolute_column(p)),
        ]);
        for j in 0..model.n_joints() {
            cols.push(vec![(ROOT_DOFS + j, revolute_column(frames.origin[j + 1]))]);
        }
        MotionSubspace { cols }
    }
}

/// Unit rotation about world point `o`.
#[inline]
fn revolute_column(o: Vec2) -> Spatial {
    [1.0, o[1], -o[0]]
}

pub fn body_inertias(model: &RobotModel, frames: &LinkFrames) -> Vec<SpatialInertia> {
    (0..model.n_links())
        .map(|i| SpatialInertia::from_body(model.link_masses[i], model.link_inertia(i), frames.com(model, i)))
        .collect()
}

/// Joint-space mass matrix by the composite rigid body algorithm.
pub fn mass_matrix(model: &RobotModel, frames: &LinkFrames) -> DMatrix<f64> {
    let n = ROOT_DOFS + model.n_joints();
    let nl = model.n_links();
    let sub = MotionSubspace::new(model, frames);
    let mut composite = body_inertias(model, frames);
    for i in (1..nl).rev() {
        let p = model.joint_parents[i - 1];
        let ci = composite[i];
        composite[p].add_assign(&ci);
    }
    let mut m = DMatrix::zeros(n, n);
    for i in (0..nl).rev() {
        for &(di, si) in &sub.cols[i] {
            let f = composite[i].apply(si);
            for &(dj, sj) in &sub.cols[i] {
                m[(dj, di)] = dot(sj, f);
            }
            let mut k = i;
            while let Some(a) = model.parent_of_link(k) {
                for &(da, sa) in &sub.cols[a] {
                    let v = dot(sa, f);
                    m[(da, di)] = v;
                    m[(di, da)] = v;
                }
                k = a;
            }
        }
    }
    m
}

/// Inverse dynamics by the recursive Newton-Euler algorithm:
/// `τ = M(q)·q̈ + C(q, q̇) + g(q) − Jᵀ f_ext`.
pub fn inverse_dynamics(
    model: &RobotModel,
    frames: &LinkFrames,
    gen_vel: &[f64],
    gen_acc: &[f64],
    external: &[PointForce],
) -> Vec<f64> {
    let nl = model.n_links();
    let sub = MotionSubspace::new(model, frames);
    let inertias = body_inertias(model, frames);
    let mut vel: Vec<Spatial> = vec![[0.0; 3]; nl];
    let mut acc: Vec<Spatial> = vec![[0.0; 3]; nl];
    let mut force: Vec<Spatial> = vec![[0.0; 3]; nl];
    // Gravity enters as an upward acceleration of the base frame.
    let base_acc: Spatial = [0.0, 0.0, model.gravity];

    for i in 0..nl {
        let (vp, ap) = match model.parent_of_link(i) {
            Some(p) => (vel[p], acc[p]),
            None => ([0.0; 3], base_acc),
        };
        let mut v = vp;
        let mut a = ap;
        for &(d, s) in &sub.cols[i] {
            v = sadd(v, sscale(s, gen_vel[d]));
            a = sadd(a, sscale(s, gen_acc[d]));
        }
        if i == 0 {
            // Only the rotation column of the root moves with the body:
            // d/dt [1, z, −x] = [0, ż, −ẋ].
            a = sadd(a, [0.0, gen_vel[2] * gen_vel[1], -gen_vel[2] * gen_vel[0]]);
        } else {
            for &(d, s) in &sub.cols[i] {
                a = sadd(a, sscale(cross_motion(v, s), gen_vel[d]));
            }
        }
        vel[i] = v;
        acc[i] = a;
        let h = inertias[i].apply(v);
        force[i] = sadd(inertias[i].apply(a), cross_force(v, h));
    }
    for pf in external {
        let f = pf.spatial();
        force[pf.link] = sadd(force[pf.link], sscale(f, -1.0));
    }

    let mut tau = vec![0.0; ROOT_DOFS + model.n_joints()];
    for i in (0..nl).rev() {
        for &(d, s) in &sub.cols[i] {
            tau[d] = dot(s, force[i]);
        }
        if let Some(p) = model.parent_of_link(i) {
            let fi = force[i];
            force[p] = sadd(force[p], fi);
        }
    }
    tau
}

/// Kinetic plus gravitational potential energy.
pub fn total_energy(model: &RobotModel, frames: &LinkFrames, gen_vel: &[f64]) -> f64 {
    let m = mass_matrix(model, frames);
    let v = nalgebra::DVector::from_column_slice(gen_vel);
    let kinetic = 0.5 * v.dot(&(&m * &v));
    let potential: f64 = (0..model.n_links())
        .map(|i| model.link_masses[i] * model.gravity * frames.com(model, i)[1])
        .sum();
    kinetic + potential
}

/// Jacobian-route mass matrix `Σ mᵢ Jᵥᵢᵀ Jᵥᵢ + Iᵢ Jωᵢᵀ Jωᵢ`, used as an
/// independent check on the composite rigid body recursion.
pub fn mass_matrix_from_jacobians(model: &RobotModel, frames: &LinkFrames) -> DMatrix<f64> {
    let n = ROOT_DOFS + model.n_joints();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..model.n_links() {
        let c = frames.com(model, i);
        let jv = frames.point_jacobian(model, i, c);
        let mut jw = vec![0.0; n];
        jw[2] = 1.0;
        let mut l = i;
        while l > 0 {
            jw[ROOT_DOFS + l - 1] = 1.0;
            l = model.joint_parents[l - 1];
        }
        let mass = model.link_masses[i];
        let inertia = model.link_inertia(i);
        for a in 0..n {
            for b in 0..n {
                m[(a, b)] += mass * (jv[a][0] * jv[b][0] + jv[a][1] * jv[b][1]) + inertia * jw[a] * jw[b];
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::kinematics::generalized_velocity;

    fn config() -> (RobotModel, [f64; 2], f64, Vec<f64>, Vec<f64>) {
        let m = RobotModel::planar_biped();
        let q = vec![0.2, 0.4, -0.7, 0.1, -0.3, -0.2, 0.3];
        let qd = vec![0.5, -1.0, 0.8, 2.0, -0.4, 1.2, -0.6];
        let v = generalized_velocity([0.3, -0.2], 0.7, &qd);
        (m, [0.4, 0.8], 0.15, q, v)
    }

    #[test]
    fn crba_matches_jacobian_route() {
        let (m, root, ang, q, _) = config();
        let f = LinkFrames::compute(&m, root, ang, &q);
        let a = mass_matrix(&m, &f);
        let b = mass_matrix_from_jacobians(&m, &f);
        assert!((a.clone() - b).abs().max() < 1e-10);
        assert!((a.clone() - a.transpose()).abs().max() == 0.0);
        assert!(a.cholesky().is_some());
    }

    #[test]
    fn rnea_acceleration_part_is_mass_matrix() {
        let (m, root, ang, q, v) = config();
        let f = LinkFrames::compute(&m, root, ang, &q);
        let qdd: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let with = inverse_dynamics(&m, &f, &v, &qdd, &[]);
        let without = inverse_dynamics(&m, &f, &v, &vec![0.0; 10], &[]);
        let mm = mass_matrix(&m, &f) * nalgebra::DVector::from_column_slice(&qdd);
        for i in 0..10 {
            assert!((with[i] - without[i] - mm[i]).abs() < 1e-9);
        }
    }

    /// Bias forces from the Lagrangian: `Ṁq̇ − ∂T/∂q + ∂V/∂q`, everything by
    /// central differences.
    #[test]
    fn rnea_bias_matches_lagrangian() {
        let (m, root, ang, q, v) = config();
        let n = 10;
        let coords = |x: &[f64]| -> LinkFrames {
            LinkFrames::compute(&m, [x[0], x[1]], x[2], &x[3..])
        };
        let x0: Vec<f64> = [root[0], root[1], ang].iter().copied().chain(q.iter().copied()).collect();
        let eps = 1e-6;
        let vv = nalgebra::DVector::from_column_slice(&v);
        let shifted = |s: f64| -> Vec<f64> { x0.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        let mdot = (mass_matrix(&m, &coords(&shifted(eps))) - mass_matrix(&m, &coords(&shifted(-eps)))) / (2.0 * eps);
        let mdq = &mdot * &vv;
        let energy_parts = |x: &[f64]| -> (f64, f64) {
            let fr = coords(x);
            let mm = mass_matrix(&m, &fr);
            let t = 0.5 * vv.dot(&(&mm * &vv));
            let pot: f64 = (0..m.n_links()).map(|i| m.link_masses[i] * m.gravity * fr.com(&m, i)[1]).sum();
            (t, pot)
        };
        let f0 = coords(&x0);
        let bias = inverse_dynamics(&m, &f0, &v, &vec![0.0; n], &[]);
        for d in 0..n {
            let mut xp = x0.clone();
            let mut xn = x0.clone();
            xp[d] += eps;
            xn[d] -= eps;
            let (tp, vp) = energy_parts(&xp);
            let (tn, vn) = energy_parts(&xn);
            let dt = (tp - tn) / (2.0 * eps);
            let dv = (vp - vn) / (2.0 * eps);
            let expected = mdq[d] - dt + dv;
            assert!((bias[d] - expected).abs() < 1e-5 * (1.0 + expected.abs()), "dof {d}: {} vs {}", bias[d], expected);
        }
    }

    #[test]
    fn external_force_maps_through_jacobian_transpose() {
        let (m, root, ang, q, v) = config();
        let f = LinkFrames::compute(&m, root, ang, &q);
        let link = 4;
        let point = f.distal(&m, link);
        let force = [3.0, -7.0];
        let zero = vec![0.0; 10];
        let a = inverse_dynamics(&m, &f, &v, &zero, &[]);
        let b = inverse_dynamics(&m, &f, &v, &zero, &[PointForce { link, point, force }]);
        let jac = f.point_jacobian(&m, link, point);
        for d in 0..10 {
            let jt = jac[d][0] * force[0] + jac[d][1] * force[1];
            assert!((a[d] - b[d] - jt).abs() < 1e-10);
        }
    }

    #[test]
    fn spatial_cross_products_are_dual() {
        let v = [0.3, -1.2, 0.7];
        let mv = [1.1, 0.4, -0.9];
        let f = [-0.5, 2.0, 0.25];
        // ⟨v ×ₘ m, f⟩ = −⟨m, v ×* f⟩
        let lhs = dot(cross_motion(v, mv), f);
        let rhs = -dot(mv, cross_force(v, f));
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
