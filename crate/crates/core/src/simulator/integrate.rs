//! PD actuation, penalty contact and time stepping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dynamics::{inverse_dynamics, mass_matrix};
use super::kinematics::{generalized_velocity, point_velocity, LinkFrames, Vec2, ROOT_DOFS};
use super::model::{BaseMode, RobotModel};
use crate::error::{Error, Result};

/// Full simulator state of one robot instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub root_pos: Vec2,
    pub root_angle: f64,
    pub root_linvel: Vec2,
    pub root_angvel: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub time: f64,
    /// Identifier of the random stream driving this instance's noise.
    pub rng_stream: u64,
}

impl SimState {
    /// At rest in the given configuration, previous action equal to `q`.
    pub fn at_rest(root_pos: Vec2, root_angle: f64, q: Vec<f64>) -> Self {
        let n = q.len();
        SimState {
            root_pos,
            root_angle,
            root_linvel: [0.0, 0.0],
            root_angvel: 0.0,
            prev_action: q.clone(),
            q,
            qdot: vec![0.0; n],
            time: 0.0,
            rng_stream: 0,
        }
    }

    pub fn frames(&self, model: &RobotModel) -> LinkFrames {
        LinkFrames::compute(model, self.root_pos, self.root_angle, &self.q)
    }

    pub fn keypoints(&self, model: &RobotModel) -> Vec<Vec2> {
        self.frames(model).keypoints(model)
    }

    pub fn gen_vel(&self) -> Vec<f64> {
        generalized_velocity(self.root_linvel, self.root_angvel, &self.qdot)
    }

    /// World velocities of the tracked keypoints.
    pub fn keypoint_velocities(&self, model: &RobotModel) -> Vec<Vec2> {
        let frames = self.frames(model);
        let v = self.gen_vel();
        let mut out = Vec::with_capacity(model.n_keypoints());
        out.push(self.root_linvel);
        for &l in &model.keypoint_links {
            let x = frames.distal(model, l);
            out.push(point_velocity(&frames, model, l, x, &v));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.root_pos.iter().all(|v| v.is_finite())
            && self.root_angle.is_finite()
            && self.root_linvel.iter().all(|v| v.is_finite())
            && self.root_angvel.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.qdot.iter().all(|v| v.is_finite())
    }
}

/// Integration settings: physics step and substeps per control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub substeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 1.0 / 200.0, substeps: 4 }
    }
}

impl SimConfig {
    pub fn control_dt(&self) -> f64 {
        self.dt * self.substeps as f64
    }
}

/// Diagnostics of a step, used by the reward.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    /// Applied joint torques (mean over substeps for a control step).
    pub torque: Vec<f64>,
    /// Mean over substeps of Σ|τ|.
    pub torque_abs_sum: f64,
    /// Mean over substeps of the summed tangential speed of foot contact
    /// sites that touch the ground.
    pub foot_slip: f64,
    /// Number of contact sites touching the ground at the last substep.
    pub contacts: usize,
    /// Total normal contact force at the last substep.
    pub normal_force: f64,
}

/// Commanded PD torque before any time discretization, for diagnostics and
/// the setpoint property: `kp·(clamp(a) − q) − kd·q̇`, saturated.
pub fn pd_torque(model: &RobotModel, q: &[f64], qdot: &[f64], action: &[f64]) -> Vec<f64> {
    let target = model.clamp_targets(action);
    (0..model.n_joints())
        .map(|j| {
            let t = model.pd_kp[j] * (target[j] - q[j]) - model.pd_kd[j] * qdot[j];
            t.clamp(-model.torque_limits[j], model.torque_limits[j])
        })
        .collect()
}

/// Advance one physics step of length `dt` holding `action` as PD target.
pub fn step(model: &RobotModel, state: &SimState, action: &[f64], dt: f64) -> Result<SimState> {
    step_detailed(model, state, action, dt, None).map(|(s, _)| s)
}

/// Semi-implicit Euler: velocities are updated first from forces evaluated at
/// the current configuration, then positions from the new velocities. Joint
/// damping and contact damping/sticking friction are taken at the end-of-step
/// velocity (a linearly implicit solve), while springs, saturated torques and
/// sliding friction are explicit.
pub fn step_detailed(
    model: &RobotModel,
    state: &SimState,
    action: &[f64],
    dt: f64,
    extra_torque: Option<&[f64]>,
) -> Result<(SimState, StepInfo)> {
    let nj = model.n_joints();
    let n = ROOT_DOFS + nj;
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
    }
    if action.len() != nj {
        return Err(Error::DimensionMismatch { expected: nj, got: action.len(), context: "action" });
    }

    let frames = state.frames(model);
    let v = state.gen_vel();
    let target = model.clamp_targets(action);

    let mut force = vec![0.0; n];
    let mut damping = DMatrix::<f64>::zeros(n, n);
    let mut implicit_joint = vec![false; nj];
    for j in 0..nj {
        let (kp, kd, lim) = (model.pd_kp[j], model.pd_kd[j], model.torque_limits[j]);
        let spring = kp * (target[j] - state.q[j]);
        let est = spring - kd * state.qdot[j];
        if est.abs() <= lim {
            force[ROOT_DOFS + j] = spring;
            damping[(ROOT_DOFS + j, ROOT_DOFS + j)] = kd;
            implicit_joint[j] = true;
        } else {
            force[ROOT_DOFS + j] = lim.copysign(est);
        }
        if let Some(extra) = extra_torque {
            force[ROOT_DOFS + j] += extra[j];
        }
    }

    let mut info = StepInfo::default();
    for site in frames.contact_sites(model) {
        let depth = -site.pos[1];
        if depth <= 0.0 {
            continue;
        }
        let vel = point_velocity(&frames, model, site.link, site.pos, &v);
        let normal_est = model.contact_stiffness * depth - model.contact_damping * vel[1];
        if normal_est <= 0.0 {
            continue;
        }
        info.contacts += 1;
        info.normal_force += normal_est;
        let jac = frames.point_jacobian(model, site.link, site.pos);
        let limit = model.friction_coeff * normal_est;
        let sticking = model.friction_damping * vel[0].abs() <= limit;
        let fx = if sticking { 0.0 } else { -limit.copysign(vel[0]) };
        let fz = model.contact_stiffness * depth;
        let cx = if sticking { model.friction_damping } else { 0.0 };
        let cz = model.contact_damping;
        for a in 0..n {
            let ja = jac[a];
            if ja[0] == 0.0 && ja[1] == 0.0 {
                continue;
            }
            force[a] += ja[0] * fx + ja[1] * fz;
            for b in 0..n {
                let jb = jac[b];
                damping[(a, b)] += cx * ja[0] * jb[0] + cz * ja[1] * jb[1];
            }
        }
        if model.foot_links.contains(&site.link) {
            info.foot_slip += vel[0].abs();
        }
    }

    let zero = vec![0.0; n];
    let bias = inverse_dynamics(model, &frames, &v, &zero, &[]);
    let mass = mass_matrix(model, &frames);
    let vv = DVector::from_column_slice(&v);
    let lhs = &mass + &damping * dt;
    let mut rhs = &mass * &vv;
    for a in 0..n {
        rhs[a] += dt * (force[a] - bias[a]);
    }

    let first = match model.base {
        BaseMode::Floating => 0,
        BaseMode::Fixed => ROOT_DOFS,
    };
    let m = n - first;
    let sub_lhs = lhs.view((first, first), (m, m)).into_owned();
    let sub_rhs = rhs.rows(first, m).into_owned();
    let solved = sub_lhs.cholesky().map(|c| c.solve(&sub_rhs)).ok_or_else(|| {
        Error::SimulationDiverged {
            time: state.time,
            detail: format!("singular system matrix; state = {state:?}"),
        }
    })?;
    let mut v_new = vec![0.0; n];
    v_new[first..].copy_from_slice(solved.as_slice());

    let mut next = state.clone();
    next.root_linvel = [v_new[0], v_new[1]];
    next.root_angvel = v_new[2];
    next.root_pos = [state.root_pos[0] + dt * v_new[0], state.root_pos[1] + dt * v_new[1]];
    next.root_angle = state.root_angle + dt * v_new[2];
    for j in 0..nj {
        next.qdot[j] = v_new[ROOT_DOFS + j];
        next.q[j] = state.q[j] + dt * next.qdot[j];
    }
    next.prev_action = action.to_vec();
    next.time = state.time + dt;

    info.torque = (0..nj)
        .map(|j| {
            if implicit_joint[j] {
                model.pd_kp[j] * (target[j] - state.q[j]) - model.pd_kd[j] * next.qdot[j]
                    + extra_torque.map_or(0.0, |e| e[j])
            } else {
                force[ROOT_DOFS + j]
            }
        })
        .collect();
    info.torque_abs_sum = info.torque.iter().map(|t| t.abs()).sum();

    if !next.is_finite() {
        return Err(Error::SimulationDiverged {
            time: next.time,
            detail: format!("non-finite state after step: {next:?}"),
        });
    }
    Ok((next, info))
}

/// One control period: `substeps` physics steps at a held target. Torque and
/// slip diagnostics are averaged over the substeps.
pub fn control_step(
    model: &RobotModel,
    state: &SimState,
    action: &[f64],
    sim: &SimConfig,
    extra_torque: Option<&[f64]>,
) -> Result<(SimState, StepInfo)> {
    let mut s = state.clone();
    let mut agg = StepInfo { torque: vec![0.0; model.n_joints()], ..Default::default() };
    let k = sim.substeps.max(1);
    for _ in 0..k {
        let (next, info) = step_detailed(model, &s, action, sim.dt, extra_torque)?;
        for (a, t) in agg.torque.iter_mut().zip(&info.torque) {
            *a += t / k as f64;
        }
        agg.torque_abs_sum += info.torque_abs_sum / k as f64;
        agg.foot_slip += info.foot_slip / k as f64;
        agg.contacts = info.contacts;
        agg.normal_force = info.normal_force;
        s = next;
    }
    Ok((s, agg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::dynamics::total_energy;

    #[test]
    fn pd_at_setpoint_without_gravity_is_static() {
        let mut m = RobotModel::planar_biped();
        m.gravity = 0.0;
        let q = vec![0.1, 0.2, -0.3, 0.1, -0.1, -0.4, 0.2];
        let mut s = SimState::at_rest([0.0, 2.0], 0.0, q.clone());
        s.time = 1.0;
        assert!(pd_torque(&m, &s.q, &s.qdot, &q).iter().all(|&t| t == 0.0));
        let (next, info) = step_detailed(&m, &s, &q, 0.005, None).unwrap();
        assert!(info.torque.iter().all(|&t| t == 0.0));
        assert_eq!(next.q, s.q);
        assert_eq!(next.root_pos, s.root_pos);
        assert_eq!(next.qdot, s.qdot);
        assert!((next.time - 1.005).abs() < 1e-15);
    }

    #[test]
    fn free_fall_is_ballistic() {
        let mut m = RobotModel::planar_biped();
        m.torque_limits = vec![0.0; 7];
        let q = vec![0.0; 7];
        let mut s = SimState::at_rest([0.0, 5.0], 0.0, q.clone());
        s.root_linvel = [0.0, -1.0];
        let dt = 0.005;
        let next = step(&m, &s, &q, dt).unwrap();
        assert!((next.root_linvel[1] - (-1.0 - m.gravity * dt)).abs() < 1e-12);
        assert!(next.root_linvel[0].abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = RobotModel::planar_biped();
        let s = SimState::at_rest([0.0, 1.0], 0.0, vec![0.0; 7]);
        assert!(step(&m, &s, &[0.0; 7], 0.0).is_err());
        assert!(matches!(step(&m, &s, &[0.0; 3], 0.01), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn divergence_is_reported() {
        let m = RobotModel::planar_biped();
        let mut s = SimState::at_rest([0.0, 1.0], 0.0, vec![0.0; 7]);
        s.qdot[2] = f64::NAN;
        assert!(matches!(step(&m, &s, &[0.0; 7], 0.005), Err(Error::SimulationDiverged { .. })));
    }

    #[test]
    fn deterministic_steps() {
        let m = RobotModel::planar_biped();
        let (root, ang, q) = m.standing_pose();
        let s = SimState::at_rest(root, ang, q);
        let a = vec![0.1, 0.3, -0.5, 0.1, -0.2, -0.4, 0.2];
        let sim = SimConfig::default();
        let (x, _) = control_step(&m, &s, &a, &sim, None).unwrap();
        let (y, _) = control_step(&m, &s, &a, &sim, None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn standing_robot_stays_upright() {
        let m = RobotModel::planar_biped();
        let (root, ang, q) = m.standing_pose();
        let mut s = SimState::at_rest(root, ang, q.clone());
        let sim = SimConfig::default();
        for _ in 0..250 {
            s = control_step(&m, &s, &q, &sim, None).unwrap().0;
        }
        assert!(s.root_angle.abs() < 0.05, "root angle {}", s.root_angle);
        assert!((s.root_pos[1] - root[1]).abs() < 0.05, "root height {}", s.root_pos[1]);
    }

    #[test]
    fn unactuated_chain_conserves_energy() {
        let mut m = RobotModel::serial_chain(&[0.5, 0.4, 0.3], &[2.0, 1.5, 1.0], BaseMode::Floating);
        m.gravity = 0.0;
        let mut s = SimState::at_rest([0.0, 10.0], 0.3, vec![0.4, -0.6]);
        s.root_linvel = [0.5, 1.0];
        s.root_angvel = 1.0;
        s.qdot = vec![-1.5, 2.0];
        let a = s.q.clone();
        let e0 = total_energy(&m, &s.frames(&m), &s.gen_vel());
        for _ in 0..200 {
            s = step(&m, &s, &a, 1.0 / 200.0).unwrap();
        }
        let e1 = total_energy(&m, &s.frames(&m), &s.gen_vel());
        assert!((e1 - e0).abs() < 0.01 * e0, "{e0} → {e1}");
    }
}
