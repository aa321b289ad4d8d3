//! Two-stage retargeting from a source skeleton onto the robot.
//!
//! Stage one fits per-limb scale factors of the source skeleton so that its
//! corresponding points match the robot's keypoints in the rest pose. Stage
//! two optimizes the robot's root translation, root angle and joint angles
//! over a whole sequence to follow the scaled source points, with temporal
//! smoothness (second-difference) and joint-limit regularizers.
//!
//! Both stages use gradient descent with Armijo backtracking. The sequence
//! stage scales its steps by the banded Gauss-Newton matrix of the whole
//! sequence, which keeps the iteration count low without giving up the
//! monotone-descent guarantee.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::clip::{ClipSource, MotionClip};
use crate::error::{Error, Result};
use crate::simulator::kinematics::{add, LinkFrames, Vec2, ROOT_DOFS};
use crate::simulator::RobotModel;

/// Number of per-limb scale factors (torso, thigh, shank, foot).
pub const SHAPE_DIM: usize = 4;

/// A planar source skeleton given as a tree of points. Point `j` sits at
/// `parent + R(c_parent) · scale[group_j] · rest_offset_j`, where `c_parent`
/// is the accumulated rotation of the parent point (root angle plus the
/// rotations of every point on the path).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSkeleton {
    pub names: Vec<String>,
    /// Parent point index; `None` only for point 0, the root.
    pub parents: Vec<Option<usize>>,
    pub rest_offsets: Vec<Vec2>,
    /// Limb group of each point's offset, indexing the shape vector.
    pub groups: Vec<usize>,
    /// Default shape (usually all ones).
    pub shape: [f64; SHAPE_DIM],
    /// `(source point, robot keypoint index)` pairs; keypoint 0 is the root.
    pub correspondence: Vec<(usize, usize)>,
}

/// A source motion: root pose plus one rotation per source point per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMotion {
    pub name: String,
    pub fps: f64,
    pub root_pos: Vec<Vec2>,
    pub root_angle: Vec<f64>,
    pub rotations: Vec<Vec<f64>>,
}

impl SourceMotion {
    pub fn len(&self) -> usize {
        self.root_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.root_pos.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetRegularization {
    pub w_smooth: f64,
    pub w_limit: f64,
}

impl Default for RetargetRegularization {
    fn default() -> Self {
        RetargetRegularization { w_smooth: 1e-4, w_limit: 10.0 }
    }
}

/// Gradient descent settings shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig { max_iters: 2000, grad_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFit {
    pub shape: [f64; SHAPE_DIM],
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RetargetResult {
    pub clip: MotionClip,
    /// Objective after every accepted step, starting with the initial value.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SourceSkeleton {
    pub fn n_points(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_points();
        if self.rest_offsets.len() != n || self.groups.len() != n || self.names.len() != n {
            return Err(Error::Config("source skeleton arrays have different lengths".into()));
        }
        if n == 0 || self.parents[0].is_some() {
            return Err(Error::Config("source point 0 must be the root".into()));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return Err(Error::Config(format!("source point {j} must have an earlier parent"))),
            }
        }
        if self.groups.iter().any(|&g| g >= SHAPE_DIM) {
            return Err(Error::Config("limb group out of range".into()));
        }
        if self.shape.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("shape scales must be > 0".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &(s, _) in &self.correspondence {
            if s >= n || !seen.insert(s) {
                return Err(Error::Config("correspondence must be injective over valid source points".into()));
            }
        }
        Ok(())
    }

    /// Describe a robot as a source skeleton: one point per link origin and
    /// one per link tip. Rotating a link-origin point by the joint angle
    /// reproduces the robot's kinematics exactly when all scales are 1.
    /// `link_groups[i]` is the limb group of link `i`; the correspondence maps
    /// every robot keypoint to its own point.
    pub fn from_robot(model: &RobotModel, link_groups: &[usize]) -> Self {
        let nl = model.n_links();
        let rest = LinkFrames::compute(model, [0.0, 0.0], 0.0, &vec![0.0; model.n_joints()]);
        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut offsets = Vec::new();
        let mut groups = Vec::new();
        // Points 0..nl are link origins, nl..2nl are link tips.
        for i in 0..nl {
            names.push(format!("{}_origin", model.link_names[i]));
            match model.parent_of_link(i) {
                None => {
                    parents.push(None);
                    offsets.push([0.0, 0.0]);
                    groups.push(link_groups[0]);
                }
                Some(p) => {
                    parents.push(Some(p));
                    let d = [rest.origin[i][0] - rest.origin[p][0], rest.origin[i][1] - rest.origin[p][1]];
                    offsets.push(d);
                    groups.push(link_groups[p]);
                }
            }
        }
        for i in 0..nl {
            names.push(format!("{}_tip", model.link_names[i]));
            parents.push(Some(i));
            let t = rest.distal(model, i);
            offsets.push([t[0] - rest.origin[i][0], t[1] - rest.origin[i][1]]);
            groups.push(link_groups[i]);
        }
        let mut correspondence = vec![(0, 0)];
        for (k, &l) in model.keypoint_links.iter().enumerate() {
            correspondence.push((nl + l, k + 1));
        }
        SourceSkeleton { names, parents, rest_offsets: offsets, groups, shape: [1.0; SHAPE_DIM], correspondence }
    }

    /// Limb groups of the default biped's links.
    pub fn biped_link_groups() -> Vec<usize> {
        vec![0, 0, 1, 2, 3, 1, 2, 3]
    }

    /// A human-proportioned stick figure with the biped's topology and six
    /// correspondences: root, head, both knees and both toes.
    pub fn human_default() -> Self {
        let mut human = RobotModel::planar_biped();
        human.link_lengths = vec![0.12, 0.55, 0.45, 0.43, 0.24, 0.45, 0.43, 0.24];
        human.link_proximal = vec![0.0, 0.0, 0.0, 0.0, -0.07, 0.0, 0.0, -0.07];
        human.joint_offsets = vec![0.0, 0.12, 0.45, 0.43, 0.12, 0.45, 0.43];
        let mut s = Self::from_robot(&human, &Self::biped_link_groups());
        let nl = human.n_links();
        // root, head (torso tip), knees (thigh tips), toes (foot tips)
        s.correspondence = vec![(0, 0), (nl + 1, 1), (nl + 2, 2), (nl + 4, 4), (nl + 5, 5), (nl + 7, 7)];
        s
    }

    /// World positions of every source point for one frame.
    pub fn points(&self, shape: &[f64; SHAPE_DIM], root_pos: Vec2, root_angle: f64, rotations: &[f64]) -> Vec<Vec2> {
        let n = self.n_points();
        let mut pos = vec![[0.0, 0.0]; n];
        let mut cum = vec![0.0; n];
        pos[0] = root_pos;
        cum[0] = root_angle + rotations.first().copied().unwrap_or(0.0);
        for j in 1..n {
            let p = self.parents[j].expect("validated");
            let o = self.rest_offsets[j];
            let s = shape[self.groups[j]];
            let (sn, cs) = cum[p].sin_cos();
            pos[j] = add(pos[p], [s * (cs * o[0] - sn * o[1]), s * (sn * o[0] + cs * o[1])]);
            cum[j] = cum[p] + rotations.get(j).copied().unwrap_or(0.0);
        }
        pos
    }
}

/// Rest-pose objective Σ‖src_k(shape) − robot_k‖² and its analytic gradient.
fn shape_objective(
    skel: &SourceSkeleton,
    robot_rest: &[Vec2],
    shape: &[f64; SHAPE_DIM],
) -> (f64, [f64; SHAPE_DIM]) {
    let zeros = vec![0.0; skel.n_points()];
    let pts = skel.points(shape, [0.0, 0.0], 0.0, &zeros);
    let mut f = 0.0;
    let mut g = [0.0; SHAPE_DIM];
    for &(s, k) in &skel.correspondence {
        let r = [pts[s][0] - robot_rest[k][0], pts[s][1] - robot_rest[k][1]];
        f += r[0] * r[0] + r[1] * r[1];
        // In the rest pose every offset enters unrotated and linearly in its
        // group scale.
        let mut j = s;
        while let Some(p) = skel.parents[j] {
            let o = skel.rest_offsets[j];
            g[skel.groups[j]] += 2.0 * (r[0] * o[0] + r[1] * o[1]);
            j = p;
        }
    }
    (f, g)
}

/// Stage one: per-limb scales minimizing rest-pose point distances.
pub fn fit_shape(skel: &SourceSkeleton, robot: &RobotModel) -> Result<ShapeFit> {
    fit_shape_with(skel, robot, &DescentConfig::default())
}

pub fn fit_shape_with(skel: &SourceSkeleton, robot: &RobotModel, cfg: &DescentConfig) -> Result<ShapeFit> {
    if skel.correspondence.is_empty() {
        return Err(Error::invalid("shape fitting needs a non-empty correspondence"));
    }
    skel.validate()?;
    if skel.correspondence.iter().any(|&(_, k)| k >= robot.n_keypoints()) {
        return Err(Error::invalid("correspondence references a missing robot keypoint"));
    }
    let rest = LinkFrames::compute(robot, [0.0, 0.0], 0.0, &vec![0.0; robot.n_joints()]).keypoints(robot);
    let mut shape = skel.shape;
    let (mut f, mut g) = shape_objective(skel, &rest, &shape);
    let initial = f;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: [f64; SHAPE_DIM] = std::array::from_fn(|i| shape[i] - step * g[i]);
            let (ft, gt) = shape_objective(skel, &rest, &trial);
            if !ft.is_finite() {
                return Err(Error::OptimizationDiverged { iteration: iterations, detail: "non-finite shape objective".into() });
            }
            if ft <= f - 1e-4 * step * gn * gn {
                shape = trial;
                f = ft;
                g = gt;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(ShapeFit { shape, objective: f, initial_objective: initial, iterations, converged })
}

/// Per-sequence objective terms, kept separate for reporting.
struct SequenceProblem<'a> {
    robot: &'a RobotModel,
    targets: Vec<Vec<(usize, Vec2)>>,
    reg: RetargetRegularization,
    n_vars: usize,
}

impl SequenceProblem<'_> {
    fn frame_vars<'x>(&self, x: &'x [f64], t: usize) -> &'x [f64] {
        &x[t * self.n_vars..(t + 1) * self.n_vars]
    }

    fn limit_violation(&self, j: usize, v: f64) -> f64 {
        let [lo, hi] = self.robot.joint_limits[j];
        if v > hi {
            v - hi
        } else if v < lo {
            v - lo
        } else {
            0.0
        }
    }

    /// Objective, gradient and per-frame Gauss-Newton blocks.
    fn evaluate(&self, x: &[f64], want_grad: bool) -> (f64, Vec<f64>, Vec<DMatrix<f64>>) {
        let nv = self.n_vars;
        let frames_n = self.targets.len();
        let mut f = 0.0;
        let mut g = if want_grad { vec![0.0; x.len()] } else { Vec::new() };
        let mut blocks = Vec::new();
        for t in 0..frames_n {
            let v = self.frame_vars(x, t);
            let frames = LinkFrames::compute(self.robot, [v[0], v[1]], v[2], &v[ROOT_DOFS..]);
            let mut block = if want_grad { DMatrix::zeros(nv, nv) } else { DMatrix::zeros(0, 0) };
            for &(k, target) in &self.targets[t] {
                let (link, p) = if k == 0 {
                    (0, frames.origin[0])
                } else {
                    let l = self.robot.keypoint_links[k - 1];
                    (l, frames.distal(self.robot, l))
                };
                let r = [p[0] - target[0], p[1] - target[1]];
                f += r[0] * r[0] + r[1] * r[1];
                if want_grad {
                    let jac = if k == 0 {
                        let mut c = vec![[0.0, 0.0]; nv];
                        c[0] = [1.0, 0.0];
                        c[1] = [0.0, 1.0];
                        c
                    } else {
                        frames.point_jacobian(self.robot, link, p)
                    };
                    for a in 0..nv {
                        g[t * nv + a] += 2.0 * (jac[a][0] * r[0] + jac[a][1] * r[1]);
                        for b in 0..nv {
                            block[(a, b)] += 2.0 * (jac[a][0] * jac[b][0] + jac[a][1] * jac[b][1]);
                        }
                    }
                }
            }
            for j in 0..self.robot.n_joints() {
                let viol = self.limit_violation(j, v[ROOT_DOFS + j]);
                f += self.reg.w_limit * viol * viol;
                if want_grad {
                    g[t * nv + ROOT_DOFS + j] += 2.0 * self.reg.w_limit * viol;
                    if viol != 0.0 {
                        block[(ROOT_DOFS + j, ROOT_DOFS + j)] += 2.0 * self.reg.w_limit;
                    }
                }
            }
            // Second differences: penalizing acceleration rather than
            // velocity leaves smooth source motion unbiased.
            if t >= 1 && t + 1 < frames_n {
                let (u, w) = (self.frame_vars(x, t - 1), self.frame_vars(x, t + 1));
                for a in 0..nv {
                    let d = w[a] - 2.0 * v[a] + u[a];
                    f += self.reg.w_smooth * d * d;
                    if want_grad {
                        g[(t - 1) * nv + a] += 2.0 * self.reg.w_smooth * d;
                        g[t * nv + a] -= 4.0 * self.reg.w_smooth * d;
                        g[(t + 1) * nv + a] += 2.0 * self.reg.w_smooth * d;
                    }
                }
            }
            if want_grad {
                let trace = (0..nv).map(|a| block[(a, a)]).sum::<f64>();
                let ridge = 1e-6 * (1.0 + trace / nv as f64);
                for a in 0..nv {
                    block[(a, a)] += ridge;
                }
                blocks.push(block);
            }
        }
        (f, g, blocks)
    }

    /// Gauss-Newton step for the whole sequence: the per-frame blocks plus
    /// the exact Hessian of the second-difference term, solved as a banded
    /// system. `None` if the matrix is not positive definite.
    fn newton_step(&self, g: &[f64], blocks: &[DMatrix<f64>]) -> Option<Vec<f64>> {
        let nv = self.n_vars;
        let n = blocks.len();
        let mut h = Banded::new(n * nv, 3 * nv - 1);
        for (t, b) in blocks.iter().enumerate() {
            for r in 0..nv {
                for c in 0..=r {
                    *h.at(t * nv + r, t * nv + c) += b[(r, c)];
                }
            }
        }
        let w = 2.0 * self.reg.w_smooth;
        for centre in 1..n.saturating_sub(1) {
            let taps = [(centre - 1, 1.0), (centre, -2.0), (centre + 1, 1.0)];
            for (i, &(ti, ci)) in taps.iter().enumerate() {
                for &(tj, cj) in &taps[..=i] {
                    for a in 0..nv {
                        *h.at(ti * nv + a, tj * nv + a) += w * ci * cj;
                    }
                }
            }
        }
        h.solve(g)
    }
}

/// Symmetric banded matrix stored by rows of its lower triangle:
/// `rows[i][k]` holds entry `(i, i − k)` for `k ≤ bandwidth`.
struct Banded {
    rows: Vec<Vec<f64>>,
    bandwidth: usize,
}

impl Banded {
    fn new(n: usize, bandwidth: usize) -> Self {
        Banded { rows: vec![vec![0.0; bandwidth + 1]; n], bandwidth }
    }

    /// Lower-triangle entry `(i, j)`, `j ≤ i ≤ j + bandwidth`.
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.rows[i][i - j]
    }

    /// Cholesky factorization in place, then forward/back substitution.
    fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.rows.len();
        let bw = self.bandwidth;
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut sum = self.rows[i][i - j];
                for k in i.saturating_sub(bw)..j {
                    sum -= self.rows[i][i - k] * self.rows[j][j - k];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return None;
                    }
                    self.rows[i][0] = sum.sqrt();
                } else {
                    self.rows[i][i - j] = sum / self.rows[j][0];
                }
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            for k in i.saturating_sub(bw)..i {
                y[i] -= self.rows[i][i - k] * y[k];
            }
            y[i] /= self.rows[i][0];
        }
        for i in (0..n).rev() {
            for k in i + 1..(i + bw + 1).min(n) {
                y[i] -= self.rows[k][k - i] * y[k];
            }
            y[i] /= self.rows[i][0];
        }
        Some(y)
    }
}

/// Stage two: optimize the robot trajectory to follow the scaled source.
pub fn retarget_sequence(
    skel: &SourceSkeleton,
    shape: &[f64; SHAPE_DIM],
    source: &SourceMotion,
    robot: &RobotModel,
    reg: &RetargetRegularization,
) -> Result<RetargetResult> {
    retarget_sequence_with(skel, shape, source, robot, reg, &DescentConfig::default())
}

pub fn retarget_sequence_with(
    skel: &SourceSkeleton,
    shape: &[f64; SHAPE_DIM],
    source: &SourceMotion,
    robot: &RobotModel,
    reg: &RetargetRegularization,
    cfg: &DescentConfig,
) -> Result<RetargetResult> {
    if source.is_empty() {
        return Err(Error::invalid("source motion is empty"));
    }
    skel.validate()?;
    if source.root_angle.len() != source.len() || source.rotations.len() != source.len() {
        return Err(Error::invalid("source motion arrays have different lengths"));
    }
    if skel.correspondence.iter().any(|&(_, k)| k >= robot.n_keypoints()) {
        return Err(Error::invalid("correspondence references a missing robot keypoint"));
    }
    let nv = ROOT_DOFS + robot.n_joints();
    let n = source.len();
    let targets: Vec<Vec<(usize, Vec2)>> = (0..n)
        .map(|t| {
            let pts = skel.points(shape, source.root_pos[t], source.root_angle[t], &source.rotations[t]);
            skel.correspondence.iter().map(|&(s, k)| (k, pts[s])).collect()
        })
        .collect();
    let problem = SequenceProblem { robot, targets, reg: *reg, n_vars: nv };

    // Initial guess: root from the point matched to the robot root (or the
    // source root), root angle from the source, joints at zero.
    let mut x = vec![0.0; n * nv];
    for t in 0..n {
        let root = problem.targets[t].iter().find(|(k, _)| *k == 0).map(|(_, p)| *p).unwrap_or(source.root_pos[t]);
        x[t * nv] = root[0];
        x[t * nv + 1] = root[1];
        x[t * nv + 2] = source.root_angle[t];
    }

    let (mut f, mut g, mut blocks) = problem.evaluate(&x, true);
    if !f.is_finite() {
        return Err(Error::OptimizationDiverged { iteration: 0, detail: "non-finite initial objective".into() });
    }
    let mut history = vec![f];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir: Vec<f64> = match problem.newton_step(&g, &blocks) {
            Some(step) => step.iter().map(|v| -v).collect(),
            None => g.iter().map(|v| -v).collect(),
        };
        let mut slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // Fall back to the plain gradient if the scaled step is not a
            // descent direction.
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi;
            }
            slope = -gn * gn;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let (ft, _, _) = problem.evaluate(&trial, false);
            if !ft.is_finite() {
                return Err(Error::OptimizationDiverged {
                    iteration: iterations,
                    detail: "non-finite retargeting objective".into(),
                });
            }
            if ft <= f + 1e-4 * alpha * slope {
                x = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        let (fnew, gnew, bnew) = problem.evaluate(&x, true);
        f = fnew;
        g = gnew;
        blocks = bnew;
        history.push(f);
    }

    let mut roots = Vec::with_capacity(n);
    let mut angles = Vec::with_capacity(n);
    let mut qs = Vec::with_capacity(n);
    for t in 0..n {
        let v = problem.frame_vars(&x, t);
        roots.push([v[0], v[1]]);
        angles.push(v[2]);
        qs.push(robot.clamp_targets(&v[ROOT_DOFS..]));
    }
    let clip = MotionClip::from_poses(robot, source.name.clone(), source.fps, ClipSource::Retargeted, &roots, &angles, &qs)?;
    Ok(RetargetResult { clip, objective_history: history, iterations, converged })
}

/// Source motion that replays a robot clip through [`SourceSkeleton::from_robot`].
pub fn source_motion_from_clip(model: &RobotModel, clip: &MotionClip) -> SourceMotion {
    let nl = model.n_links();
    SourceMotion {
        name: clip.name.clone(),
        fps: clip.fps,
        root_pos: clip.frames.iter().map(|f| f.root_pos).collect(),
        root_angle: clip.frames.iter().map(|f| f.root_angle).collect(),
        rotations: clip
            .frames
            .iter()
            .map(|f| {
                let mut r = vec![0.0; 2 * nl];
                r[1..nl].copy_from_slice(&f.q);
                r
            })
            .collect(),
    }
}
