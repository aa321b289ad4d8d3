//! Robot morphology, actuation and contact parameters.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROBOT_FORMAT_VERSION: u32 = 1;

/// Whether the root link floats freely or is welded to the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMode {
    Floating,
    Fixed,
}

/// A planar tree of rigid links. Link 0 is the root; joint `j` connects link
/// `joint_parents[j]` to link `j + 1`, so parents always precede children.
///
/// Each link is a straight segment along its local axis. Positions along the
/// axis (`joint_offsets`, `link_proximal`, `link_coms`) are in meters measured
/// from the link's joint (or from the root position for link 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub format_version: u32,
    pub name: String,
    pub base: BaseMode,
    /// Gravitational acceleration magnitude (m/s²); 0 disables gravity.
    pub gravity: f64,
    /// Axis angle of the root link when `root_angle = 0`.
    pub root_rest_angle: f64,
    pub joint_names: Vec<String>,
    pub joint_parents: Vec<usize>,
    /// Distance along the parent axis where each joint sits.
    pub joint_offsets: Vec<f64>,
    /// Child axis angle relative to the parent axis at `q = 0`.
    pub joint_rest_angles: Vec<f64>,
    pub link_names: Vec<String>,
    pub link_lengths: Vec<f64>,
    pub link_masses: Vec<f64>,
    pub link_coms: Vec<f64>,
    /// Along-axis position of the proximal endpoint (usually 0; negative for
    /// a heel that sticks out behind the ankle).
    pub link_proximal: Vec<f64>,
    pub joint_limits: Vec<[f64; 2]>,
    pub torque_limits: Vec<f64>,
    pub pd_kp: Vec<f64>,
    pub pd_kd: Vec<f64>,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_coeff: f64,
    /// Viscous regularization of static friction (N·s/m).
    pub friction_damping: f64,
    pub keypoint_links: Vec<usize>,
    /// Links whose contact sites count as feet for the slippage penalty.
    pub foot_links: Vec<usize>,
}

impl RobotModel {
    pub fn n_joints(&self) -> usize {
        self.pd_kp.len()
    }

    pub fn n_links(&self) -> usize {
        self.link_lengths.len()
    }

    /// Tracked keypoints: the root position followed by the distal endpoint of
    /// every keypoint link.
    pub fn n_keypoints(&self) -> usize {
        1 + self.keypoint_links.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.link_masses.iter().sum()
    }

    /// Rotational inertia of link `i` about its centre of mass (uniform rod).
    pub fn link_inertia(&self, i: usize) -> f64 {
        self.link_masses[i] * self.link_lengths[i].powi(2) / 12.0
    }

    pub fn parent_of_link(&self, link: usize) -> Option<usize> {
        (link > 0).then(|| self.joint_parents[link - 1])
    }

    pub fn clamp_targets(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(&self.joint_limits)
            .map(|(&a, l)| a.clamp(l[0], l[1]))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != ROBOT_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: ROBOT_FORMAT_VERSION,
            });
        }
        let nj = self.n_joints();
        let nl = nj + 1;
        let check_len = |len: usize, want: usize, what: &str| -> Result<()> {
            if len != want {
                return Err(Error::Config(format!(
                    "robot `{}`: {what} has {len} entries, expected {want}",
                    self.name
                )));
            }
            Ok(())
        };
        check_len(self.joint_names.len(), nj, "joint_names")?;
        check_len(self.joint_parents.len(), nj, "joint_parents")?;
        check_len(self.joint_offsets.len(), nj, "joint_offsets")?;
        check_len(self.joint_rest_angles.len(), nj, "joint_rest_angles")?;
        check_len(self.joint_limits.len(), nj, "joint_limits")?;
        check_len(self.torque_limits.len(), nj, "torque_limits")?;
        check_len(self.pd_kd.len(), nj, "pd_kd")?;
        check_len(self.link_names.len(), nl, "link_names")?;
        check_len(self.link_lengths.len(), nl, "link_lengths")?;
        check_len(self.link_masses.len(), nl, "link_masses")?;
        check_len(self.link_coms.len(), nl, "link_coms")?;
        check_len(self.link_proximal.len(), nl, "link_proximal")?;

        let bad = |msg: String| Err(Error::Config(format!("robot `{}`: {msg}", self.name)));
        for (j, &p) in self.joint_parents.iter().enumerate() {
            if p > j {
                return bad(format!("joint {j} has parent link {p}, which does not precede link {}", j + 1));
            }
        }
        for i in 0..nl {
            if !(self.link_lengths[i] > 0.0) {
                return bad(format!("link {i} length must be > 0"));
            }
            if !(self.link_masses[i] > 0.0) {
                return bad(format!("link {i} mass must be > 0"));
            }
        }
        for (j, l) in self.joint_limits.iter().enumerate() {
            if !(l[0] < l[1]) {
                return bad(format!("joint {j} limits must satisfy lo < hi"));
            }
        }
        if self.torque_limits.iter().any(|&t| !(t >= 0.0))
            || self.pd_kp.iter().chain(&self.pd_kd).any(|&g| !(g >= 0.0))
        {
            return bad("torque limits and PD gains must be >= 0".into());
        }
        if !(self.friction_coeff >= 0.0)
            || !(self.contact_stiffness >= 0.0)
            || !(self.contact_damping >= 0.0)
            || !(self.friction_damping >= 0.0)
            || !(self.gravity >= 0.0)
        {
            return bad("contact parameters and gravity must be >= 0".into());
        }
        for &k in self.keypoint_links.iter().chain(&self.foot_links) {
            if k >= nl {
                return bad(format!("link index {k} out of range"));
            }
        }
        Ok(())
    }

    /// Default planar biped: pelvis root, torso, and two legs of
    /// thigh/shank/foot. Seven actuated joints.
    pub fn planar_biped() -> Self {
        let names = ["torso", "hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r"];
        let leg_limits = [[-1.0, 1.8], [-2.4, 0.05], [-0.9, 0.9]];
        RobotModel {
            format_version: ROBOT_FORMAT_VERSION,
            name: "planar_biped".into(),
            base: BaseMode::Floating,
            gravity: 9.81,
            root_rest_angle: -FRAC_PI_2,
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            // torso and both hips hang off the pelvis; each leg is a chain.
            joint_parents: vec![0, 0, 2, 3, 0, 5, 6],
            joint_offsets: vec![0.0, 0.1, 0.4, 0.4, 0.1, 0.4, 0.4],
            joint_rest_angles: vec![
                std::f64::consts::PI,
                0.0,
                0.0,
                FRAC_PI_2,
                0.0,
                0.0,
                FRAC_PI_2,
            ],
            link_names: ["pelvis", "torso", "thigh_l", "shank_l", "foot_l", "thigh_r", "shank_r", "foot_r"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            link_lengths: vec![0.1, 0.5, 0.4, 0.4, 0.22, 0.4, 0.4, 0.22],
            link_masses: vec![6.0, 10.0, 3.0, 2.0, 0.8, 3.0, 2.0, 0.8],
            link_coms: vec![0.05, 0.25, 0.2, 0.2, 0.03, 0.2, 0.2, 0.03],
            link_proximal: vec![0.0, 0.0, 0.0, 0.0, -0.08, 0.0, 0.0, -0.08],
            joint_limits: vec![
                [-0.8, 0.8],
                leg_limits[0],
                leg_limits[1],
                leg_limits[2],
                leg_limits[0],
                leg_limits[1],
                leg_limits[2],
            ],
            torque_limits: vec![120.0, 150.0, 150.0, 100.0, 150.0, 150.0, 100.0],
            pd_kp: vec![150.0, 200.0, 200.0, 400.0, 200.0, 200.0, 400.0],
            pd_kd: vec![6.0, 8.0, 8.0, 10.0, 8.0, 8.0, 10.0],
            contact_stiffness: 2.0e4,
            contact_damping: 800.0,
            friction_coeff: 1.0,
            friction_damping: 3000.0,
            keypoint_links: vec![1, 2, 3, 4, 5, 6, 7],
            foot_links: vec![4, 7],
        }
    }

    /// Unbranched chain of links each attached at its parent's tip, all axes
    /// along +x at rest. Handy for kinematics checks and pendulum tests.
    pub fn serial_chain(lengths: &[f64], masses: &[f64], base: BaseMode) -> Self {
        assert_eq!(lengths.len(), masses.len());
        assert!(!lengths.is_empty());
        let nl = lengths.len();
        let nj = nl - 1;
        RobotModel {
            format_version: ROBOT_FORMAT_VERSION,
            name: format!("chain{nl}"),
            base,
            gravity: 9.81,
            root_rest_angle: 0.0,
            joint_names: (0..nj).map(|j| format!("j{j}")).collect(),
            joint_parents: (0..nj).collect(),
            joint_offsets: lengths[..nj].to_vec(),
            joint_rest_angles: vec![0.0; nj],
            link_names: (0..nl).map(|i| format!("link{i}")).collect(),
            link_lengths: lengths.to_vec(),
            link_masses: masses.to_vec(),
            link_coms: lengths.iter().map(|l| l / 2.0).collect(),
            link_proximal: vec![0.0; nl],
            joint_limits: vec![[-std::f64::consts::PI, std::f64::consts::PI]; nj],
            torque_limits: vec![0.0; nj],
            pd_kp: vec![0.0; nj],
            pd_kd: vec![0.0; nj],
            contact_stiffness: 0.0,
            contact_damping: 0.0,
            friction_coeff: 0.0,
            friction_damping: 0.0,
            keypoint_links: (1..nl).collect(),
            foot_links: vec![],
        }
    }

    /// Nominal standing configuration (root position, root angle, joints) with
    /// both feet flat on the ground.
    pub fn standing_pose(&self) -> ([f64; 2], f64, Vec<f64>) {
        let q = vec![0.0; self.n_joints()];
        let frames = super::kinematics::LinkFrames::compute(self, [0.0, 0.0], 0.0, &q);
        let lowest = frames
            .contact_sites(self)
            .into_iter()
            .map(|s| s.pos[1])
            .fold(f64::INFINITY, f64::min);
        ([0.0, -lowest], 0.0, q)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let model: RobotModel =
            toml::from_str(text).map_err(|e| Error::parse("robot config", e))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("robot model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_biped_is_valid() {
        let m = RobotModel::planar_biped();
        m.validate().unwrap();
        assert_eq!(m.n_joints(), 7);
        assert_eq!(m.n_keypoints(), 8);
    }

    #[test]
    fn toml_round_trip() {
        let m = RobotModel::planar_biped();
        let back = RobotModel::from_toml(&m.to_toml()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_bad_limits_and_versions() {
        let mut m = RobotModel::planar_biped();
        m.joint_limits[2] = [0.5, 0.5];
        assert!(m.validate().is_err());

        let mut m = RobotModel::planar_biped();
        m.format_version = 99;
        assert!(matches!(m.validate(), Err(Error::FormatVersion { .. })));

        let mut m = RobotModel::planar_biped();
        m.keypoint_links.push(42);
        assert!(m.validate().is_err());

        let mut m = RobotModel::planar_biped();
        m.link_masses[3] = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn standing_pose_touches_ground() {
        let m = RobotModel::planar_biped();
        let (root, angle, q) = m.standing_pose();
        assert!((root[1] - 0.9).abs() < 1e-12);
        assert_eq!(angle, 0.0);
        assert!(q.iter().all(|&v| v == 0.0));
    }
}
