//! Reference motion clips and the `.clip` file format.
//!
//! A clip file is line-delimited JSON. The first line is a header:
//!
//! ```text
//! {"format_version":1,"name":"walk","fps":50.0,"n_joints":7,"n_keypoints":8,"n_frames":200,"source":"synthetic"}
//! ```
//!
//! followed by exactly `n_frames` frame records, one per line:
//!
//! ```text
//! {"root_pos":[x,z],"root_angle":a,"q":[..],"keypoints":[[x,z],..],"root_linvel":[vx,vz],"root_angvel":w,"qdot":[..]}
//! ```
//!
//! Floats are written in shortest round-trip form, so files reload bit-exact.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::kinematics::{LinkFrames, Vec2};
use crate::simulator::RobotModel;

pub const CLIP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSource {
    Synthetic,
    Retargeted,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub root_pos: Vec2,
    pub root_angle: f64,
    pub q: Vec<f64>,
    pub keypoints: Vec<Vec2>,
    pub root_linvel: Vec2,
    pub root_angvel: f64,
    pub qdot: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub name: String,
    pub fps: f64,
    pub source: ClipSource,
    pub frames: Vec<ClipFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClipHeader {
    format_version: u32,
    name: String,
    fps: f64,
    n_joints: usize,
    n_keypoints: usize,
    n_frames: usize,
    source: ClipSource,
}

/// Central differences at interior samples, one-sided at the ends. A single
/// sample has zero velocity.
pub fn central_differences(values: &[f64], fps: f64) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|t| {
            if t == 0 {
                (values[1] - values[0]) * fps
            } else if t == n - 1 {
                (values[n - 1] - values[n - 2]) * fps
            } else {
                (values[t + 1] - values[t - 1]) * fps / 2.0
            }
        })
        .collect()
}

impl MotionClip {
    /// Build a clip from a pose trajectory: keypoints by forward kinematics of
    /// `model`, velocities by central differences.
    pub fn from_poses(
        model: &RobotModel,
        name: impl Into<String>,
        fps: f64,
        source: ClipSource,
        root_pos: &[Vec2],
        root_angle: &[f64],
        q: &[Vec<f64>],
    ) -> Result<Self> {
        let n = root_pos.len();
        if root_angle.len() != n || q.len() != n {
            return Err(Error::InvalidClip("pose arrays have different lengths".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::InvalidClip(format!("fps must be > 0, got {fps}")));
        }
        let nj = model.n_joints();
        if let Some(bad) = q.iter().find(|v| v.len() != nj) {
            return Err(Error::DimensionMismatch { expected: nj, got: bad.len(), context: "clip joint positions" });
        }
        let column = |f: &dyn Fn(usize) -> f64| central_differences(&(0..n).map(f).collect::<Vec<_>>(), fps);
        let vx = column(&|t| root_pos[t][0]);
        let vz = column(&|t| root_pos[t][1]);
        let w = column(&|t| root_angle[t]);
        let qd: Vec<Vec<f64>> = (0..nj).map(|j| column(&|t| q[t][j])).collect();
        let frames = (0..n)
            .map(|t| ClipFrame {
                root_pos: root_pos[t],
                root_angle: root_angle[t],
                q: q[t].clone(),
                keypoints: LinkFrames::compute(model, root_pos[t], root_angle[t], &q[t]).keypoints(model),
                root_linvel: [vx[t], vz[t]],
                root_angvel: w[t],
                qdot: (0..nj).map(|j| qd[j][t]).collect(),
            })
            .collect();
        Ok(MotionClip { name: name.into(), fps, source, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.frames.first().map_or(0, |f| f.q.len())
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 / self.fps
    }

    /// Frame `i`, clamped to the last frame.
    pub fn frame(&self, i: usize) -> &ClipFrame {
        &self.frames[i.min(self.frames.len() - 1)]
    }

    /// Keypoint velocities at frame `i` by central differences of the stored
    /// keypoints.
    pub fn keypoint_velocities(&self, i: usize) -> Vec<Vec2> {
        let n = self.len();
        let i = i.min(n - 1);
        if n < 2 {
            return vec![[0.0, 0.0]; self.frames[0].keypoints.len()];
        }
        let (a, b, scale) = if i == 0 {
            (0, 1, self.fps)
        } else if i == n - 1 {
            (n - 2, n - 1, self.fps)
        } else {
            (i - 1, i + 1, self.fps / 2.0)
        };
        self.frames[a]
            .keypoints
            .iter()
            .zip(&self.frames[b].keypoints)
            .map(|(p, q)| [(q[0] - p[0]) * scale, (q[1] - p[1]) * scale])
            .collect()
    }

    /// Largest deviation between stored joint velocities and central
    /// differences of joint positions at interior frames.
    pub fn velocity_inconsistency(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 1..self.len().saturating_sub(1) {
            let f = &self.frames[t];
            let (prev, next) = (&self.frames[t - 1], &self.frames[t + 1]);
            let err: f64 = (0..f.q.len())
                .map(|j| (f.qdot[j] - (next.q[j] - prev.q[j]) * self.fps / 2.0).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(err);
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::InvalidClip(format!("{}: fps must be > 0", self.name)));
        }
        let nj = self.n_joints();
        let nk = self.frames.first().map_or(0, |f| f.keypoints.len());
        for (t, f) in self.frames.iter().enumerate() {
            if f.q.len() != nj || f.qdot.len() != nj || f.keypoints.len() != nk {
                return Err(Error::InvalidClip(format!("{}: frame {t} has inconsistent sizes", self.name)));
            }
            let finite = f.root_pos.iter().chain(f.root_linvel.iter()).all(|v| v.is_finite())
                && f.root_angle.is_finite()
                && f.root_angvel.is_finite()
                && f.q.iter().chain(&f.qdot).all(|v| v.is_finite())
                && f.keypoints.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidClip(format!("{}: frame {t} is not finite", self.name)));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = ClipHeader {
            format_version: CLIP_FORMAT_VERSION,
            name: self.name.clone(),
            fps: self.fps,
            n_joints: self.n_joints(),
            n_keypoints: self.frames.first().map_or(0, |f| f.keypoints.len()),
            n_frames: self.len(),
            source: self.source,
        };
        serde_json::to_writer(&mut w, &header).map_err(|e| Error::parse("clip header", e))?;
        writeln!(w)?;
        for f in &self.frames {
            serde_json::to_writer(&mut w, f).map_err(|e| Error::parse("clip frame", e))?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::parse("clip", "empty file"))??;
        let header: ClipHeader = serde_json::from_str(&first).map_err(|e| Error::parse("clip header", e))?;
        if header.format_version != CLIP_FORMAT_VERSION {
            return Err(Error::FormatVersion { found: header.format_version, expected: CLIP_FORMAT_VERSION });
        }
        let mut frames = Vec::with_capacity(header.n_frames);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: ClipFrame =
                serde_json::from_str(&line).map_err(|e| Error::parse(format!("clip frame {i}"), e))?;
            if f.q.len() != header.n_joints || f.keypoints.len() != header.n_keypoints {
                return Err(Error::parse(format!("clip frame {i}"), "size disagrees with header"));
            }
            frames.push(f);
        }
        if frames.len() != header.n_frames {
            return Err(Error::parse(
                "clip",
                format!("header declares {} frames, found {}", header.n_frames, frames.len()),
            ));
        }
        let clip = MotionClip { name: header.name, fps: header.fps, source: header.source, frames };
        clip.validate()?;
        Ok(clip)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_clip(n: usize) -> MotionClip {
        let m = RobotModel::planar_biped();
        let roots: Vec<Vec2> = (0..n).map(|t| [0.01 * t as f64, 0.9]).collect();
        let angles = vec![0.0; n];
        let qs: Vec<Vec<f64>> = (0..n).map(|t| vec![0.02 * t as f64; 7]).collect();
        MotionClip::from_poses(&m, "ramp", 50.0, ClipSource::Synthetic, &roots, &angles, &qs).unwrap()
    }

    #[test]
    fn velocities_from_central_differences() {
        let c = ramp_clip(5);
        for f in &c.frames {
            for &v in &f.qdot {
                assert!((v - 1.0).abs() < 1e-12);
            }
            assert!((f.root_linvel[0] - 0.5).abs() < 1e-12);
        }
        assert!(c.velocity_inconsistency() < 1e-12);
    }

    #[test]
    fn reject_truncated_file() {
        let c = ramp_clip(4);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(MotionClip::read_from(truncated.as_bytes()).is_err());
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(MotionClip::read_from(bumped.as_bytes()), Err(Error::FormatVersion { .. })));
    }

    proptest! {
        #[test]
        fn file_round_trip_is_bit_exact(seed in 0u64..1000, n in 1usize..6) {
            use rand::Rng as _;
            let mut rng = crate::rng::seeded(seed);
            let m = RobotModel::planar_biped();
            let roots: Vec<Vec2> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
            let angles: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let qs: Vec<Vec<f64>> = (0..n).map(|_| (0..7).map(|_| rng.random::<f64>() * 1e-3).collect()).collect();
            let c = MotionClip::from_poses(&m, "r", 30.0, ClipSource::External, &roots, &angles, &qs).unwrap();
            let mut buf = Vec::new();
            c.write_to(&mut buf).unwrap();
            let back = MotionClip::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
