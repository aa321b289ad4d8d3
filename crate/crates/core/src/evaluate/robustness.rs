//! Observation-noise sweep: every policy evaluated at increasing noise levels
//! on the same clips and seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_suite, EvalConfig, TrackingReport};
use super::policy::{NoiseSpec, Policy};
use crate::error::{Error, Result};
use crate::motiondata::MotionClip;
use crate::simulator::RobotModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub level: u8,
    pub policy: String,
    pub sr: f64,
    pub mpkpe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub rows: Vec<RobustnessRow>,
    pub reports: Vec<TrackingReport>,
}

/// Level-major sweep. Levels must be strictly increasing.
pub fn robustness_sweep(
    policies: &[&dyn Policy],
    model: &RobotModel,
    clips: &[MotionClip],
    levels: &[u8],
    seeds: &[u64],
    cfg: &EvalConfig,
) -> Result<RobustnessTable> {
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("noise levels must be non-empty and strictly increasing: {levels:?}")));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &level in levels {
        let noise = NoiseSpec::level(level)?;
        for p in policies {
            let r = evaluate_suite(*p, model, clips, &noise, seeds, cfg)?;
            rows.push(RobustnessRow { level, policy: r.policy.clone(), sr: r.aggregate.sr, mpkpe: r.aggregate.all.mpkpe });
            reports.push(r);
        }
    }
    Ok(RobustnessTable { rows, reports })
}

impl RobustnessTable {
    /// Text table with one section per noise level; MPKPE in millimetres.
    pub fn render(&self) -> String {
        let mut out = String::from("| Method | SR | MPKPE |\n|---|---|---|\n");
        let mut level = None;
        for r in &self.rows {
            if level != Some(r.level) {
                let _ = writeln!(out, "| Noise Level {} | | |", r.level);
                level = Some(r.level);
            }
            let _ = writeln!(out, "| {} | {:.2} | {:.2} |", r.policy, r.sr, r.mpkpe * 1000.0);
        }
        out
    }

    /// SR per level for one policy, in level order.
    pub fn sr_by_level(&self, policy: &str) -> Vec<(u8, f64)> {
        self.rows.iter().filter(|r| r.policy == policy).map(|r| (r.level, r.sr)).collect()
    }
}
