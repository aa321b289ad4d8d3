//! Episode rollout under a policy, tracking metrics and report aggregation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::policy::{apply_noise, NoiseSpec, Policy, PolicyInput, Proprio};
use crate::error::{Error, Result};
use crate::motiondata::MotionClip;
use crate::rng::stream;
use crate::simulator::kinematics::{norm, sub};
use crate::simulator::{RandomizationSpec, RobotModel, SimConfig, Termination, Vec2};
use crate::teacher::env::TrackingEnv;

const STREAM_ENV: u64 = 0xe1;
const STREAM_NOISE: u64 = 0xe2;
const STREAM_POLICY: u64 = 0xe3;

/// How an evaluated episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    FellOrientation,
    LostTracking,
    Diverged,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::FellOrientation => "fell_orientation",
            Outcome::LostTracking => "lost_tracking",
            Outcome::Diverged => "diverged",
        }
    }
}

/// Executed and reference trajectories sampled at the control rate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub keypoints: Vec<Vec<Vec2>>,
    pub ref_keypoints: Vec<Vec<Vec2>>,
    pub qdot: Vec<Vec<f64>>,
    pub ref_qdot: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    /// Mean world-frame keypoint distance (m) over frames and keypoints.
    pub mpkpe: f64,
    /// Mean |q̇ − q̂̇| (rad/s) over frames and joints.
    pub vel_dist: f64,
    /// Mean |q̈ − q̂̈| (rad/s²), accelerations by central differences of q̇.
    pub acc_dist: f64,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Metrics of a trajectory sampled every `dt` seconds.
pub fn tracking_metrics(t: &Trajectory, dt: f64) -> TrackingMetrics {
    let (mut kp_sum, mut kp_n) = (0.0, 0);
    for (a, b) in t.keypoints.iter().zip(&t.ref_keypoints) {
        for (x, y) in a.iter().zip(b) {
            kp_sum += norm(sub(*x, *y));
            kp_n += 1;
        }
    }
    let (mut v_sum, mut v_n) = (0.0, 0);
    for (a, b) in t.qdot.iter().zip(&t.ref_qdot) {
        for (x, y) in a.iter().zip(b) {
            v_sum += (x - y).abs();
            v_n += 1;
        }
    }
    let (mut a_sum, mut a_n) = (0.0, 0);
    for i in 1..t.qdot.len().saturating_sub(1) {
        for j in 0..t.qdot[i].len() {
            let acc = (t.qdot[i + 1][j] - t.qdot[i - 1][j]) / (2.0 * dt);
            let ref_acc = (t.ref_qdot[i + 1][j] - t.ref_qdot[i - 1][j]) / (2.0 * dt);
            a_sum += (acc - ref_acc).abs();
            a_n += 1;
        }
    }
    TrackingMetrics { mpkpe: mean(kp_sum, kp_n), vel_dist: mean(v_sum, v_n), acc_dist: mean(a_sum, a_n) }
}

/// The clip tracked by itself: a perfect kinematic replay.
pub fn replay_trajectory(clip: &MotionClip) -> Trajectory {
    let kp: Vec<Vec<Vec2>> = clip.frames.iter().map(|f| f.keypoints.clone()).collect();
    let qd: Vec<Vec<f64>> = clip.frames.iter().map(|f| f.qdot.clone()).collect();
    Trajectory { keypoints: kp.clone(), ref_keypoints: kp, qdot: qd.clone(), ref_qdot: qd }
}

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRow {
    pub policy: String,
    pub clip: String,
    pub seed: u64,
    pub noise_level: u8,
    pub success: bool,
    pub outcome: Outcome,
    /// Control steps executed.
    pub steps: usize,
    pub mpkpe: f64,
    pub vel_dist: f64,
    pub acc_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub sim: SimConfig,
    pub randomization: RandomizationSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { sim: SimConfig::default(), randomization: RandomizationSpec::none() }
    }
}

/// Run `policy` on `clips[clip]` from its first frame until the final frame
/// or an early termination. Success means the final frame was reached
/// without termination.
pub fn run_episode(
    policy: &dyn Policy,
    model: &RobotModel,
    clips: &[MotionClip],
    clip: usize,
    noise: &NoiseSpec,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<(ClipRow, Trajectory)> {
    let c = &clips[clip];
    if c.len() < 2 {
        return Err(Error::InvalidClip(format!("{}: evaluation needs >= 2 frames", c.name)));
    }
    let labels = |s: u64| stream(seed, &[s, clip as u64]);
    let mut env = TrackingEnv::reset(model, clips, clip, Some(0), &cfg.randomization, labels(STREAM_ENV))?;
    let mut noise_rng = labels(STREAM_NOISE);
    let mut policy_rng = labels(STREAM_POLICY);
    let mut history: Vec<Proprio> = Vec::with_capacity(c.len());
    let mut traj = Trajectory::default();
    let outcome = loop {
        let (noisy, proprio) = apply_noise(&env.state, noise, &mut noise_rng);
        history.push(proprio);
        let input = PolicyInput { model: &env.model, state: &noisy, history: &history, clip: c, frame: env.frame };
        let action = policy.act(&input, &mut policy_rng)?;
        if action.len() != model.n_joints() || action.iter().any(|a| !a.is_finite()) {
            break Outcome::Diverged;
        }
        let out = env.step(&action, clips, &cfg.sim)?;
        if out.diverged {
            break Outcome::Diverged;
        }
        let r = c.frame(env.frame);
        traj.keypoints.push(env.state.keypoints(&env.model));
        traj.ref_keypoints.push(r.keypoints.clone());
        traj.qdot.push(env.state.qdot.clone());
        traj.ref_qdot.push(r.qdot.clone());
        match out.termination {
            Termination::FellOrientation => break Outcome::FellOrientation,
            Termination::LostTracking => break Outcome::LostTracking,
            Termination::Alive if out.clip_end => break Outcome::Completed,
            Termination::Alive => {}
        }
    };
    let m = tracking_metrics(&traj, cfg.sim.control_dt());
    let row = ClipRow {
        policy: policy.id(),
        clip: c.name.clone(),
        seed,
        noise_level: noise.level,
        success: outcome == Outcome::Completed,
        outcome,
        steps: env.steps,
        mpkpe: m.mpkpe,
        vel_dist: m.vel_dist,
        acc_dist: m.acc_dist,
    };
    Ok((row, traj))
}

pub fn evaluate_clip(
    policy: &dyn Policy,
    model: &RobotModel,
    clips: &[MotionClip],
    clip: usize,
    noise: &NoiseSpec,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<ClipRow> {
    run_episode(policy, model, clips, clip, noise, seed, cfg).map(|(row, _)| row)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub mpkpe: f64,
    pub vel_dist: f64,
    pub acc_dist: f64,
}

impl MetricMeans {
    /// Exact means over `rows`; `None` when empty.
    pub fn over<'a>(rows: impl IntoIterator<Item = &'a ClipRow>) -> Option<Self> {
        let mut s = [0.0; 3];
        let mut n = 0usize;
        for r in rows {
            s[0] += r.mpkpe;
            s[1] += r.vel_dist;
            s[2] += r.acc_dist;
            n += 1;
        }
        (n > 0).then(|| MetricMeans { mpkpe: s[0] / n as f64, vel_dist: s[1] / n as f64, acc_dist: s[2] / n as f64 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Percent of rows that succeeded.
    pub sr: f64,
    pub all: MetricMeans,
    pub successful: Option<MetricMeans>,
}

impl Aggregate {
    pub fn from_rows(rows: &[ClipRow]) -> Result<Self> {
        let all = MetricMeans::over(rows).ok_or_else(|| Error::invalid("cannot aggregate an empty report"))?;
        let n_ok = rows.iter().filter(|r| r.success).count();
        Ok(Aggregate {
            sr: 100.0 * n_ok as f64 / rows.len() as f64,
            all,
            successful: MetricMeans::over(rows.iter().filter(|r| r.success)),
        })
    }
}

/// Per-episode rows plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub policy: String,
    pub noise_level: u8,
    pub seeds: Vec<u64>,
    pub rows: Vec<ClipRow>,
    pub aggregate: Aggregate,
}

impl TrackingReport {
    pub fn from_rows(policy: String, noise_level: u8, seeds: Vec<u64>, rows: Vec<ClipRow>) -> Result<Self> {
        let aggregate = Aggregate::from_rows(&rows)?;
        Ok(TrackingReport { policy, noise_level, seeds, rows, aggregate })
    }

    pub fn write_rows_csv(&self, w: impl Write) -> Result<()> {
        write_rows_csv(&self.rows, w)
    }
}

pub fn write_rows_csv(rows: &[ClipRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::parse("report rows", e))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows_csv(r: impl Read) -> Result<Vec<ClipRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<ClipRow>, _>>()
        .map_err(|e| Error::parse("report rows", e))
}

/// Every clip under every seed, in clip-major order.
pub fn evaluate_suite(
    policy: &dyn Policy,
    model: &RobotModel,
    clips: &[MotionClip],
    noise: &NoiseSpec,
    seeds: &[u64],
    cfg: &EvalConfig,
) -> Result<TrackingReport> {
    if clips.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("evaluation needs at least one clip and one seed"));
    }
    let mut rows = Vec::with_capacity(clips.len() * seeds.len());
    for i in 0..clips.len() {
        for &s in seeds {
            rows.push(evaluate_clip(policy, model, clips, i, noise, s, cfg)?);
        }
    }
    TrackingReport::from_rows(policy.id(), noise.level, seeds.to_vec(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motiondata::{generate_clip, ClipKind, ClipParams};
    use crate::rng::{seeded, Rng};

    struct Frozen(Vec<f64>);

    impl Policy for Frozen {
        fn id(&self) -> String {
            "frozen".into()
        }
        fn act(&self, _: &PolicyInput<'_>, _: &mut Rng) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn row(success: bool, mpkpe: f64) -> ClipRow {
        ClipRow {
            policy: "p".into(),
            clip: "c".into(),
            seed: 0,
            noise_level: 0,
            success,
            outcome: if success { Outcome::Completed } else { Outcome::LostTracking },
            steps: 10,
            mpkpe,
            vel_dist: 2.0 * mpkpe,
            acc_dist: 3.0 * mpkpe,
        }
    }

    #[test]
    fn replay_is_perfect() {
        let m = RobotModel::planar_biped();
        let c = generate_clip(&m, ClipKind::Walk, &ClipParams::default(), 50.0, 2.0, &mut seeded(0)).unwrap();
        let r = tracking_metrics(&replay_trajectory(&c), 0.02);
        assert_eq!(r, TrackingMetrics::default());
    }

    #[test]
    fn hand_built_three_frames() {
        let z = [0.0, 0.0];
        let t = Trajectory {
            keypoints: vec![vec![[0.1, 0.0]], vec![[0.0, 0.2]], vec![[-0.3, 0.0]]],
            ref_keypoints: vec![vec![z]; 3],
            qdot: vec![vec![1.0], vec![2.0], vec![4.0]],
            ref_qdot: vec![vec![0.0]; 3],
        };
        let r = tracking_metrics(&t, 0.5);
        assert!((r.mpkpe - 0.2).abs() < 1e-15);
        assert!((r.vel_dist - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.acc_dist, 3.0);
    }

    #[test]
    fn frozen_standing_policy_loses_a_walk() {
        let m = RobotModel::planar_biped();
        let params = ClipParams { amplitude: 1.0, period_s: 1.2, phase_jitter: 0.0 };
        let clips = vec![generate_clip(&m, ClipKind::Walk, &params, 50.0, 10.0, &mut seeded(0)).unwrap()];
        let (_, _, q) = m.standing_pose();
        let row = evaluate_clip(&Frozen(q), &m, &clips, 0, &NoiseSpec::none(), 0, &EvalConfig::default()).unwrap();
        assert!(!row.success);
        assert_eq!(row.outcome, Outcome::LostTracking);
    }

    #[test]
    fn standing_policy_completes_stand_clip_deterministically() {
        let m = RobotModel::planar_biped();
        let clips = vec![generate_clip(&m, ClipKind::Stand, &ClipParams::default(), 50.0, 2.0, &mut seeded(0)).unwrap()];
        let (_, _, q) = m.standing_pose();
        let cfg = EvalConfig::default();
        let a = evaluate_suite(&Frozen(q.clone()), &m, &clips, &NoiseSpec::none(), &[0, 1], &cfg).unwrap();
        assert_eq!(a.aggregate.sr, 100.0);
        assert_eq!(a.aggregate.successful, Some(a.aggregate.all));
        assert_eq!(a.rows[0].steps, clips[0].len() - 1);
        let b = evaluate_suite(&Frozen(q), &m, &clips, &NoiseSpec::none(), &[0, 1], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_aggregation() {
        let rows = vec![row(true, 0.1), row(false, 0.3)];
        let agg = Aggregate::from_rows(&rows).unwrap();
        assert_eq!(agg.sr, 50.0);
        assert!((agg.all.mpkpe - 0.2).abs() < 1e-15);
        assert_eq!(agg.successful.unwrap().mpkpe, 0.1);
        assert!(Aggregate::from_rows(&[]).is_err());
        assert_eq!(Aggregate::from_rows(&[row(false, 1.0)]).unwrap().successful, None);
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let rows = vec![row(true, 0.123456789012345), row(false, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_rows_csv(&rows, &mut buf).unwrap();
        let back = read_rows_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert_eq!(Aggregate::from_rows(&back).unwrap(), Aggregate::from_rows(&rows).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn metrics_are_non_negative(vals in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let t = Trajectory {
                keypoints: vec![vec![[vals[0], vals[1]]], vec![[vals[2], vals[3]]], vec![[vals[4], vals[5]]]],
                ref_keypoints: vec![vec![[0.0, 0.0]]; 3],
                qdot: vec![vec![vals[6]], vec![vals[7]], vec![vals[8]]],
                ref_qdot: vec![vec![vals[9]], vec![vals[10]], vec![vals[11]]],
            };
            let m = tracking_metrics(&t, 0.02);
            proptest::prop_assert!(m.mpkpe >= 0.0 && m.vel_dist >= 0.0 && m.acc_dist >= 0.0);
        }

        #[test]
        fn sr_is_bounded(flags in proptest::collection::vec(proptest::bool::ANY, 1..30)) {
            let rows: Vec<ClipRow> = flags.iter().map(|&f| row(f, 0.1)).collect();
            let agg = Aggregate::from_rows(&rows).unwrap();
            proptest::prop_assert!((0.0..=100.0).contains(&agg.sr));
            let ok: Vec<ClipRow> = rows.into_iter().filter(|r| r.success).collect();
            if !ok.is_empty() {
                proptest::prop_assert_eq!(Aggregate::from_rows(&ok).unwrap().sr, 100.0);
            }
        }
    }
}
