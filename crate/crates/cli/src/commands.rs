//! Argument parsing and subcommand dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mtrack_core::evaluate::{EvalConfig, Policy};
use mtrack_core::motiondata::{ClipKind, ClipParams, CurationPolicy, RetargetRegularization};
use mtrack_core::student::StudentConfig;
use mtrack_core::teacher::TeacherConfig;
use serde::Deserialize;

use crate::config::{load_robot, load_stage, AblationStage, GenerateSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, Cache, Recorder, Stage};
use crate::plots::{emit_plot_data, PlotKind};

pub const CACHE_ENV: &str = "MTRACK_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "mtrack", version, about = "Motion tracking pipeline for a planar biped")]
pub struct Cli {
    /// Robot description (TOML); the built-in biped when absent.
    #[arg(long, global = true)]
    pub robot: Option<PathBuf>,
    /// Checkpoint cache shared across runs.
    #[arg(long, global = true, env = CACHE_ENV)]
    pub cache_dir: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic reference clip.
    Generate(GenerateArgs),
    /// Filter clips by kinematic feasibility.
    Curate(CurateArgs),
    /// Retarget source motions (JSON) onto the robot.
    Retarget(RetargetArgs),
    /// Train the oracle tracking policy with PPO.
    TrainTeacher(TrainArgs),
    /// Distill a teacher into the deployable student.
    Distill(DistillArgs),
    /// Evaluate checkpoints on clips.
    Eval(EvalArgs),
    /// Train and evaluate the ablation grid.
    Ablate(AblateArgs),
    /// Evaluate teacher and student across observation-noise levels.
    Robustness(RobustnessArgs),
    /// Reshape reports into plot-ready tidy CSV.
    EmitPlots(PlotArgs),
    /// Run pipeline stages from a run config.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub kind: ClipKind,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 50.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    #[arg(long, default_value_t = ClipParams::default().amplitude)]
    pub amplitude: f64,
    #[arg(long, default_value_t = ClipParams::default().period_s)]
    pub period: f64,
    #[arg(long, default_value_t = 0.0)]
    pub phase_jitter: f64,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Curation thresholds (TOML).
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetargetArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Source skeleton (JSON); the built-in human skeleton when absent.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Regularization weights (TOML).
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub clips: Vec<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Stage config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub teacher: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalSeeds {
    /// First evaluation seed.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub n_seeds: u64,
}

impl EvalSeeds {
    fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds).map(|i| self.seed + i).collect()
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub clips: Vec<PathBuf>,
    #[command(flatten)]
    pub seeds: EvalSeeds,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub student: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub noise_level: u8,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluation settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub teacher: PathBuf,
    /// Clips for evaluation; the training clips when absent.
    #[arg(long, num_args = 1..)]
    pub eval_clips: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub clips: Vec<PathBuf>,
    #[command(flatten)]
    pub seeds: EvalSeeds,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub levels: Vec<u8>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub kind: PlotKind,
    #[arg(long = "in", num_args = 0..)]
    pub inputs: Vec<PathBuf>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Stages to run; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub stages: Option<Vec<Stage>>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Ablation stage file: the base student plus the grid settings.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AblateFile {
    student: StudentConfig,
    ablation: AblationStage,
    eval: EvalConfig,
}

fn finish(rec: Recorder) -> CliResult<()> {
    let m = rec.finish()?;
    for e in &m.entries {
        println!("{}\t{}\t{}", e.path, e.config_hash, e.sha256);
    }
    Ok(())
}

fn curated(files: &[PathBuf]) -> CliResult<Vec<mtrack_core::motiondata::MotionClip>> {
    pipeline::load_clips(files)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cache = Cache { dir: cli.cache_dir.clone() };
    let robot = || load_robot(cli.robot.as_deref());
    match cli.command {
        Command::Generate(a) => {
            let spec = GenerateSpec {
                kind: a.kind,
                name: a.name,
                params: ClipParams { amplitude: a.amplitude, period_s: a.period, phase_jitter: a.phase_jitter },
                fps: a.fps,
                duration_s: a.duration,
            };
            let mut rec = Recorder::new(&a.out)?;
            pipeline::stage_generate(&mut rec, &robot()?, &[spec], &[], a.seed, ".")?;
            finish(rec)
        }
        Command::Curate(a) => {
            let policy: CurationPolicy = load_stage(a.policy.as_deref())?;
            policy.validate()?;
            let mut rec = Recorder::new(&a.out)?;
            let kept = pipeline::stage_curate(&mut rec, &a.inputs, &policy, ".")?;
            eprintln!("kept {kept} of {} clips", a.inputs.len());
            finish(rec)
        }
        Command::Retarget(a) => {
            let reg: RetargetRegularization = load_stage(a.policy.as_deref())?;
            let mut rec = Recorder::new(&a.out)?;
            pipeline::stage_retarget(&mut rec, &robot()?, a.skeleton.as_deref(), &a.inputs, &reg, ".")?;
            finish(rec)
        }
        Command::TrainTeacher(a) => {
            let cfg = TeacherConfig { seed: a.seed, ..load_stage(a.config.as_deref())? };
            let clips = curated(&a.clips)?;
            let mut rec = Recorder::new(&a.out)?;
            pipeline::stage_train_teacher(&mut rec, &robot()?, &clips, &cfg, &cache, ".")?;
            finish(rec)
        }
        Command::Distill(a) => {
            let teacher = pipeline::load_teacher(&a.teacher)?;
            let cfg = StudentConfig { seed: a.train.seed, ..load_stage(a.train.config.as_deref())? };
            let clips = curated(&a.train.clips)?;
            let mut rec = Recorder::new(&a.train.out)?;
            pipeline::stage_distill(&mut rec, &robot()?, &clips, &teacher, &cfg, &cache, ".")?;
            finish(rec)
        }
        Command::Eval(a) => {
            let cfg: EvalConfig = load_stage(a.config.as_deref())?;
            let teacher = a.teacher.as_deref().map(pipeline::load_teacher).transpose()?;
            let student = a.student.as_deref().map(pipeline::load_student).transpose()?;
            let mut policies: Vec<&dyn Policy> = Vec::new();
            if let Some(t) = &teacher {
                policies.push(t);
            }
            if let Some(s) = &student {
                policies.push(s);
            }
            if policies.is_empty() {
                return Err(CliError::Config("eval needs --teacher and/or --student".into()));
            }
            let clips = curated(&a.clips)?;
            let mut rec = Recorder::new(&a.out)?;
            let reports =
                pipeline::stage_eval(&mut rec, &robot()?, &clips, &policies, a.noise_level, &a.seeds.seeds(), &cfg, ".")?;
            for r in &reports {
                eprintln!("{}: SR {:.2} MPKPE {:.4} m", r.policy, r.aggregate.sr, r.aggregate.all.mpkpe);
            }
            finish(rec)
        }
        Command::Ablate(a) => {
            let teacher = pipeline::load_teacher(&a.teacher)?;
            let file: AblateFile = load_stage(a.train.config.as_deref())?;
            let clips = curated(&a.train.clips)?;
            let eval_clips = if a.eval_clips.is_empty() { clips.clone() } else { curated(&a.eval_clips)? };
            let rc = RunConfig {
                seed: a.train.seed,
                robot: None,
                output_dir: a.train.out.clone(),
                cache_dir: None,
                generate: Vec::new(),
                clip_files: Vec::new(),
                retarget: Vec::new(),
                skeleton: None,
                curation: CurationPolicy::default(),
                teacher: TeacherConfig::default(),
                student: file.student,
                eval: crate::config::EvalStage { config: file.eval, ..Default::default() },
                ablation: file.ablation,
            };
            let mut rec = Recorder::new(&a.train.out)?;
            pipeline::stage_ablate(&mut rec, &robot()?, &clips, &eval_clips, &teacher, &rc.ablation_grid(), &cache, ".")?;
            finish(rec)
        }
        Command::Robustness(a) => {
            let cfg: EvalConfig = load_stage(a.config.as_deref())?;
            let teacher = pipeline::load_teacher(&a.teacher)?;
            let student = pipeline::load_student(&a.student)?;
            let clips = curated(&a.clips)?;
            let mut rec = Recorder::new(&a.out)?;
            pipeline::stage_robustness(&mut rec, &robot()?, &clips, &[&teacher, &student], &a.levels, &a.seeds.seeds(), &cfg, ".")?;
            finish(rec)
        }
        Command::EmitPlots(a) => {
            let inputs: Vec<&Path> = a.inputs.iter().map(|p| p.as_path()).collect();
            let t = emit_plot_data(&inputs, a.kind)?;
            t.save(&a.out)?;
            eprintln!("{} rows", t.rows.len());
            Ok(())
        }
        Command::Run(a) => {
            let mut cfg = RunConfig::load(&a.config)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if cli.robot.is_some() {
                cfg.robot = cli.robot.clone();
            }
            if cfg.cache_dir.is_none() {
                cfg.cache_dir = cli.cache_dir.clone();
            }
            let stages = a.stages.unwrap_or_else(|| Stage::ALL.to_vec());
            let m = pipeline::run_pipeline(&cfg, &stages)?;
            eprintln!("{} artifacts, {} training runs", m.entries.len(), m.training_runs);
            Ok(())
        }
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::EXIT_CONFIG } else { crate::error::EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => crate::error::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
