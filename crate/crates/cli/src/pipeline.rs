//! Stage implementations, the artifact manifest and the checkpoint cache.

use std::path::{Path, PathBuf};

use mtrack_core::evaluate::{
    evaluate_suite, robustness_sweep, run_ablation, write_rows_csv, AblationGrid, CellTrainer, EvalConfig, NoiseSpec,
    Policy, TrackingReport,
};
use mtrack_core::hashing::{config_hash, sha256_hex};
use mtrack_core::motiondata::{
    curate, fit_shape, generate_clip, retarget_sequence, CurationPolicy, MotionClip, RetargetRegularization,
    SourceMotion, SourceSkeleton,
};
use mtrack_core::neural::{load_json, load_jsonl, save_json, save_jsonl};
use mtrack_core::rng::stream;
use mtrack_core::simulator::RobotModel;
use mtrack_core::student::{train_student, StudentConfig, StudentLogRecord, StudentPolicy};
use mtrack_core::teacher::{train_teacher, TeacherConfig, TeacherLogRecord, TeacherPolicy};
use serde::{Deserialize, Serialize};

use crate::config::{GenerateSpec, RunConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;
const STREAM_GENERATE: u64 = 0x6e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    Retarget,
    Curate,
    TrainTeacher,
    Distill,
    Eval,
    Ablate,
    Robustness,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Generate,
        Stage::Retarget,
        Stage::Curate,
        Stage::TrainTeacher,
        Stage::Distill,
        Stage::Eval,
        Stage::Ablate,
        Stage::Robustness,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub stage: Stage,
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    /// Hash of everything the artifact was computed from.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub entries: Vec<ArtifactEntry>,
    /// Training runs actually executed (cache misses).
    pub training_runs: usize,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { format_version: MANIFEST_VERSION, entries: Vec::new(), training_runs: 0 }
    }
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join("manifest.json");
        save_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Ok(load_json(path)?)
    }
}

/// Collects artifacts written under one output directory.
pub struct Recorder {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Recorder {
    pub fn new(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Recorder { root: root.to_path_buf(), manifest: Manifest::default() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Path for writing `rel`, with its directory created.
    pub fn out_path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.root.join(rel);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d)?;
        }
        Ok(p)
    }

    /// Record a file already written at `root/rel`.
    pub fn record(&mut self, stage: Stage, rel: &str, hash: &str, seed: Option<u64>) -> CliResult<()> {
        let bytes = std::fs::read(self.path(rel))?;
        self.manifest.entries.push(ArtifactEntry {
            stage,
            path: rel.to_string(),
            config_hash: hash.to_string(),
            seed,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn finish(self) -> CliResult<Manifest> {
        self.manifest.save(&self.root)?;
        Ok(self.manifest)
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// `.clip` files of a directory, sorted by file name.
pub fn clip_files_in(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "clip"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_clips(files: &[PathBuf]) -> CliResult<Vec<MotionClip>> {
    files
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(CliError::dependency(format!("clip file {}", p.display()), "generate or curate it first"));
            }
            Ok(MotionClip::load(p)?)
        })
        .collect()
}

fn check_robot(clips: &[MotionClip], model: &RobotModel) -> CliResult<()> {
    if let Some(c) = clips.iter().find(|c| c.n_joints() != model.n_joints()) {
        return Err(CliError::Config(format!(
            "clip `{}` has {} joints but the robot has {}",
            c.name,
            c.n_joints(),
            model.n_joints()
        )));
    }
    Ok(())
}

pub fn generate_one(model: &RobotModel, spec: &GenerateSpec, seed: u64, index: u64) -> CliResult<MotionClip> {
    let mut rng = stream(seed, &[STREAM_GENERATE, index]);
    let mut clip = generate_clip(model, spec.kind, &spec.params, spec.fps, spec.duration_s, &mut rng)?;
    clip.name = spec.stem();
    Ok(clip)
}

/// Write `clips` as `<dir>/<name>.clip`, rejecting duplicate names.
fn save_clips(rec: &mut Recorder, stage: Stage, dir: &str, clips: &[(MotionClip, String)], seed: Option<u64>) -> CliResult<()> {
    std::fs::create_dir_all(rec.path(dir))?;
    let mut seen = std::collections::BTreeSet::new();
    for (clip, hash) in clips {
        if !seen.insert(clip.name.clone()) {
            return Err(CliError::Config(format!("duplicate clip name `{}`", clip.name)));
        }
        let rel = format!("{dir}/{}.clip", clip.name);
        clip.save(&rec.out_path(&rel)?)?;
        rec.record(stage, &rel, hash, seed)?;
    }
    Ok(())
}

pub fn stage_generate(
    rec: &mut Recorder,
    model: &RobotModel,
    specs: &[GenerateSpec],
    extra_files: &[PathBuf],
    seed: u64,
    dir: &str,
) -> CliResult<()> {
    let mut clips = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let clip = generate_one(model, spec, seed, i as u64)?;
        clips.push((clip, config_hash(&(spec, seed, i))));
    }
    for p in extra_files {
        let clip = MotionClip::load(p)?;
        let hash = config_hash(&clip);
        clips.push((clip, hash));
    }
    check_robot(&clips.iter().map(|c| c.0.clone()).collect::<Vec<_>>(), model)?;
    save_clips(rec, Stage::Generate, dir, &clips, Some(seed))
}

pub fn stage_retarget(
    rec: &mut Recorder,
    model: &RobotModel,
    skeleton: Option<&Path>,
    sources: &[PathBuf],
    reg: &RetargetRegularization,
    dir: &str,
) -> CliResult<()> {
    let skel = match skeleton {
        Some(p) => load_json(p)?,
        None => SourceSkeleton::human_default(),
    };
    let fit = fit_shape(&skel, model)?;
    let mut clips = Vec::new();
    for p in sources {
        let src: SourceMotion = load_json(p)?;
        let hash = config_hash(&(&skel, &src, reg, model));
        let mut res = retarget_sequence(&skel, &fit.shape, &src, model, reg)?;
        res.clip.name = src.name.clone();
        clips.push((res.clip, hash));
    }
    save_clips(rec, Stage::Retarget, dir, &clips, None)
}

pub fn stage_curate(rec: &mut Recorder, inputs: &[PathBuf], policy: &CurationPolicy, dir: &str) -> CliResult<usize> {
    if inputs.is_empty() {
        return Err(CliError::dependency("raw clips", "run the generate or retarget stage first"));
    }
    let clips = load_clips(inputs)?;
    let hash = config_hash(&(policy, &clips));
    let (kept, rejected) = curate(clips, policy);
    let kept: Vec<_> = kept.into_iter().map(|c| (c, hash.clone())).collect();
    save_clips(rec, Stage::Curate, dir, &kept, None)?;
    let rel = format!("{dir}/rejections.jsonl");
    save_jsonl(&rec.path(&rel), &rejected)?;
    rec.record(Stage::Curate, &rel, &hash, None)?;
    Ok(kept.len())
}

/// Checkpoint and log cache keyed by config hash.
pub struct Cache {
    pub dir: Option<PathBuf>,
}

impl Cache {
    fn paths(&self, prefix: &str, key: &str) -> Option<(PathBuf, PathBuf)> {
        self.dir.as_ref().map(|d| (d.join(format!("{prefix}-{key}.json")), d.join(format!("{prefix}-{key}.log.jsonl"))))
    }
}

pub fn teacher_key(model: &RobotModel, clips: &[MotionClip], cfg: &TeacherConfig) -> String {
    config_hash(&("teacher", model, clips, cfg))
}

pub fn student_key(model: &RobotModel, clips: &[MotionClip], teacher: &TeacherPolicy, cfg: &StudentConfig) -> String {
    config_hash(&("student", model, clips, teacher, cfg))
}

/// Train a teacher or load it from the cache. Returns whether training ran.
pub fn obtain_teacher(
    model: &RobotModel,
    clips: &[MotionClip],
    cfg: &TeacherConfig,
    cache: &Cache,
) -> CliResult<(TeacherPolicy, Vec<TeacherLogRecord>, bool)> {
    let key = teacher_key(model, clips, cfg);
    if let Some((ckpt, log)) = cache.paths("teacher", &key).filter(|(c, l)| c.exists() && l.exists()) {
        return Ok((TeacherPolicy::load(&ckpt)?, load_jsonl(&log)?, false));
    }
    let run = train_teacher(model, clips, cfg)?;
    if let Some(d) = run.diverged {
        return Err(CliError::Divergence(format!("teacher training: {d}")));
    }
    if let Some((ckpt, log)) = cache.paths("teacher", &key) {
        run.policy.save(&ckpt)?;
        save_jsonl(&log, &run.log)?;
    }
    Ok((run.policy, run.log, true))
}

pub fn obtain_student(
    model: &RobotModel,
    clips: &[MotionClip],
    teacher: &TeacherPolicy,
    cfg: &StudentConfig,
    cache: &Cache,
) -> CliResult<(StudentPolicy, Vec<StudentLogRecord>, bool)> {
    let key = student_key(model, clips, teacher, cfg);
    if let Some((ckpt, log)) = cache.paths("student", &key).filter(|(c, l)| c.exists() && l.exists()) {
        return Ok((StudentPolicy::load(&ckpt)?, load_jsonl(&log)?, false));
    }
    let run = train_student(model, clips, teacher, cfg)?;
    if let Some(d) = run.diverged {
        return Err(CliError::Divergence(format!("distillation: {d}")));
    }
    if let Some((ckpt, log)) = cache.paths("student", &key) {
        run.student.save(&ckpt)?;
        save_jsonl(&log, &run.log)?;
    }
    Ok((run.student, run.log, true))
}

pub fn stage_train_teacher(
    rec: &mut Recorder,
    model: &RobotModel,
    clips: &[MotionClip],
    cfg: &TeacherConfig,
    cache: &Cache,
    dir: &str,
) -> CliResult<TeacherPolicy> {
    if clips.is_empty() {
        return Err(CliError::dependency("curated clips", "run the curate stage first"));
    }
    check_robot(clips, model)?;
    let key = teacher_key(model, clips, cfg);
    let (policy, log, trained) = obtain_teacher(model, clips, cfg, cache)?;
    rec.manifest.training_runs += trained as usize;
    let ckpt = format!("{dir}/teacher.json");
    policy.save(&rec.path(&ckpt))?;
    rec.record(Stage::TrainTeacher, &ckpt, &key, Some(cfg.seed))?;
    let log_rel = format!("{dir}/log.jsonl");
    save_jsonl(&rec.path(&log_rel), &log)?;
    rec.record(Stage::TrainTeacher, &log_rel, &key, Some(cfg.seed))?;
    Ok(policy)
}

pub fn load_teacher(path: &Path) -> CliResult<TeacherPolicy> {
    if !path.exists() {
        return Err(CliError::dependency(
            format!("teacher checkpoint {}", path.display()),
            "run train-teacher first",
        ));
    }
    Ok(TeacherPolicy::load(path)?)
}

pub fn load_student(path: &Path) -> CliResult<StudentPolicy> {
    if !path.exists() {
        return Err(CliError::dependency(format!("student checkpoint {}", path.display()), "run distill first"));
    }
    Ok(StudentPolicy::load(path)?)
}

pub fn stage_distill(
    rec: &mut Recorder,
    model: &RobotModel,
    clips: &[MotionClip],
    teacher: &TeacherPolicy,
    cfg: &StudentConfig,
    cache: &Cache,
    dir: &str,
) -> CliResult<StudentPolicy> {
    if clips.is_empty() {
        return Err(CliError::dependency("curated clips", "run the curate stage first"));
    }
    check_robot(clips, model)?;
    let key = student_key(model, clips, teacher, cfg);
    let (student, log, trained) = obtain_student(model, clips, teacher, cfg, cache)?;
    rec.manifest.training_runs += trained as usize;
    let ckpt = format!("{dir}/student.json");
    student.save(&rec.path(&ckpt))?;
    rec.record(Stage::Distill, &ckpt, &key, Some(cfg.seed))?;
    let log_rel = format!("{dir}/log.jsonl");
    save_jsonl(&rec.path(&log_rel), &log)?;
    rec.record(Stage::Distill, &log_rel, &key, Some(cfg.seed))?;
    Ok(student)
}

fn summary_line(r: &TrackingReport) -> String {
    let ok = r.aggregate.successful.map_or_else(|| "-".into(), |m| format!("{:.4}", m.mpkpe));
    format!(
        "| {} | {} | {:.2} | {:.4} | {:.4} | {:.4} | {} |\n",
        r.policy, r.noise_level, r.aggregate.sr, r.aggregate.all.mpkpe, r.aggregate.all.vel_dist, r.aggregate.all.acc_dist, ok
    )
}

pub fn stage_eval(
    rec: &mut Recorder,
    model: &RobotModel,
    clips: &[MotionClip],
    policies: &[&dyn Policy],
    noise_level: u8,
    seeds: &[u64],
    cfg: &EvalConfig,
    dir: &str,
) -> CliResult<Vec<TrackingReport>> {
    let noise = NoiseSpec::level(noise_level)?;
    let mut summary = String::from("| policy | noise | SR | MPKPE (m) | Vel-Dist | Acc-Dist | MPKPE successful (m) |\n|---|---|---|---|---|---|---|\n");
    let mut reports = Vec::new();
    for p in policies {
        let report = evaluate_suite(*p, model, clips, &noise, seeds, cfg)?;
        let hash = config_hash(&(model, clips, &p.id(), noise_level, seeds, cfg));
        let rows_rel = format!("{dir}/{}_rows.csv", report.policy);
        let f = std::fs::File::create(rec.out_path(&rows_rel)?)?;
        write_rows_csv(&report.rows, f)?;
        rec.record(Stage::Eval, &rows_rel, &hash, None)?;
        let rep_rel = format!("{dir}/{}_report.json", report.policy);
        save_json(&rec.path(&rep_rel), &report)?;
        rec.record(Stage::Eval, &rep_rel, &hash, None)?;
        summary.push_str(&summary_line(&report));
        reports.push(report);
    }
    let rel = format!("{dir}/summary.md");
    write_text(&rec.path(&rel), &summary)?;
    rec.record(Stage::Eval, &rel, &config_hash(&(seeds, noise_level)), None)?;
    Ok(reports)
}

pub fn stage_ablate(
    rec: &mut Recorder,
    model: &RobotModel,
    train_clips: &[MotionClip],
    eval_clips: &[MotionClip],
    teacher: &TeacherPolicy,
    grid: &AblationGrid,
    cache: &Cache,
    dir: &str,
) -> CliResult<()> {
    let cells = cache.dir.as_ref().map(|d| d.join("cells"));
    let mut trainer = CellTrainer::new(model, train_clips, teacher, cells);
    let table = run_ablation(grid, &mut trainer, eval_clips)?;
    rec.manifest.training_runs += trainer.trained;
    let hash = config_hash(&(grid, train_clips, eval_clips, teacher));
    let json = format!("{dir}/table.json");
    table.save(&rec.path(&json))?;
    rec.record(Stage::Ablate, &json, &hash, None)?;
    let md = format!("{dir}/table.md");
    write_text(&rec.path(&md), &table.render())?;
    rec.record(Stage::Ablate, &md, &hash, None)?;
    let rows = format!("{dir}/rows.csv");
    table.write_cell_rows_csv(std::fs::File::create(rec.out_path(&rows)?)?)?;
    rec.record(Stage::Ablate, &rows, &hash, None)?;
    Ok(())
}

pub fn stage_robustness(
    rec: &mut Recorder,
    model: &RobotModel,
    clips: &[MotionClip],
    policies: &[&dyn Policy],
    levels: &[u8],
    seeds: &[u64],
    cfg: &EvalConfig,
    dir: &str,
) -> CliResult<()> {
    let table = robustness_sweep(policies, model, clips, levels, seeds, cfg)?;
    let ids: Vec<String> = policies.iter().map(|p| p.id()).collect();
    let hash = config_hash(&(model, clips, ids, levels, seeds, cfg));
    let json = format!("{dir}/table.json");
    save_json(&rec.path(&json), &table)?;
    rec.record(Stage::Robustness, &json, &hash, None)?;
    let md = format!("{dir}/table.md");
    write_text(&rec.path(&md), &table.render())?;
    rec.record(Stage::Robustness, &md, &hash, None)?;
    Ok(())
}

pub const RAW_DIR: &str = "clips/raw";
pub const RETARGETED_DIR: &str = "clips/retargeted";
pub const CURATED_DIR: &str = "clips/curated";
pub const TEACHER_DIR: &str = "teacher";
pub const STUDENT_DIR: &str = "student";

/// Run the requested stages (in canonical order) under `config.output_dir`.
/// Each stage reads what earlier stages left there, so a subset may start
/// mid-pipeline when the earlier artifacts exist.
pub fn run_pipeline(config: &RunConfig, stages: &[Stage]) -> CliResult<Manifest> {
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let mut rec = Recorder::new(&config.output_dir)?;
    if stages.is_empty() {
        return rec.finish();
    }
    let model = config.robot_model()?;
    let cache = Cache { dir: config.cache_dir.clone() };
    let curated = |rec: &Recorder| -> CliResult<Vec<MotionClip>> {
        let files = clip_files_in(&rec.path(CURATED_DIR))?;
        if files.is_empty() {
            return Err(CliError::dependency(
                format!("curated clips in {}", rec.path(CURATED_DIR).display()),
                "run the curate stage first",
            ));
        }
        load_clips(&files)
    };
    let teacher_path = |rec: &Recorder| rec.path(&format!("{TEACHER_DIR}/teacher.json"));
    let student_path = |rec: &Recorder| rec.path(&format!("{STUDENT_DIR}/student.json"));
    for stage in stages {
        match stage {
            Stage::Generate => stage_generate(&mut rec, &model, &config.generate, &config.clip_files, config.seed, RAW_DIR)?,
            Stage::Retarget => stage_retarget(
                &mut rec,
                &model,
                config.skeleton.as_deref(),
                &config.retarget,
                &RetargetRegularization::default(),
                RETARGETED_DIR,
            )?,
            Stage::Curate => {
                let mut inputs = clip_files_in(&rec.path(RAW_DIR))?;
                inputs.extend(clip_files_in(&rec.path(RETARGETED_DIR))?);
                stage_curate(&mut rec, &inputs, &config.curation, CURATED_DIR)?;
            }
            Stage::TrainTeacher => {
                let clips = curated(&rec)?;
                stage_train_teacher(&mut rec, &model, &clips, &config.teacher_config(), &cache, TEACHER_DIR)?;
            }
            Stage::Distill => {
                let teacher = load_teacher(&teacher_path(&rec))?;
                let clips = curated(&rec)?;
                stage_distill(&mut rec, &model, &clips, &teacher, &config.student_config(), &cache, STUDENT_DIR)?;
            }
            Stage::Eval => {
                let teacher = load_teacher(&teacher_path(&rec))?;
                let clips = curated(&rec)?;
                let sp = student_path(&rec);
                let student = if sp.exists() { Some(load_student(&sp)?) } else { None };
                let mut policies: Vec<&dyn Policy> = vec![&teacher];
                if let Some(s) = &student {
                    policies.push(s);
                }
                stage_eval(&mut rec, &model, &clips, &policies, 0, &config.eval.seeds, &config.eval.config, "eval")?;
            }
            Stage::Ablate => {
                let teacher = load_teacher(&teacher_path(&rec))?;
                let clips = curated(&rec)?;
                let grid = config.ablation_grid();
                stage_ablate(&mut rec, &model, &clips, &clips, &teacher, &grid, &cache, "ablation")?;
            }
            Stage::Robustness => {
                let teacher = load_teacher(&teacher_path(&rec))?;
                let student = load_student(&student_path(&rec))?;
                let clips = curated(&rec)?;
                stage_robustness(
                    &mut rec,
                    &model,
                    &clips,
                    &[&teacher, &student],
                    &config.eval.noise_levels,
                    &config.eval.seeds,
                    &config.eval.config,
                    "robustness",
                )?;
            }
        }
    }
    rec.finish()
}
