//! Ablation grid: one axis varied per section around a base student
//! configuration, every cell trained (or loaded from cache) and evaluated on
//! a shared clip set with shared seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_suite, ClipRow, EvalConfig, MetricMeans, TrackingReport};
use super::policy::{NoiseSpec, Policy};
use crate::error::{Error, Result};
use crate::hashing::config_hash;
use crate::motiondata::MotionClip;
use crate::neural::{load_json, save_json};
use crate::simulator::RobotModel;
use crate::student::{train_student, LatentMode, StudentArch, StudentConfig, StudentPolicy};
use crate::teacher::{train_teacher, ObservationKind, TeacherConfig, TeacherPolicy};

/// One row of the grid, described as a change to the base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cell", content = "value", rename_all = "snake_case")]
pub enum Cell {
    /// The base configuration.
    Base,
    /// Distillation into a plain MLP (no latent).
    DaggerMlp,
    /// PPO directly on deployable observations, no teacher.
    Scratch,
    ExplicitRef(bool),
    KlResidual(bool),
    KlCoef(f64),
    Window(usize),
    Latent(usize),
    LatentMode(LatentMode),
}

impl Cell {
    pub fn label(&self) -> String {
        match *self {
            Cell::Base => "Ours".into(),
            Cell::DaggerMlp => "DAgger without CVAE".into(),
            Cell::Scratch => "Train from Scratch".into(),
            Cell::ExplicitRef(true) => "Actor with Explicit Reference".into(),
            Cell::ExplicitRef(false) => "Actor without Explicit Reference".into(),
            Cell::KlResidual(false) => "KL without Residual".into(),
            Cell::KlResidual(true) => "KL with Residual".into(),
            Cell::KlCoef(b) => format!("KL Coef = {b}"),
            Cell::Window(w) => format!("Window Size = {w}"),
            Cell::Latent(l) => format!("Latent Dimension = {l}"),
            Cell::LatentMode(LatentMode::Stochastic) => "Decoder with Stochastic Latent".into(),
            Cell::LatentMode(LatentMode::Deterministic) => "Decoder with Deterministic Latent".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub id: String,
    pub title: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub base: StudentConfig,
    /// Budget for the train-from-scratch baseline.
    pub scratch: TeacherConfig,
    pub sections: Vec<Section>,
    /// Training seeds per cell.
    pub train_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    pub eval: EvalConfig,
}

impl AblationGrid {
    /// The full seven-section layout.
    pub fn standard_sections() -> Vec<Section> {
        let s = |id: &str, title: &str, cells: Vec<Cell>| Section { id: id.into(), title: title.into(), cells };
        vec![
            s("a", "Compare with Baselines", vec![Cell::DaggerMlp, Cell::Scratch, Cell::Base]),
            s("b", "Ablation with Architecture Design", vec![Cell::ExplicitRef(true), Cell::ExplicitRef(false)]),
            s("c", "Ablation with KL Residual", vec![Cell::KlResidual(false), Cell::KlResidual(true)]),
            s("d", "Ablation with KL Coefficient", [1.0, 0.1, 0.01, 0.001].into_iter().map(Cell::KlCoef).collect()),
            s("e", "Ablation with Future Window Size", [1, 5, 10, 20].into_iter().map(Cell::Window).collect()),
            s("f", "Ablation with Latent Dimension", [32, 64, 128, 256].into_iter().map(Cell::Latent).collect()),
            s(
                "g",
                "Analysis of CVAE diversity",
                vec![Cell::LatentMode(LatentMode::Stochastic), Cell::LatentMode(LatentMode::Deterministic)],
            ),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_seeds.is_empty() || self.eval_seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one training and one evaluation seed".into()));
        }
        if self.sections.iter().any(|s| s.cells.is_empty()) {
            return Err(Error::Config("every ablation section needs at least one cell".into()));
        }
        self.base.validate()?;
        self.scratch.validate()
    }
}

/// What to train for a cell, with deployment-only settings factored out so
/// cells differing only in how they deploy share one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum Recipe {
    Student { config: StudentConfig },
    Scratch { config: TeacherConfig },
}

impl Recipe {
    pub fn for_cell(grid: &AblationGrid, cell: Cell, seed: u64) -> (Recipe, LatentMode) {
        let mut c = grid.base.clone();
        c.seed = seed;
        let mut mode = c.net.latent_mode;
        match cell {
            Cell::Base => {}
            Cell::DaggerMlp => c.net.arch = StudentArch::Mlp,
            Cell::Scratch => {
                let mut t = grid.scratch.clone();
                t.seed = seed;
                t.observation = ObservationKind::Deployable(grid.base.obs);
                return (Recipe::Scratch { config: t }, mode);
            }
            Cell::ExplicitRef(on) => c.net.explicit_ref = on,
            Cell::KlResidual(on) => c.net.residual = on,
            Cell::KlCoef(b) => c.hyper.beta = b,
            Cell::Window(w) => c.obs.window = w,
            Cell::Latent(l) => c.net.latent_dim = l,
            Cell::LatentMode(m) => mode = m,
        }
        c.net.latent_mode = LatentMode::Deterministic;
        (Recipe::Student { config: c }, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedPolicy {
    Student(StudentPolicy),
    Scratch(TeacherPolicy),
}

impl TrainedPolicy {
    fn as_policy(&self) -> &dyn Policy {
        match self {
            TrainedPolicy::Student(s) => s,
            TrainedPolicy::Scratch(t) => t,
        }
    }
}

/// Trains each distinct recipe once, reusing in-memory and on-disk results.
pub struct CellTrainer<'a> {
    pub model: &'a RobotModel,
    pub clips: &'a [MotionClip],
    pub teacher: &'a TeacherPolicy,
    pub cache_dir: Option<PathBuf>,
    memo: BTreeMap<String, TrainedPolicy>,
    /// Number of recipes actually trained (cache misses).
    pub trained: usize,
}

impl<'a> CellTrainer<'a> {
    pub fn new(model: &'a RobotModel, clips: &'a [MotionClip], teacher: &'a TeacherPolicy, cache_dir: Option<PathBuf>) -> Self {
        CellTrainer { model, clips, teacher, cache_dir, memo: BTreeMap::new(), trained: 0 }
    }

    /// Cache key: recipe, training clips and teacher.
    pub fn key(&self, recipe: &Recipe) -> String {
        config_hash(&(recipe, self.clips, self.teacher))
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("cell-{key}.json")))
    }

    pub fn get(&mut self, recipe: &Recipe) -> Result<TrainedPolicy> {
        let key = self.key(recipe);
        if let Some(p) = self.memo.get(&key) {
            return Ok(p.clone());
        }
        if let Some(path) = self.cache_path(&key).filter(|p| p.exists()) {
            let p: TrainedPolicy = load_json(&path)?;
            self.memo.insert(key, p.clone());
            return Ok(p);
        }
        let trained = match recipe {
            Recipe::Student { config } => {
                let run = train_student(self.model, self.clips, self.teacher, config)?;
                if let Some(d) = run.diverged {
                    return Err(Error::TrainingDiverged { iteration: run.log.len(), detail: d });
                }
                TrainedPolicy::Student(run.student)
            }
            Recipe::Scratch { config } => {
                let run = train_teacher(self.model, self.clips, config)?;
                if let Some(d) = run.diverged {
                    return Err(Error::TrainingDiverged { iteration: run.log.len(), detail: d });
                }
                TrainedPolicy::Scratch(run.policy)
            }
        };
        self.trained += 1;
        if let Some(path) = self.cache_path(&key) {
            save_json(&path, &trained)?;
        }
        self.memo.insert(key, trained.clone());
        Ok(trained)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub section: String,
    pub method: String,
    pub cell: Cell,
    pub sr: Option<f64>,
    pub all: Option<MetricMeans>,
    pub successful: Option<MetricMeans>,
    /// Set when training or evaluating the cell failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub sections: Vec<Section>,
    pub rows: Vec<AblationRow>,
    /// Per-episode rows of every evaluated cell, keyed like `rows`.
    pub reports: Vec<Option<TrackingReport>>,
}

fn evaluate_cell(
    trainer: &mut CellTrainer<'_>,
    grid: &AblationGrid,
    cell: Cell,
    eval_clips: &[MotionClip],
) -> Result<TrackingReport> {
    let mut rows: Vec<ClipRow> = Vec::new();
    let mut id = String::new();
    for &seed in &grid.train_seeds {
        let (recipe, mode) = Recipe::for_cell(grid, cell, seed);
        let mut trained = trainer.get(&recipe)?;
        if let TrainedPolicy::Student(s) = &mut trained {
            s.net.latent_mode = mode;
        }
        let report = evaluate_suite(trained.as_policy(), trainer.model, eval_clips, &NoiseSpec::none(), &grid.eval_seeds, &grid.eval)?;
        id = report.policy.clone();
        rows.extend(report.rows);
    }
    TrackingReport::from_rows(id, 0, grid.eval_seeds.clone(), rows)
}

/// Run every cell of `grid`. A failing cell is recorded and the grid
/// continues.
pub fn run_ablation(
    grid: &AblationGrid,
    trainer: &mut CellTrainer<'_>,
    eval_clips: &[MotionClip],
) -> Result<AblationTable> {
    grid.validate()?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for section in &grid.sections {
        for &cell in &section.cells {
            let mut row = AblationRow {
                section: section.id.clone(),
                method: cell.label(),
                cell,
                sr: None,
                all: None,
                successful: None,
                error: None,
            };
            match evaluate_cell(trainer, grid, cell, eval_clips) {
                Ok(report) => {
                    row.sr = Some(report.aggregate.sr);
                    row.all = Some(report.aggregate.all);
                    row.successful = report.aggregate.successful;
                    reports.push(Some(report));
                }
                Err(e) => {
                    row.error = Some(e.to_string());
                    reports.push(None);
                }
            }
            rows.push(row);
        }
    }
    Ok(AblationTable { sections: grid.sections.clone(), rows, reports })
}

pub const TABLE_COLUMNS: [&str; 8] =
    ["Method", "SR", "MPKPE", "Vel-Dist", "Acc-Dist", "MPKPE (successful)", "Vel-Dist (successful)", "Acc-Dist (successful)"];

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", x * scale))
}

impl AblationTable {
    /// Text table: one header row per section, one row per cell. MPKPE is
    /// shown in millimetres; the data files keep metres.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", TABLE_COLUMNS.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(TABLE_COLUMNS.len()));
        for s in &self.sections {
            let _ = writeln!(out, "| ({}) {} |{}", s.id, s.title, " |".repeat(TABLE_COLUMNS.len() - 1));
            for r in self.rows.iter().filter(|r| r.section == s.id) {
                let a = r.all;
                let ok = r.successful;
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} | {} |",
                    r.method,
                    fmt_opt(r.sr, 1.0),
                    fmt_opt(a.map(|m| m.mpkpe), 1000.0),
                    fmt_opt(a.map(|m| m.vel_dist), 1.0),
                    fmt_opt(a.map(|m| m.acc_dist), 1.0),
                    fmt_opt(ok.map(|m| m.mpkpe), 1000.0),
                    fmt_opt(ok.map(|m| m.vel_dist), 1.0),
                    fmt_opt(ok.map(|m| m.acc_dist), 1.0),
                );
            }
        }
        out
    }

    /// Per-episode rows of every cell as CSV (`section`, `method` first).
    pub fn write_cell_rows_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "section", "method", "policy", "clip", "seed", "noise_level", "success", "outcome", "steps", "mpkpe",
            "vel_dist", "acc_dist",
        ])
        .map_err(|e| Error::parse("ablation rows", e))?;
        for (row, rep) in self.rows.iter().zip(&self.reports) {
            for r in rep.iter().flat_map(|r| &r.rows) {
                wr.write_record([
                    row.section.clone(),
                    row.method.clone(),
                    r.policy.clone(),
                    r.clip.clone(),
                    r.seed.to_string(),
                    r.noise_level.to_string(),
                    r.success.to_string(),
                    r.outcome.as_str().to_string(),
                    r.steps.to_string(),
                    r.mpkpe.to_string(),
                    r.vel_dist.to_string(),
                    r.acc_dist.to_string(),
                ])
                .map_err(|e| Error::parse("ablation rows", e))?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }
}
