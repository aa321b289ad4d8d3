//! Run configuration: one TOML file describing every pipeline stage.

use std::path::{Path, PathBuf};

use mtrack_core::evaluate::{AblationGrid, EvalConfig, Section};
use mtrack_core::motiondata::{ClipKind, ClipParams, CurationPolicy};
use mtrack_core::simulator::RobotModel;
use mtrack_core::student::StudentConfig;
use mtrack_core::teacher::TeacherConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub kind: ClipKind,
    /// File stem; defaults to the kind name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub params: ClipParams,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
}

fn default_fps() -> f64 {
    50.0
}

fn default_duration() -> f64 {
    4.0
}

impl GenerateSpec {
    pub fn stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    pub seeds: Vec<u64>,
    /// Noise levels for the robustness stage, strictly increasing.
    pub noise_levels: Vec<u8>,
    pub config: EvalConfig,
}

impl Default for EvalStage {
    fn default() -> Self {
        EvalStage { seeds: vec![0, 1, 2, 3, 4], noise_levels: vec![0, 1, 2], config: EvalConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationStage {
    /// Defaults to the seven standard sections.
    pub sections: Option<Vec<Section>>,
    pub train_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    /// Budget for the train-from-scratch row.
    pub scratch: TeacherConfig,
}

impl Default for AblationStage {
    fn default() -> Self {
        AblationStage { sections: None, train_seeds: vec![0], eval_seeds: vec![0], scratch: TeacherConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed of every stochastic stage. Required.
    pub seed: u64,
    /// Robot description; the built-in biped when absent.
    #[serde(default)]
    pub robot: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Reuse trained checkpoints keyed by config hash.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub generate: Vec<GenerateSpec>,
    /// Existing clip files added to the raw set.
    #[serde(default)]
    pub clip_files: Vec<PathBuf>,
    /// Source motions (JSON) to retarget onto the robot.
    #[serde(default)]
    pub retarget: Vec<PathBuf>,
    /// Source skeleton (JSON) for retargeting; the built-in human skeleton when absent.
    #[serde(default)]
    pub skeleton: Option<PathBuf>,
    #[serde(default)]
    pub curation: CurationPolicy,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub student: StudentConfig,
    #[serde(default)]
    pub eval: EvalStage,
    #[serde(default)]
    pub ablation: AblationStage,
}

impl RunConfig {
    /// Parse TOML. Relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.robot.iter_mut().for_each(fix);
        self.cache_dir.iter_mut().for_each(fix);
        self.skeleton.iter_mut().for_each(fix);
        self.clip_files.iter_mut().for_each(fix);
        self.retarget.iter_mut().for_each(fix);
    }

    /// Referenced input paths must exist; stage configs must be valid.
    pub fn validate(&self) -> CliResult<()> {
        let inputs = self.robot.iter().chain(&self.skeleton).chain(&self.clip_files).chain(&self.retarget);
        for p in inputs {
            if !p.exists() {
                return Err(CliError::Config(format!("referenced path does not exist: {}", p.display())));
            }
        }
        self.curation.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        if self.eval.seeds.is_empty() {
            return Err(CliError::Config("eval.seeds must not be empty".into()));
        }
        if self.eval.noise_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("eval.noise_levels must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn robot_model(&self) -> CliResult<RobotModel> {
        load_robot(self.robot.as_deref())
    }

    /// Teacher config with the run seed applied.
    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig { seed: self.seed, ..self.teacher.clone() }
    }

    pub fn student_config(&self) -> StudentConfig {
        StudentConfig { seed: self.seed, ..self.student.clone() }
    }

    pub fn ablation_grid(&self) -> AblationGrid {
        AblationGrid {
            base: self.student_config(),
            scratch: TeacherConfig { seed: self.seed, ..self.ablation.scratch.clone() },
            sections: self.ablation.sections.clone().unwrap_or_else(AblationGrid::standard_sections),
            train_seeds: self.ablation.train_seeds.clone(),
            eval_seeds: self.ablation.eval_seeds.clone(),
            eval: self.eval.config.clone(),
        }
    }
}

pub fn load_robot(path: Option<&Path>) -> CliResult<RobotModel> {
    match path {
        None => Ok(RobotModel::planar_biped()),
        Some(p) => {
            let m = RobotModel::load(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            m.validate()?;
            Ok(m)
        }
    }
}

/// Parse a stage config from an optional TOML file; defaults when absent.
pub fn load_stage<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let e = RunConfig::from_toml("output_dir = \"out\"", Path::new(".")).unwrap_err();
        assert!(matches!(e, CliError::Config(ref m) if m.contains("seed")), "{e}");
    }

    #[test]
    fn partial_stage_tables_fill_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 3\noutput_dir = \"out\"\n[teacher]\niterations = 7\n[teacher.ppo]\nepochs = 2\n[[generate]]\nkind = \"walk\"\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.teacher.iterations, 7);
        assert_eq!(cfg.teacher.ppo.epochs, 2);
        assert_eq!(cfg.teacher.ppo.clip_eps, TeacherConfig::default().ppo.clip_eps);
        assert_eq!(cfg.teacher_config().seed, 3);
        assert_eq!(cfg.output_dir, Path::new("/base/out"));
        assert_eq!(cfg.generate[0].fps, 50.0);
    }

    #[test]
    fn unknown_key_and_missing_path_are_config_errors() {
        let e = RunConfig::from_toml("seed = 1\noutput_dir = \"o\"\nbogus = 2", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = RunConfig::from_toml("seed = 1\noutput_dir = \"o\"\n[teacher.ppo]\nepoch = 2", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("epoch"), "{e}");
        let e = RunConfig::from_toml("seed = 1\noutput_dir = \"o\"\n[[generate]]\nkind = \"walk\"\nparams = { period = 2.0 }", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("period"), "{e}");
        let e = RunConfig::from_toml("seed = 1\noutput_dir = \"o\"\nrobot = \"/no/such.toml\"", Path::new(".")).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
    }
}
