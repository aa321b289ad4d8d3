use std::path::Path;

use mtrack_cli::error::{EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_DIVERGENCE, EXIT_OK, EXIT_SCHEMA};
use mtrack_cli::{emit_plot_data, main_with_args, run_pipeline, CliError, Manifest, PlotKind, RunConfig, Stage, TidyTable};
use mtrack_core::evaluate::AblationTable;

const TINY: &str = r#"
seed = 11
output_dir = "out"

[[generate]]
kind = "stand"
duration_s = 1.0

[[generate]]
kind = "squat"
duration_s = 1.0

[teacher]
iterations = 2
n_envs = 2
horizon = 8
eval_every = 0
[teacher.net]
hidden = [16]

[student]
iterations = 2
n_envs = 2
horizon = 8
buffer_size = 64
eval_every = 0
[student.obs]
history = 3
window = 2
[student.net]
latent_dim = 4
prior_hidden = [16]
encoder_hidden = [16]
decoder_hidden = [16]

[eval]
seeds = [0, 1]
noise_levels = [0, 2]

[ablation]
train_seeds = [0]
eval_seeds = [0]
[ablation.scratch]
iterations = 2
n_envs = 2
horizon = 8
eval_every = 0
[ablation.scratch.net]
hidden = [16]

[[ablation.sections]]
id = "d"
title = "KL"
cells = [{ cell = "kl_coef", value = 1.0 }, { cell = "kl_coef", value = 0.1 }]

[[ablation.sections]]
id = "a"
title = "Baselines"
cells = [{ cell = "dagger_mlp" }, { cell = "scratch" }, { cell = "base" }]
"#;

fn config(dir: &Path, extra: &str) -> RunConfig {
    RunConfig::from_toml(&format!("{TINY}\n{extra}"), dir).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, format!("{extra}\n{TINY}")).unwrap();
    p
}

#[test]
fn no_stages_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(&config(dir.path(), ""), &[]).unwrap();
    assert!(m.entries.is_empty());
    assert_eq!(m.training_runs, 0);
    assert_eq!(Manifest::load(&dir.path().join("out/manifest.json")).unwrap(), m);
}

#[test]
fn distill_without_teacher_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    run_pipeline(&cfg, &[Stage::Generate, Stage::Curate]).unwrap();
    let e = run_pipeline(&cfg, &[Stage::Distill]).unwrap_err();
    assert!(matches!(e, CliError::Dependency { ref artifact, .. } if artifact.contains("teacher")), "{e}");
    assert_eq!(e.exit_code(), EXIT_DEPENDENCY);

    let path = write_config(dir.path(), "");
    let code = main_with_args(["mtrack", "run", "--config", path.to_str().unwrap(), "--stages", "distill"]);
    assert_eq!(code, EXIT_DEPENDENCY);
}

#[test]
fn full_pipeline_is_deterministic_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "");
    cfg.cache_dir = Some(dir.path().join("cache"));
    let first = run_pipeline(&cfg, &Stage::ALL).unwrap();
    // teacher, student, 4 distinct ablation recipes (β = 0.1 is the base).
    assert_eq!(first.training_runs, 6);
    let stages: std::collections::BTreeSet<Stage> = first.entries.iter().map(|e| e.stage).collect();
    assert!(stages.contains(&Stage::Robustness) && stages.contains(&Stage::Ablate));
    assert!(first.entries.iter().all(|e| e.config_hash.len() == 16));

    let second = run_pipeline(&cfg, &Stage::ALL).unwrap();
    assert_eq!(second.training_runs, 0);
    assert_eq!(second.entries, first.entries);

    // A fresh output directory without cache reproduces every byte.
    let mut fresh = cfg.clone();
    fresh.cache_dir = None;
    fresh.output_dir = dir.path().join("out2");
    let third = run_pipeline(&fresh, &Stage::ALL).unwrap();
    assert_eq!(third.entries, first.entries);
    assert_eq!(third.training_runs, 6);

    // Plot data from the ablation table: one row per cell per metric.
    let table_path = cfg.output_dir.join("ablation/table.json");
    let table = AblationTable::load(&table_path).unwrap();
    let tidy = emit_plot_data(&[&table_path], PlotKind::AblationTable).unwrap();
    let per_cell: usize = table
        .rows
        .iter()
        .map(|r| r.sr.is_some() as usize + 3 * (r.all.is_some() as usize + r.successful.is_some() as usize))
        .sum();
    assert_eq!(tidy.rows.len(), per_cell);
    let csv = dir.path().join("ablation.csv");
    tidy.save(&csv).unwrap();
    let back = TidyTable::load(&csv).unwrap();
    assert_eq!(back, tidy);
    let r0 = &table.rows[0];
    let mpkpe = back.rows.iter().find(|r| r.keys == [r0.section.clone(), r0.method.clone(), "all".into()] && r.metric == "mpkpe");
    assert_eq!(mpkpe.unwrap().value, r0.all.unwrap().mpkpe);

    let log = cfg.output_dir.join("teacher/log.jsonl");
    let curve = emit_plot_data(&[&log], PlotKind::TrainingCurve).unwrap();
    assert!(curve.rows.iter().any(|r| r.metric == "mean_keypoint_error"));
    let rob = cfg.output_dir.join("robustness/table.json");
    let rt = emit_plot_data(&[&rob], PlotKind::RobustnessTable).unwrap();
    assert_eq!(rt.rows.len(), 2 * 2 * 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();

    // Seed is mandatory on stochastic commands.
    assert_eq!(main_with_args(["mtrack", "generate", "--kind", "walk", "--out", &s(d)]), EXIT_CONFIG);
    let bad = d.join("bad.toml");
    std::fs::write(&bad, "seed = \"x\"").unwrap();
    assert_eq!(main_with_args(["mtrack", "run", "--config", &s(&bad)]), EXIT_CONFIG);

    let clips = d.join("clips");
    assert_eq!(main_with_args(["mtrack", "generate", "--kind", "stand", "--seed", "1", "--duration", "1", "--out", &s(&clips)]), EXIT_OK);
    let clip = clips.join("stand.clip");
    assert!(clip.exists());
    let curated = d.join("curated");
    assert_eq!(main_with_args(["mtrack", "curate", "--in", &s(&clip), "--out", &s(&curated)]), EXIT_OK);
    assert!(curated.join("stand.clip").exists() && curated.join("rejections.jsonl").exists());

    let missing = d.join("nope.json");
    let code = main_with_args([
        "mtrack", "distill", "--clips", &s(&clip), "--seed", "0", "--teacher", &s(&missing), "--out", &s(&d.join("st")),
    ]);
    assert_eq!(code, EXIT_DEPENDENCY);

    let tcfg = d.join("teacher.toml");
    std::fs::write(&tcfg, "iterations = 3\nn_envs = 2\nhorizon = 8\neval_every = 0\n[ppo]\nlr = 1e300\n[net]\nhidden = [8]\n").unwrap();
    let code = main_with_args([
        "mtrack", "train-teacher", "--clips", &s(&clip), "--seed", "0", "--config", &s(&tcfg), "--out", &s(&d.join("t")),
    ]);
    assert_eq!(code, EXIT_DIVERGENCE);

    let bad_rob = d.join("rob.json");
    std::fs::write(&bad_rob, r#"{"rows":[{"level":0,"sr":1.0,"mpkpe":0.1}]}"#).unwrap();
    let code = main_with_args(["mtrack", "emit-plots", "--kind", "robustness-table", "--in", &s(&bad_rob), "--out", &s(&d.join("p.csv"))]);
    assert_eq!(code, EXIT_SCHEMA);

    let empty = d.join("empty.csv");
    assert_eq!(main_with_args(["mtrack", "emit-plots", "--kind", "ablation-table", "--out", &s(&empty)]), EXIT_OK);
    assert_eq!(std::fs::read_to_string(&empty).unwrap(), "section,method,subset,metric,value\n");
}

#[test]
fn binary_runs_and_reports_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_mtrack"))
        .args(["generate", "--kind", "wave", "--seed", "3", "--duration", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("wave.clip").exists());
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_mtrack"))
        .args(["run", "--config", "/definitely/missing.toml"])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(EXIT_CONFIG));
}
