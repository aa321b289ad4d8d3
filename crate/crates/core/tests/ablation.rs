use mtrack_core::evaluate::{
    evaluate_suite, run_ablation, AblationGrid, AblationTable, Cell, CellTrainer, EvalConfig, NoiseSpec, Section,
};
use mtrack_core::motiondata::{generate_clip, ClipKind, ClipParams, MotionClip};
use mtrack_core::neural::Activation;
use mtrack_core::rng::seeded;
use mtrack_core::simulator::RobotModel;
use mtrack_core::student::{train_student, CvaeNetConfig, DeployObsConfig, LatentMode, StudentConfig};
use mtrack_core::teacher::{TeacherConfig, TeacherNetConfig, TeacherPolicy};

fn setup() -> (RobotModel, Vec<MotionClip>, TeacherPolicy) {
    let m = RobotModel::planar_biped();
    let clips = vec![generate_clip(&m, ClipKind::Squat, &ClipParams::default(), 50.0, 1.0, &mut seeded(0)).unwrap()];
    let t = TeacherPolicy::for_robot(&m, &TeacherNetConfig { hidden: vec![16], ..Default::default() }, 100.0, 1).unwrap();
    (m, clips, t)
}

fn grid(sections: Vec<Section>) -> AblationGrid {
    AblationGrid {
        base: StudentConfig {
            iterations: 2,
            n_envs: 2,
            horizon: 8,
            obs: DeployObsConfig { history: 3, window: 2 },
            net: CvaeNetConfig {
                latent_dim: 4,
                prior_hidden: vec![16],
                encoder_hidden: vec![16],
                decoder_hidden: vec![16],
                activation: Activation::Elu,
                ..Default::default()
            },
            buffer_size: 64,
            eval_every: 0,
            ..Default::default()
        },
        scratch: TeacherConfig {
            iterations: 2,
            n_envs: 2,
            horizon: 8,
            net: TeacherNetConfig { hidden: vec![16], ..Default::default() },
            eval_every: 0,
            ..Default::default()
        },
        sections,
        train_seeds: vec![5],
        eval_seeds: vec![0],
        eval: EvalConfig::default(),
    }
}

#[test]
fn single_cell_grid_equals_direct_evaluation() {
    let (m, clips, teacher) = setup();
    let g = grid(vec![Section { id: "x".into(), title: "only".into(), cells: vec![Cell::Base] }]);
    let mut trainer = CellTrainer::new(&m, &clips, &teacher, None);
    let table = run_ablation(&g, &mut trainer, &clips).unwrap();

    let mut cfg = g.base.clone();
    cfg.seed = 5;
    cfg.net.latent_mode = LatentMode::Deterministic;
    let run = train_student(&m, &clips, &teacher, &cfg).unwrap();
    let mut student = run.student;
    student.net.latent_mode = g.base.net.latent_mode;
    let direct = evaluate_suite(&student, &m, &clips, &NoiseSpec::none(), &[0], &g.eval).unwrap();
    assert_eq!(table.rows[0].sr, Some(direct.aggregate.sr));
    assert_eq!(table.rows[0].all, Some(direct.aggregate.all));
    assert_eq!(table.reports[0].as_ref().unwrap().rows, direct.rows);
}

#[test]
fn standard_layout_rows_and_caching() {
    let (m, clips, teacher) = setup();
    let sections = AblationGrid::standard_sections();
    let labels: Vec<Vec<String>> = sections.iter().map(|s| s.cells.iter().map(|c| c.label()).collect()).collect();
    assert_eq!(sections.len(), 7);
    assert_eq!(labels[0], ["DAgger without CVAE", "Train from Scratch", "Ours"]);
    assert_eq!(labels[3].len(), 4);
    assert_eq!(labels[4], ["Window Size = 1", "Window Size = 5", "Window Size = 10", "Window Size = 20"]);

    // Two latent modes share one trained model.
    let g = grid(vec![
        Section { id: "d".into(), title: "KL".into(), cells: vec![Cell::KlCoef(1.0), Cell::KlCoef(0.1)] },
        Section {
            id: "g".into(),
            title: "modes".into(),
            cells: vec![Cell::LatentMode(LatentMode::Stochastic), Cell::LatentMode(LatentMode::Deterministic)],
        },
    ]);
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = CellTrainer::new(&m, &clips, &teacher, Some(dir.path().to_path_buf()));
    let table = run_ablation(&g, &mut trainer, &clips).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.error.is_none()));
    // KlCoef(0.1) is the base β, so it shares a recipe with both latent modes.
    assert_eq!(trainer.trained, 2);
    assert!(table.render().contains("KL Coef = 0.1"));

    // A fresh trainer over the same cache directory trains nothing.
    let mut again = CellTrainer::new(&m, &clips, &teacher, Some(dir.path().to_path_buf()));
    let t2 = run_ablation(&g, &mut again, &clips).unwrap();
    assert_eq!(again.trained, 0);
    assert_eq!(t2, table);

    let path = dir.path().join("table.json");
    table.save(&path).unwrap();
    assert_eq!(AblationTable::load(&path).unwrap(), table);
    let mut csv = Vec::new();
    table.write_cell_rows_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 4);
}

#[test]
fn failing_cell_is_recorded_and_grid_continues() {
    let (m, clips, teacher) = setup();
    let g = grid(vec![Section {
        id: "e".into(),
        title: "window".into(),
        cells: vec![Cell::Window(0), Cell::Window(2)],
    }]);
    let mut trainer = CellTrainer::new(&m, &clips, &teacher, None);
    let table = run_ablation(&g, &mut trainer, &clips).unwrap();
    assert!(table.rows[0].error.is_some());
    assert!(table.rows[0].sr.is_none());
    assert!(table.rows[1].error.is_none());
    assert!(table.render().contains("| Window Size = 0 | - |"));
}

#[test]
fn scratch_cell_trains_on_deployable_observations() {
    let (m, clips, teacher) = setup();
    let g = grid(vec![Section { id: "a".into(), title: "base".into(), cells: vec![Cell::Scratch] }]);
    let mut trainer = CellTrainer::new(&m, &clips, &teacher, None);
    let table = run_ablation(&g, &mut trainer, &clips).unwrap();
    assert!(table.rows[0].error.is_none(), "{:?}", table.rows[0].error);
    assert_eq!(table.reports[0].as_ref().unwrap().policy, "scratch");
}
