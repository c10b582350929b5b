use std::fs;
use std::path::Path;

use metaaug::harness::{
    emit_plot_data, eval_set, read_csv, read_metrics, run_experiment_in, seed_dir, AdaptationPoint,
    ExperimentConfig, LearnerKind, RunSummary, SeedStatus, Split, TaskData, TaskKind, METRICS,
    SUMMARY, TEST_EPISODES,
};
use metaaug::learners::Score;
use metaaug::models::{self, ParamSet};
use metaaug::tasks::{SamplerMode, TaskMeta};

fn sinusoid(steps: usize, every: usize, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(LearnerKind::Maml, TaskKind::Sinusoid, seeds);
    cfg.total_steps = steps;
    cfg.eval_every = every;
    cfg.eval_episodes = 4;
    cfg.test_episodes = 6;
    cfg.model.hidden = Some(vec![16, 16]);
    let mut m = cfg.maml_config();
    m.meta_batch = 3;
    m.inner_steps_eval = 4;
    cfg.maml = Some(m);
    cfg
}

fn classification(learner: LearnerKind, mode: SamplerMode, steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(learner, TaskKind::SyntheticCls, vec![5]);
    cfg.mode = mode;
    cfg.total_steps = steps;
    cfg.eval_every = steps.max(1);
    cfg.eval_episodes = 3;
    cfg.test_episodes = 4;
    cfg.model.hidden = Some(vec![16]);
    cfg
}

#[test]
fn zero_steps_reports_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sinusoid(0, 5, vec![2]);
    let out = run_experiment_in(&cfg, dir.path()).unwrap();
    let seed = &out.summary.seeds[0];
    assert_eq!(seed.best_step, 0);
    assert_eq!(seed.steps_completed, 0);

    let data = TaskData::build(&cfg).unwrap();
    let init = ParamSet::load(&seed_dir(dir.path(), 2).join("best.ckpt")).unwrap();
    let spec = models::MlpSpec::new(vec![1, 16, 16, 1], cfg.model.activation, 2).unwrap();
    assert_eq!(init, models::init(&spec).unwrap());
    let test = eval_set(&cfg, &data, Split::Test, 2).unwrap();
    let scores: Vec<Score> = test
        .iter()
        .map(|e| Score::of(&models::forward(&init, &spec, &e.x_q).unwrap(), &e.y_q).unwrap())
        .collect();
    assert_eq!(seed.test_pre.unwrap(), Score::mean(&scores));

    let rows = read_metrics(&dir.path().join(METRICS)).unwrap();
    let splits: Vec<Split> = rows.iter().map(|r| r.split).collect();
    assert_eq!(splits, vec![Split::Val, Split::Test]);
}

#[test]
fn repeated_runs_write_identical_files() {
    let cfg = sinusoid(6, 3, vec![1, 4]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment_in(&cfg, a.path()).unwrap();
    run_experiment_in(&cfg, b.path()).unwrap();
    for file in [
        METRICS,
        TEST_EPISODES,
        SUMMARY,
        "config.toml",
        "seed_4/best.ckpt",
        "seed_4/last.ckpt",
    ] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sinusoid(4, 2, vec![0, 1]);
    let out = run_experiment_in(&cfg, dir.path()).unwrap();
    for seed in [0, 1] {
        let sd = seed_dir(dir.path(), seed);
        for f in [METRICS, TEST_EPISODES, "best.ckpt", "last.ckpt"] {
            assert!(sd.join(f).is_file(), "{}", sd.join(f).display());
        }
    }
    let snapshot = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(snapshot, cfg);
    let summary = RunSummary::load(dir.path()).unwrap();
    assert_eq!(summary, out.summary);
    let m = summary.test_post_loss.unwrap();
    let v: Vec<f64> = summary
        .seeds
        .iter()
        .map(|s| s.test_post.unwrap().loss)
        .collect();
    assert!((m.mean - (v[0] + v[1]) / 2.0).abs() < 1e-12);
    assert!((m.std - (v[0] - v[1]).abs() / 2f64.sqrt()).abs() < 1e-12);

    // One train row per step, validation at 0, 2 and 4, one test row.
    let rows = read_metrics(&dir.path().join(METRICS)).unwrap();
    let own: Vec<_> = rows.iter().filter(|r| r.seed == 1).collect();
    let train: Vec<usize> = own
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.step)
        .collect();
    let val: Vec<usize> = own
        .iter()
        .filter(|r| r.split == Split::Val)
        .map(|r| r.step)
        .collect();
    assert_eq!(train, vec![1, 2, 3, 4]);
    assert_eq!(val, vec![0, 2, 4]);
    assert_eq!(own.iter().filter(|r| r.split == Split::Test).count(), 1);
    assert!(own
        .iter()
        .all(|r| r.wall_ms == 0 && r.pre_update_acc.is_none()));
}

#[test]
fn plot_data_shapes_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sinusoid(4, 2, vec![3, 8]);
    run_experiment_in(&cfg, dir.path()).unwrap();
    let plots = emit_plot_data(dir.path()).unwrap();
    for seed in [3, 8] {
        let own: Vec<&AdaptationPoint> =
            plots.adaptation.iter().filter(|p| p.seed == seed).collect();
        assert_eq!(own.len(), cfg.eval_steps() + 1);
        assert_eq!(
            own.iter().map(|p| p.eval_step).collect::<Vec<_>>(),
            (0..=cfg.eval_steps()).collect::<Vec<_>>()
        );
        // Step 0 of the adaptation curve is the unadapted model.
        let data = TaskData::build(&cfg).unwrap();
        let best = ParamSet::load(&seed_dir(dir.path(), seed).join("best.ckpt")).unwrap();
        let spec = models::MlpSpec::new(vec![1, 16, 16, 1], cfg.model.activation, seed).unwrap();
        let test = eval_set(&cfg, &data, Split::Test, seed).unwrap();
        let plain: f64 = test
            .iter()
            .map(|e| {
                models::forward(&best, &spec, &e.x_q)
                    .unwrap()
                    .mse(e.y_q.values().unwrap())
                    .unwrap()
                    .item()
            })
            .sum::<f64>()
            / test.len() as f64;
        assert!(
            (own[0].loss - plain).abs() < 1e-12,
            "{} vs {plain}",
            own[0].loss
        );
    }
    assert_eq!(plots.learning.len(), 2 * 3);
    let reread: Vec<AdaptationPoint> = read_csv(&plots.adaptation_path).unwrap();
    assert_eq!(reread, plots.adaptation);
    let learning: Vec<metaaug::harness::LearningPoint> = read_csv(&plots.learning_path).unwrap();
    assert_eq!(learning, plots.learning);
}

#[test]
fn non_finite_loss_records_failure_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sinusoid(4, 2, vec![0, 1]);
    let mut m = cfg.maml_config();
    m.inner_lr = 1e200;
    cfg.maml = Some(m);
    let out = run_experiment_in(&cfg, dir.path()).unwrap();
    assert_eq!(out.summary.failed_seeds, 2);
    assert!(out.summary.test_post_loss.is_none());
    for s in &out.summary.seeds {
        assert_eq!(s.status, SeedStatus::Failed);
        assert!(
            s.error.as_deref().unwrap().contains("non-finite"),
            "{:?}",
            s.error
        );
    }
    let rows = read_metrics(&dir.path().join(METRICS)).unwrap();
    let failures: Vec<u64> = rows
        .iter()
        .filter(|r| r.is_failure())
        .map(|r| r.seed)
        .collect();
    assert_eq!(failures, vec![0, 1]);
}

#[test]
fn classification_splits_are_class_disjoint() {
    let cfg = classification(LearnerKind::Protonet, SamplerMode::Intershuffle, 1);
    let data = TaskData::build(&cfg).unwrap();
    let ids = |split| -> Vec<usize> {
        eval_set(&cfg, &data, split, 0)
            .unwrap()
            .iter()
            .flat_map(|e| match &e.meta {
                TaskMeta::Classes { class_ids } => class_ids.clone(),
                _ => unreachable!(),
            })
            .collect()
    };
    let [a, b, c] = cfg.classification.splits;
    assert!(ids(Split::Val).iter().all(|&i| (a..a + b).contains(&i)));
    assert!(ids(Split::Test)
        .iter()
        .all(|&i| (a + b..a + b + c).contains(&i)));
}

#[test]
fn every_learner_runs_on_classification() {
    for learner in [
        LearnerKind::Maml,
        LearnerKind::Fomaml,
        LearnerKind::Cnp,
        LearnerKind::Protonet,
        LearnerKind::Joint,
    ] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = classification(learner, SamplerMode::NonMutuallyExclusive, 2);
        let out = run_experiment_in(&cfg, dir.path()).unwrap();
        let acc = out.summary.test_post_acc.unwrap().mean;
        assert!((0.0..=1.0).contains(&acc), "{learner:?}: {acc}");
        let rows = read_metrics(&dir.path().join(METRICS)).unwrap();
        assert!(rows.iter().all(|r| r.post_update_acc.is_some()));
    }
}

#[test]
fn cnp_and_joint_run_on_sinusoid() {
    for learner in [LearnerKind::Cnp, LearnerKind::Joint] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sinusoid(2, 1, vec![0]);
        cfg.learner = learner;
        cfg.aug.kind = "additive_uniform".into();
        cfg.aug.alpha = Some(1.0);
        let out = run_experiment_in(&cfg, dir.path()).unwrap();
        assert!(out.summary.test_post_loss.unwrap().mean.is_finite());
    }
}

fn write_pgm(path: &Path, w: usize, h: usize, pixels: &[u8]) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).unwrap();
}

#[test]
fn image_directory_task() {
    let root = tempfile::tempdir().unwrap();
    for c in 0..6 {
        let class_dir = root.path().join(format!("char{c:02}"));
        fs::create_dir(&class_dir).unwrap();
        for i in 0..4u8 {
            let pixels: Vec<u8> = (0..16u8)
                .map(|p| p.wrapping_mul(c as u8 + 1).wrapping_add(i))
                .collect();
            write_pgm(&class_dir.join(format!("{i}.pgm")), 4, 4, &pixels);
        }
    }
    let mut cfg = classification(LearnerKind::Protonet, SamplerMode::Intershuffle, 2);
    cfg.task = TaskKind::ImageDir;
    cfg.classification.image_dir = Some(root.path().to_path_buf());
    cfg.classification.n_way = 2;
    cfg.classification.q = 1;
    cfg.classification.splits = [2, 2, 2];
    let out = tempfile::tempdir().unwrap();
    let res = run_experiment_in(&cfg, out.path()).unwrap();
    assert_eq!(res.summary.seeds[0].status, SeedStatus::Ok);

    cfg.classification.splits = [4, 2, 2];
    assert!(matches!(
        run_experiment_in(&cfg, out.path()),
        Err(metaaug::Error::Config(_))
    ));
}

#[test]
fn duplicate_seeds_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sinusoid(0, 1, vec![3, 3]);
    assert!(matches!(
        run_experiment_in(&cfg, dir.path()),
        Err(metaaug::Error::Config(_))
    ));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(cfg.name, path.file_stem().unwrap().to_str().unwrap());
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        n += 1;
    }
    assert_eq!(n, 8);
}
