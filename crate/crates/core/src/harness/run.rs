use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LearnerKind, TaskKind};
use super::metrics::{ensure_dir, write_csv, EpisodeRow, MetricsRow, Split};
use crate::augment::Augmentation;
use crate::error::{Error, Result};
use crate::learners::{
    BatchMetrics, Cnp, CnpConfig, EpisodeEval, JointBaseline, Maml, MetaLearner, ProtoNet, Score,
};
use crate::models::{MlpSpec, ParamSet};
use crate::tasks::{
    generate_synthetic_pool, load_image_pool, sample_classification_episode,
    sample_sinusoid_episode, ClassPool, Episode, SamplerMode, SinusoidFamily,
};

const TRAIN_STREAM: u64 = 0;
const VAL_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

/// Episode sources for one experiment.
#[derive(Debug, Clone)]
pub enum TaskData {
    Sinusoid(SinusoidFamily),
    /// Class-disjoint train / val / test pools.
    Classification {
        train: ClassPool,
        val: ClassPool,
        test: ClassPool,
    },
}

impl TaskData {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let c = &cfg.classification;
        let pool = match cfg.task {
            TaskKind::Sinusoid => {
                return Ok(TaskData::Sinusoid(SinusoidFamily::new(
                    cfg.sinusoid.family_seed,
                )))
            }
            TaskKind::SyntheticCls => generate_synthetic_pool(&c.synthetic())?,
            TaskKind::ImageDir => {
                let root = c
                    .image_dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing classification.image_dir".into()))?;
                load_image_pool(root)?
            }
        };
        let [a, b, d] = c.splits;
        if a + b + d > pool.len() {
            return Err(Error::Config(format!(
                "splits {:?} need {} classes, pool has {}",
                c.splits,
                a + b + d,
                pool.len()
            )));
        }
        Ok(TaskData::Classification {
            train: pool.subset(0..a)?,
            val: pool.subset(a..a + b)?,
            test: pool.subset(a + b..a + b + d)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskData::Sinusoid(_) => 1,
            TaskData::Classification { train, .. } => train.dim(),
        }
    }

    pub fn train_episode(&self, cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Episode> {
        match self {
            TaskData::Sinusoid(fam) => {
                sample_sinusoid_episode(fam, cfg.sinusoid.k, cfg.sinusoid.q, None, rng)?
                    .scale_inputs(cfg.sinusoid.input_scale)
            }
            TaskData::Classification { train, .. } => {
                let c = &cfg.classification;
                sample_classification_episode(train, cfg.mode, c.k, c.n_way, c.q, rng)
            }
        }
    }

    /// Validation and test episodes: novel sinusoids, or intershuffle
    /// episodes over the held-out classes.
    pub fn eval_episode(
        &self,
        cfg: &ExperimentConfig,
        split: Split,
        rng: &mut ChaCha8Rng,
    ) -> Result<Episode> {
        match self {
            TaskData::Sinusoid(fam) => fam
                .sample_novel_episode(cfg.sinusoid.k, cfg.sinusoid.q, rng)?
                .scale_inputs(cfg.sinusoid.input_scale),
            TaskData::Classification { train, val, test } => {
                let pool = match split {
                    Split::Train => train,
                    Split::Val => val,
                    Split::Test => test,
                };
                let c = &cfg.classification;
                sample_classification_episode(
                    pool,
                    SamplerMode::Intershuffle,
                    c.k,
                    c.n_way,
                    c.q,
                    rng,
                )
            }
        }
    }
}

/// Builds the configured learner with model init seeded by `seed`.
pub fn build_learner(
    cfg: &ExperimentConfig,
    data: &TaskData,
    seed: u64,
) -> Result<Box<dyn MetaLearner>> {
    let x_dim = data.input_dim();
    let classification = cfg.task.is_classification();
    let n_out = if classification {
        cfg.classification.n_way
    } else {
        1
    };
    let hidden = cfg.hidden();
    let sizes = |out: usize| [&[x_dim][..], &hidden, &[out]].concat();
    let eval_steps = cfg.eval_steps();
    Ok(match cfg.learner {
        LearnerKind::Maml | LearnerKind::Fomaml => Box::new(Maml::new(
            MlpSpec::new(sizes(n_out), cfg.model.activation, seed)?,
            cfg.maml_config(),
        )?),
        LearnerKind::Cnp => Box::new(Cnp::new(
            CnpConfig::mlp(
                x_dim,
                n_out,
                n_out,
                &hidden,
                cfg.cnp.width,
                cfg.model.activation,
                cfg.cnp.outer_lr,
                seed,
            )?,
            eval_steps,
        )?),
        LearnerKind::Protonet => Box::new(ProtoNet::new(
            MlpSpec::new(sizes(cfg.protonet.width), cfg.model.activation, seed)?,
            cfg.protonet.outer_lr,
            eval_steps,
        )?),
        LearnerKind::Joint => Box::new(JointBaseline::new(
            MlpSpec::new(sizes(n_out), cfg.model.activation, seed)?,
            cfg.joint.outer_lr,
            eval_steps,
        )?),
    })
}

/// The fixed validation or test episode set of a seed.
pub fn eval_set(
    cfg: &ExperimentConfig,
    data: &TaskData,
    split: Split,
    seed: u64,
) -> Result<Vec<Episode>> {
    let (stream, n) = match split {
        Split::Val => (VAL_STREAM, cfg.eval_episodes),
        Split::Test => (TEST_STREAM, cfg.test_episodes),
        Split::Train => {
            return Err(Error::invalid(
                "eval_set",
                "train episodes are drawn per step",
            ))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n)
        .map(|_| data.eval_episode(cfg, split, &mut rng))
        .collect()
}

/// Draws training episodes; each episode gets its own rng seeded from
/// `master`, so regimes that consume randomness differently still see the
/// same underlying draws.
pub struct TrainStream<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a TaskData,
    aug: Augmentation,
    master: ChaCha8Rng,
}

impl<'a> TrainStream<'a> {
    pub fn new(cfg: &'a ExperimentConfig, data: &'a TaskData, seed: u64) -> Result<Self> {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        master.set_stream(TRAIN_STREAM);
        Ok(TrainStream {
            cfg,
            data,
            aug: cfg.aug.build()?,
            master,
        })
    }

    pub fn next_episode(&mut self) -> Result<Episode> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master.next_u64());
        let ep = self.data.train_episode(self.cfg, &mut rng)?;
        if self.aug.is_identity() {
            return Ok(ep);
        }
        Ok(self.aug.apply(&ep, &mut rng)?.0)
    }

    pub fn next_batch(&mut self, n: usize) -> Result<Vec<Episode>> {
        (0..n).map(|_| self.next_episode()).collect()
    }
}

pub fn evaluate_all(learner: &dyn MetaLearner, episodes: &[Episode]) -> Result<Vec<EpisodeEval>> {
    episodes.iter().map(|e| learner.evaluate(e)).collect()
}

fn mean_metrics(evals: &[EpisodeEval]) -> BatchMetrics {
    let pre: Vec<Score> = evals.iter().map(EpisodeEval::pre).collect();
    let post: Vec<Score> = evals.iter().map(EpisodeEval::post).collect();
    BatchMetrics {
        pre: Score::mean(&pre),
        post: Score::mean(&post),
    }
}

fn finite(m: &BatchMetrics) -> bool {
    m.pre.loss.is_finite() && m.post.loss.is_finite()
}

/// Mean scores, or `None` if any loss is non-finite.
fn checked_eval(learner: &dyn MetaLearner, episodes: &[Episode]) -> Result<Option<BatchMetrics>> {
    match evaluate_all(learner, episodes) {
        Ok(evals) => Ok(Some(mean_metrics(&evals)).filter(finite)),
        Err(Error::NonFiniteLoss { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Higher accuracy wins, then lower loss; ties keep the earlier checkpoint.
fn better(candidate: Score, best: Score) -> bool {
    match (candidate.acc, best.acc) {
        (Some(a), Some(b)) if a != b => a > b,
        _ => candidate.loss < best.loss,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: SeedStatus,
    pub error: Option<String>,
    pub steps_completed: usize,
    pub best_step: usize,
    pub best_val: Score,
    pub test_pre: Option<Score>,
    pub test_post: Option<Score>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub summary: SeedSummary,
    pub metrics: Vec<MetricsRow>,
    pub test_curves: Vec<EpisodeRow>,
    pub best: ParamSet,
    pub last: ParamSet,
}

/// Trains and evaluates one seed. Non-finite losses end the seed early with
/// a failure row; any other error aborts.
pub fn run_seed(cfg: &ExperimentConfig, data: &TaskData, seed: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let wall = || {
        if cfg.record_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    };
    let mut learner = build_learner(cfg, data, seed)?;
    let val = eval_set(cfg, data, Split::Val, seed)?;
    let test = eval_set(cfg, data, Split::Test, seed)?;
    let mut stream = TrainStream::new(cfg, data, seed)?;
    let batch = cfg.meta_batch();

    let mut rows = Vec::new();
    let mut failure = None;
    let mut best = (
        Score {
            loss: f64::INFINITY,
            acc: None,
        },
        0usize,
        learner.params().clone(),
    );
    match checked_eval(learner.as_ref(), &val)? {
        Some(m) => {
            rows.push(MetricsRow::new(0, Split::Val, m, seed, wall()));
            best.0 = m.post;
        }
        None => {
            failure = Some((
                0,
                "non-finite validation loss at initialisation".to_string(),
            ))
        }
    }

    let mut step = 0;
    while failure.is_none() && step < cfg.total_steps {
        step += 1;
        let episodes = stream.next_batch(batch)?;
        match learner.train_step(&episodes) {
            Ok(m) if finite(&m) => rows.push(MetricsRow::new(step, Split::Train, m, seed, wall())),
            Ok(_) => failure = Some((step, format!("non-finite training loss at step {step}"))),
            Err(e @ Error::NonFiniteLoss { .. }) => {
                failure = Some((step, format!("step {step}: {e}")))
            }
            Err(e) => return Err(e),
        }
        if failure.is_none() && step % cfg.eval_every == 0 {
            let Some(m) = checked_eval(learner.as_ref(), &val)? else {
                failure = Some((step, format!("non-finite validation loss at step {step}")));
                break;
            };
            rows.push(MetricsRow::new(step, Split::Val, m, seed, wall()));
            if better(m.post, best.0) {
                best = (m.post, step, learner.params().clone());
            }
        }
    }

    let last = learner.params().clone();
    let (best_val, best_step, best_params) = best;
    let mut summary = SeedSummary {
        seed,
        status: SeedStatus::Ok,
        error: None,
        steps_completed: step,
        best_step,
        best_val,
        test_pre: None,
        test_post: None,
    };
    let mut test_curves = Vec::new();
    if let Some((at, msg)) = failure {
        rows.push(MetricsRow::failure(at, seed, wall()));
        summary.status = SeedStatus::Failed;
        summary.error = Some(msg);
        summary.steps_completed = at.saturating_sub(1);
    } else {
        learner.load_params(best_params.clone())?;
        match evaluate_all(learner.as_ref(), &test) {
            Ok(evals) => {
                for (i, e) in evals.iter().enumerate() {
                    for (j, s) in e.curve.iter().enumerate() {
                        test_curves.push(EpisodeRow {
                            seed,
                            episode: i,
                            eval_step: j,
                            loss: s.loss,
                            acc: s.acc,
                        });
                    }
                }
                let m = mean_metrics(&evals);
                rows.push(MetricsRow::new(best_step, Split::Test, m, seed, wall()));
                summary.test_pre = Some(m.pre);
                summary.test_post = Some(m.post);
            }
            Err(e @ Error::NonFiniteLoss { .. }) => {
                rows.push(MetricsRow::failure(best_step, seed, wall()));
                summary.status = SeedStatus::Failed;
                summary.error = Some(format!("test evaluation: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SeedRun {
        summary,
        metrics: rows,
        test_curves,
        best: best_params,
        last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(MeanStd {
            mean,
            std: var.sqrt(),
            n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub learner: LearnerKind,
    pub task: TaskKind,
    pub mode: SamplerMode,
    pub aug: String,
    pub total_steps: usize,
    pub eval_steps: usize,
    pub seeds: Vec<SeedSummary>,
    pub failed_seeds: usize,
    pub test_pre_loss: Option<MeanStd>,
    pub test_post_loss: Option<MeanStd>,
    pub test_pre_acc: Option<MeanStd>,
    pub test_post_acc: Option<MeanStd>,
}

impl RunSummary {
    fn new(cfg: &ExperimentConfig, seeds: Vec<SeedSummary>) -> Self {
        let ok: Vec<&SeedSummary> = seeds
            .iter()
            .filter(|s| s.status == SeedStatus::Ok)
            .collect();
        let collect = |f: &dyn Fn(&SeedSummary) -> Option<f64>| -> Option<MeanStd> {
            let v: Option<Vec<f64>> = ok.iter().map(|s| f(s)).collect();
            v.and_then(|v| MeanStd::of(&v))
        };
        RunSummary {
            name: cfg.name.clone(),
            learner: cfg.learner,
            task: cfg.task,
            mode: cfg.mode,
            aug: cfg.aug.kind.clone(),
            total_steps: cfg.total_steps,
            eval_steps: cfg.eval_steps(),
            failed_seeds: seeds.len() - ok.len(),
            test_pre_loss: collect(&|s| s.test_pre.map(|t| t.loss)),
            test_post_loss: collect(&|s| s.test_post.map(|t| t.loss)),
            test_pre_acc: collect(&|s| s.test_pre.and_then(|t| t.acc)),
            test_post_acc: collect(&|s| s.test_post.and_then(|t| t.acc)),
            seeds,
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(SUMMARY);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const METRICS: &str = "metrics.csv";
pub const TEST_EPISODES: &str = "test_episodes.csv";
pub const SUMMARY: &str = "summary.json";

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Runs every seed of `cfg` in its run directory.
///
/// Layout: `config.toml`, `metrics.csv`, `test_episodes.csv`,
/// `summary.json`, and per seed `seed_<n>/` holding that seed's CSVs plus
/// `best.ckpt` and `last.ckpt`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    run_experiment_in(cfg, &cfg.run_dir())
}

pub fn run_experiment_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = cfg.seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::Config(format!("seed {dup} listed twice")));
    }
    let data = TaskData::build(cfg)?;
    ensure_dir(dir)?;
    fs::write(dir.join(CONFIG_SNAPSHOT), cfg.to_toml()?)?;

    let mut all_rows = Vec::new();
    let mut all_curves = Vec::new();
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, &data, seed)?;
        let sd = seed_dir(dir, seed);
        ensure_dir(&sd)?;
        write_csv(&sd.join(METRICS), &run.metrics)?;
        write_csv(&sd.join(TEST_EPISODES), &run.test_curves)?;
        run.best.save(&sd.join("best.ckpt"))?;
        run.last.save(&sd.join("last.ckpt"))?;
        all_rows.extend(run.metrics);
        all_curves.extend(run.test_curves);
        summaries.push(run.summary);
    }
    write_csv(&dir.join(METRICS), &all_rows)?;
    write_csv(&dir.join(TEST_EPISODES), &all_curves)?;
    let summary = RunSummary::new(cfg, summaries);
    fs::write(
        dir.join(SUMMARY),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        summary,
    })
}
