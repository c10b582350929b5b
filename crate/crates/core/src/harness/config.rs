use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::error::{Error, Result};
use crate::learners::MamlConfig;
use crate::models::Activation;
use crate::tasks::{SamplerMode, SyntheticPoolConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Maml,
    Fomaml,
    Cnp,
    Protonet,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sinusoid,
    SyntheticCls,
    ImageDir,
}

impl TaskKind {
    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::Sinusoid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinusoidBlock {
    pub k: usize,
    pub q: usize,
    /// Seed of the fixed per-interval sinusoids.
    pub family_seed: u64,
    /// Factor applied to x before it reaches a learner. The default maps
    /// the domain [-5, 5] onto [-1, 1].
    pub input_scale: f64,
}

impl Default for SinusoidBlock {
    fn default() -> Self {
        SinusoidBlock {
            k: 10,
            q: 10,
            family_seed: 0,
            input_scale: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationBlock {
    pub k: usize,
    pub n_way: usize,
    /// Query examples per class.
    pub q: usize,
    /// Consecutive train / val / test class counts.
    pub splits: [usize; 3],
    pub n_classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub examples_per_class: usize,
    pub pool_seed: u64,
    /// Root of a PGM class-directory tree, for `task = "image_dir"`.
    pub image_dir: Option<PathBuf>,
}

impl Default for ClassificationBlock {
    fn default() -> Self {
        ClassificationBlock {
            k: 1,
            n_way: 5,
            q: 5,
            splits: [64, 16, 20],
            n_classes: 100,
            dim: 16,
            spread: 0.35,
            examples_per_class: 60,
            pool_seed: 0,
            image_dir: None,
        }
    }
}

impl ClassificationBlock {
    pub fn synthetic(&self) -> SyntheticPoolConfig {
        SyntheticPoolConfig {
            n_classes: self.n_classes,
            dim: self.dim,
            spread: self.spread,
            examples_per_class: self.examples_per_class,
            seed: self.pool_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    /// Hidden widths; `[40, 40]` for sinusoid and `[64, 64]` for
    /// classification when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock {
            hidden: None,
            activation: Activation::Relu,
        }
    }
}

/// Settings shared by the learners trained by plain Adam on query loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectBlock {
    pub outer_lr: f64,
    /// Episodes per step; the task default when absent.
    pub meta_batch: Option<usize>,
    /// CNP latent width, or ProtoNet embedding width.
    pub width: usize,
}

impl Default for DirectBlock {
    fn default() -> Self {
        DirectBlock {
            outer_lr: 1e-3,
            meta_batch: None,
            width: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub learner: LearnerKind,
    pub task: TaskKind,
    /// Training sampler for classification; validation and test always
    /// use intershuffle.
    #[serde(default = "default_mode")]
    pub mode: SamplerMode,
    /// Applied to training episodes only.
    #[serde(default)]
    pub aug: AugmentationConfig,
    pub seeds: Vec<u64>,
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_test_episodes")]
    pub test_episodes: usize,
    /// Run directory; `runs/<name>` when absent. Relative paths resolve
    /// against the working directory.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Fill `wall_ms`; off by default so repeated runs write identical files.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub sinusoid: SinusoidBlock,
    #[serde(default)]
    pub classification: ClassificationBlock,
    #[serde(default)]
    pub model: ModelBlock,
    /// Task default (sinusoid or classification) when absent.
    #[serde(default)]
    pub maml: Option<MamlConfig>,
    #[serde(default)]
    pub cnp: DirectBlock,
    #[serde(default)]
    pub protonet: DirectBlock,
    #[serde(default)]
    pub joint: DirectBlock,
}

fn default_name() -> String {
    "run".into()
}
fn default_mode() -> SamplerMode {
    SamplerMode::Intershuffle
}
fn default_total_steps() -> usize {
    20_000
}
fn default_eval_every() -> usize {
    500
}
fn default_eval_episodes() -> usize {
    25
}
fn default_test_episodes() -> usize {
    100
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn new(learner: LearnerKind, task: TaskKind, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            name: default_name(),
            learner,
            task,
            mode: default_mode(),
            aug: AugmentationConfig::default(),
            seeds,
            total_steps: default_total_steps(),
            eval_every: default_eval_every(),
            eval_episodes: default_eval_episodes(),
            test_episodes: default_test_episodes(),
            out_dir: None,
            record_wall_time: false,
            sinusoid: SinusoidBlock::default(),
            classification: ClassificationBlock::default(),
            model: ModelBlock::default(),
            maml: None,
            cnp: DirectBlock::default(),
            protonet: DirectBlock::default(),
            joint: DirectBlock::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(&self.name))
    }

    /// Hidden layer widths, or the task default.
    pub fn hidden(&self) -> Vec<usize> {
        match &self.model.hidden {
            Some(h) => h.clone(),
            None if self.task.is_classification() => vec![64, 64],
            None => vec![40, 40],
        }
    }

    /// The MAML block, or the task default.
    pub fn maml_config(&self) -> MamlConfig {
        let mut m = self.maml.clone().unwrap_or_else(|| {
            if self.task.is_classification() {
                MamlConfig::classification()
            } else {
                MamlConfig::sinusoid()
            }
        });
        if self.learner == LearnerKind::Fomaml {
            m.first_order = true;
        }
        m
    }

    /// Episodes per training step for the configured learner.
    pub fn meta_batch(&self) -> usize {
        let direct = match self.learner {
            LearnerKind::Maml | LearnerKind::Fomaml => return self.maml_config().meta_batch,
            LearnerKind::Cnp => &self.cnp,
            LearnerKind::Protonet => &self.protonet,
            LearnerKind::Joint => &self.joint,
        };
        direct.meta_batch.unwrap_or(self.maml_config().meta_batch)
    }

    /// Number of adaptation steps in evaluation curves.
    pub fn eval_steps(&self) -> usize {
        self.maml_config().inner_steps_eval
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.total_steps % self.eval_every != 0 {
            return bad(format!(
                "eval_every ({}) must divide total_steps ({})",
                self.eval_every, self.total_steps
            ));
        }
        if self.eval_episodes == 0 || self.test_episodes == 0 {
            return bad("eval_episodes and test_episodes must be >= 1".into());
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!(
                "name {:?} is not a plain directory name",
                self.name
            ));
        }
        self.maml_config().validate()?;
        if self.meta_batch() == 0 {
            return bad("meta_batch must be >= 1".into());
        }
        for (key, b) in [
            ("cnp", &self.cnp),
            ("protonet", &self.protonet),
            ("joint", &self.joint),
        ] {
            if !(b.outer_lr > 0.0 && b.outer_lr.is_finite()) {
                return bad(format!("{key}.outer_lr must be > 0"));
            }
            if b.width == 0 {
                return bad(format!("{key}.width must be >= 1"));
            }
        }
        if self.hidden().contains(&0) {
            return bad("model.hidden widths must be >= 1".into());
        }
        self.aug.build()?;
        match self.task {
            TaskKind::Sinusoid => {
                if self.learner == LearnerKind::Protonet {
                    return bad("protonet needs a classification task".into());
                }
                if self.sinusoid.k == 0 || self.sinusoid.q == 0 {
                    return bad("sinusoid.k and sinusoid.q must be >= 1".into());
                }
                let s = self.sinusoid.input_scale;
                if !(s > 0.0 && s.is_finite()) {
                    return bad(format!("sinusoid.input_scale must be > 0, got {s}"));
                }
            }
            TaskKind::SyntheticCls | TaskKind::ImageDir => {
                let c = &self.classification;
                if c.k == 0 || c.q == 0 || c.n_way < 2 {
                    return bad("classification needs k, q >= 1 and n_way >= 2".into());
                }
                if let Some(&s) = c.splits.iter().find(|&&s| s < c.n_way) {
                    return bad(format!(
                        "every class split needs at least n_way = {} classes, got {s}",
                        c.n_way
                    ));
                }
                if self.task == TaskKind::ImageDir && c.image_dir.is_none() {
                    return bad("task = image_dir needs classification.image_dir".into());
                }
                if self.task == TaskKind::SyntheticCls
                    && c.splits.iter().sum::<usize>() > c.n_classes
                {
                    return bad(format!(
                        "splits {:?} need more than n_classes = {}",
                        c.splits, c.n_classes
                    ));
                }
            }
        }
        Ok(())
    }
}
