//! Episodes and task distributions.
//!
//! Classification episodes come from a [`ClassPool`] under one of three
//! [`SamplerMode`]s; regression episodes come from a [`SinusoidFamily`].

mod classification;
mod pgm;
mod sinusoid;

use serde::{Deserialize, Serialize};

pub use classification::{
    generate_synthetic_pool, sample_classification_episode, ClassEntry, ClassPool, ExampleSplit,
    SyntheticPoolConfig,
};
pub use pgm::{load_image_pool, read_pgm};
pub use sinusoid::{sample_sinusoid_episode, SinusoidFamily, SinusoidTask};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[serde(alias = "nme")]
    NonMutuallyExclusive,
    Intrashuffle,
    Intershuffle,
}

impl SamplerMode {
    pub const ALL: [SamplerMode; 3] = [
        SamplerMode::NonMutuallyExclusive,
        SamplerMode::Intrashuffle,
        SamplerMode::Intershuffle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::NonMutuallyExclusive => "non_mutually_exclusive",
            SamplerMode::Intrashuffle => "intrashuffle",
            SamplerMode::Intershuffle => "intershuffle",
        }
    }
}

/// Support or query targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Class indices in `0..n_way`.
    Classes(Vec<usize>),
    /// Real targets, shape `[rows, 1]`.
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&Tensor> {
        match self {
            Targets::Values(v) => Some(v),
            Targets::Classes(_) => None,
        }
    }
}

/// What generated an episode.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskMeta {
    Sinusoid {
        interval: usize,
        amplitude: f64,
        phase: f64,
        /// Shift applied to every target, if the episode was augmented at sampling time.
        shift: Option<f64>,
    },
    Classes {
        /// `class_ids[label]` is the pool class shown under `label`.
        class_ids: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub x_s: Tensor,
    pub y_s: Targets,
    pub x_q: Tensor,
    pub y_q: Targets,
    pub meta: TaskMeta,
}

impl Episode {
    pub fn is_classification(&self) -> bool {
        matches!(self.y_s, Targets::Classes(_))
    }

    /// Number of labels for classification episodes.
    pub fn n_way(&self) -> Option<usize> {
        match &self.meta {
            TaskMeta::Classes { class_ids } => Some(class_ids.len()),
            TaskMeta::Sinusoid { .. } => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.x_s.cols()
    }

    /// Multiplies support and query inputs by `s`.
    pub fn scale_inputs(self, s: f64) -> crate::Result<Episode> {
        if s == 1.0 {
            return Ok(self);
        }
        Ok(Episode {
            x_s: self.x_s.scale(s)?,
            x_q: self.x_q.scale(s)?,
            ..self
        })
    }

    /// Reorders support rows by `order` (a permutation of `0..support_len`).
    pub fn permute_support(&self, order: &[usize]) -> crate::Result<Episode> {
        let x_s = self.x_s.gather(order)?;
        let y_s = match &self.y_s {
            Targets::Classes(c) => Targets::Classes(order.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(v.gather(order)?),
        };
        Ok(Episode {
            x_s,
            y_s,
            ..self.clone()
        })
    }
}
