use serde::{Deserialize, Serialize};

use super::{
    encode_targets, episode_loss, mean_loss, Adam, BatchMetrics, EpisodeEval, MetaLearner, Score,
};
use crate::error::{Error, Result};
use crate::models::{self, Activation, MlpSpec, ParamSet};
use crate::tasks::Episode;
use crate::tensor::{grad, no_record, Tape, Tensor};

const ENCODER: &str = "encoder.";
const DECODER: &str = "decoder.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnpConfig {
    /// Over `concat(x, y)` rows; output width is the latent size.
    pub encoder: MlpSpec,
    pub latent_dim: usize,
    /// Over `concat(z, x_q)` rows.
    pub decoder: MlpSpec,
    pub outer_lr: f64,
}

impl CnpConfig {
    /// Encoder `[x_dim + y_dim, hidden.., latent]`, decoder
    /// `[latent + x_dim, hidden.., out_dim]`. `y_dim` is 1 for regression and
    /// `n_way` for classification (one-hot targets).
    #[allow(clippy::too_many_arguments)]
    pub fn mlp(
        x_dim: usize,
        y_dim: usize,
        out_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
        outer_lr: f64,
        seed: u64,
    ) -> Result<Self> {
        let enc = [&[x_dim + y_dim][..], hidden, &[latent_dim]].concat();
        let dec = [&[latent_dim + x_dim][..], hidden, &[out_dim]].concat();
        let cfg = CnpConfig {
            encoder: MlpSpec::new(enc, activation, seed)?,
            latent_dim,
            decoder: MlpSpec::new(dec, activation, seed.wrapping_add(1))?,
            outer_lr,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.output_dim() != self.latent_dim {
            return Err(Error::InvalidSpec(format!(
                "encoder outputs {} values but latent_dim is {}",
                self.encoder.output_dim(),
                self.latent_dim
            )));
        }
        if self.decoder.input_dim() <= self.latent_dim {
            return Err(Error::InvalidSpec(format!(
                "decoder input {} leaves no room for x after a {}-wide latent",
                self.decoder.input_dim(),
                self.latent_dim
            )));
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return Err(Error::Config(format!(
                "outer_lr must be > 0, got {}",
                self.outer_lr
            )));
        }
        Ok(())
    }

    pub fn x_dim(&self) -> usize {
        self.decoder.input_dim() - self.latent_dim
    }

    pub fn init(&self) -> Result<ParamSet> {
        ParamSet::join(
            &models::init(&self.encoder)?,
            ENCODER,
            &models::init(&self.decoder)?,
            DECODER,
        )
    }
}

/// Query predictions: `decoder(concat(z, x_q))` with `z` the mean encoding
/// of the support pairs. Returns `(z, predictions)`.
pub fn cnp_forward(cfg: &CnpConfig, params: &ParamSet, ep: &Episode) -> Result<(Tensor, Tensor)> {
    if ep.x_s.rows() == 0 {
        return Err(Error::invalid("cnp_forward", "support set is empty"));
    }
    let x_dim = cfg.x_dim();
    if ep.input_dim() != x_dim || ep.x_q.cols() != x_dim {
        return Err(Error::ShapeMismatch {
            op: "cnp_forward",
            lhs: ep.x_s.shape().to_vec(),
            rhs: vec![ep.x_s.rows(), x_dim],
        });
    }
    let y = encode_targets(&ep.y_s, ep.n_way())?;
    if x_dim + y.cols() != cfg.encoder.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "cnp_forward",
            lhs: vec![ep.x_s.rows(), x_dim + y.cols()],
            rhs: vec![ep.x_s.rows(), cfg.encoder.input_dim()],
        });
    }
    let n_enc = 2 * cfg.encoder.num_layers();
    let (enc, dec) = params.split_at(n_enc);
    let pairs = Tensor::concat(&[&ep.x_s, &y], 1)?;
    let codes = models::forward(&enc, &cfg.encoder, &pairs)?;
    let z = codes.mean_to(&[1, cfg.latent_dim])?;
    let zq = z.broadcast_to(&[ep.x_q.rows(), cfg.latent_dim])?;
    let inputs = Tensor::concat(&[&zq, &ep.x_q], 1)?;
    let pred = models::forward(&dec, &cfg.decoder, &inputs)?;
    Ok((z, pred))
}

/// Conditional neural process trained end to end on query loss.
#[derive(Debug, Clone)]
pub struct Cnp {
    pub cfg: CnpConfig,
    /// Length of the (flat) evaluation curve, minus one.
    pub eval_steps: usize,
    params: ParamSet,
    adam: Adam,
}

impl Cnp {
    pub fn new(cfg: CnpConfig, eval_steps: usize) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.init()?;
        let adam = Adam::new(cfg.outer_lr);
        Ok(Cnp {
            cfg,
            eval_steps,
            params,
            adam,
        })
    }
}

impl MetaLearner for Cnp {
    fn name(&self) -> &'static str {
        "cnp"
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn load_params(&mut self, params: ParamSet) -> Result<()> {
        self.params = self.params.with_tensors(params.tensors().to_vec())?;
        Ok(())
    }

    fn train_step(&mut self, episodes: &[Episode]) -> Result<BatchMetrics> {
        let tape = Tape::new();
        let theta = self.params.watch(&tape);
        let mut losses = Vec::new();
        let mut scores = Vec::new();
        for ep in episodes {
            let (_, pred) = cnp_forward(&self.cfg, &theta, ep)?;
            let loss = episode_loss(&pred, &ep.y_q)?;
            if !loss.item().is_finite() {
                return Err(Error::NonFiniteLoss { step: 0 });
            }
            scores.push(Score::of(&pred, &ep.y_q)?);
            losses.push(loss);
        }
        let g = grad(&mean_loss(losses)?, theta.tensors(), false)?;
        drop(tape);
        self.params = self.adam.step(&self.params, &g.values, 0.0)?;
        let s = Score::mean(&scores);
        Ok(BatchMetrics { pre: s, post: s })
    }

    fn evaluate(&self, ep: &Episode) -> Result<EpisodeEval> {
        let _pause = no_record();
        let (_, pred) = cnp_forward(&self.cfg, &self.params, ep)?;
        let s = Score::of(&pred, &ep.y_q)?;
        Ok(EpisodeEval {
            curve: vec![s; self.eval_steps + 1],
        })
    }
}
