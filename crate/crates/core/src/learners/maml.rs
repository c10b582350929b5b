use serde::{Deserialize, Serialize};

use super::{episode_loss, mean_loss, Adam, BatchMetrics, EpisodeEval, MetaLearner, Score};
use crate::error::{Error, Result};
use crate::models::{self, MlpSpec, ParamSet};
use crate::tasks::Episode;
use crate::tensor::{grad, no_record, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MamlConfig {
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub inner_steps_eval: usize,
    pub outer_lr: f64,
    pub meta_batch: usize,
    #[serde(default)]
    pub first_order: bool,
    #[serde(default)]
    pub weight_decay: f64,
}

impl MamlConfig {
    /// Sinusoid defaults: alpha 0.01, one inner step, ten at evaluation,
    /// meta-batch 25.
    pub fn sinusoid() -> Self {
        MamlConfig {
            inner_lr: 0.01,
            inner_steps: 1,
            inner_steps_eval: 10,
            outer_lr: 1e-3,
            meta_batch: 25,
            first_order: false,
            weight_decay: 0.0,
        }
    }

    /// Classification defaults: alpha 0.01, five inner steps, meta-batch 4.
    pub fn classification() -> Self {
        MamlConfig {
            inner_lr: 0.01,
            inner_steps: 5,
            inner_steps_eval: 5,
            outer_lr: 1e-3,
            meta_batch: 4,
            first_order: false,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return bad(format!("inner_lr must be > 0, got {}", self.inner_lr));
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return bad(format!("outer_lr must be > 0, got {}", self.outer_lr));
        }
        if self.inner_steps == 0 || self.inner_steps_eval == 0 {
            return bad("inner_steps and inner_steps_eval must be >= 1".into());
        }
        if self.meta_batch == 0 {
            return bad("meta_batch must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        Ok(())
    }
}

/// `steps` plain gradient steps `theta <- theta - alpha * grad support_loss(theta)`.
///
/// If `params` are tracked on an active tape the steps are recorded there;
/// with `create_graph` the gradients themselves are recorded too, so the
/// result stays differentiable through the inner gradients. Untracked
/// params are adapted on a scratch tape and come back untracked.
pub fn inner_adapt_with<F>(
    params: &ParamSet,
    alpha: f64,
    steps: usize,
    create_graph: bool,
    support_loss: F,
) -> Result<ParamSet>
where
    F: Fn(&ParamSet) -> Result<Tensor>,
{
    let tracked = params.tensors().iter().any(Tensor::is_tracked);
    let mut theta = params.clone();
    for step in 0..steps {
        let scratch = (!tracked).then(Tape::new);
        let current = match &scratch {
            Some(tape) => theta.watch(tape),
            None => theta.clone(),
        };
        let loss = support_loss(&current)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let g = grad(&loss, current.tensors(), create_graph && tracked)?;
        let _pause = scratch.is_some().then(no_record);
        let next = theta
            .tensors()
            .iter()
            .zip(&g.values)
            .map(|(p, gp)| p.add(&gp.scale(-alpha)?))
            .collect::<Result<Vec<_>>>()?;
        theta = theta.with_tensors(next)?;
    }
    Ok(theta)
}

/// Adapts `params` on the episode's support set for `cfg.inner_steps` steps.
pub fn maml_inner_adapt(
    params: &ParamSet,
    spec: &MlpSpec,
    ep: &Episode,
    cfg: &MamlConfig,
    create_graph: bool,
) -> Result<ParamSet> {
    adapt_steps(
        params,
        spec,
        ep,
        cfg.inner_lr,
        cfg.inner_steps,
        create_graph,
    )
}

fn adapt_steps(
    params: &ParamSet,
    spec: &MlpSpec,
    ep: &Episode,
    alpha: f64,
    steps: usize,
    create_graph: bool,
) -> Result<ParamSet> {
    inner_adapt_with(params, alpha, steps, create_graph, |p| {
        episode_loss(&models::forward(p, spec, &ep.x_s)?, &ep.y_s)
    })
}

/// Query scores after 0..=steps inner steps. Entry 0 is the unadapted model.
pub fn adaptation_curve(
    params: &ParamSet,
    spec: &MlpSpec,
    ep: &Episode,
    alpha: f64,
    steps: usize,
) -> Result<Vec<Score>> {
    let mut theta = params.detach();
    let mut curve = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        if step > 0 {
            theta = adapt_steps(&theta, spec, ep, alpha, 1, false)?;
        }
        let pred = {
            let _pause = no_record();
            models::forward(&theta, spec, &ep.x_q)?
        };
        curve.push(Score::of(&pred, &ep.y_q)?);
    }
    Ok(curve)
}

/// One meta-update: mean post-adaptation query loss over `episodes`,
/// differentiated with respect to the initial parameters, then one Adam step.
pub fn maml_outer_step(
    params: &ParamSet,
    spec: &MlpSpec,
    episodes: &[Episode],
    cfg: &MamlConfig,
    adam: &mut Adam,
) -> Result<(ParamSet, BatchMetrics)> {
    if episodes.len() != cfg.meta_batch {
        return Err(Error::invalid(
            "maml_outer_step",
            format!(
                "expected {} episodes, got {}",
                cfg.meta_batch,
                episodes.len()
            ),
        ));
    }
    let tape = Tape::new();
    let theta = params.watch(&tape);
    let mut losses = Vec::with_capacity(episodes.len());
    let mut pre = Vec::with_capacity(episodes.len());
    let mut post = Vec::with_capacity(episodes.len());
    for ep in episodes {
        pre.push({
            let _pause = no_record();
            Score::of(&models::forward(params, spec, &ep.x_q)?, &ep.y_q)?
        });
        let adapted = maml_inner_adapt(&theta, spec, ep, cfg, !cfg.first_order)?;
        let pred = models::forward(&adapted, spec, &ep.x_q)?;
        let loss = episode_loss(&pred, &ep.y_q)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss {
                step: cfg.inner_steps,
            });
        }
        post.push(Score::of(&pred, &ep.y_q)?);
        losses.push(loss);
    }
    let meta_loss = mean_loss(losses)?;
    let g = grad(&meta_loss, theta.tensors(), false)?;
    drop(tape);
    let next = adam.step(params, &g.values, cfg.weight_decay)?;
    Ok((
        next,
        BatchMetrics {
            pre: Score::mean(&pre),
            post: Score::mean(&post),
        },
    ))
}

/// MAML on an MLP. In first-order mode the inner gradients are treated as
/// constants during the meta-update.
#[derive(Debug, Clone)]
pub struct Maml {
    pub spec: MlpSpec,
    pub cfg: MamlConfig,
    params: ParamSet,
    adam: Adam,
}

impl Maml {
    pub fn new(spec: MlpSpec, cfg: MamlConfig) -> Result<Self> {
        cfg.validate()?;
        let params = models::init(&spec)?;
        let adam = Adam::new(cfg.outer_lr);
        Ok(Maml {
            spec,
            cfg,
            params,
            adam,
        })
    }
}

impl MetaLearner for Maml {
    fn name(&self) -> &'static str {
        if self.cfg.first_order {
            "fomaml"
        } else {
            "maml"
        }
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn load_params(&mut self, params: ParamSet) -> Result<()> {
        self.params = self.params.with_tensors(params.tensors().to_vec())?;
        Ok(())
    }

    fn train_step(&mut self, episodes: &[Episode]) -> Result<BatchMetrics> {
        let (next, metrics) = maml_outer_step(
            &self.params,
            &self.spec,
            episodes,
            &self.cfg,
            &mut self.adam,
        )?;
        self.params = next;
        Ok(metrics)
    }

    fn evaluate(&self, ep: &Episode) -> Result<EpisodeEval> {
        Ok(EpisodeEval {
            curve: adaptation_curve(
                &self.params,
                &self.spec,
                ep,
                self.cfg.inner_lr,
                self.cfg.inner_steps_eval,
            )?,
        })
    }
}
