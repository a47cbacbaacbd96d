//! End-to-end training with Adam, one document per step.

use kbie_tensor::{clip_grad_norm, Adam, Graph};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{config_err, KbieError, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::Model;
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    /// Evaluate on dev documents every this many epochs (0: never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-3,
            clip: Some(5.0),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(config_err("learning rate must be finite and non-negative"));
        }
        if self.clip.is_some_and(|c| !(c > 0.0)) {
            return Err(config_err("gradient clip must be positive"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub l_ner: f64,
    pub l_coref: f64,
    pub l_re: f64,
    /// Share of gold mentions that survived pruning.
    pub pruner_recall: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<MetricsReport>,
}

/// Train `model` in place. Every epoch visits the documents in a fresh
/// seeded order. On a non-finite loss the parameters are restored to the
/// end of the last completed epoch and a numerics error is returned.
pub fn train(
    model: &mut Model,
    docs: &[Document],
    dev: &[Document],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Model) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let usable: Vec<&Document> = docs.iter().filter(|d| !d.tokens.is_empty()).collect();
    if usable.is_empty() {
        return Err(config_err("training corpus has no non-empty documents"));
    }
    let mut adam = Adam::new(cfg.lr);
    let mut order_rng = substream(model.seed, "train/order");
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut last_good = model.params.clone();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut order_rng);
        let mut sums = [0.0f64; 4];
        let (mut gold, mut lost) = (0usize, 0usize);
        for (step, &i) in order.iter().enumerate() {
            let doc = usable[i];
            let mut g = Graph::training(substream(model.seed, &format!("train/dropout/{epoch}/{step}")));
            let mut words = substream(model.seed, &format!("train/words/{epoch}/{step}"));
            let step_result = (|| -> Result<[f64; 4]> {
                let out = model.forward(&mut g, &model.params, doc, Some(&mut words))?;
                let parts = model.loss(&mut g, &out, doc)?;
                gold += doc.mentions.len();
                lost += parts.alignment.unaligned;
                let vals = [
                    g.value(parts.total).item()?,
                    g.value(parts.ner).item()?,
                    g.value(parts.coref).item()?,
                    parts.re.map_or(Ok(0.0), |r| g.value(r).item())?,
                ];
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(KbieError::Numerics(format!("non-finite loss in epoch {epoch} on {}", doc.id)));
                }
                g.backward(parts.total, &mut model.params)?;
                if let Some(c) = cfg.clip {
                    clip_grad_norm(&mut model.params, c);
                }
                adam.step(&mut model.params)?;
                Ok(vals)
            })();
            match step_result {
                Ok(vals) => {
                    for (s, v) in sums.iter_mut().zip(vals) {
                        *s += v;
                    }
                }
                Err(e @ KbieError::Numerics(_)) => {
                    model.params = last_good;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        if model.params.iter().any(|(_, t)| !t.is_finite()) {
            model.params = last_good;
            return Err(KbieError::Numerics(format!("non-finite parameters after epoch {epoch}")));
        }
        last_good = model.params.clone();
        let n = usable.len() as f64;
        let dev_report = if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !dev.is_empty() {
            Some(evaluate(dev, &model.predict_all(dev)?)?)
        } else {
            None
        };
        let log = EpochLog {
            epoch,
            loss: sums[0] / n,
            l_ner: sums[1] / n,
            l_coref: sums[2] / n,
            l_re: sums[3] / n,
            pruner_recall: if gold == 0 { 1.0 } else { 1.0 - lost as f64 / gold as f64 },
            dev: dev_report,
        };
        on_epoch(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}
