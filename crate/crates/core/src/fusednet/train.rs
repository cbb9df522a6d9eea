use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, AdamState, FusedEmbedder};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::triplets::Triplet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Passes over the triplet sequence; each triplet is seen once per pass.
    pub max_passes: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_passes: 1,
            log_every: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossPoint {
    pub step: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Running mean loss over each window of `log_every` steps.
    pub loss_curve: Vec<LossPoint>,
    /// Fraction of steps with a positive hinge.
    pub active_fraction: f64,
}

/// Sequential triplet-network training: embed, loss, backward, Adam step.
pub fn train(model: &mut FusedEmbedder, corpus: &Corpus, triplets: &[Triplet], config: &TrainConfig) -> Result<TrainReport> {
    if config.log_every == 0 {
        return Err(Error::config("log_every", "must be at least 1"));
    }
    if let Some(t) = triplets.iter().find(|t| t.p.max(t.p_pos).max(t.p_neg) >= corpus.len()) {
        return Err(Error::Data(format!("triplet index {} past corpus end", t.p.max(t.p_pos).max(t.p_neg))));
    }
    let mut state = AdamState::new(&model.tensor_sizes(), config.adam);
    let mut report = TrainReport::default();
    let mut window = 0.0;
    let mut window_len = 0usize;
    let mut active = 0usize;
    for _ in 0..config.max_passes {
        for t in triplets {
            let records = [corpus.video(t.p), corpus.video(t.p_pos), corpus.video(t.p_neg)];
            let (grads, eval) = model.triplet_backward(records)?;
            if !eval.loss.is_finite() {
                let (a, b, c) = t.ids(corpus);
                return Err(Error::NonFiniteLoss(format!(
                    "triplet ({a}, {b}, {c}) at step {}, parameter norm {:.6e}",
                    report.steps,
                    model.parameter_norm()
                )));
            }
            if eval.hinge > 0.0 {
                active += 1;
            }
            {
                let mut params = model.tensors_mut();
                adam_step(&mut params, &grads.tensors(), &mut state)?;
            }
            report.steps += 1;
            window += eval.loss;
            window_len += 1;
            if window_len == config.log_every {
                let mean_loss = window / window_len as f64;
                log::info!("step {}: mean loss {mean_loss:.6}", report.steps);
                report.loss_curve.push(LossPoint {
                    step: report.steps,
                    mean_loss,
                });
                window = 0.0;
                window_len = 0;
            }
        }
    }
    if window_len > 0 {
        report.loss_curve.push(LossPoint {
            step: report.steps,
            mean_loss: window / window_len as f64,
        });
    }
    if report.steps > 0 {
        report.active_fraction = active as f64 / report.steps as f64;
    }
    Ok(report)
}
