//! Corpus fitting: epochs of shuffled mini-batches minimizing mean sequence
//! NLL (the plain language-model objective).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{batch_nll_grad, Model, SeqExample};
use super::optim::{clip_grad_norm, AdamW, OptimConfig};
use super::ModelError;
use crate::rngutil::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Shuffle seed; independent of the model's init seed.
    pub seed: u64,
    pub max_grad_norm: Option<f64>,
    /// Epoch progress lines on stderr.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            lr: 1e-5,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            max_grad_norm: None,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn optim(&self, total_steps: usize) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            warmup_ratio: self.warmup_ratio,
            total_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean sequence NLL per epoch, in corpus order of completion.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Trains in place. The corpus is reshuffled every epoch from a stream
/// derived from `cfg.seed`; batches are consecutive chunks, the trailing
/// partial chunk included. Aborts restoring the last epoch-end snapshot if
/// the loss stops being finite.
pub fn fit(model: &mut Model, corpus: &[SeqExample], cfg: &TrainConfig) -> Result<FitReport, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::ArchInvalid("batch_size must be positive".into()));
    }
    let steps_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(model.param_count(), cfg.optim(total_steps));
    let mut grad = vec![0.0f32; model.param_count()];
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut snapshot = model.params().to_vec();

    for epoch in 0..cfg.epochs {
        let mut rng = derive_rng(cfg.seed, &format!("seqmodel.fit.epoch{epoch}"));
        order.shuffle(&mut rng);
        let mut epoch_nll = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SeqExample> = chunk.iter().map(|&i| &corpus[i]).collect();
            let weights = vec![1.0 / batch.len() as f64; batch.len()];
            grad.fill(0.0);
            let values = batch_nll_grad(model, &batch, &weights, &mut grad)?;
            let step_loss = values.mean_sequence_nll();
            if !step_loss.is_finite() {
                model.params_mut().copy_from_slice(&snapshot);
                return Err(ModelError::Diverged { step: opt.steps_taken() });
            }
            epoch_nll += values.nll.iter().sum::<f64>();
            if let Some(max_norm) = cfg.max_grad_norm {
                clip_grad_norm(&mut grad, max_norm);
            }
            opt.step(model.params_mut(), &grad);
        }
        let epoch_loss = epoch_nll / corpus.len() as f64;
        if cfg.verbose {
            eprintln!("epoch {:>3}/{}: mean sequence nll {epoch_loss:.4}", epoch + 1, cfg.epochs);
        }
        epoch_losses.push(epoch_loss);
        snapshot.copy_from_slice(model.params());
    }

    Ok(FitReport { epoch_losses, steps: opt.steps_taken() })
}
