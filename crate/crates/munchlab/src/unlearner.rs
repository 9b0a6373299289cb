//! Unlearning losses and the unlearning loop.
//!
//! Every objective here is an affine function of per-sequence NLLs, so each
//! gradient is one weighted-NLL backward pass with analytic weights:
//!
//! * retain:  L = mean NLL                      w_i = 1/B
//! * ascent:  L = −mean NLL                     w_i = −1/B
//! * preference: L = −mean log σ(β·Δw − β·Δl)   w_win = β·σ(−z)/B, w_lose = −β·σ(−z)/B
//! * ratio:   L = −mean log σ(−β·(NLLref − NLLθ))  w_i = −β·σ(−z_i)/B
//!
//! where Δ = log π_θ − log π_ref per sequence and z is the argument of σ.
//! The reference model is a frozen copy of the original and never moves.
//!
//! The loop alternates forget and retain batches 1:1 when retention is on,
//! combining their gradients per step as α·∇L_f + (1−α)·∇L_r. Early
//! stopping watches retain-validation LM loss at epoch ends: an epoch whose
//! monitor exceeds the best seen by more than the relative tolerance counts
//! a strike, consecutive strikes past the configured patience stop the run,
//! and the returned parameters are those of the last acceptable epoch. The
//! monitor runs at epoch ends only, so every forget item is visited at
//! least once before stopping is possible.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::qa_example;
use crate::kbgen::{DatasetBundle, QuestionKind, Split};
use crate::rngutil::derive_rng;
use crate::seqmodel::{
    batch_nll, batch_nll_grad, clip_grad_norm, Model, ModelError, ModelTag, SeqExample,
    TrainConfig,
};

/// Rejections offered as the preferred answer during preference unlearning
/// and spoken by the question pipeline when it refuses.
pub const DEFAULT_REJECTION_POOL: [&str; 12] = [
    "I must decline to answer due to lack of information.",
    "I cannot provide an answer to that question.",
    "That information is not available to me.",
    "I am unable to answer this question.",
    "No information is available on that subject.",
    "I do not have the knowledge to answer that.",
    "That question is beyond what I can answer.",
    "I have no record of that information.",
    "I am not able to help with that question.",
    "The answer to that question is unknown to me.",
    "I cannot recall any information about that.",
    "There is nothing I can tell you about that.",
];

#[derive(Debug, Error)]
pub enum UnlearnError {
    #[error("forget split has no single-hop items")]
    EmptyForget,
    #[error("retention requested but retain_train has no single-hop items")]
    EmptyRetain,
    #[error("preference method needs a non-empty rejection pool")]
    EmptyPool,
    #[error("alpha {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("beta {0} must be positive")]
    InvalidBeta(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("log write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl UnlearnError {
    pub fn code(&self) -> &'static str {
        match self {
            UnlearnError::EmptyForget => "unlearner.empty_forget",
            UnlearnError::EmptyRetain => "unlearner.empty_retain",
            UnlearnError::EmptyPool => "unlearner.empty_pool",
            UnlearnError::InvalidAlpha(_) => "unlearner.invalid_alpha",
            UnlearnError::InvalidBeta(_) => "unlearner.invalid_beta",
            UnlearnError::Model(e) => e.code(),
            UnlearnError::Io(_) => "unlearner.io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlearnMethod {
    Ga,
    Dpo,
    Npo,
}

impl fmt::Display for UnlearnMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnlearnMethod::Ga => "ga",
            UnlearnMethod::Dpo => "dpo",
            UnlearnMethod::Npo => "npo",
        })
    }
}

/// One preference item: the model should prefer `win` (a rejection) over
/// `lose` (the factual answer) as a continuation of `prompt`.
#[derive(Debug, Clone)]
pub struct PreferencePair {
    pub prompt: Vec<u32>,
    pub win: Vec<u32>,
    pub lose: Vec<u32>,
}

/// Monitor is retain-validation LM loss (mean per-token NLL).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    /// Fraction above the best monitor value an epoch may reach before it
    /// counts as a strike.
    pub rel_tolerance: f64,
    /// Consecutive strikes tolerated before stopping.
    pub patience: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig { rel_tolerance: 0.05, patience: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnConfig {
    pub method: UnlearnMethod,
    pub with_retain: bool,
    /// Weight of the forget loss in the combined objective.
    pub alpha: f64,
    /// Inverse temperature for the preference and ratio losses.
    pub beta: f64,
    pub rejection_pool: Vec<String>,
    pub train: TrainConfig,
    pub early_stop: Option<EarlyStopConfig>,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            method: UnlearnMethod::Ga,
            with_retain: true,
            alpha: 0.1,
            beta: 0.1,
            rejection_pool: DEFAULT_REJECTION_POOL.iter().map(|s| s.to_string()).collect(),
            train: TrainConfig { epochs: 5, ..TrainConfig::default() },
            early_stop: Some(EarlyStopConfig::default()),
        }
    }
}

impl UnlearnConfig {
    fn validate(&self) -> Result<(), UnlearnError> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(UnlearnError::InvalidAlpha(self.alpha));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(UnlearnError::InvalidBeta(self.beta));
        }
        if self.method == UnlearnMethod::Dpo && self.rejection_pool.is_empty() {
            return Err(UnlearnError::EmptyPool);
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x), stable on both tails.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Mean sequence NLL over the batch.
pub fn loss_retain(model: &Model, batch: &[&SeqExample]) -> Result<f64, ModelError> {
    Ok(batch_nll(model, batch)?.mean_sequence_nll())
}

/// Exact negation of [`loss_retain`]: minimizing it performs gradient
/// ascent on the batch NLL.
pub fn loss_ga(model: &Model, batch: &[&SeqExample]) -> Result<f64, ModelError> {
    Ok(-loss_retain(model, batch)?)
}

fn pair_examples(pairs: &[&PreferencePair]) -> Vec<SeqExample> {
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        out.push(SeqExample::new(p.prompt.clone(), p.win.clone()));
        out.push(SeqExample::new(p.prompt.clone(), p.lose.clone()));
    }
    out
}

/// σ-argument per pair: z = β·(Δ_win − Δ_lose) with Δ = log π_θ − log π_ref.
fn dpo_args(
    model: &Model,
    reference: &Model,
    pairs: &[&PreferencePair],
    beta: f64,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let examples = pair_examples(pairs);
    let refs: Vec<&SeqExample> = examples.iter().collect();
    let theta = batch_nll(model, &refs)?.nll;
    let frozen = batch_nll(reference, &refs)?.nll;
    let z = (0..pairs.len())
        .map(|i| {
            let dw = frozen[2 * i] - theta[2 * i];
            let dl = frozen[2 * i + 1] - theta[2 * i + 1];
            beta * (dw - dl)
        })
        .collect();
    Ok((z, theta))
}

/// −mean log σ(β·Δ_win − β·Δ_lose).
pub fn loss_dpo(
    model: &Model,
    reference: &Model,
    pairs: &[&PreferencePair],
    beta: f64,
) -> Result<f64, ModelError> {
    let (z, _) = dpo_args(model, reference, pairs, beta)?;
    Ok(-z.iter().map(|&zi| log_sigmoid(zi)).sum::<f64>() / pairs.len() as f64)
}

/// σ-argument per example: z = β·(NLL_θ − NLL_ref), i.e. −β·log(π_θ/π_ref).
fn npo_args(
    model: &Model,
    reference: &Model,
    batch: &[&SeqExample],
    beta: f64,
) -> Result<Vec<f64>, ModelError> {
    let theta = batch_nll(model, batch)?.nll;
    let frozen = batch_nll(reference, batch)?.nll;
    Ok(theta.iter().zip(&frozen).map(|(&t, &r)| beta * (t - r)).collect())
}

/// −mean log σ(−β·log(π_θ/π_ref)).
pub fn loss_npo(
    model: &Model,
    reference: &Model,
    batch: &[&SeqExample],
    beta: f64,
) -> Result<f64, ModelError> {
    let z = npo_args(model, reference, batch, beta)?;
    Ok(-z.iter().map(|&zi| log_sigmoid(zi)).sum::<f64>() / batch.len() as f64)
}

/// α·forget + (1−α)·retain.
pub fn combined_loss(alpha: f64, forget: f64, retain: f64) -> f64 {
    alpha * forget + (1.0 - alpha) * retain
}

/// Adds `scale`·∇(mean NLL) into `grad`; returns the loss.
pub fn grad_retain(
    model: &Model,
    batch: &[&SeqExample],
    scale: f64,
    grad: &mut [f32],
) -> Result<f64, ModelError> {
    let w = vec![scale / batch.len() as f64; batch.len()];
    Ok(batch_nll_grad(model, batch, &w, grad)?.mean_sequence_nll())
}

/// Adds `scale`·∇(−mean NLL) into `grad`; returns the loss.
pub fn grad_ga(
    model: &Model,
    batch: &[&SeqExample],
    scale: f64,
    grad: &mut [f32],
) -> Result<f64, ModelError> {
    let w = vec![-scale / batch.len() as f64; batch.len()];
    Ok(-batch_nll_grad(model, batch, &w, grad)?.mean_sequence_nll())
}

/// Adds `scale`·∇loss_dpo into `grad`; returns the loss.
pub fn grad_dpo(
    model: &Model,
    reference: &Model,
    pairs: &[&PreferencePair],
    beta: f64,
    scale: f64,
    grad: &mut [f32],
) -> Result<f64, ModelError> {
    let (z, _) = dpo_args(model, reference, pairs, beta)?;
    let b = pairs.len() as f64;
    let mut weights = Vec::with_capacity(pairs.len() * 2);
    for &zi in &z {
        let w = scale * beta * sigmoid(-zi) / b;
        weights.push(w);
        weights.push(-w);
    }
    let examples = pair_examples(pairs);
    let refs: Vec<&SeqExample> = examples.iter().collect();
    batch_nll_grad(model, &refs, &weights, grad)?;
    Ok(-z.iter().map(|&zi| log_sigmoid(zi)).sum::<f64>() / b)
}

/// Adds `scale`·∇loss_npo into `grad`; returns the loss.
pub fn grad_npo(
    model: &Model,
    reference: &Model,
    batch: &[&SeqExample],
    beta: f64,
    scale: f64,
    grad: &mut [f32],
) -> Result<f64, ModelError> {
    let z = npo_args(model, reference, batch, beta)?;
    let b = batch.len() as f64;
    let weights: Vec<f64> = z.iter().map(|&zi| -scale * beta * sigmoid(-zi) / b).collect();
    batch_nll_grad(model, batch, &weights, grad)?;
    Ok(-z.iter().map(|&zi| log_sigmoid(zi)).sum::<f64>() / b)
}

#[derive(Serialize)]
struct StepLog<'a> {
    step: u64,
    method: &'a str,
    alpha: f64,
    forget_loss: f64,
    retain_loss: Option<f64>,
    combined: f64,
    lr: f64,
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model: Model,
    pub steps: u64,
    pub epochs_run: usize,
    pub early_stopped: bool,
    /// Step at which a non-finite loss appeared; parameters are from the
    /// last finished epoch (or the original model inside epoch one).
    pub diverged_at: Option<u64>,
    /// Retain-validation LM loss after each finished epoch.
    pub monitor_history: Vec<f64>,
}

/// Mean per-token NLL over the monitor examples, in fixed-size chunks.
fn monitor_value(
    model: &Model,
    examples: &[SeqExample],
    batch_size: usize,
) -> Result<f64, ModelError> {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&SeqExample> = chunk.iter().collect();
        let v = batch_nll(model, &refs)?;
        nll += v.nll.iter().sum::<f64>();
        tokens += v.token_counts.iter().sum::<usize>();
    }
    Ok(nll / tokens.max(1) as f64)
}

/// Runs unlearning against the forget split's single-hop questions,
/// returning the unlearned model. The original is cloned, never touched;
/// methods that need a reference use a frozen retagged copy of it. Each
/// optimization step is logged to `log` as one JSON line.
pub fn run_unlearning(
    original: &Model,
    bundle: &DatasetBundle,
    cfg: &UnlearnConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<UnlearnOutcome, UnlearnError> {
    cfg.validate()?;
    let vocab = &original.vocab;
    let forget_items = bundle.split_questions(Split::Forget, QuestionKind::Single);
    if forget_items.is_empty() {
        return Err(UnlearnError::EmptyForget);
    }
    let forget: Vec<SeqExample> =
        forget_items.iter().map(|q| qa_example(vocab, &q.text, &q.answer)).collect();

    let retain: Vec<SeqExample> = bundle
        .split_questions(Split::RetainTrain, QuestionKind::Single)
        .iter()
        .map(|q| qa_example(vocab, &q.text, &q.answer))
        .collect();
    if cfg.with_retain && retain.is_empty() {
        return Err(UnlearnError::EmptyRetain);
    }

    let monitor_examples: Vec<SeqExample> = bundle
        .split_questions(Split::RetainValid, QuestionKind::Single)
        .iter()
        .map(|q| qa_example(vocab, &q.text, &q.answer))
        .collect();

    // Preference pairs keep their sampled rejection for the whole run.
    let pairs: Vec<PreferencePair> = if cfg.method == UnlearnMethod::Dpo {
        let mut rng = derive_rng(cfg.train.seed, "unlearner.rejection");
        forget
            .iter()
            .map(|ex| {
                let rejection = &cfg.rejection_pool[rng.gen_range(0..cfg.rejection_pool.len())];
                let mut win = vocab.encode(rejection);
                win.push(crate::seqmodel::EOS);
                PreferencePair { prompt: ex.prompt.clone(), win, lose: ex.target.clone() }
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut model = original.retagged(ModelTag::Unlearned);
    let reference = original.retagged(ModelTag::Reference);
    let bs = cfg.train.batch_size.max(1);
    let batches_per_epoch = forget.len().div_ceil(bs);
    let total_steps = batches_per_epoch * cfg.train.epochs;
    let mut optim = crate::seqmodel::AdamW::new(model.param_count(), cfg.train.optim(total_steps));
    let mut grad = vec![0.0f32; model.param_count()];

    let alpha_f = if cfg.with_retain { cfg.alpha } else { 1.0 };
    let alpha_r = 1.0 - cfg.alpha;

    let mut step: u64 = 0;
    let mut snapshot = model.params().to_vec();
    let mut best = f64::INFINITY;
    let mut accepted = model.params().to_vec();
    let mut strikes = 0usize;
    let mut outcome = UnlearnOutcome {
        model: model.clone(),
        steps: 0,
        epochs_run: 0,
        early_stopped: false,
        diverged_at: None,
        monitor_history: Vec::new(),
    };

    'epochs: for epoch in 0..cfg.train.epochs {
        let mut forget_order: Vec<usize> = (0..forget.len()).collect();
        forget_order.shuffle(&mut derive_rng(cfg.train.seed, &format!("unlearner.epoch{epoch}.forget")));
        let mut retain_order: Vec<usize> = (0..retain.len()).collect();
        retain_order.shuffle(&mut derive_rng(cfg.train.seed, &format!("unlearner.epoch{epoch}.retain")));
        let mut retain_at = 0usize;

        for chunk in forget_order.chunks(bs) {
            grad.iter_mut().for_each(|g| *g = 0.0);

            let fbatch: Vec<&SeqExample> = chunk.iter().map(|&i| &forget[i]).collect();
            let forget_loss = match cfg.method {
                UnlearnMethod::Ga => grad_ga(&model, &fbatch, alpha_f, &mut grad)?,
                UnlearnMethod::Npo => {
                    grad_npo(&model, &reference, &fbatch, cfg.beta, alpha_f, &mut grad)?
                }
                UnlearnMethod::Dpo => {
                    let pbatch: Vec<&PreferencePair> = chunk.iter().map(|&i| &pairs[i]).collect();
                    grad_dpo(&model, &reference, &pbatch, cfg.beta, alpha_f, &mut grad)?
                }
            };

            let retain_loss = if cfg.with_retain {
                let rbatch: Vec<&SeqExample> = (0..chunk.len())
                    .map(|_| {
                        let ex = &retain[retain_order[retain_at % retain_order.len()]];
                        retain_at += 1;
                        ex
                    })
                    .collect();
                Some(grad_retain(&model, &rbatch, alpha_r, &mut grad)?)
            } else {
                None
            };

            let combined = match retain_loss {
                Some(r) => combined_loss(cfg.alpha, forget_loss, r),
                None => forget_loss,
            };
            if !combined.is_finite() {
                model.params_mut().copy_from_slice(&snapshot);
                outcome.diverged_at = Some(step);
                break 'epochs;
            }

            if let Some(max_norm) = cfg.train.max_grad_norm {
                clip_grad_norm(&mut grad, max_norm);
            }
            let lr = optim.lr_at(step);
            optim.step(model.params_mut(), &grad);
            if let Some(w) = log.as_deref_mut() {
                let line = StepLog {
                    step,
                    method: &cfg.method.to_string(),
                    alpha: cfg.alpha,
                    forget_loss,
                    retain_loss,
                    combined,
                    lr,
                };
                serde_json::to_writer(&mut *w, &line).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            step += 1;
        }

        outcome.epochs_run = epoch + 1;
        snapshot.copy_from_slice(model.params());

        if !monitor_examples.is_empty() {
            let value = monitor_value(&model, &monitor_examples, bs)?;
            outcome.monitor_history.push(value);
            if let Some(es) = &cfg.early_stop {
                if value <= best * (1.0 + es.rel_tolerance) {
                    strikes = 0;
                    accepted.copy_from_slice(model.params());
                } else {
                    strikes += 1;
                    if strikes > es.patience {
                        model.params_mut().copy_from_slice(&accepted);
                        outcome.early_stopped = true;
                        break;
                    }
                }
                best = best.min(value);
            }
        }
    }

    outcome.steps = step;
    outcome.model = model;
    Ok(outcome)
}
