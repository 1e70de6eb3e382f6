//! Mini-batch SGD on `L_CLASS + weight · L_align`, where the alignment loss
//! compares the covariances of source and target hidden features batch by batch.
//!
//! Source rows contribute to both the cross-entropy and the alignment term;
//! target rows (unlabeled) only to the alignment term. Alignment gradients
//! flow through both covariance branches.

mod mlp;
mod trace;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{batch_covariance, FeatureBatch, DEFAULT_GAMMA};
use crate::error::{Result, SpdError};
use crate::grad::{grad_cov_wrt_features, grad_loss_coral_both, grad_loss_log_both, CovGradients};
use crate::metrics::{loss_coral, loss_log};

pub use mlp::{forward, Layer, MlpParams};
pub use trace::{LossTrace, TraceRecord, TRACE_HEADER};

use mlp::{backward, cross_entropy, forward_cached, zero_grads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Cross-entropy only.
    Baseline,
    /// `L_CLASS + λ L_CORAL`.
    Coral,
    /// `L_CLASS + α L_log`.
    Log,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Coral, Mode::Log];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Coral => "coral",
            Mode::Log => "log",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Weight of `L_log`.
    pub alpha: f64,
    /// Weight of `L_CORAL`.
    pub lambda: f64,
    pub gamma: f64,
    pub base_lr: f64,
    /// Learning rate is `base_lr * lr_decay^epoch`.
    pub lr_decay: f64,
    /// Half source rows, half target rows.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Log,
            alpha: 10.0,
            lambda: 1.0,
            gamma: DEFAULT_GAMMA,
            base_lr: 0.05,
            lr_decay: 0.95,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            hidden_dims: vec![64, 16],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SpdError::Invalid(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and nonnegative, got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be finite and nonnegative, got {}", self.gamma));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return bad(format!(
                "batch_size must be even and at least 4, got {}",
                self.batch_size
            ));
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    /// Weight of the alignment term actually optimized (0 in baseline mode).
    pub fn active_weight(&self) -> f64 {
        match self.mode {
            Mode::Baseline => 0.0,
            Mode::Coral => self.lambda,
            Mode::Log => self.alpha,
        }
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SpdError::parse(origin, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SpdError::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// Loss terms of one step, before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub loss_class: f64,
    pub loss_coral: f64,
    pub loss_log: f64,
    pub weighted_coral: f64,
    pub weighted_log: f64,
}

impl StepLosses {
    /// The alignment value reported for `mode` (see [`TraceRecord`]).
    pub fn reported_alignment(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Coral => self.weighted_coral,
            Mode::Baseline | Mode::Log => self.weighted_log,
        }
    }

    /// Objective value that the step descends.
    pub fn total(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Baseline => self.loss_class,
            Mode::Coral => self.loss_class + self.weighted_coral,
            Mode::Log => self.loss_class + self.weighted_log,
        }
    }
}

fn require_labels(batch: &FeatureBatch, num_classes: usize) -> Result<&[usize]> {
    let labels = batch
        .labels()
        .ok_or_else(|| SpdError::Invalid("labeled batch required".into()))?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(SpdError::Invalid(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    Ok(labels)
}

/// Loss terms and parameter gradients of the configured objective.
pub fn loss_and_gradients(
    params: &MlpParams,
    source: &FeatureBatch,
    target: &FeatureBatch,
    cfg: &TrainConfig,
) -> Result<(StepLosses, Vec<Layer>)> {
    let labels = require_labels(source, params.num_classes())?;
    for b in [source, target] {
        if b.len() < 2 {
            return Err(SpdError::InsufficientSamples {
                needed: 2,
                got: b.len(),
            });
        }
    }

    let src = forward_cached(params, source.rows())?;
    let tgt = forward_cached(params, target.rows())?;
    let (loss_class, grad_logits) = cross_entropy(&src.logits, labels);

    let h_s = FeatureBatch::new(src.hidden().clone());
    let h_t = FeatureBatch::new(tgt.hidden().clone());
    let c_s = batch_covariance(&h_s, cfg.gamma)?;
    let c_t = batch_covariance(&h_t, cfg.gamma)?;
    let l_coral = loss_coral(&c_s, &c_t)?.value;
    let l_log = loss_log(&c_s, &c_t)?.value;
    let losses = StepLosses {
        loss_class,
        loss_coral: l_coral,
        loss_log: l_log,
        weighted_coral: cfg.lambda * l_coral,
        weighted_log: cfg.alpha * l_log,
    };
    if !losses.total(cfg.mode).is_finite() || !losses.reported_alignment(cfg.mode).is_finite() {
        return Err(SpdError::NonFinite(format!("step losses {losses:?}")));
    }

    let mut grads = zero_grads(params);
    let weight = cfg.active_weight();
    if weight == 0.0 {
        backward(params, &src, Some(&grad_logits), None, &mut grads);
        return Ok((losses, grads));
    }

    let CovGradients { source: g_s, target: g_t } = match cfg.mode {
        Mode::Coral => grad_loss_coral_both(&c_s, &c_t)?,
        Mode::Log => grad_loss_log_both(&c_s, &c_t)?,
        Mode::Baseline => unreachable!("baseline has zero alignment weight"),
    };
    let dh_s = grad_cov_wrt_features(&h_s, &g_s.scaled(weight))?;
    let dh_t = grad_cov_wrt_features(&h_t, &g_t.scaled(weight))?;
    backward(params, &src, Some(&grad_logits), Some(dh_s.matrix()), &mut grads);
    backward(params, &tgt, None, Some(dh_t.matrix()), &mut grads);
    Ok((losses, grads))
}

/// One SGD update at learning rate `lr`.
pub fn joint_step(
    params: &MlpParams,
    source: &FeatureBatch,
    target: &FeatureBatch,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(MlpParams, StepLosses)> {
    let (losses, grads) = loss_and_gradients(params, source, target, cfg)?;
    let mut next = params.clone();
    for (layer, g) in next.layers_mut().iter_mut().zip(&grads) {
        layer.weights -= &g.weights * lr;
        layer.bias -= &g.bias * lr;
    }
    if next
        .layers()
        .iter()
        .any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()))
    {
        return Err(SpdError::NonFinite(format!(
            "parameters after update with losses {losses:?}"
        )));
    }
    Ok((next, losses))
}

/// Number of joint steps per epoch.
pub fn steps_per_epoch(cfg: &TrainConfig, source_len: usize, target_len: usize) -> usize {
    source_len.min(target_len) / (cfg.batch_size / 2)
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Initializes the network from `cfg.seed` and trains it.
pub fn train(cfg: &TrainConfig, source: &FeatureBatch, target: &FeatureBatch) -> Result<(MlpParams, LossTrace)> {
    cfg.validate()?;
    let labels = source
        .labels()
        .ok_or_else(|| SpdError::Invalid("source set must be labeled".into()))?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let params = MlpParams::init(
        source.dim(),
        &cfg.hidden_dims,
        num_classes,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed),
    )?;
    train_from(params, cfg, source, target)
}

/// Trains from given initial parameters. Each step draws `batch_size/2` rows
/// from each domain without replacement, reshuffling every epoch.
pub fn train_from(
    mut params: MlpParams,
    cfg: &TrainConfig,
    source: &FeatureBatch,
    target: &FeatureBatch,
) -> Result<(MlpParams, LossTrace)> {
    cfg.validate()?;
    require_labels(source, params.num_classes())?;
    if source.dim() != target.dim() {
        return Err(SpdError::Dimension(format!(
            "source has {} features, target {}",
            source.dim(),
            target.dim()
        )));
    }
    let mut trace = LossTrace::new();
    if cfg.epochs == 0 {
        return Ok((params, trace));
    }
    let half = cfg.batch_size / 2;
    let steps = steps_per_epoch(cfg, source.len(), target.len());
    if steps == 0 {
        return Err(SpdError::InsufficientSamples {
            needed: half,
            got: source.len().min(target.len()),
        });
    }

    let mut rng = shuffle_rng(cfg.seed);
    let mut src_idx: Vec<usize> = (0..source.len()).collect();
    let mut tgt_idx: Vec<usize> = (0..target.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        src_idx.shuffle(&mut rng);
        tgt_idx.shuffle(&mut rng);
        for s in 0..steps {
            let sb = source.select(&src_idx[s * half..(s + 1) * half]);
            let tb = target.select(&tgt_idx[s * half..(s + 1) * half]);
            let (next, losses) = joint_step(&params, &sb, &tb, cfg, lr)?;
            params = next;
            trace.push(TraceRecord {
                step,
                epoch,
                loss_class: losses.loss_class,
                loss_align_weighted: losses.reported_alignment(cfg.mode),
                lr,
                weighted_log: losses.weighted_log,
                weighted_coral: losses.weighted_coral,
            })?;
            step += 1;
        }
    }
    Ok((params, trace))
}

/// Index of the largest logit per row (lowest index on ties).
pub fn predict(params: &MlpParams, batch: &FeatureBatch) -> Result<Vec<usize>> {
    let (_, logits) = forward(params, batch)?;
    Ok(logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Fraction of rows whose predicted class equals the label.
pub fn evaluate(params: &MlpParams, test: &FeatureBatch) -> Result<f64> {
    let labels = test
        .labels()
        .ok_or_else(|| SpdError::Invalid("evaluation set must be labeled".into()))?;
    if test.is_empty() {
        return Err(SpdError::InsufficientSamples { needed: 1, got: 0 });
    }
    let predicted = predict(params, test)?;
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / test.len() as f64)
}
