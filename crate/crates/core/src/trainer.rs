//! Mini-batch SGD with momentum, linear warmup and cosine decay.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::classifier::Target;
use crate::dataset::LabeledDataset;
use crate::error::{shape_err, Error, Result};
use crate::losses::{l2_penalty, soften, TeacherTargets};
use crate::model::Model;
use crate::rng::{seeded, shuffle};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.05;
pub const DEFAULT_LR_GRID: [f64; 6] = [3.0, 1.0, 0.3, 0.1, 0.03, 0.01];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Train on softened teacher logits at this temperature instead of labels.
    pub distill_temperature: Option<f64>,
}

impl TrainConfig {
    /// Schedule sized for `n_examples`: `total_steps = epochs * ceil(n / batch)`
    /// and warmup over `warmup_fraction` of it.
    pub fn for_dataset(
        n_examples: usize,
        epochs: usize,
        batch_size: usize,
        base_lr: f64,
        warmup_fraction: f64,
        seed: u64,
    ) -> Self {
        let per_epoch = n_examples.div_ceil(batch_size.max(1));
        let total_steps = (epochs * per_epoch).max(1);
        let warmup_steps = ((total_steps as f64) * warmup_fraction).round() as usize;
        Self {
            base_lr,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            batch_size,
            epochs,
            seed,
            distill_temperature: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(t) = self.distill_temperature {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("distillation temperature must be positive, got {t}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Activated kernel coefficients (or the fixed-kernel scale); empty for
    /// the linear head.
    pub learned_alpha: Vec<f64>,
}

/// Learning rate at `step`: linear warmup to `base_lr`, then cosine decay to
/// zero at `total_steps`.
pub fn lr_at(config: &TrainConfig, step: usize) -> Result<f64> {
    if step > config.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: config.total_steps,
        });
    }
    if step < config.warmup_steps {
        return Ok(config.base_lr * (step + 1) as f64 / config.warmup_steps as f64);
    }
    let decay_len = config.total_steps - config.warmup_steps;
    if decay_len == 0 {
        return Ok(0.0);
    }
    let progress = (step - config.warmup_steps) as f64 / decay_len as f64;
    Ok(config.base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Heavy-ball update: `v <- momentum v + g + decay p`, `p <- p - lr v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(shape_err(
            params.len(),
            format!("{} grads / {} velocity", grads.len(), velocity.len()),
        ));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Fraction of examples whose prediction matches the label.
pub fn evaluate(model: &Model, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (i, &y) in dataset.labels.iter().enumerate() {
        if model.predict(dataset.row(i))? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Trains `model` in place and returns one record per epoch.
///
/// Each epoch reshuffles the example order from a single ChaCha8 stream
/// seeded by `config.seed`, then steps once per mini-batch on the mean batch
/// gradient.
pub fn train(
    model: &mut Model,
    dataset: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    model.validate()?;
    if config.epochs == 0 {
        return Ok(Vec::new());
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != model.input_dim() {
        return Err(shape_err(
            format!("{} input features", model.input_dim()),
            dataset.dim(),
        ));
    }
    if dataset.num_classes > model.num_classes() {
        return Err(Error::InvalidTarget(format!(
            "dataset has {} classes, model {}",
            dataset.num_classes,
            model.num_classes()
        )));
    }
    let needed = config.epochs * dataset.len().div_ceil(config.batch_size);
    if needed > config.total_steps {
        return Err(Error::InvalidConfig(format!(
            "schedule has {} steps but training needs {needed}",
            config.total_steps
        )));
    }

    let soft_targets: Option<Vec<Vec<f64>>> = match config.distill_temperature {
        Some(t) => {
            let logits = dataset.teacher_logits.as_ref().ok_or_else(|| {
                Error::InvalidConfig("distillation needs teacher logits in the dataset".into())
            })?;
            Some(
                logits
                    .iter_rows()
                    .map(|h| Ok(soften(&TeacherTargets::new(h.to_vec(), t)?)))
                    .collect::<Result<_>>()?,
            )
        }
        None => None,
    };
    let loss_temperature = config
        .distill_temperature
        .unwrap_or_else(|| model.head.default_loss_temperature());

    let mut rng = seeded(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut velocity: Vec<Vec<f64>> = model
        .param_blocks_mut()
        .iter()
        .map(|b| vec![0.0; b.values.len()])
        .collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        shuffle(&mut rng, &mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = model.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let target = match &soft_targets {
                    Some(p) => Target::Distribution(&p[i]),
                    None => Target::Label(dataset.labels[i]),
                };
                let (loss, g) = model
                    .loss_and_grad(dataset.row(i), target, loss_temperature)
                    .map_err(|e| diverged(e, epoch, step))?;
                batch_loss += loss;
                acc.add_scaled(&g, 1.0)?;
            }
            if !batch_loss.is_finite() || !acc.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            loss_sum += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            let lr = lr_at(config, step)?;
            let grads = acc.blocks();
            for ((block, g), v) in model
                .param_blocks_mut()
                .into_iter()
                .zip(grads)
                .zip(velocity.iter_mut())
            {
                let mean: Vec<f64> = g.iter().map(|x| x * scale).collect();
                let decay = if block.decay { config.weight_decay } else { 0.0 };
                sgd_step(block.values, &mean, v, lr, config.momentum, decay)?;
            }
            if model
                .param_blocks_mut()
                .iter()
                .any(|b| b.values.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            step += 1;
        }

        let mut penalty = 0.0;
        for block in model.param_blocks_mut() {
            if block.decay {
                penalty += l2_penalty(block.values, config.weight_decay).0;
            }
        }
        let train_loss = loss_sum / dataset.len() as f64 + penalty;
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step });
        }
        history.push(MetricsRecord {
            epoch,
            train_loss,
            train_accuracy: evaluate(model, dataset)?,
            test_accuracy: test.map(|t| evaluate(model, t)).transpose()?,
            learned_alpha: model
                .head
                .series()
                .map(|s| s.effective_coefficients())
                .unwrap_or_default(),
        });
    }
    Ok(history)
}

/// Non-finite parameters surface as non-finite inputs to the loss or as
/// degenerate weight rows; both mean the run diverged.
fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFiniteInput(_) => Error::NonFiniteLoss { epoch, step },
        Error::DegenerateVector { norm } if !norm.is_finite() => Error::NonFiniteLoss { epoch, step },
        other => other,
    }
}

/// Outcome of a learning-rate grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSearch {
    pub chosen: f64,
    /// `(lr, held-out accuracy)`; diverged runs score `None`.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Picks the base learning rate with the best held-out accuracy.
///
/// The last `holdout_fraction` of a seeded permutation of `dataset` is held
/// out; every grid value trains a fresh model from `build` on the rest. Ties
/// keep the earlier grid entry.
pub fn select_learning_rate(
    build: impl Fn() -> Result<Model>,
    dataset: &LabeledDataset,
    grid: &[f64],
    holdout_fraction: f64,
    template: &TrainConfig,
    warmup_fraction: f64,
) -> Result<LrSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty learning-rate grid".into()));
    }
    if grid.len() == 1 {
        return Ok(LrSearch {
            chosen: grid[0],
            scores: vec![(grid[0], None)],
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    shuffle(&mut seeded(template.seed ^ 0x5eed_1e55), &mut order);
    let held = ((dataset.len() as f64) * holdout_fraction).round() as usize;
    let held = held.clamp(1, dataset.len().saturating_sub(1).max(1));
    let (fit_idx, val_idx) = order.split_at(dataset.len() - held);
    let mut fit_idx = fit_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    fit_idx.sort_unstable();
    val_idx.sort_unstable();
    let fit = dataset.subset(&fit_idx);
    let val = dataset.subset(&val_idx);

    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lr in grid {
        let mut cfg = TrainConfig::for_dataset(
            fit.len(),
            template.epochs,
            template.batch_size,
            lr,
            warmup_fraction,
            template.seed,
        );
        cfg.momentum = template.momentum;
        cfg.weight_decay = template.weight_decay;
        cfg.distill_temperature = template.distill_temperature;
        let mut model = build()?;
        let acc = match train(&mut model, &fit, None, &cfg) {
            Ok(_) => Some(evaluate(&model, &val)?),
            Err(Error::NonFiniteLoss { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some(a) = acc {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((lr, a));
            }
        }
        scores.push((lr, acc));
    }
    let chosen = best.map_or(grid[grid.len() - 1], |(lr, _)| lr);
    Ok(LrSearch { chosen, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(warmup: usize, total: usize) -> TrainConfig {
        TrainConfig {
            base_lr: 0.4,
            warmup_steps: warmup,
            total_steps: total,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 1,
            epochs: 1,
            seed: 0,
            distill_temperature: None,
        }
    }

    #[test]
    fn schedule_landmarks() {
        let c = schedule(10, 110);
        assert_eq!(lr_at(&c, 10).unwrap(), 0.4);
        assert!(lr_at(&c, 110).unwrap().abs() < 1e-15);
        assert!((lr_at(&c, 60).unwrap() - 0.2).abs() < 1e-15);
        assert!((lr_at(&c, 0).unwrap() - 0.04).abs() < 1e-15);
        assert!((lr_at(&c, 9).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(lr_at(&c, 111), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn no_warmup_starts_at_base() {
        let c = schedule(0, 4);
        assert_eq!(lr_at(&c, 0).unwrap(), 0.4);
    }

    #[test]
    fn plain_gradient_step() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        sgd_step(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15 && (p[1] + 2.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn momentum_on_quadratic_matches_hand_recurrence() {
        // f(x) = c x^2 / 2, gradient c x
        let (c, lr, mu, decay) = (3.0, 0.05, 0.9, 0.01);
        let mut p = vec![2.0];
        let mut v = vec![0.0];
        for _ in 0..2 {
            let g = [c * p[0]];
            sgd_step(&mut p, &g, &mut v, lr, mu, decay).unwrap();
        }
        // v1 = (c + decay) x0; x1 = x0 - lr v1
        let x0 = 2.0;
        let v1 = (c + decay) * x0;
        let x1 = x0 - lr * v1;
        let v2 = mu * v1 + (c + decay) * x1;
        let x2 = x1 - lr * v2;
        assert!((p[0] - x2).abs() < 1e-15);
        assert!((v[0] - v2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        assert!(sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn validate_catches_bad_schedules() {
        let mut c = schedule(5, 4);
        assert!(c.validate().is_err());
        c.warmup_steps = 1;
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }
}
