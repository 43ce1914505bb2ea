//! Loss heads shared by the linear and kernelized layers.

use crate::error::{Error, Result};

/// Teacher logits `h` and the distillation temperature `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl TeacherTargets {
    pub fn new(logits: Vec<f64>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidTarget(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if logits.iter().any(|h| !h.is_finite()) {
            return Err(Error::InvalidTarget("teacher logits must be finite".into()));
        }
        Ok(Self {
            logits,
            temperature,
        })
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput("logits".into()))
    }
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidTarget(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    check_finite(logits)?;
    let logp = log_softmax(logits);
    let mut grad: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok((-logp[label], grad))
}

/// Cross-entropy against a probability vector: `-sum p log softmax(logits)`,
/// gradient `softmax - p`.
pub fn soft_xent(logits: &[f64], probs: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != probs.len() {
        return Err(Error::InvalidTarget(format!(
            "{} target probabilities for {} logits",
            probs.len(),
            logits.len()
        )));
    }
    check_finite(logits)?;
    let logp = log_softmax(logits);
    let loss = -probs
        .iter()
        .zip(&logp)
        .map(|(&p, &l)| if p == 0.0 { 0.0 } else { p * l })
        .sum::<f64>();
    let grad = logp.iter().zip(probs).map(|(l, p)| l.exp() - p).collect();
    Ok((loss, grad))
}

/// Temperature-softened teacher probabilities.
pub fn soften(teacher: &TeacherTargets) -> Vec<f64> {
    let scaled: Vec<f64> = teacher
        .logits
        .iter()
        .map(|h| h / teacher.temperature)
        .collect();
    softmax(&scaled)
}

/// Distillation cross-entropy between softened teacher and softened student.
/// The gradient is with respect to the unscaled student logits.
pub fn distill_xent(student_logits: &[f64], teacher: &TeacherTargets) -> Result<(f64, Vec<f64>)> {
    if student_logits.len() != teacher.logits.len() {
        return Err(Error::InvalidTarget(format!(
            "{} student logits vs {} teacher logits",
            student_logits.len(),
            teacher.logits.len()
        )));
    }
    let t = teacher.temperature;
    let scaled: Vec<f64> = student_logits.iter().map(|z| z / t).collect();
    let (loss, grad) = soft_xent(&scaled, &soften(teacher))?;
    Ok((loss, grad.into_iter().map(|g| g / t).collect()))
}

/// `decay * |a|^2 / 2` and its gradient `decay * a`.
pub fn l2_penalty(alpha_raw: &[f64], decay: f64) -> (f64, Vec<f64>) {
    let loss = 0.5 * decay * alpha_raw.iter().map(|a| a * a).sum::<f64>();
    (loss, alpha_raw.iter().map(|a| decay * a).collect())
}
