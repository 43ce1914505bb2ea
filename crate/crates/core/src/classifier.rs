//! Classification layers: the kernelized layer and the linear softmax baseline.
//!
//! The kernelized layer scores class `j` as `k(<w_j/|w_j|, f/|f|>)`, with no
//! bias. The baseline scores `<w_j, f> + b_j` on the raw vectors.

use crate::error::{shape_err, Error, Result};
use crate::kernel::KernelSeries;
use crate::losses::{soft_xent, softmax_xent};
use crate::matrix::{axpy, dot, norm, Matrix};
use crate::rng::{standard_normal, Rng};

/// Norms at or below this are rejected by [`normalize`].
pub const MIN_NORM: f64 = 1e-12;

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > MIN_NORM) {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Vector-Jacobian product of [`normalize`] at `v`:
/// `(g - <g, v̂> v̂) / |v|`.
pub fn normalize_backward(v: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if v.len() != upstream.len() {
        return Err(shape_err(v.len(), upstream.len()));
    }
    let n = norm(v);
    if !(n > MIN_NORM) {
        return Err(Error::DegenerateVector { norm: n });
    }
    let radial = dot(upstream, v) / n;
    Ok(upstream
        .iter()
        .zip(v)
        .map(|(g, x)| (g - radial * x / n) / n)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierParams {
    /// Softmax baseline with additive bias, on unnormalized vectors.
    Linear { weights: Matrix, bias: Vec<f64> },
    /// Kernelized layer on L2-normalized weights and features.
    Kernelized { weights: Matrix, series: KernelSeries },
}

/// What the loss is computed against.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Label(usize),
    /// Probability vector, e.g. softened teacher scores.
    Distribution(&'a [f64]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub d_weights: Matrix,
    /// Empty for the kernelized layer.
    pub d_bias: Vec<f64>,
    /// Gradient for the raw series coefficients. Empty for the linear layer,
    /// all zeros in fixed-kernel modes.
    pub d_alpha_raw: Vec<f64>,
    /// Gradient for the raw scale of fixed-kernel modes.
    pub d_scale_raw: f64,
    /// Gradient with respect to the raw (pre-normalization) features.
    pub d_features: Vec<f64>,
}

impl ClassifierParams {
    /// Linear baseline with standard Gaussian weights and zero bias.
    pub fn linear(classes: usize, dim: usize, rng: &mut Rng) -> Self {
        ClassifierParams::Linear {
            weights: gaussian_matrix(classes, dim, rng),
            bias: vec![0.0; classes],
        }
    }

    /// Kernelized layer with standard Gaussian raw weights.
    pub fn kernelized(classes: usize, dim: usize, series: KernelSeries, rng: &mut Rng) -> Self {
        ClassifierParams::Kernelized {
            weights: gaussian_matrix(classes, dim, rng),
            series,
        }
    }

    pub fn weights(&self) -> &Matrix {
        match self {
            ClassifierParams::Linear { weights, .. } | ClassifierParams::Kernelized { weights, .. } => {
                weights
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights().rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights().cols()
    }

    pub fn series(&self) -> Option<&KernelSeries> {
        match self {
            ClassifierParams::Kernelized { series, .. } => Some(series),
            ClassifierParams::Linear { .. } => None,
        }
    }

    pub fn is_kernelized(&self) -> bool {
        matches!(self, ClassifierParams::Kernelized { .. })
    }

    /// Temperature applied to the scores for plain label training.
    pub fn default_loss_temperature(&self) -> f64 {
        self.series().map_or(1.0, |s| s.act_temperature)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.rows() < 2 || w.cols() < 2 {
            return Err(Error::InvalidConfig(format!(
                "classifier needs at least 2 classes and 2 feature dimensions, got {}x{}",
                w.rows(),
                w.cols()
            )));
        }
        match self {
            ClassifierParams::Linear { bias, .. } if bias.len() != w.rows() => {
                Err(shape_err(w.rows(), bias.len()))
            }
            ClassifierParams::Kernelized { series, .. } => series.validate(),
            _ => Ok(()),
        }
    }

    fn check_features(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.feature_dim() {
            return Err(shape_err(
                format!("{} features", self.feature_dim()),
                f.len(),
            ));
        }
        Ok(())
    }

    /// Unscaled class scores: kernel values or affine scores.
    pub fn scores(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_features(f)?;
        match self {
            ClassifierParams::Linear { weights, bias } => Ok(weights
                .iter_rows()
                .zip(bias)
                .map(|(w, b)| dot(w, f) + b)
                .collect()),
            ClassifierParams::Kernelized { weights, series } => {
                let f_hat = normalize(f)?;
                let ev = series.evaluator();
                weights
                    .iter_rows()
                    .map(|w| ev.value(dot(&normalize(w)?, &f_hat)))
                    .collect()
            }
        }
    }

    /// Scores as fed to the softmax in plain training: kernel values divided by
    /// the activation temperature, or the affine scores of the baseline.
    pub fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        let tau = self.default_loss_temperature();
        Ok(self.scores(f)?.into_iter().map(|s| s / tau).collect())
    }

    /// Arg-max class, ties to the lowest index.
    pub fn predict(&self, f: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(f)?))
    }

    /// Loss of one example and gradients for every parameter block and the
    /// raw features. Scores are divided by `loss_temperature` before the
    /// softmax.
    pub fn forward_backward(
        &self,
        f: &[f64],
        target: Target<'_>,
        loss_temperature: f64,
    ) -> Result<(f64, LayerGradients)> {
        self.check_features(f)?;
        if !(loss_temperature > 0.0 && loss_temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "loss temperature must be positive, got {loss_temperature}"
            )));
        }
        let classes = self.num_classes();
        let dim = self.feature_dim();
        match self {
            ClassifierParams::Linear { weights, bias } => {
                let scores: Vec<f64> = weights
                    .iter_rows()
                    .zip(bias)
                    .map(|(w, b)| dot(w, f) + b)
                    .collect();
                let (loss, d_scores) = head_loss(&scores, target, loss_temperature)?;
                let mut d_weights = Matrix::zeros(classes, dim);
                let mut d_features = vec![0.0; dim];
                for (j, &g) in d_scores.iter().enumerate() {
                    axpy(d_weights.row_mut(j), g, f);
                    axpy(&mut d_features, g, weights.row(j));
                }
                Ok((
                    loss,
                    LayerGradients {
                        d_weights,
                        d_bias: d_scores,
                        d_alpha_raw: Vec::new(),
                        d_scale_raw: 0.0,
                        d_features,
                    },
                ))
            }
            ClassifierParams::Kernelized { weights, series } => {
                let f_hat = normalize(f)?;
                let w_hats = weights
                    .iter_rows()
                    .map(normalize)
                    .collect::<Result<Vec<_>>>()?;
                let ev = series.evaluator();
                let ts: Vec<f64> = w_hats.iter().map(|w| dot(w, &f_hat)).collect();
                let scores = ts.iter().map(|&t| ev.value(t)).collect::<Result<Vec<_>>>()?;
                let (loss, d_scores) = head_loss(&scores, target, loss_temperature)?;

                let mut d_alpha = vec![0.0; series.alpha_raw.len()];
                let mut d_scale_raw = 0.0;
                let mut d_weights = Matrix::zeros(classes, dim);
                let mut d_f_hat = vec![0.0; dim];
                for j in 0..classes {
                    let g = d_scores[j];
                    let t = ts[j];
                    ev.accumulate_basis(t, g, &mut d_alpha)?;
                    d_scale_raw += g * ev.scale_gradient(t)?;
                    let dt = g * ev.derivative(t)?;
                    axpy(&mut d_f_hat, dt, &w_hats[j]);
                    let d_w_hat: Vec<f64> = f_hat.iter().map(|x| dt * x).collect();
                    d_weights
                        .row_mut(j)
                        .copy_from_slice(&normalize_backward(weights.row(j), &d_w_hat)?);
                }
                let d_alpha_raw = if series.mode.is_fixed() {
                    vec![0.0; series.alpha_raw.len()]
                } else {
                    series.activation_backward(&d_alpha)
                };
                Ok((
                    loss,
                    LayerGradients {
                        d_weights,
                        d_bias: Vec::new(),
                        d_alpha_raw,
                        d_scale_raw,
                        d_features: normalize_backward(f, &d_f_hat)?,
                    },
                ))
            }
        }
    }
}

/// Loss and gradient with respect to the unscaled scores.
fn head_loss(scores: &[f64], target: Target<'_>, temperature: f64) -> Result<(f64, Vec<f64>)> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let (loss, grad) = match target {
        Target::Label(y) => softmax_xent(&scaled, y)?,
        Target::Distribution(p) => {
            validate_distribution(p, scores.len())?;
            soft_xent(&scaled, p)?
        }
    };
    Ok((loss, grad.into_iter().map(|g| g / temperature).collect()))
}

fn validate_distribution(p: &[f64], classes: usize) -> Result<()> {
    if p.len() != classes {
        return Err(Error::InvalidTarget(format!(
            "distribution over {} classes, expected {classes}",
            p.len()
        )));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidTarget(format!(
            "target is not a probability distribution (sum {sum})"
        )));
    }
    Ok(())
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| standard_normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}
