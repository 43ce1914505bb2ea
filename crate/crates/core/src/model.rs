//! A classification head on top of an optional MLP backbone.

use crate::backbone::{Mlp, MlpGradients};
use crate::classifier::{ClassifierParams, LayerGradients, Target};
use crate::error::{shape_err, Error, Result};
use crate::kernel::CoeffActivation;
use crate::matrix::{axpy, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    /// `None` feeds inputs straight to the head.
    pub backbone: Option<Mlp>,
    pub head: ClassifierParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub backbone: Option<MlpGradients>,
    pub head: LayerGradients,
}

/// A mutable view of one parameter tensor for the optimizer.
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    /// Whether weight decay applies to this block.
    pub decay: bool,
}

impl Model {
    pub fn head_only(head: ClassifierParams) -> Self {
        Self {
            backbone: None,
            head,
        }
    }

    pub fn with_backbone(backbone: Mlp, head: ClassifierParams) -> Result<Self> {
        if backbone.config.feature_dim() != head.feature_dim() {
            return Err(shape_err(
                format!("head over {} features", backbone.config.feature_dim()),
                head.feature_dim(),
            ));
        }
        Ok(Self {
            backbone: Some(backbone),
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.backbone
            .as_ref()
            .map_or(self.head.feature_dim(), |b| b.config.input_dim())
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        if let Some(b) = &self.backbone {
            b.config.validate()?;
            if b.config.feature_dim() != self.head.feature_dim() {
                return Err(shape_err(b.config.feature_dim(), self.head.feature_dim()));
            }
        }
        Ok(())
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.backbone {
            Some(b) => Ok(b.forward(x)?.0),
            None => Ok(x.to_vec()),
        }
    }

    /// Unscaled class scores.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.scores(&self.features(x)?)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.logits(&self.features(x)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.head.predict(&self.features(x)?)
    }

    pub fn loss_and_grad(
        &self,
        x: &[f64],
        target: Target<'_>,
        loss_temperature: f64,
    ) -> Result<(f64, ModelGradients)> {
        match &self.backbone {
            None => {
                let (loss, head) = self.head.forward_backward(x, target, loss_temperature)?;
                Ok((
                    loss,
                    ModelGradients {
                        backbone: None,
                        head,
                    },
                ))
            }
            Some(b) => {
                let (f, cache) = b.forward(x)?;
                let (loss, head) = self.head.forward_backward(&f, target, loss_temperature)?;
                let (bg, _) = b.backward(&cache, &head.d_features)?;
                Ok((
                    loss,
                    ModelGradients {
                        backbone: Some(bg),
                        head,
                    },
                ))
            }
        }
    }

    pub fn zero_grads(&self) -> ModelGradients {
        let w = self.head.weights();
        let (d_bias, d_alpha_raw) = match &self.head {
            ClassifierParams::Linear { bias, .. } => (vec![0.0; bias.len()], Vec::new()),
            ClassifierParams::Kernelized { series, .. } => {
                (Vec::new(), vec![0.0; series.alpha_raw.len()])
            }
        };
        ModelGradients {
            backbone: self.backbone.as_ref().map(MlpGradients::zeros_like),
            head: LayerGradients {
                d_weights: Matrix::zeros(w.rows(), w.cols()),
                d_bias,
                d_alpha_raw,
                d_scale_raw: 0.0,
                d_features: vec![0.0; self.head.feature_dim()],
            },
        }
    }

    /// Every parameter tensor, in the same order as [`ModelGradients::blocks`].
    pub fn param_blocks_mut(&mut self) -> Vec<ParamBlock<'_>> {
        let mut blocks = Vec::new();
        match &mut self.head {
            ClassifierParams::Linear { weights, bias } => {
                blocks.push(ParamBlock {
                    name: "head.weights".into(),
                    values: weights.as_mut_slice(),
                    decay: true,
                });
                blocks.push(ParamBlock {
                    name: "head.bias".into(),
                    values: bias.as_mut_slice(),
                    decay: true,
                });
            }
            ClassifierParams::Kernelized { weights, series } => {
                let fixed = series.mode.is_fixed();
                // bounded activations need no decay on the coefficients
                let decay_alpha = !fixed && series.activation == CoeffActivation::Relu;
                blocks.push(ParamBlock {
                    name: "head.weights".into(),
                    values: weights.as_mut_slice(),
                    decay: true,
                });
                blocks.push(ParamBlock {
                    name: "head.alpha_raw".into(),
                    values: series.alpha_raw.as_mut_slice(),
                    decay: decay_alpha,
                });
                blocks.push(ParamBlock {
                    name: "head.scale_raw".into(),
                    values: std::slice::from_mut(&mut series.scale_raw),
                    decay: fixed,
                });
            }
        }
        if let Some(b) = &mut self.backbone {
            for (i, layer) in b.layers.iter_mut().enumerate() {
                blocks.push(ParamBlock {
                    name: format!("backbone.{i}.weights"),
                    values: layer.weights.as_mut_slice(),
                    decay: true,
                });
                blocks.push(ParamBlock {
                    name: format!("backbone.{i}.bias"),
                    values: layer.bias.as_mut_slice(),
                    decay: true,
                });
            }
        }
        blocks
    }
}

impl ModelGradients {
    /// Gradient tensors in [`Model::param_blocks_mut`] order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.head.d_weights.as_slice()];
        if self.head.d_alpha_raw.is_empty() {
            out.push(&self.head.d_bias);
        } else {
            out.push(&self.head.d_alpha_raw);
            out.push(std::slice::from_ref(&self.head.d_scale_raw));
        }
        if let Some(b) = &self.backbone {
            for layer in &b.layers {
                out.push(layer.weights.as_slice());
                out.push(&layer.bias);
            }
        }
        out
    }

    /// `self += scale * other`. Feature gradients are not accumulated.
    pub fn add_scaled(&mut self, other: &ModelGradients, scale: f64) -> Result<()> {
        let h = &mut self.head;
        let o = &other.head;
        if h.d_weights.rows() != o.d_weights.rows()
            || h.d_weights.cols() != o.d_weights.cols()
            || h.d_bias.len() != o.d_bias.len()
            || h.d_alpha_raw.len() != o.d_alpha_raw.len()
        {
            return Err(shape_err("matching head gradients", "different shapes"));
        }
        axpy(h.d_weights.as_mut_slice(), scale, o.d_weights.as_slice());
        axpy(&mut h.d_bias, scale, &o.d_bias);
        axpy(&mut h.d_alpha_raw, scale, &o.d_alpha_raw);
        h.d_scale_raw += scale * o.d_scale_raw;
        match (&mut self.backbone, &other.backbone) {
            (None, None) => Ok(()),
            (Some(a), Some(b)) if a.layers.len() == b.layers.len() => {
                for (la, lb) in a.layers.iter_mut().zip(&b.layers) {
                    if la.bias.len() != lb.bias.len() {
                        return Err(shape_err(la.bias.len(), lb.bias.len()));
                    }
                    axpy(la.weights.as_mut_slice(), scale, lb.weights.as_slice());
                    axpy(&mut la.bias, scale, &lb.bias);
                }
                Ok(())
            }
            _ => Err(Error::ShapeMismatch {
                expected: "matching backbone gradients".into(),
                actual: "different structure".into(),
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}
