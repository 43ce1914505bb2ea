//! Small fully connected feature extractor with hand-written backprop.

use crate::error::{shape_err, Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::rng::{standard_normal, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

impl HiddenActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => z.max(0.0),
            HiddenActivation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the pre-activation; ReLU uses 0 at 0.
    fn slope(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenActivation::Tanh => {
                let a = z.tanh();
                1.0 - a * a
            }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Some(Self::Relu),
            "tanh" => Some(Self::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HiddenActivation::Relu => "relu",
            HiddenActivation::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    /// Input width followed by each layer's output width; the last entry is
    /// the feature dimension.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    /// Apply ReLU to the output features.
    pub rectify_features: bool,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "an MLP needs an input size and at least one layer".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub layers: Vec<Dense>,
}

/// Values retained by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// He-style initialization: weights `N(0, 2/fan_in)`, zero bias.
    pub fn new(config: MlpConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| std * standard_normal(rng))
                    .collect();
                Dense {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn from_layers(config: MlpConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layer_sizes.len() - 1 {
            return Err(shape_err(
                format!("{} layers", config.layer_sizes.len() - 1),
                layers.len(),
            ));
        }
        for (i, (layer, w)) in layers.iter().zip(config.layer_sizes.windows(2)).enumerate() {
            if layer.weights.rows() != w[1] || layer.weights.cols() != w[0] || layer.bias.len() != w[1]
            {
                return Err(shape_err(
                    format!("layer {i} of shape {}x{}", w[1], w[0]),
                    format!("{}x{}", layer.weights.rows(), layer.weights.cols()),
                ));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.config.input_dim() {
            return Err(shape_err(
                format!("input of length {}", self.config.input_dim()),
                x.len(),
            ));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z: Vec<f64> = layer
                .weights
                .iter_rows()
                .zip(&layer.bias)
                .map(|(w, b)| dot(w, &a) + b)
                .collect();
            let out = if i < last {
                z.iter().map(|&v| self.config.hidden_activation.apply(v)).collect()
            } else if self.config.rectify_features {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut a, out));
            pre_activations.push(z);
        }
        Ok((
            a,
            MlpCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, d_features: &[f64]) -> Result<(MlpGradients, Vec<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(shape_err(
                format!("cache for {} layers", self.layers.len()),
                cache.inputs.len(),
            ));
        }
        if d_features.len() != self.config.feature_dim() {
            return Err(shape_err(self.config.feature_dim(), d_features.len()));
        }
        let last = self.layers.len() - 1;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut upstream = d_features.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let z = &cache.pre_activations[i];
            let dz: Vec<f64> = if i < last {
                let act = self.config.hidden_activation;
                upstream.iter().zip(z).map(|(g, &v)| g * act.slope(v)).collect()
            } else if self.config.rectify_features {
                upstream
                    .iter()
                    .zip(z)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect()
            } else {
                upstream
            };
            let input = &cache.inputs[i];
            let mut d_w = Matrix::zeros(layer.weights.rows(), layer.weights.cols());
            let mut d_in = vec![0.0; layer.weights.cols()];
            for (r, &g) in dz.iter().enumerate() {
                axpy(d_w.row_mut(r), g, input);
                axpy(&mut d_in, g, layer.weights.row(r));
            }
            grads.push(Dense {
                weights: d_w,
                bias: dz,
            });
            upstream = d_in;
        }
        grads.reverse();
        Ok((MlpGradients { layers: grads }, upstream))
    }
}

impl MlpGradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }
}
