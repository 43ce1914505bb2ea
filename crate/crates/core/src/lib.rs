//! Kernelized classification heads on the unit sphere.
//!
//! A linear softmax head scores a feature vector with `w_j . f + b_j`. The
//! kernelized head instead normalizes both sides and scores with a learned
//! dot-product kernel `k(w_j . f / (|w_j| |f|))`, where `k` is a non-negative
//! combination of monomials and two indicator kernels. Non-negative
//! coefficients keep every Gram matrix positive semi-definite.

pub mod active;
pub mod backbone;
pub mod checkpoint;
pub mod checks;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod kernel;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use classifier::{ClassifierParams, LayerGradients, Target};
pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use kernel::{CoeffActivation, GramMatrix, KernelMode, KernelSeries};
pub use matrix::Matrix;
pub use model::Model;
pub use synth::{BayesOracle, MixtureSpec};
pub use trainer::{train, MetricsRecord, TrainConfig};
