//! Plain-text model checkpoints and the kernel key-value block.
//!
//! A checkpoint is one `key value...` line per item. Arrays carry their shape
//! first (`weights 2 3 v11 v12 ...`). Floats use Rust's shortest round-trip
//! formatting, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::backbone::{Dense, HiddenActivation, Mlp, MlpConfig};
use crate::classifier::ClassifierParams;
use crate::error::{Error, Result};
use crate::kernel::{CoeffActivation, KernelMode, KernelSeries, DEFAULT_EQ_TOLERANCE, DEFAULT_ORDER};
use crate::matrix::Matrix;
use crate::model::Model;

const MAGIC: &str = "kernelnet-checkpoint 1";

/// Key-value pairs describing a kernel: `mode`, `order`, `activation`,
/// `act_temperature`, plus `gamma` or `degree` for fixed modes.
pub fn kernel_to_pairs(series: &KernelSeries) -> Vec<(String, String)> {
    let mut out = vec![];
    match series.mode {
        KernelMode::Learned => out.push(("mode".into(), "learned".into())),
        KernelMode::FixedPolynomial { degree } => {
            out.push(("mode".into(), "poly".into()));
            out.push(("degree".into(), degree.to_string()));
        }
        KernelMode::FixedGaussianRbf { gamma } => {
            out.push(("mode".into(), "rbf".into()));
            out.push(("gamma".into(), gamma.to_string()));
        }
        KernelMode::Linear => out.push(("mode".into(), "linear".into())),
    }
    out.push(("order".into(), series.order.to_string()));
    out.push(("activation".into(), series.activation.name().into()));
    out.push(("act_temperature".into(), series.act_temperature.to_string()));
    out
}

/// Builds a freshly initialized kernel from key-value pairs. Missing keys take
/// the defaults: learned mode, order 10, ReLU, the activation's default
/// temperature, `gamma = 1`, `degree = 10`.
pub fn kernel_from_pairs(get: impl Fn(&str) -> Option<String>) -> Result<KernelSeries> {
    let parse_f = |key: &str, default: f64| -> Result<f64> {
        get(key).map_or(Ok(default), |v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: not a number: {v}")))
        })
    };
    let order = match get("order") {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("order: not an integer: {v}")))?,
        None => DEFAULT_ORDER,
    };
    let activation = match get("activation") {
        Some(v) => CoeffActivation::parse(&v)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown activation `{v}`")))?,
        None => CoeffActivation::Relu,
    };
    let mode_name = get("mode").unwrap_or_else(|| "learned".into());
    let mode = match mode_name.trim() {
        "learned" => KernelMode::Learned,
        "poly" | "polynomial" => KernelMode::FixedPolynomial {
            degree: parse_f("degree", 10.0)? as u32,
        },
        "rbf" | "gaussian" => KernelMode::FixedGaussianRbf {
            gamma: parse_f("gamma", 1.0)?,
        },
        "linear" => KernelMode::Linear,
        other => return Err(Error::InvalidConfig(format!("unknown kernel mode `{other}`"))),
    };
    let mut series = if mode.is_fixed() {
        KernelSeries::fixed(mode)
    } else {
        KernelSeries::learned(order, activation)
    };
    if !mode.is_fixed() {
        series.act_temperature = parse_f("act_temperature", activation.default_temperature())?;
    } else {
        series.act_temperature = parse_f("act_temperature", 1.0)?;
    }
    series.validate()?;
    Ok(series)
}

fn push_array(out: &mut String, key: &str, shape: &[usize], values: &[f64]) {
    out.push_str(key);
    for s in shape {
        let _ = write!(out, " {s}");
    }
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

pub fn to_text(model: &Model) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let w = model.head.weights();
    match &model.head {
        ClassifierParams::Linear { bias, .. } => {
            out.push_str("head linear\n");
            push_array(&mut out, "weights", &[w.rows(), w.cols()], w.as_slice());
            push_array(&mut out, "bias", &[bias.len()], bias);
        }
        ClassifierParams::Kernelized { series, .. } => {
            out.push_str("head kernelized\n");
            push_array(&mut out, "weights", &[w.rows(), w.cols()], w.as_slice());
            for (k, v) in kernel_to_pairs(series) {
                let _ = writeln!(out, "kernel.{k} {v}");
            }
            let _ = writeln!(out, "kernel.eq_tolerance {}", series.eq_tolerance);
            let _ = writeln!(out, "kernel.scale_raw {}", series.scale_raw);
            push_array(&mut out, "kernel.alpha_raw", &[series.alpha_raw.len()], &series.alpha_raw);
        }
    }
    match &model.backbone {
        None => out.push_str("backbone none\n"),
        Some(b) => {
            let sizes: Vec<String> = b.config.layer_sizes.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(out, "backbone.layer_sizes {}", sizes.join(" "));
            let _ = writeln!(out, "backbone.hidden_activation {}", b.config.hidden_activation.name());
            let _ = writeln!(out, "backbone.rectify_features {}", b.config.rectify_features);
            for (i, l) in b.layers.iter().enumerate() {
                push_array(
                    &mut out,
                    &format!("backbone.{i}.weights"),
                    &[l.weights.rows(), l.weights.cols()],
                    l.weights.as_slice(),
                );
                push_array(&mut out, &format!("backbone.{i}.bias"), &[l.bias.len()], &l.bias);
            }
        }
    }
    out
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("checkpoint is missing `{key}`")))
    }

    fn matrix(&self, key: &str) -> Result<Matrix> {
        let nums = parse_floats(key, self.get(key)?)?;
        if nums.len() < 2 {
            return Err(Error::Parse(format!("`{key}` lacks a shape")));
        }
        let (r, c) = (nums[0] as usize, nums[1] as usize);
        Matrix::from_vec(r, c, nums[2..].to_vec())
            .map_err(|_| Error::Parse(format!("`{key}` has the wrong number of values")))
    }

    fn vector(&self, key: &str) -> Result<Vec<f64>> {
        let nums = parse_floats(key, self.get(key)?)?;
        match nums.split_first() {
            Some((&n, rest)) if n as usize == rest.len() => Ok(rest.to_vec()),
            _ => Err(Error::Parse(format!("`{key}` has the wrong number of values"))),
        }
    }

    fn float(&self, key: &str) -> Result<f64> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Parse(format!("`{key}`: not a number: {v}")))
    }
}

fn parse_floats(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("`{key}`: not a number: {t}")))
        })
        .collect()
}

pub fn from_text(text: &str) -> Result<Model> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(Error::Parse("not a kernelnet checkpoint".into()));
    }
    let mut map = BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        map.insert(k.to_string(), v.trim().to_string());
    }
    let fields = Fields(map);

    let weights = fields.matrix("weights")?;
    let head = match fields.get("head")? {
        "linear" => ClassifierParams::Linear {
            weights,
            bias: fields.vector("bias")?,
        },
        "kernelized" => {
            let mut series = kernel_from_pairs(|k| {
                fields.0.get(&format!("kernel.{k}")).cloned()
            })?;
            series.act_temperature = fields.float("kernel.act_temperature")?;
            series.eq_tolerance = fields
                .float("kernel.eq_tolerance")
                .unwrap_or(DEFAULT_EQ_TOLERANCE);
            series.scale_raw = fields.float("kernel.scale_raw")?;
            series.alpha_raw = fields.vector("kernel.alpha_raw")?;
            series.validate()?;
            ClassifierParams::Kernelized { weights, series }
        }
        other => return Err(Error::Parse(format!("unknown head `{other}`"))),
    };

    let backbone = if fields.0.get("backbone").map(String::as_str) == Some("none") {
        None
    } else {
        let sizes = fields
            .get("backbone.layer_sizes")?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::Parse(format!("bad layer size {t}"))))
            .collect::<Result<Vec<_>>>()?;
        let hidden = fields.get("backbone.hidden_activation")?;
        let config = MlpConfig {
            layer_sizes: sizes,
            hidden_activation: HiddenActivation::parse(hidden)
                .ok_or_else(|| Error::Parse(format!("unknown activation {hidden}")))?,
            rectify_features: fields.get("backbone.rectify_features")? == "true",
        };
        let layers = (0..config.layer_sizes.len().saturating_sub(1))
            .map(|i| {
                Ok(Dense {
                    weights: fields.matrix(&format!("backbone.{i}.weights"))?,
                    bias: fields.vector(&format!("backbone.{i}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(Mlp::from_layers(config, layers)?)
    };
    let model = Model { backbone, head };
    model.validate()?;
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_text(&std::fs::read_to_string(path)?)
}
