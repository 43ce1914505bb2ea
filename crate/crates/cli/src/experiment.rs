//! Building blocks shared by the commands: data loading, model construction
//! from config sections, and fitting with the learning-rate grid.

use std::path::PathBuf;

use kernelnet::backbone::{HiddenActivation, Mlp, MlpConfig};
use kernelnet::checkpoint::kernel_from_pairs;
use kernelnet::rng::{derive_seed, seeded};
use kernelnet::synth::{generate_dataset, MixtureSpec, SAMPLES_PER_CLASS};
use kernelnet::trainer::{
    evaluate, select_learning_rate, train, LrSearch, DEFAULT_BATCH_SIZE, DEFAULT_LR_GRID,
    DEFAULT_MOMENTUM, DEFAULT_WARMUP_FRACTION, DEFAULT_WEIGHT_DECAY,
};
use kernelnet::{ClassifierParams, KernelSeries, LabeledDataset, MetricsRecord, Model, TrainConfig};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;

pub struct DataSplit {
    /// Present for generated data.
    pub spec: Option<MixtureSpec>,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Train and test sets from `[data]`: `source = synthetic` (default) draws
/// both from one set of centers; `source = csv` reads `train_path` and
/// `test_path`.
pub fn load_data(cfg: &Config, seed: u64) -> CliResult<DataSplit> {
    match cfg.get_or("data", "source", "synthetic".to_string())?.as_str() {
        "synthetic" => {
            let n_train = cfg.get_or("data", "n_per_class", SAMPLES_PER_CLASS)?;
            let n_test = cfg.get_or("data", "test_per_class", SAMPLES_PER_CLASS)?;
            let spec = MixtureSpec::generate(derive_seed(seed, "centers"));
            let train = generate_dataset(&spec, n_train, derive_seed(seed, "train-data"))?;
            let test = generate_dataset(&spec, n_test, derive_seed(seed, "test-data"))?;
            Ok(DataSplit { spec: Some(spec), train, test })
        }
        "csv" => {
            let classes = cfg.get_or("data", "num_classes", 2usize)?;
            let read = |key: &str| -> CliResult<LabeledDataset> {
                let path: PathBuf = cfg.require("data", key)?;
                if !path.exists() {
                    return Err(CliError::Config(format!("[data] {key}: {} does not exist", path.display())));
                }
                Ok(LabeledDataset::read_csv(&path, classes)?)
            };
            Ok(DataSplit { spec: None, train: read("train_path")?, test: read("test_path")? })
        }
        other => Err(CliError::Config(format!("[data] source: unknown source `{other}`"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadKind {
    Linear,
    Kernel(KernelSeries),
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::Kernel(_) => "kernel",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub head: HeadKind,
    pub backbone: Option<MlpConfig>,
    pub input_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn feature_dim(&self) -> usize {
        self.backbone.as_ref().map_or(self.input_dim, |b| b.feature_dim())
    }

    /// Backbone first, then the head, from one stream seeded by `seed`.
    pub fn build(&self, seed: u64) -> CliResult<Model> {
        let mut rng = seeded(seed);
        let backbone = self.backbone.clone().map(|c| Mlp::new(c, &mut rng)).transpose()?;
        let d = self.feature_dim();
        let head = match &self.head {
            HeadKind::Linear => ClassifierParams::linear(self.classes, d, &mut rng),
            HeadKind::Kernel(s) => ClassifierParams::kernelized(self.classes, d, s.clone(), &mut rng),
        };
        Ok(match backbone {
            Some(b) => Model::with_backbone(b, head)?,
            None => Model::head_only(head),
        })
    }
}

/// The kernel block of a section: `mode`, `order`, `activation`,
/// `act_temperature`, `gamma`, `degree`.
pub fn kernel_from_section(cfg: &Config, section: &str) -> CliResult<KernelSeries> {
    Ok(kernel_from_pairs(|k| cfg.raw(section, k).map(str::to_string))?)
}

pub fn head_from_name(cfg: &Config, section: &str, name: &str) -> CliResult<HeadKind> {
    match name {
        "linear" | "softmax" => Ok(HeadKind::Linear),
        "kernel" | "kernelized" => Ok(HeadKind::Kernel(kernel_from_section(cfg, section)?)),
        other => Err(CliError::Config(format!("[{section}] unknown head `{other}`"))),
    }
}

/// `none`, or comma-separated layer sizes such as `3, 64, 16`.
pub fn parse_layers(section: &str, key: &str, value: &str) -> CliResult<Option<Vec<usize>>> {
    if value.trim() == "none" {
        return Ok(None);
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("[{section}] {key}: bad layer size `{s}`")))
        })
        .collect::<CliResult<Vec<usize>>>()
        .map(Some)
}

/// Backbone from `<prefix>backbone`, `<prefix>hidden_activation` and
/// `<prefix>rectify` in `section`.
pub fn backbone_from(cfg: &Config, section: &str, prefix: &str) -> CliResult<Option<MlpConfig>> {
    let key = format!("{prefix}backbone");
    let sizes = parse_layers(section, &key, cfg.raw(section, &key).unwrap_or("none"))?;
    let rectify: bool = cfg.get_or(section, &format!("{prefix}rectify"), false)?;
    let Some(layer_sizes) = sizes else {
        if rectify {
            return Err(CliError::Config(format!(
                "[{section}] {prefix}rectify needs a backbone"
            )));
        }
        return Ok(None);
    };
    let act_name = cfg.get_or(section, &format!("{prefix}hidden_activation"), "relu".to_string())?;
    let hidden_activation = HiddenActivation::parse(&act_name)
        .ok_or_else(|| CliError::Config(format!("[{section}] unknown hidden activation `{act_name}`")))?;
    let config = MlpConfig { layer_sizes, hidden_activation, rectify_features: rectify };
    config.validate()?;
    Ok(Some(config))
}

/// The `[model]` section against data of the given shape.
pub fn model_spec(cfg: &Config, input_dim: usize, classes: usize) -> CliResult<ModelSpec> {
    let head_name = cfg.get_or("model", "head", "kernel".to_string())?;
    let spec = ModelSpec {
        head: head_from_name(cfg, "model", &head_name)?,
        backbone: backbone_from(cfg, "model", "")?,
        input_dim,
        classes,
    };
    check_input_dim(&spec)?;
    Ok(spec)
}

pub fn check_input_dim(spec: &ModelSpec) -> CliResult<()> {
    if let Some(b) = &spec.backbone {
        if b.input_dim() != spec.input_dim {
            return Err(CliError::Config(format!(
                "backbone expects {} inputs but the data has {}",
                b.input_dim(),
                spec.input_dim
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    /// Fixed base rate; `None` searches `lr_grid`.
    pub lr: Option<f64>,
    pub lr_grid: Vec<f64>,
    pub holdout_fraction: f64,
    pub warmup_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl TrainSettings {
    pub fn from_config(cfg: &Config) -> CliResult<Self> {
        let lr = match cfg.raw("train", "lr") {
            None | Some("auto") => None,
            Some(_) => Some(cfg.require("train", "lr")?),
        };
        let s = Self {
            epochs: cfg.get_or("train", "epochs", DEFAULT_EPOCHS)?,
            batch_size: cfg.get_or("train", "batch_size", DEFAULT_BATCH_SIZE)?,
            lr,
            lr_grid: cfg.list_or("train", "lr_grid", &DEFAULT_LR_GRID)?,
            holdout_fraction: cfg.get_or("train", "holdout_fraction", DEFAULT_HOLDOUT_FRACTION)?,
            warmup_fraction: cfg.get_or("train", "warmup_fraction", DEFAULT_WARMUP_FRACTION)?,
            momentum: cfg.get_or("train", "momentum", DEFAULT_MOMENTUM)?,
            weight_decay: cfg.get_or("train", "weight_decay", DEFAULT_WEIGHT_DECAY)?,
        };
        if s.lr_grid.is_empty() {
            return Err(CliError::Config("[train] lr_grid is empty".into()));
        }
        if !(0.0..1.0).contains(&s.holdout_fraction) || !(0.0..=1.0).contains(&s.warmup_fraction) {
            return Err(CliError::Config("[train] fractions must lie in [0, 1)".into()));
        }
        Ok(s)
    }

    pub fn config_for(&self, n: usize, lr: f64, seed: u64, distill: Option<f64>) -> TrainConfig {
        let mut c = TrainConfig::for_dataset(n, self.epochs, self.batch_size, lr, self.warmup_fraction, seed);
        c.momentum = self.momentum;
        c.weight_decay = self.weight_decay;
        c.distill_temperature = distill;
        c
    }
}

pub struct FitOutcome {
    pub model: Model,
    pub history: Vec<MetricsRecord>,
    pub lr: f64,
    pub lr_search: Option<LrSearch>,
    pub test_accuracy: f64,
}

/// Builds a fresh model from `spec`, picks the base rate and trains on
/// `train`. Initialization and shuffling seeds both derive from `seed`.
pub fn fit(
    spec: &ModelSpec,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    settings: &TrainSettings,
    seed: u64,
    distill: Option<f64>,
) -> CliResult<FitOutcome> {
    let init_seed = derive_seed(seed, "init");
    let shuffle_seed = derive_seed(seed, "shuffle");
    let (lr, lr_search) = match settings.lr {
        Some(lr) => (lr, None),
        None => {
            let template = settings.config_for(train_set.len(), settings.lr_grid[0], shuffle_seed, distill);
            let search = select_learning_rate(
                || spec.build(init_seed).map_err(core_error),
                train_set,
                &settings.lr_grid,
                settings.holdout_fraction,
                &template,
                settings.warmup_fraction,
            )?;
            (search.chosen, Some(search))
        }
    };
    let mut model = spec.build(init_seed)?;
    let cfg = settings.config_for(train_set.len(), lr, shuffle_seed, distill);
    let history = train(&mut model, train_set, Some(test_set), &cfg)?;
    let test_accuracy = evaluate(&model, test_set)?;
    Ok(FitOutcome { model, history, lr, lr_search, test_accuracy })
}

fn core_error(e: CliError) -> kernelnet::Error {
    match e {
        CliError::Core(c) => c,
        other => kernelnet::Error::InvalidConfig(other.to_string()),
    }
}
