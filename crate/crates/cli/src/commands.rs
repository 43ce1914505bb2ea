//! The six experiment commands. Each is a pure function of the config, the
//! files it references and the seed; results go to the metrics log in `out`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use kernelnet::active::{select_kcenter, select_margin, select_random, PoolState};
use kernelnet::checkpoint;
use kernelnet::checks::{
    descent_check, gradient_suite, non_psd_counterexample, psd_suite, series_limit_suite, PropertyResult,
};
use kernelnet::matrix::Matrix;
use kernelnet::rng::derive_seed;
use kernelnet::synth::BayesOracle;
use kernelnet::trainer::evaluate;
use kernelnet::{CoeffActivation, Error, KernelMode, KernelSeries, LabeledDataset};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::experiment::{
    backbone_from, check_input_dim, fit, head_from_name, kernel_from_section, load_data, model_spec,
    HeadKind, ModelSpec, TrainSettings,
};
use crate::metrics::MetricsLog;

pub const CHECKPOINT_NAME: &str = "model.ckpt";
pub const DEFAULT_DISTILL_TEMPERATURE: f64 = 20.0;
pub const DEFAULT_BUDGETS: [f64; 7] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const DEFAULT_SEED_FRACTION: f64 = 0.1;
pub const DEFAULT_GRAD_CONFIGS: usize = 50;
pub const DEFAULT_PSD_DRAWS: usize = 100;
/// Smallest order at which `0.9^m` falls below `1e-10` is 219.
pub const DEFAULT_LIMIT_ORDER: usize = 256;
pub const DEFAULT_LIMIT_TOLERANCE: f64 = 1e-10;

/// One invocation: the config with any `--seed` override applied, the output
/// directory and the effective seed.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: Config,
    pub out: PathBuf,
    pub seed: u64,
}

impl Run {
    pub fn new(mut config: Config, out: PathBuf, seed_override: Option<u64>) -> CliResult<Self> {
        let seed = match seed_override {
            Some(s) => s,
            None => config.require("run", "seed")?,
        };
        config.set("run", "seed", seed.to_string());
        Ok(Self { config, out, seed })
    }

    fn log(&self, command: &str) -> CliResult<MetricsLog> {
        MetricsLog::open(&self.out, command, &self.config.hash(), self.seed)
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

// ---------------------------------------------------------------- gen-data

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenDataReport {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub train_rows: usize,
    pub test_rows: usize,
}

pub fn gen_data(run: &Run) -> CliResult<GenDataReport> {
    let data = load_data(&run.config, run.seed)?;
    if data.spec.is_none() {
        return Err(CliError::Config("gen-data needs [data] source = synthetic".into()));
    }
    let mut log = run.log("gen-data")?;
    let train_path = run.out.join("train.csv");
    let test_path = run.out.join("test.csv");
    data.train.write_csv(&train_path)?;
    data.test.write_csv(&test_path)?;
    for (split, ds, path) in [("train", &data.train, &train_path), ("test", &data.test, &test_path)] {
        log.write(
            "dataset",
            json!({ "split": split, "rows": ds.len(), "class_counts": ds.class_counts(), "file": file_name(path) }),
        )?;
    }
    log.finish()?;
    Ok(GenDataReport {
        train_rows: data.train.len(),
        test_rows: data.test.len(),
        train_path,
        test_path,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub head: String,
    pub lr: f64,
    pub epochs_run: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub bayes_accuracy: Option<f64>,
    pub checkpoint: PathBuf,
}

pub fn train(run: &Run) -> CliResult<TrainReport> {
    let cfg = &run.config;
    let data = load_data(cfg, run.seed)?;
    let spec = model_spec(cfg, data.train.dim(), data.train.num_classes)?;
    let settings = TrainSettings::from_config(cfg)?;
    let mut log = run.log("train")?;
    let outcome = fit(&spec, &data.train, &data.test, &settings, derive_seed(run.seed, "fit"), None)?;
    if let Some(search) = &outcome.lr_search {
        log.write("lr_search", json!({ "scores": search.scores, "chosen": search.chosen }))?;
    }
    for record in &outcome.history {
        log.write("epoch", to_value(record))?;
    }
    let bayes = match (&data.spec, cfg.get_or("train", "bayes", true)?) {
        (Some(spec), true) => Some(BayesOracle::new(spec)?.accuracy(&data.test)?),
        _ => None,
    };
    let checkpoint_path = run.out.join(CHECKPOINT_NAME);
    checkpoint::save(&outcome.model, &checkpoint_path)?;
    let report = TrainReport {
        head: spec.head.name().into(),
        lr: outcome.lr,
        epochs_run: outcome.history.len(),
        train_accuracy: evaluate(&outcome.model, &data.train)?,
        test_accuracy: outcome.test_accuracy,
        bayes_accuracy: bayes,
        checkpoint: checkpoint_path,
    };
    let mut summary = to_value(&report);
    summary["checkpoint"] = json!(CHECKPOINT_NAME);
    log.write("final", summary)?;
    log.finish()?;
    Ok(report)
}

// ---------------------------------------------------------------- ablate

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub kernel: String,
    pub activation: String,
    pub rectify: bool,
    /// `ok`, or `unstable` when training hit a non-finite loss.
    pub status: String,
    pub test_accuracy: Option<f64>,
    pub lr: Option<f64>,
}

/// A kernel variant name: `learned`, `rbf:<gamma>`, `poly:<degree>` or `linear`.
pub fn parse_kernel_variant(name: &str) -> CliResult<KernelMode> {
    let bad = || CliError::Config(format!("[ablate] unknown kernel variant `{name}`"));
    let (kind, arg) = name.split_once(':').unwrap_or((name, ""));
    match kind {
        "learned" => Ok(KernelMode::Learned),
        "linear" => Ok(KernelMode::Linear),
        "rbf" => Ok(KernelMode::FixedGaussianRbf { gamma: arg.parse().map_err(|_| bad())? }),
        "poly" => Ok(KernelMode::FixedPolynomial { degree: arg.parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

/// Every combination of `[ablate] kernels`, `activations` and `rectify`.
/// The activation axis does not change a fixed kernel, so those runs are
/// shared across it.
pub fn ablate(run: &Run) -> CliResult<Vec<AblationRow>> {
    let cfg = &run.config;
    let data = load_data(cfg, run.seed)?;
    let settings = TrainSettings::from_config(cfg)?;
    let kernels: Vec<String> = cfg.list_or(
        "ablate",
        "kernels",
        &["learned", "rbf:0.5", "rbf:1", "rbf:2", "poly:10"].map(String::from),
    )?;
    let activations: Vec<String> =
        cfg.list_or("ablate", "activations", &["relu", "sigmoid", "softmax", "none"].map(String::from))?;
    let rectify: Vec<bool> = cfg.list_or("ablate", "rectify", &[false])?;
    let base = kernel_from_section(cfg, "model")?;
    let mut log = run.log("ablate")?;
    let mut rows = Vec::new();
    let mut shared: BTreeMap<(String, bool), AblationRow> = BTreeMap::new();
    for kernel in &kernels {
        let mode = parse_kernel_variant(kernel)?;
        for act_name in &activations {
            let act = CoeffActivation::parse(act_name)
                .ok_or_else(|| CliError::Config(format!("[ablate] unknown activation `{act_name}`")))?;
            for &rect in &rectify {
                let key = (kernel.clone(), rect);
                let row = match shared.get(&key) {
                    Some(r) if mode.is_fixed() => AblationRow { activation: act_name.clone(), ..r.clone() },
                    _ => {
                        let series = if mode.is_fixed() {
                            KernelSeries::fixed(mode)
                        } else {
                            KernelSeries::learned(base.order, act)
                        };
                        let mut c = cfg.clone();
                        c.set("model", "rectify", rect.to_string());
                        let spec = ModelSpec {
                            head: HeadKind::Kernel(series),
                            backbone: backbone_from(&c, "model", "")?,
                            input_dim: data.train.dim(),
                            classes: data.train.num_classes,
                        };
                        check_input_dim(&spec)?;
                        let seed = derive_seed(run.seed, "fit");
                        let row = match fit(&spec, &data.train, &data.test, &settings, seed, None) {
                            Ok(o) => AblationRow {
                                kernel: kernel.clone(),
                                activation: act_name.clone(),
                                rectify: rect,
                                status: "ok".into(),
                                test_accuracy: Some(o.test_accuracy),
                                lr: Some(o.lr),
                            },
                            Err(CliError::Core(Error::NonFiniteLoss { .. })) => AblationRow {
                                kernel: kernel.clone(),
                                activation: act_name.clone(),
                                rectify: rect,
                                status: "unstable".into(),
                                test_accuracy: None,
                                lr: None,
                            },
                            Err(e) => return Err(e),
                        };
                        shared.insert(key, row.clone());
                        row
                    }
                };
                log.write("variant", to_value(&row))?;
                rows.push(row);
            }
        }
    }
    log.finish()?;
    Ok(rows)
}

// ---------------------------------------------------------------- distill

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistillReport {
    pub temperature: f64,
    pub teacher_accuracy: f64,
    pub students: Vec<StudentRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudentRow {
    pub head: String,
    pub test_accuracy: f64,
    pub lr: f64,
}

/// Trains (or loads) a teacher, then distills it into one student per
/// `[distill] student_heads` entry at temperature `T`.
pub fn distill(run: &Run) -> CliResult<DistillReport> {
    let cfg = &run.config;
    let data = load_data(cfg, run.seed)?;
    let settings = TrainSettings::from_config(cfg)?;
    let temperature = cfg.get_or("distill", "temperature", DEFAULT_DISTILL_TEMPERATURE)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CliError::Config("[distill] temperature must be positive".into()));
    }
    let (dim, classes) = (data.train.dim(), data.train.num_classes);
    let teacher = match cfg.raw("distill", "teacher") {
        Some(path) => {
            let path = PathBuf::from(path);
            if !path.exists() {
                return Err(CliError::Config(format!("[distill] teacher: {} does not exist", path.display())));
            }
            checkpoint::load(&path)?
        }
        None => {
            let head_name = cfg.get_or("distill", "teacher_head", "linear".to_string())?;
            let spec = ModelSpec {
                head: head_from_name(cfg, "model", &head_name)?,
                backbone: backbone_from(cfg, "distill", "teacher_")?,
                input_dim: dim,
                classes,
            };
            check_input_dim(&spec)?;
            let mut teacher_settings = settings.clone();
            teacher_settings.epochs = cfg.get_or("distill", "teacher_epochs", settings.epochs)?;
            fit(&spec, &data.train, &data.test, &teacher_settings, derive_seed(run.seed, "teacher"), None)?.model
        }
    };
    if teacher.input_dim() != dim || teacher.num_classes() != classes {
        return Err(CliError::Config("teacher does not match the data shape".into()));
    }
    let teacher_accuracy = evaluate(&teacher, &data.test)?;
    let logits: Vec<Vec<f64>> = data
        .train
        .features
        .iter_rows()
        .map(|x| teacher.logits(x))
        .collect::<kernelnet::Result<_>>()?;
    let soft_train = data.train.clone().with_teacher_logits(Matrix::from_rows(&logits)?)?;

    let mut log = run.log("distill")?;
    log.write("teacher", json!({ "test_accuracy": teacher_accuracy, "temperature": temperature }))?;
    let heads: Vec<String> =
        cfg.list_or("distill", "student_heads", &["kernel".to_string(), "linear".to_string()])?;
    let mut student_settings = settings.clone();
    // soft-target gradients shrink by T^2, so the default grid grows by T^2
    let scaled: Vec<f64> = settings.lr_grid.iter().map(|lr| lr * temperature * temperature).collect();
    student_settings.lr_grid = cfg.list_or("distill", "student_lr_grid", &scaled)?;
    student_settings.epochs = cfg.get_or("distill", "student_epochs", settings.epochs)?;
    let mut students = Vec::new();
    for head_name in &heads {
        let spec = ModelSpec {
            head: head_from_name(cfg, "model", head_name)?,
            backbone: backbone_from(cfg, "distill", "student_")?,
            input_dim: dim,
            classes,
        };
        check_input_dim(&spec)?;
        let o = fit(
            &spec,
            &soft_train,
            &data.test,
            &student_settings,
            derive_seed(run.seed, "student"),
            Some(temperature),
        )?;
        let row = StudentRow { head: spec.head.name().into(), test_accuracy: o.test_accuracy, lr: o.lr };
        let mut line = to_value(&row);
        line["temperature"] = json!(temperature);
        log.write("student", line)?;
        students.push(row);
    }
    log.finish()?;
    Ok(DistillReport { temperature, teacher_accuracy, students })
}

// ---------------------------------------------------------------- active

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActiveRow {
    pub head: String,
    pub strategy: String,
    pub budget_fraction: f64,
    pub labeled: usize,
    pub test_accuracy: f64,
}

/// One accuracy-versus-budget curve per `(head, strategy)` pair. Budget
/// fractions count the whole labeled set, seed set included.
pub fn active(run: &Run) -> CliResult<Vec<ActiveRow>> {
    let cfg = &run.config;
    let data = load_data(cfg, run.seed)?;
    let settings = TrainSettings::from_config(cfg)?;
    let heads: Vec<String> = cfg.list_or("active", "heads", &["kernel".to_string(), "linear".to_string()])?;
    let strategies: Vec<String> =
        cfg.list_or("active", "strategies", &["random", "margin", "kcenter"].map(String::from))?;
    let budgets: Vec<f64> = cfg.list_or("active", "budgets", &DEFAULT_BUDGETS)?;
    let seed_fraction = cfg.get_or("active", "seed_fraction", DEFAULT_SEED_FRACTION)?;
    let n = data.train.len();
    let seed_count = (seed_fraction * n as f64).round() as usize;
    if !(1..n).contains(&seed_count) {
        return Err(CliError::Config("[active] seed_fraction leaves no seed set or no pool".into()));
    }
    for &b in &budgets {
        if !(seed_fraction..=1.0).contains(&b) {
            return Err(CliError::Config(format!(
                "[active] budget {b} must lie between seed_fraction and 1"
            )));
        }
    }
    for s in &strategies {
        if !["random", "margin", "kcenter"].contains(&s.as_str()) {
            return Err(CliError::Config(format!("[active] unknown strategy `{s}`")));
        }
    }
    let empty = PoolState {
        embeddings: Matrix::zeros(n, 1),
        prediction_scores: Matrix::zeros(n, 1),
        labeled_indices: vec![],
        budget: seed_count,
    };
    let mut seed_set = select_random(&empty, derive_seed(run.seed, "seed-set"))?;
    seed_set.sort_unstable();

    let mut log = run.log("active")?;
    log.write("seed_set", json!({ "size": seed_count, "pool": n }))?;
    let fit_seed = derive_seed(run.seed, "fit");
    let mut rows = Vec::new();
    for head_name in &heads {
        let mut spec = model_spec(cfg, data.train.dim(), data.train.num_classes)?;
        spec.head = head_from_name(cfg, "model", head_name)?;
        let seed_model = fit(&spec, &data.train.subset(&seed_set), &data.test, &settings, fit_seed, None)?.model;
        let mut emb = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for x in data.train.features.iter_rows() {
            emb.push(seed_model.features(x)?);
            scores.push(seed_model.logits(x)?);
        }
        let pool = PoolState {
            embeddings: Matrix::from_rows(&emb)?,
            prediction_scores: Matrix::from_rows(&scores)?,
            labeled_indices: seed_set.clone(),
            budget: 0,
        };
        for strategy in &strategies {
            for &b in &budgets {
                let total = ((b * n as f64).round() as usize).clamp(seed_count, n);
                let state = PoolState { budget: total - seed_count, ..pool.clone() };
                let picked = match strategy.as_str() {
                    "random" => select_random(&state, derive_seed(run.seed, "random-pick"))?,
                    "margin" => select_margin(&state)?,
                    _ => select_kcenter(&state)?,
                };
                let mut labeled: Vec<usize> = seed_set.iter().copied().chain(picked).collect();
                labeled.sort_unstable();
                let subset: LabeledDataset = data.train.subset(&labeled);
                let o = fit(&spec, &subset, &data.test, &settings, fit_seed, None)?;
                let row = ActiveRow {
                    head: head_name.clone(),
                    strategy: strategy.clone(),
                    budget_fraction: b,
                    labeled: labeled.len(),
                    test_accuracy: o.test_accuracy,
                };
                log.write("budget", to_value(&row))?;
                rows.push(row);
            }
        }
    }
    log.finish()?;
    Ok(rows)
}

// ---------------------------------------------------------------- check

/// Runs the gradient, PSD and series-limit suites plus the descent check and
/// logs every result. Pass the results to [`require_all_passed`] to turn a
/// failure into an error.
pub fn check(run: &Run) -> CliResult<Vec<PropertyResult>> {
    let cfg = &run.config;
    let grad_configs = cfg.get_or("check", "grad_configs", DEFAULT_GRAD_CONFIGS)?;
    let psd_draws = cfg.get_or("check", "psd_draws", DEFAULT_PSD_DRAWS)?;
    let limit_order = cfg.get_or("check", "limit_order", DEFAULT_LIMIT_ORDER)?;
    let limit_tol = cfg.get_or("check", "limit_tolerance", DEFAULT_LIMIT_TOLERANCE)?;
    let mut results = vec![gradient_suite(grad_configs, derive_seed(run.seed, "gradients"))?];
    results.extend(psd_suite(psd_draws, derive_seed(run.seed, "psd"))?);
    results.push(series_limit_suite(limit_order, limit_tol));
    results.push(descent_check(derive_seed(run.seed, "descent"))?);
    let (_, min) = non_psd_counterexample()?;
    results.push(PropertyResult {
        name: "unconstrained coefficients can break PSD".into(),
        tolerance: "min eigenvalue <= -0.5".into(),
        passed: min <= -0.5,
        detail: format!("min eigenvalue {min}"),
    });

    let mut log = run.log("check")?;
    for r in &results {
        log.write("property", to_value(r))?;
    }
    log.finish()?;
    Ok(results)
}

pub fn require_all_passed(results: &[PropertyResult]) -> CliResult<()> {
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::PropertyFailure(failed.join("; ")))
    }
}
