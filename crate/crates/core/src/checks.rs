//! Numerical property suites: finite-difference gradient checks, positive
//! semi-definiteness of Gram matrices, and the monomial-limit check.
//!
//! The finite-difference oracle here only ever calls forward losses; it never
//! touches the analytic backward code it is checking.

use serde::Serialize;

use crate::backbone::{HiddenActivation, Mlp, MlpConfig};
use crate::classifier::{ClassifierParams, Target};
use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::kernel::{gram_matrix, CoeffActivation, GramMatrix, KernelMode, KernelSeries};
use crate::losses::{soften, TeacherTargets};
use crate::matrix::{norm, Matrix};
use crate::model::Model;
use crate::rng::{bounded, seeded, standard_normal, unit_uniform, Rng};
use crate::synth::{generate_dataset, MixtureSpec};
use crate::trainer::{sgd_step, TrainConfig};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub tolerance: String,
    pub passed: bool,
    pub detail: String,
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel_error: f64,
    pub worst_entry: String,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            failures: 0,
            worst_rel_error: 0.0,
            worst_entry: String::new(),
        }
    }

    fn record(&mut self, name: &str, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        let ok = diff <= GRAD_ABS_FLOOR || diff <= GRAD_REL_TOL * scale;
        if !ok {
            self.failures += 1;
        }
        // entries inside the absolute floor do not count toward the worst case
        if diff > GRAD_ABS_FLOOR && rel > self.worst_rel_error {
            self.worst_rel_error = rel;
            self.worst_entry = format!("{name}: analytic {analytic:e} vs numeric {numeric:e}");
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        if other.worst_rel_error > self.worst_rel_error {
            self.worst_rel_error = other.worst_rel_error;
            self.worst_entry = other.worst_entry;
        }
    }
}

/// Compares every analytic parameter gradient of `model`, plus the gradient
/// passed to the head's input features, against central differences.
pub fn gradient_check(
    model: &Model,
    x: &[f64],
    target: Target<'_>,
    loss_temperature: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grad(x, target, loss_temperature)?;
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
    let mut report = GradCheckReport::new();

    let mut probe = model.clone();
    let names: Vec<String> = probe.param_blocks_mut().iter().map(|b| b.name.clone()).collect();
    for (bi, name) in names.iter().enumerate() {
        let len = analytic[bi].len();
        for k in 0..len {
            let orig = probe.param_blocks_mut()[bi].values[k];
            probe.param_blocks_mut()[bi].values[k] = orig + FD_STEP;
            let up = probe.loss_and_grad(x, target, loss_temperature)?.0;
            probe.param_blocks_mut()[bi].values[k] = orig - FD_STEP;
            let dn = probe.loss_and_grad(x, target, loss_temperature)?.0;
            probe.param_blocks_mut()[bi].values[k] = orig;
            report.record(&format!("{name}[{k}]"), analytic[bi][k], (up - dn) / (2.0 * FD_STEP));
        }
    }

    let f = model.features(x)?;
    for k in 0..f.len() {
        let mut p = f.clone();
        p[k] += FD_STEP;
        let up = model.head.forward_backward(&p, target, loss_temperature)?.0;
        p[k] -= 2.0 * FD_STEP;
        let dn = model.head.forward_backward(&p, target, loss_temperature)?.0;
        report.record(
            &format!("d_features[{k}]"),
            grads.head.d_features[k],
            (up - dn) / (2.0 * FD_STEP),
        );
    }
    Ok(report)
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Raw coefficients bounded away from the ReLU kink.
fn random_raw_coefficients(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = 0.1 + 1.4 * unit_uniform(rng);
            if unit_uniform(rng) < 0.25 {
                -mag
            } else {
                mag
            }
        })
        .collect()
}

/// One random end-to-end configuration for the gradient suite.
pub struct RandomCase {
    pub model: Model,
    pub input: Vec<f64>,
    pub label: usize,
    pub soft_target: Option<Vec<f64>>,
    pub loss_temperature: f64,
    pub description: String,
}

pub fn random_case(rng: &mut Rng, index: usize) -> Result<RandomCase> {
    let activations = [
        CoeffActivation::Relu,
        CoeffActivation::Sigmoid,
        CoeffActivation::Softmax,
    ];
    let activation = activations[index % 3];
    let classes = [2, 5, 10][(index / 3) % 3];
    let dim = [3, 8][(index / 9) % 2];
    let with_backbone = index % 2 == 1;
    let distill = index % 4 >= 2;

    let mut series = KernelSeries::learned(10, activation);
    series.alpha_raw = random_raw_coefficients(rng, 13);
    let head = if index % 10 == 7 {
        ClassifierParams::linear(classes, dim, rng)
    } else {
        ClassifierParams::kernelized(classes, dim, series, rng)
    };
    let (model, input) = if with_backbone {
        let input_dim = 2 + bounded(rng, 4);
        let hidden = 3 + bounded(rng, 6);
        let mlp = Mlp::new(
            MlpConfig {
                layer_sizes: vec![input_dim, hidden, dim],
                hidden_activation: if index % 3 == 0 {
                    HiddenActivation::Relu
                } else {
                    HiddenActivation::Tanh
                },
                rectify_features: false,
            },
            rng,
        )?;
        (Model::with_backbone(mlp, head)?, random_vec(rng, input_dim))
    } else {
        (Model::head_only(head), random_vec(rng, dim))
    };
    let label = bounded(rng, classes);
    let (soft_target, loss_temperature) = if distill {
        let t = 0.5 + 4.0 * unit_uniform(rng);
        let teacher = TeacherTargets::new(random_vec(rng, classes), t)?;
        (Some(soften(&teacher)), t)
    } else {
        (None, model.head.default_loss_temperature())
    };
    let description = format!(
        "case {index}: {} head, {} coefficients, L={classes}, d={dim}, backbone={with_backbone}, {}",
        if model.head.is_kernelized() { "kernelized" } else { "linear" },
        activation.name(),
        if distill { "soft target" } else { "hard label" }
    );
    Ok(RandomCase {
        model,
        input,
        label,
        soft_target,
        loss_temperature,
        description,
    })
}

/// Runs [`gradient_check`] over `configs` random end-to-end configurations.
pub fn gradient_suite(configs: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = seeded(seed);
    let mut total = GradCheckReport::new();
    let mut failing_cases = Vec::new();
    for i in 0..configs {
        let case = random_case(&mut rng, i)?;
        let target = match &case.soft_target {
            Some(p) => Target::Distribution(p),
            None => Target::Label(case.label),
        };
        let r = gradient_check(&case.model, &case.input, target, case.loss_temperature)?;
        if r.failures > 0 {
            failing_cases.push(format!("{} ({})", case.description, r.worst_entry));
        }
        total.merge(r);
    }
    Ok(PropertyResult {
        name: format!("gradient check over {configs} random configurations"),
        tolerance: format!("{GRAD_REL_TOL:e} relative, {GRAD_ABS_FLOOR:e} absolute floor, h={FD_STEP:e}"),
        passed: total.failures == 0,
        detail: if failing_cases.is_empty() {
            format!("{} entries checked, worst relative error {:.3e}", total.checked, total.worst_rel_error)
        } else {
            format!("{} of {} entries failed: {}", total.failures, total.checked, failing_cases.join("; "))
        },
    })
}

/// A random kernel whose activated coefficients are non-negative.
pub fn random_psd_series(rng: &mut Rng) -> KernelSeries {
    match bounded(rng, 6) {
        0 => {
            let mut s = KernelSeries::fixed(KernelMode::FixedGaussianRbf {
                gamma: 0.1 + 3.0 * unit_uniform(rng),
            });
            s.scale_raw = unit_uniform(rng) * 2.0;
            s
        }
        1 => {
            let mut s = KernelSeries::fixed(KernelMode::FixedPolynomial {
                degree: 1 + bounded(rng, 12) as u32,
            });
            s.scale_raw = unit_uniform(rng) * 2.0;
            s
        }
        k => {
            let act = [
                CoeffActivation::Relu,
                CoeffActivation::Sigmoid,
                CoeffActivation::Softmax,
                CoeffActivation::Relu,
            ][k - 2];
            let order = bounded(rng, 13);
            let mut s = KernelSeries::learned(order, act);
            s.alpha_raw = random_vec(rng, order + 3);
            s
        }
    }
}

/// Random unit points on `S^{dim-1}`, occasionally with duplicated and
/// antipodal points so the indicator terms fire.
pub fn random_sphere_points(rng: &mut Rng, count: usize, dim: usize) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let choice = bounded(rng, 10);
        let p = if choice == 0 && !rows.is_empty() {
            rows[bounded(rng, rows.len())].clone()
        } else if choice == 1 && !rows.is_empty() {
            rows[bounded(rng, rows.len())].iter().map(|v| -v).collect()
        } else {
            loop {
                let v = random_vec(rng, dim);
                let n = norm(&v);
                if n > 1e-6 {
                    break v.iter().map(|x| x / n).collect();
                }
            }
        };
        rows.push(p);
    }
    Matrix::from_rows(&rows).expect("equal-length rows")
}

fn psd_ok(g: &GramMatrix) -> (bool, f64) {
    let min = g.min_eigenvalue();
    (min >= -1e-8 * g.point_count() as f64, min)
}

/// Minimum Gram eigenvalues of random PSD kernels, their conic combinations
/// and pointwise products.
pub fn psd_suite(draws: usize, seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = seeded(seed);
    let names = ["single kernel", "conic combination", "pointwise product"];
    let mut failures = [0usize; 3];
    let mut worst = [f64::INFINITY; 3];
    for _ in 0..draws {
        let n = 1 + bounded(&mut rng, 20);
        let dim = 2 + bounded(&mut rng, 5);
        let points = random_sphere_points(&mut rng, n, dim);
        let a = random_psd_series(&mut rng);
        let b = random_psd_series(&mut rng);
        let ga = gram_matrix(&a, &points)?;
        let gb = gram_matrix(&b, &points)?;
        let (la, lb) = (3.0 * unit_uniform(&mut rng), 3.0 * unit_uniform(&mut rng));
        let variants = [ga.clone(), ga.conic(la, &gb, lb)?, ga.hadamard(&gb)?];
        for (k, g) in variants.iter().enumerate() {
            let (ok, min) = psd_ok(g);
            // scale-free view of the smallest eigenvalue
            worst[k] = worst[k].min(min / g.point_count() as f64);
            if !ok {
                failures[k] += 1;
            }
        }
    }
    Ok(names
        .iter()
        .enumerate()
        .map(|(k, name)| PropertyResult {
            name: format!("Gram PSD, {name}, {draws} draws"),
            tolerance: "min eigenvalue >= -1e-8 * N".into(),
            passed: failures[k] == 0,
            detail: format!("{} failures, smallest eigenvalue / N = {:.3e}", failures[k], worst[k]),
        })
        .collect())
}

/// Largest gap between the monomials `t^order`, `t^(order+1)` and their
/// `k_even` / `k_odd` limits (assigned by parity), at each probe point.
pub fn monomial_limit_errors(order: usize, points: &[f64]) -> Vec<(f64, f64)> {
    let series = KernelSeries::learned(0, CoeffActivation::Relu);
    points
        .iter()
        .map(|&t| {
            let mut worst: f64 = 0.0;
            for m in [order, order + 1] {
                let mut odd = series.clone().with_alpha_raw(vec![0.0, 1.0, 0.0]).expect("len 3");
                odd.activation = CoeffActivation::None;
                let mut even = series.clone().with_alpha_raw(vec![1.0, 0.0, 0.0]).expect("len 3");
                even.activation = CoeffActivation::None;
                let limit = if m % 2 == 0 { even.eval(t) } else { odd.eval(t) }.expect("finite");
                worst = worst.max((t.powi(m as i32) - limit).abs());
            }
            (t, worst)
        })
        .collect()
}

pub const LIMIT_PROBES: [f64; 5] = [-1.0, -0.9, 0.0, 0.9, 1.0];

pub fn series_limit_suite(order: usize, tolerance: f64) -> PropertyResult {
    let errors = monomial_limit_errors(order, &LIMIT_PROBES);
    let passed = errors.iter().all(|&(_, e)| e <= tolerance);
    PropertyResult {
        name: format!("monomials of order {order}/{} vs k_even/k_odd limits", order + 1),
        tolerance: format!("{tolerance:e} absolute at t in {LIMIT_PROBES:?}"),
        passed,
        detail: errors
            .iter()
            .map(|(t, e)| format!("t={t}: {e:.3e}"))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

/// Loss on the first mini-batch of the synthetic task drops after one small
/// SGD step.
pub fn descent_check(seed: u64) -> Result<PropertyResult> {
    let spec = MixtureSpec::generate(seed);
    let data = generate_dataset(&spec, 64, seed.wrapping_add(1))?;
    let mut rng = seeded(seed.wrapping_add(2));
    let head = ClassifierParams::kernelized(
        2,
        3,
        KernelSeries::learned(10, CoeffActivation::Relu),
        &mut rng,
    );
    let mut model = Model::head_only(head);
    let batch: Vec<usize> = (0..data.len()).step_by(1).take(128).collect();
    let batch_data = data.subset(&batch);
    let before = mean_loss(&model, &batch_data)?;
    let mut acc = model.zero_grads();
    for i in 0..batch_data.len() {
        let (_, g) = model.loss_and_grad(batch_data.row(i), Target::Label(batch_data.labels[i]), 1.0)?;
        acc.add_scaled(&g, 1.0 / batch_data.len() as f64)?;
    }
    let grads: Vec<Vec<f64>> = acc.blocks().iter().map(|b| b.to_vec()).collect();
    let cfg = TrainConfig::for_dataset(batch_data.len(), 1, 128, 1e-4, 0.0, seed);
    for (block, g) in model.param_blocks_mut().into_iter().zip(&grads) {
        let mut v = vec![0.0; g.len()];
        sgd_step(block.values, g, &mut v, cfg.base_lr, cfg.momentum, 0.0)?;
    }
    let after = mean_loss(&model, &batch_data)?;
    Ok(PropertyResult {
        name: "first-batch loss decreases after one step".into(),
        tolerance: "strict decrease at lr=1e-4".into(),
        passed: after < before,
        detail: format!("{before:.9} -> {after:.9}"),
    })
}

fn mean_loss(model: &Model, data: &LabeledDataset) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..data.len() {
        s += model
            .loss_and_grad(data.row(i), Target::Label(data.labels[i]), model.head.default_loss_temperature())?
            .0;
    }
    Ok(s / data.len() as f64)
}

/// The Gram matrix of `-t` (the linear kernel with coefficient -1 and no
/// activation) on two orthonormal points, and its smallest eigenvalue.
pub fn non_psd_counterexample() -> Result<(GramMatrix, f64)> {
    let mut raw = vec![0.0; 13];
    raw[crate::kernel::MONOMIAL_OFFSET + 1] = -1.0;
    let series = KernelSeries::learned(10, CoeffActivation::None).with_alpha_raw(raw)?;
    let points = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let g = gram_matrix(&series, &points)?;
    let min = g.min_eigenvalue();
    Ok((g, min))
}
