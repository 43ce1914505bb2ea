//! Two-class Gaussian-mixture data on the unit sphere `S^2` and its
//! Bayes-optimal classifier.
//!
//! Each class owns ten cluster centers drawn from `N(mean_c, 0.5 I)`. An
//! observation picks one of its class's centers uniformly, draws from
//! `N(center, 0.02 I)` and is projected onto the sphere. Class 0 ("blue") has
//! mean `[1, 0, 0]`, class 1 ("orange") `[0, 1, 0]`.

use rayon::prelude::*;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::quadrature::GaussLegendre;
use crate::rng::{bounded, seeded, standard_normal, Rng};

pub const CENTERS_PER_CLASS: usize = 10;
pub const CENTER_COVARIANCE_SCALE: f64 = 0.5;
pub const SAMPLE_COVARIANCE_SCALE: f64 = 0.02;
pub const SAMPLES_PER_CLASS: usize = 5000;
pub const QUADRATURE_NODES: usize = 512;

pub type Point3 = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    /// Unprojected cluster centers, indexed `[class][center]`.
    pub centers: Vec<Vec<Point3>>,
    pub center_covariance_scale: f64,
    pub sample_covariance_scale: f64,
    pub class_means: Vec<Point3>,
    pub samples_per_class: usize,
}

impl MixtureSpec {
    /// Draws ten centers per class around the blue and orange means.
    pub fn generate(seed: u64) -> Self {
        let class_means = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let mut rng = seeded(seed);
        let std = CENTER_COVARIANCE_SCALE.sqrt();
        let centers = class_means
            .iter()
            .map(|m| {
                (0..CENTERS_PER_CLASS)
                    .map(|_| gaussian_point(&mut rng, m, std))
                    .collect()
            })
            .collect();
        Self {
            centers,
            center_covariance_scale: CENTER_COVARIANCE_SCALE,
            sample_covariance_scale: SAMPLE_COVARIANCE_SCALE,
            class_means,
            samples_per_class: SAMPLES_PER_CLASS,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.len() < 2 || self.centers.iter().any(Vec::is_empty) {
            return Err(Error::InvalidConfig(
                "mixture needs at least two classes with centers".into(),
            ));
        }
        if !(self.sample_covariance_scale > 0.0 && self.center_covariance_scale > 0.0) {
            return Err(Error::InvalidConfig("covariance scales must be positive".into()));
        }
        Ok(())
    }
}

fn gaussian_point(rng: &mut Rng, mean: &Point3, std: f64) -> Point3 {
    let mut p = *mean;
    for v in &mut p {
        *v += std * standard_normal(rng);
    }
    p
}

/// `n_per_class` projected observations per class; all of class 0 first.
pub fn generate_dataset(spec: &MixtureSpec, n_per_class: usize, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::InvalidConfig("n_per_class must be at least 1".into()));
    }
    let mut rng = seeded(seed);
    let std = spec.sample_covariance_scale.sqrt();
    let classes = spec.num_classes();
    let mut data = Vec::with_capacity(classes * n_per_class * 3);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for (class, centers) in spec.centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let center = &centers[bounded(&mut rng, centers.len())];
            let p = loop {
                let p = gaussian_point(&mut rng, center, std);
                let n = norm(&p);
                if n > 0.0 {
                    break p.map(|v| v / n);
                }
            };
            data.extend_from_slice(&p);
            labels.push(class);
        }
    }
    LabeledDataset::new(Matrix::from_vec(labels.len(), 3, data)?, labels, classes)
}

/// Exact class posteriors of the projected mixture.
///
/// The density of a projected observation at unit `u` is
/// `sum_i (1/K) ∫_0^∞ N(r u; mu_i, s I) r^2 dr`, integrated with a 512-node
/// Gauss–Legendre rule on `(0, r_max]`, where
/// `r_max = 1 + 10 sqrt(s) + max |mu_i|` leaves a tail below `1e-12`.
#[derive(Clone, Debug)]
pub struct BayesOracle {
    spec: MixtureSpec,
    radii: Vec<f64>,
    /// `ln w_n + 2 ln r_n`
    log_weights: Vec<f64>,
    inv_two_var: f64,
}

impl BayesOracle {
    pub fn new(spec: &MixtureSpec) -> Result<Self> {
        spec.validate()?;
        let sigma = spec.sample_covariance_scale.sqrt();
        let max_norm = spec
            .centers
            .iter()
            .flatten()
            .map(|c| norm(c))
            .fold(0.0, f64::max);
        let r_max = 1.0 + 10.0 * sigma + max_norm;
        if !r_max.is_finite() {
            return Err(Error::QuadratureFailure(format!(
                "integration bound {r_max} is not finite"
            )));
        }
        let (radii, weights) = GaussLegendre::new(QUADRATURE_NODES).on_interval(0.0, r_max);
        let log_weights = radii
            .iter()
            .zip(&weights)
            .map(|(r, w)| w.ln() + 2.0 * r.ln())
            .collect();
        Ok(Self {
            spec: spec.clone(),
            radii,
            log_weights,
            inv_two_var: 1.0 / (2.0 * spec.sample_covariance_scale),
        })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    /// Log density of class `class` at `u`, up to a constant shared by all
    /// classes.
    pub fn class_log_density(&self, class: usize, u: &[f64]) -> Result<f64> {
        check_unit(u)?;
        let centers = &self.spec.centers[class];
        let mut exponents = Vec::with_capacity(centers.len() * self.radii.len());
        for c in centers {
            let a = dot(u, c);
            let m = dot(c, c);
            for (r, lw) in self.radii.iter().zip(&self.log_weights) {
                exponents.push(lw - (r * r - 2.0 * r * a + m) * self.inv_two_var);
            }
        }
        let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::QuadratureFailure(format!(
                "class {class} density vanished at {u:?}"
            )));
        }
        let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
        Ok(max + sum.ln() - (centers.len() as f64).ln())
    }

    /// Posterior of every class under equal priors.
    pub fn posteriors(&self, u: &[f64]) -> Result<Vec<f64>> {
        let logs = (0..self.spec.num_classes())
            .map(|c| self.class_log_density(c, u))
            .collect::<Result<Vec<_>>>()?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let post: Vec<f64> = exps.into_iter().map(|e| e / total).collect();
        if post.iter().any(|p| !p.is_finite()) {
            return Err(Error::QuadratureFailure(format!("non-finite posterior at {u:?}")));
        }
        Ok(post)
    }

    /// Probability of class 0 (blue).
    pub fn posterior(&self, u: &[f64]) -> Result<f64> {
        Ok(self.posteriors(u)?[0])
    }

    /// Bayes decision, ties to the lowest class.
    pub fn classify(&self, u: &[f64]) -> Result<usize> {
        Ok(crate::classifier::argmax(&self.posteriors(u)?))
    }

    /// Accuracy of the Bayes decision on `dataset`.
    pub fn accuracy(&self, dataset: &LabeledDataset) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let correct = (0..dataset.len())
            .into_par_iter()
            .map(|i| Ok(usize::from(self.classify(dataset.row(i))? == dataset.labels[i])))
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum::<usize>();
        Ok(correct as f64 / dataset.len() as f64)
    }

    /// Bayes decisions for every row.
    pub fn label_all(&self, features: &Matrix) -> Result<Vec<usize>> {
        (0..features.rows())
            .into_par_iter()
            .map(|i| self.classify(features.row(i)))
            .collect()
    }
}

fn check_unit(u: &[f64]) -> Result<()> {
    if u.len() != 3 {
        return Err(crate::error::shape_err("point in R^3", u.len()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!("{u:?}")));
    }
    let n = norm(u);
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::NotUnitNorm { norm: n });
    }
    Ok(())
}

/// Posterior probability of class 0 at unit vector `u`.
pub fn bayes_posterior(spec: &MixtureSpec, u: &[f64]) -> Result<f64> {
    BayesOracle::new(spec)?.posterior(u)
}

pub fn bayes_accuracy(spec: &MixtureSpec, dataset: &LabeledDataset) -> Result<f64> {
    BayesOracle::new(spec)?.accuracy(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_are_seeded() {
        assert_eq!(MixtureSpec::generate(3), MixtureSpec::generate(3));
        assert_ne!(MixtureSpec::generate(3), MixtureSpec::generate(4));
        let spec = MixtureSpec::generate(3);
        assert_eq!(spec.centers.len(), 2);
        assert!(spec.centers.iter().all(|c| c.len() == 10));
    }

    #[test]
    fn dataset_rows_are_unit_and_balanced() {
        let spec = MixtureSpec::generate(1);
        let ds = generate_dataset(&spec, 300, 2).unwrap();
        assert_eq!(ds.len(), 600);
        assert_eq!(ds.class_counts(), vec![300, 300]);
        for r in ds.features.iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
        assert_eq!(ds, generate_dataset(&spec, 300, 2).unwrap());
    }

    #[test]
    fn mirror_symmetric_mixture_is_undecided_on_the_plane() {
        let blue = MixtureSpec::generate(8).centers[0].clone();
        let orange = blue.iter().map(|c| [c[1], c[0], c[2]]).collect();
        let mut spec = MixtureSpec::generate(8);
        spec.centers = vec![blue, orange];
        let oracle = BayesOracle::new(&spec).unwrap();
        for u in [[0.6, 0.6, 0.52915026221291811], [-0.3, -0.3, (1.0f64 - 0.18).sqrt()]] {
            let p = oracle.posterior(&u).unwrap();
            assert!((p - 0.5).abs() < 1e-12, "{p}");
        }
    }

    #[test]
    fn posteriors_sum_to_one() {
        let oracle = BayesOracle::new(&MixtureSpec::generate(5)).unwrap();
        let ds = generate_dataset(oracle.spec(), 20, 6).unwrap();
        for r in ds.features.iter_rows() {
            let p = oracle.posteriors(r).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_unit_query() {
        let oracle = BayesOracle::new(&MixtureSpec::generate(5)).unwrap();
        assert!(matches!(
            oracle.posterior(&[1.0, 1.0, 0.0]),
            Err(Error::NotUnitNorm { .. })
        ));
    }

    #[test]
    fn bayes_labels_are_self_consistent() {
        let oracle = BayesOracle::new(&MixtureSpec::generate(11)).unwrap();
        let ds = generate_dataset(oracle.spec(), 200, 12).unwrap();
        let relabeled =
            LabeledDataset::new(ds.features.clone(), oracle.label_all(&ds.features).unwrap(), 2)
                .unwrap();
        assert_eq!(oracle.accuracy(&relabeled).unwrap(), 1.0);
    }
}
