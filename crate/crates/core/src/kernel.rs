//! Learnable positive-definite radial kernels on the unit sphere.
//!
//! A radial kernel on the sphere depends only on `t = <u, v>`. The learnable
//! kernel is the truncated series
//!
//! ```text
//! k(t) = sum_{m=0..M} a_m t^m + a_{-1} k_odd(t) + a_{-2} k_even(t)
//! ```
//!
//! with non-negative coefficients `a = act(a')`, where `a'` are the raw
//! learnable coefficients. `k_odd` and `k_even` are the pointwise limits of the
//! odd and even monomials and only fire at `t = ±1`.
//!
//! Raw coefficients are stored as `[a'_{-2}, a'_{-1}, a'_0, ..., a'_M]`.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

/// Offset of `a_0` in the coefficient vector.
pub const MONOMIAL_OFFSET: usize = 2;

/// Truncation order used throughout the experiments.
pub const DEFAULT_ORDER: usize = 10;

pub const DEFAULT_EQ_TOLERANCE: f64 = 1e-9;

/// Unit-norm tolerance accepted by [`gram_matrix`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelMode {
    /// Learned truncated series.
    Learned,
    /// `c * t^degree`.
    FixedPolynomial { degree: u32 },
    /// `c * exp(-2 gamma (1 - t))`, the Gaussian RBF restricted to unit vectors.
    FixedGaussianRbf { gamma: f64 },
    /// `c * t`.
    Linear,
}

impl KernelMode {
    pub fn is_fixed(&self) -> bool {
        !matches!(self, KernelMode::Learned)
    }
}

/// Map from raw coefficients to the non-negative series coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CoeffActivation {
    Relu,
    Sigmoid,
    Softmax,
    /// Identity. Coefficients may go negative and the kernel may stop being
    /// positive definite.
    None,
}

impl CoeffActivation {
    /// Temperature dividing every kernel value before the loss exponential.
    pub fn default_temperature(self) -> f64 {
        match self {
            CoeffActivation::Relu | CoeffActivation::None => 1.0,
            CoeffActivation::Sigmoid => 0.1,
            CoeffActivation::Softmax => 0.005,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CoeffActivation::Relu => "relu",
            CoeffActivation::Sigmoid => "sigmoid",
            CoeffActivation::Softmax => "softmax",
            CoeffActivation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Some(Self::Relu),
            "sigmoid" => Some(Self::Sigmoid),
            "softmax" => Some(Self::Softmax),
            "none" | "linear" | "identity" => Some(Self::None),
            _ => None,
        }
    }

    fn apply(self, raw: &[f64]) -> Vec<f64> {
        match self {
            CoeffActivation::Relu => raw.iter().map(|&a| a.max(0.0)).collect(),
            CoeffActivation::Sigmoid => raw.iter().map(|&a| sigmoid(a)).collect(),
            CoeffActivation::Softmax => {
                let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = raw.iter().map(|&a| (a - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / sum).collect()
            }
            CoeffActivation::None => raw.to_vec(),
        }
    }

    /// Vector-Jacobian product: maps `dL/da` to `dL/da'` given `a'` and `a`.
    fn backward(self, raw: &[f64], activated: &[f64], upstream: &[f64]) -> Vec<f64> {
        match self {
            CoeffActivation::Relu => raw
                .iter()
                .zip(upstream)
                .map(|(&r, &g)| if r > 0.0 { g } else { 0.0 })
                .collect(),
            CoeffActivation::Sigmoid => activated
                .iter()
                .zip(upstream)
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
            CoeffActivation::Softmax => {
                // (diag(a) - a a^T) g
                let weighted = dot(activated, upstream);
                activated
                    .iter()
                    .zip(upstream)
                    .map(|(&a, &g)| a * (g - weighted))
                    .collect()
            }
            CoeffActivation::None => upstream.to_vec(),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A radial kernel on the unit sphere with learnable coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSeries {
    pub mode: KernelMode,
    /// Truncation order `M` of the monomial part.
    pub order: usize,
    /// Raw coefficients, length `order + 3`. Unused in fixed modes.
    pub alpha_raw: Vec<f64>,
    /// Raw scale of the fixed modes, activated by ReLU. Unused when learned.
    pub scale_raw: f64,
    pub activation: CoeffActivation,
    pub act_temperature: f64,
    pub eq_tolerance: f64,
}

impl KernelSeries {
    /// Learned series with raw coefficients initialized to all ones.
    pub fn learned(order: usize, activation: CoeffActivation) -> Self {
        Self {
            mode: KernelMode::Learned,
            order,
            alpha_raw: vec![1.0; order + 3],
            scale_raw: 1.0,
            activation,
            act_temperature: activation.default_temperature(),
            eq_tolerance: DEFAULT_EQ_TOLERANCE,
        }
    }

    /// Fixed kernel with a single learnable scale initialized to one.
    pub fn fixed(mode: KernelMode) -> Self {
        Self {
            mode,
            order: DEFAULT_ORDER,
            alpha_raw: vec![1.0; DEFAULT_ORDER + 3],
            scale_raw: 1.0,
            activation: CoeffActivation::Relu,
            act_temperature: 1.0,
            eq_tolerance: DEFAULT_EQ_TOLERANCE,
        }
    }

    pub fn with_alpha_raw(mut self, alpha_raw: Vec<f64>) -> Result<Self> {
        if alpha_raw.len() != self.order + 3 {
            return Err(crate::error::shape_err(self.order + 3, alpha_raw.len()));
        }
        self.alpha_raw = alpha_raw;
        Ok(self)
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.act_temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_raw.len() != self.order + 3 {
            return Err(crate::error::shape_err(
                format!("{} raw coefficients", self.order + 3),
                self.alpha_raw.len(),
            ));
        }
        if !(self.act_temperature > 0.0 && self.act_temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "activation temperature must be positive, got {}",
                self.act_temperature
            )));
        }
        match self.mode {
            KernelMode::FixedGaussianRbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::InvalidConfig(format!("rbf gamma must be positive, got {gamma}")))
            }
            KernelMode::FixedPolynomial { degree: 0 } => {
                Err(Error::InvalidConfig("polynomial degree must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Activated coefficients `[a_{-2}, a_{-1}, a_0, ..., a_M]`.
    pub fn activate_coefficients(&self) -> Vec<f64> {
        self.activation.apply(&self.alpha_raw)
    }

    /// Activated scale of a fixed-mode kernel.
    pub fn scale(&self) -> f64 {
        self.scale_raw.max(0.0)
    }

    /// The coefficients the kernel actually uses: the activated series in
    /// learned mode, the single activated scale otherwise.
    pub fn effective_coefficients(&self) -> Vec<f64> {
        if self.mode.is_fixed() {
            vec![self.scale()]
        } else {
            self.activate_coefficients()
        }
    }

    pub fn evaluator(&self) -> KernelEvaluator<'_> {
        let alpha = if self.mode.is_fixed() {
            Vec::new()
        } else {
            self.activate_coefficients()
        };
        KernelEvaluator {
            series: self,
            alpha,
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        self.evaluator().value(t)
    }

    /// `dk/dt`. Indicator terms contribute zero.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        self.evaluator().derivative(t)
    }

    /// `dk/da'` for every raw coefficient. Zero in fixed modes.
    pub fn coeff_gradient(&self, t: f64) -> Result<Vec<f64>> {
        let t = clamp_unit(t)?;
        if self.mode.is_fixed() {
            return Ok(vec![0.0; self.alpha_raw.len()]);
        }
        let mut basis = vec![0.0; self.alpha_raw.len()];
        self.basis_into(t, 1.0, &mut basis);
        Ok(self.activation_backward(&basis))
    }

    /// `dk/d(scale_raw)` for fixed modes. Zero in learned mode.
    pub fn scale_gradient(&self, t: f64) -> Result<f64> {
        let t = clamp_unit(t)?;
        if !self.mode.is_fixed() || self.scale_raw <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.fixed_shape(t))
    }

    /// Maps a gradient with respect to the activated coefficients back to the
    /// raw coefficients.
    pub fn activation_backward(&self, d_alpha: &[f64]) -> Vec<f64> {
        let activated = self.activate_coefficients();
        self.activation.backward(&self.alpha_raw, &activated, d_alpha)
    }

    /// Adds `scale * dk/da` (activated coefficients) at `t` into `out`.
    fn basis_into(&self, t: f64, scale: f64, out: &mut [f64]) {
        out[0] += scale * self.k_even(t);
        out[1] += scale * self.k_odd(t);
        let mut p = 1.0;
        for slot in &mut out[MONOMIAL_OFFSET..] {
            *slot += scale * p;
            p *= t;
        }
    }

    fn k_odd(&self, t: f64) -> f64 {
        if (t - 1.0).abs() <= self.eq_tolerance {
            1.0
        } else if (t + 1.0).abs() <= self.eq_tolerance {
            -1.0
        } else {
            0.0
        }
    }

    fn k_even(&self, t: f64) -> f64 {
        if (t - 1.0).abs().min((t + 1.0).abs()) <= self.eq_tolerance {
            1.0
        } else {
            0.0
        }
    }

    /// Unscaled fixed-mode kernel shape.
    fn fixed_shape(&self, t: f64) -> f64 {
        match self.mode {
            KernelMode::FixedPolynomial { degree } => t.powi(degree as i32),
            KernelMode::FixedGaussianRbf { gamma } => (-2.0 * gamma * (1.0 - t)).exp(),
            KernelMode::Linear => t,
            KernelMode::Learned => unreachable!("learned mode has no fixed shape"),
        }
    }

    fn fixed_shape_derivative(&self, t: f64) -> f64 {
        match self.mode {
            KernelMode::FixedPolynomial { degree } => {
                f64::from(degree) * t.powi(degree as i32 - 1)
            }
            KernelMode::FixedGaussianRbf { gamma } => {
                2.0 * gamma * (-2.0 * gamma * (1.0 - t)).exp()
            }
            KernelMode::Linear => 1.0,
            KernelMode::Learned => unreachable!("learned mode has no fixed shape"),
        }
    }
}

/// A kernel with its coefficients activated once, for repeated evaluation.
pub struct KernelEvaluator<'a> {
    series: &'a KernelSeries,
    alpha: Vec<f64>,
}

impl KernelEvaluator<'_> {
    pub fn activated(&self) -> &[f64] {
        &self.alpha
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        let t = clamp_unit(t)?;
        let s = self.series;
        if s.mode.is_fixed() {
            return Ok(s.scale() * s.fixed_shape(t));
        }
        let a = &self.alpha;
        let mut acc = a[0] * s.k_even(t) + a[1] * s.k_odd(t);
        // Horner over a_0..a_M
        let mut poly = 0.0;
        for &c in a[MONOMIAL_OFFSET..].iter().rev() {
            poly = poly * t + c;
        }
        acc += poly;
        Ok(acc)
    }

    pub fn derivative(&self, t: f64) -> Result<f64> {
        let t = clamp_unit(t)?;
        let s = self.series;
        if s.mode.is_fixed() {
            return Ok(s.scale() * s.fixed_shape_derivative(t));
        }
        let mono = &self.alpha[MONOMIAL_OFFSET..];
        let mut acc = 0.0;
        for (m, &c) in mono.iter().enumerate().skip(1).rev() {
            acc = acc * t + m as f64 * c;
        }
        Ok(acc)
    }

    /// Adds `scale * dk/da` (activated coefficients) at `t` into `out`.
    pub fn accumulate_basis(&self, t: f64, scale: f64, out: &mut [f64]) -> Result<()> {
        let t = clamp_unit(t)?;
        if !self.series.mode.is_fixed() {
            self.series.basis_into(t, scale, out);
        }
        Ok(())
    }

    /// `dk/d(scale_raw)` in fixed modes, zero otherwise.
    pub fn scale_gradient(&self, t: f64) -> Result<f64> {
        self.series.scale_gradient(t)
    }
}

/// Rejects non-finite inner products and clamps into `[-1, 1]`.
pub fn clamp_unit(t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFiniteInput(format!("kernel argument {t}")));
    }
    Ok(t.clamp(-1.0, 1.0))
}

/// Symmetric kernel matrix over a point set.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: Matrix,
}

impl GramMatrix {
    pub fn point_count(&self) -> usize {
        self.values.rows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = nalgebra::SymmetricEigen::new(self.values.to_nalgebra());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Elementwise (Schur) product, the Gram matrix of the pointwise product
    /// of two kernels.
    pub fn hadamard(&self, other: &GramMatrix) -> Result<GramMatrix> {
        if self.point_count() != other.point_count() {
            return Err(crate::error::shape_err(self.point_count(), other.point_count()));
        }
        let data = self
            .values
            .as_slice()
            .iter()
            .zip(other.values.as_slice())
            .map(|(a, b)| a * b)
            .collect();
        Ok(GramMatrix {
            values: Matrix::from_vec(self.point_count(), self.point_count(), data)?,
        })
    }

    /// `la * self + lb * other`.
    pub fn conic(&self, la: f64, other: &GramMatrix, lb: f64) -> Result<GramMatrix> {
        if self.point_count() != other.point_count() {
            return Err(crate::error::shape_err(self.point_count(), other.point_count()));
        }
        let data = self
            .values
            .as_slice()
            .iter()
            .zip(other.values.as_slice())
            .map(|(a, b)| la * a + lb * b)
            .collect();
        Ok(GramMatrix {
            values: Matrix::from_vec(self.point_count(), self.point_count(), data)?,
        })
    }
}

/// Gram matrix of `series` over unit-norm `points` (one point per row).
pub fn gram_matrix(series: &KernelSeries, points: &Matrix) -> Result<GramMatrix> {
    for p in points.iter_rows() {
        let n = norm(p);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { norm: n });
        }
    }
    let ev = series.evaluator();
    let n = points.rows();
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = ev.value(dot(points.row(i), points.row(j)))?;
            values.set(i, j, k);
            values.set(j, i, k);
        }
    }
    Ok(GramMatrix { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_with(alpha_raw: Vec<f64>, act: CoeffActivation) -> KernelSeries {
        KernelSeries::learned(alpha_raw.len() - 3, act)
            .with_alpha_raw(alpha_raw)
            .unwrap()
    }

    fn only(order: usize, index: usize, value: f64, act: CoeffActivation) -> KernelSeries {
        let mut raw = vec![0.0; order + 3];
        raw[index] = value;
        series_with(raw, act)
    }

    #[test]
    fn relu_keeps_positive_coefficients() {
        let s = KernelSeries::learned(10, CoeffActivation::Relu);
        assert_eq!(s.activate_coefficients(), vec![1.0; 13]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = series_with(vec![0.0; 13], CoeffActivation::Softmax);
        for a in s.activate_coefficients() {
            assert!((a - 1.0 / 13.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_zeroes_negatives() {
        let s = series_with(vec![-1.0, 2.0, -1.0, 2.0], CoeffActivation::Relu);
        assert_eq!(s.activate_coefficients(), vec![0.0, 2.0, 0.0, 2.0]);
    }

    #[test]
    fn all_ones_at_t_one_counts_every_term() {
        let s = KernelSeries::learned(10, CoeffActivation::Relu);
        assert_eq!(s.eval(1.0).unwrap(), 13.0);
        // inner products may overshoot slightly
        assert_eq!(s.eval(1.0 + 1e-15).unwrap(), 13.0);
    }

    #[test]
    fn linear_term_alone() {
        let s = only(10, MONOMIAL_OFFSET + 1, 1.0, CoeffActivation::Relu);
        assert!((s.eval(0.37).unwrap() - 0.37).abs() < 1e-15);
    }

    #[test]
    fn geometric_sum_at_half() {
        let s = KernelSeries::learned(10, CoeffActivation::Relu);
        // 1 + 1/2 + ... + 1/1024 = 2 - 1/1024
        assert!((s.eval(0.5).unwrap() - 1.999_023_437_5).abs() < 1e-14);
    }

    #[test]
    fn rbf_at_coincident_points() {
        let s = KernelSeries::fixed(KernelMode::FixedGaussianRbf { gamma: 0.5 });
        assert_eq!(s.eval(1.0).unwrap(), 1.0);
    }

    #[test]
    fn non_finite_argument_is_rejected() {
        let s = KernelSeries::learned(10, CoeffActivation::Relu);
        assert!(matches!(s.eval(f64::NAN), Err(Error::NonFiniteInput(_))));
        assert!(s.eval(f64::INFINITY).is_err());
    }

    #[test]
    fn zero_coefficients_give_zero_kernel() {
        let s = series_with(vec![0.0; 13], CoeffActivation::Relu);
        for t in [-1.0, -0.3, 0.0, 0.8, 1.0] {
            assert_eq!(s.eval(t).unwrap(), 0.0);
        }
    }

    #[test]
    fn derivative_of_square() {
        let s = only(10, MONOMIAL_OFFSET + 2, 1.0, CoeffActivation::Relu);
        assert!((s.derivative(0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn indicator_terms_have_no_slope() {
        let mut raw = vec![0.0; 13];
        raw[0] = 1.0;
        raw[1] = 1.0;
        let s = series_with(raw, CoeffActivation::Relu);
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            assert_eq!(s.derivative(t).unwrap(), 0.0);
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let s = KernelSeries::learned(10, CoeffActivation::Relu);
        let h = 1e-5;
        let fd = (s.eval(0.3 + h).unwrap() - s.eval(0.3 - h).unwrap()) / (2.0 * h);
        let an = s.derivative(0.3).unwrap();
        assert!(((an - fd) / an).abs() < 1e-6, "{an} vs {fd}");
    }

    #[test]
    fn coeff_gradient_relu_at_one() {
        let s = KernelSeries::learned(10, CoeffActivation::Relu);
        assert_eq!(s.coeff_gradient(1.0).unwrap(), vec![1.0; 13]);
    }

    #[test]
    fn coeff_gradient_relu_dead_zone() {
        let mut raw = vec![0.7; 13];
        raw[3] = -0.5;
        let s = series_with(raw, CoeffActivation::Relu);
        for t in [-0.9, 0.1, 0.6] {
            assert_eq!(s.coeff_gradient(t).unwrap()[3], 0.0);
        }
    }

    #[test]
    fn coeff_gradient_sigmoid_matches_central_difference() {
        let raw: Vec<f64> = (0..13).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let s = series_with(raw.clone(), CoeffActivation::Sigmoid);
        let t = 0.4;
        let an = s.coeff_gradient(t).unwrap();
        let h = 1e-5;
        for i in 0..13 {
            let mut up = raw.clone();
            let mut dn = raw.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (series_with(up, CoeffActivation::Sigmoid).eval(t).unwrap()
                - series_with(dn, CoeffActivation::Sigmoid).eval(t).unwrap())
                / (2.0 * h);
            let scale = an[i].abs().max(fd.abs()).max(1e-12);
            assert!((an[i] - fd).abs() / scale < 1e-5, "component {i}: {} vs {fd}", an[i]);
        }
    }

    #[test]
    fn fixed_modes_carry_no_coefficient_gradient() {
        let s = KernelSeries::fixed(KernelMode::FixedPolynomial { degree: 10 });
        assert!(s.coeff_gradient(0.3).unwrap().iter().all(|&g| g == 0.0));
        assert!((s.scale_gradient(0.5).unwrap() - 0.5f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn fixed_mode_derivatives() {
        let h = 1e-6;
        for mode in [
            KernelMode::FixedPolynomial { degree: 10 },
            KernelMode::FixedGaussianRbf { gamma: 2.0 },
            KernelMode::Linear,
        ] {
            let mut s = KernelSeries::fixed(mode);
            s.scale_raw = 1.7;
            let fd = (s.eval(0.2 + h).unwrap() - s.eval(0.2 - h).unwrap()) / (2.0 * h);
            let an = s.derivative(0.2).unwrap();
            assert!((an - fd).abs() < 1e-7 * an.abs().max(1.0), "{mode:?}");
        }
    }

    #[test]
    fn single_point_gram() {
        let s = KernelSeries::learned(10, CoeffActivation::Relu);
        let p = Matrix::from_rows(&[vec![0.0, 0.6, 0.8]]).unwrap();
        let g = gram_matrix(&s, &p).unwrap();
        assert_eq!(g.point_count(), 1);
        assert_eq!(g.values.get(0, 0), s.eval(1.0).unwrap());
    }

    #[test]
    fn gram_rejects_non_unit_points() {
        let s = KernelSeries::learned(10, CoeffActivation::Relu);
        let p = Matrix::from_rows(&[vec![1.0, 1.0, 0.0]]).unwrap();
        assert!(gram_matrix(&s, &p).is_err());
    }

    #[test]
    fn negative_linear_coefficient_breaks_positive_definiteness() {
        let s = only(10, MONOMIAL_OFFSET + 1, -1.0, CoeffActivation::None);
        let p = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let g = gram_matrix(&s, &p).unwrap();
        assert_eq!(g.values.row(0), &[-1.0, 0.0]);
        assert_eq!(g.values.row(1), &[0.0, -1.0]);
        assert!((g.min_eigenvalue() + 1.0).abs() < 1e-12);
    }
}
