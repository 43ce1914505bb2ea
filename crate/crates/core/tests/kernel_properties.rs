use kernelnet::checks::{random_psd_series, random_sphere_points};
use kernelnet::classifier::ClassifierParams;
use kernelnet::kernel::{gram_matrix, CoeffActivation, KernelSeries, MONOMIAL_OFFSET};
use kernelnet::rng::{bounded, seeded, standard_normal};
use proptest::prelude::*;

fn psd(min: f64, n: usize) -> bool {
    min >= -1e-8 * n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn non_negative_series_give_psd_grams(seed in any::<u64>(), n in 1usize..16, dim in 2usize..6) {
        let mut rng = seeded(seed);
        let series = random_psd_series(&mut rng);
        let points = random_sphere_points(&mut rng, n, dim);
        let g = gram_matrix(&series, &points).unwrap();
        prop_assert!(psd(g.min_eigenvalue(), n), "{}", g.min_eigenvalue());
    }

    #[test]
    fn sums_and_products_stay_psd(seed in any::<u64>(), n in 1usize..16, la in 0.0f64..5.0, lb in 0.0f64..5.0) {
        let mut rng = seeded(seed);
        let points = random_sphere_points(&mut rng, n, 3);
        let a = gram_matrix(&random_psd_series(&mut rng), &points).unwrap();
        let b = gram_matrix(&random_psd_series(&mut rng), &points).unwrap();
        prop_assert!(psd(a.conic(la, &b, lb).unwrap().min_eigenvalue(), n));
        prop_assert!(psd(a.hadamard(&b).unwrap().min_eigenvalue(), n));
    }

    #[test]
    fn gram_is_symmetric_with_constant_diagonal(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = seeded(seed);
        let series = random_psd_series(&mut rng);
        let points = random_sphere_points(&mut rng, n, 4);
        let g = gram_matrix(&series, &points).unwrap();
        let k1 = series.eval(1.0).unwrap();
        for i in 0..n {
            prop_assert!((g.values.get(i, i) - k1).abs() <= 1e-12 * k1.abs().max(1.0));
            for j in 0..n {
                prop_assert_eq!(g.values.get(i, j), g.values.get(j, i));
            }
        }
    }

    #[test]
    fn kernel_scores_ignore_feature_and_weight_scale(seed in any::<u64>(), s in 0.01f64..100.0, classes in 2usize..6) {
        let mut rng = seeded(seed);
        let mut head = ClassifierParams::kernelized(classes, 4, KernelSeries::learned(10, CoeffActivation::Relu), &mut rng);
        let f: Vec<f64> = (0..4).map(|_| standard_normal(&mut rng)).collect();
        let scaled: Vec<f64> = f.iter().map(|v| v * s).collect();
        let before = head.scores(&f).unwrap();
        prop_assert_eq!(head.predict(&f).unwrap(), head.predict(&scaled).unwrap());
        let row = bounded(&mut rng, classes);
        if let ClassifierParams::Kernelized { weights, .. } = &mut head {
            weights.row_mut(row).iter_mut().for_each(|w| *w *= s);
        }
        let after = head.scores(&f).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn kernel_value_bounded_by_its_value_at_one(seed in any::<u64>(), t in -1.0f64..=1.0) {
        // |k(t)| <= k(1) for non-negative coefficients
        let series = random_psd_series(&mut seeded(seed));
        prop_assert!(series.eval(t).unwrap().abs() <= series.eval(1.0).unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn unconstrained_linear_coefficient_breaks_psd() {
    let (g, min) = kernelnet::checks::non_psd_counterexample().unwrap();
    assert_eq!(g.point_count(), 2);
    assert!(min <= -0.5, "{min}");
    assert!((min + 1.0).abs() < 1e-12);
}

#[test]
fn indicator_kernels_at_antipodes() {
    let series = KernelSeries::learned(0, CoeffActivation::Relu);
    let odd = series.clone().with_alpha_raw(vec![0.0, 1.0, 0.0]).unwrap();
    let even = series.with_alpha_raw(vec![1.0, 0.0, 0.0]).unwrap();
    assert_eq!(odd.eval(-1.0).unwrap(), -1.0);
    assert_eq!(even.eval(-1.0).unwrap(), 1.0);
    assert_eq!(odd.eval(0.999).unwrap(), 0.0);
    assert_eq!(MONOMIAL_OFFSET, 2);
}
