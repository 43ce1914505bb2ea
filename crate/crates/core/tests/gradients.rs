use kernelnet::backbone::{HiddenActivation, Mlp, MlpConfig};
use kernelnet::checks::{gradient_check, gradient_suite};
use kernelnet::classifier::{ClassifierParams, Target};
use kernelnet::kernel::{CoeffActivation, KernelMode, KernelSeries};
use kernelnet::matrix::norm;
use kernelnet::model::Model;
use kernelnet::rng::{seeded, standard_normal};

#[test]
fn fifty_random_end_to_end_configurations() {
    let r = gradient_suite(50, 2024).unwrap();
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn backbone_configurations_with_rectified_features() {
    let mut rng = seeded(77);
    for i in 0..20 {
        let act = if i % 2 == 0 { HiddenActivation::Tanh } else { HiddenActivation::Relu };
        let mlp = Mlp::new(
            MlpConfig {
                layer_sizes: vec![3, 5 + i % 3, 4, 3],
                hidden_activation: act,
                rectify_features: i % 3 == 0,
            },
            &mut rng,
        )
        .unwrap();
        let mut series = KernelSeries::learned(6, CoeffActivation::Sigmoid);
        series.alpha_raw = (0..9).map(|_| standard_normal(&mut rng)).collect();
        let model = Model::with_backbone(mlp, ClassifierParams::kernelized(3, 3, series, &mut rng)).unwrap();
        // rectified features can vanish; those inputs are rejected, so redraw
        let x = loop {
            let x: Vec<f64> = (0..3).map(|_| standard_normal(&mut rng)).collect();
            if norm(&model.features(&x).unwrap()) > 1e-2 {
                break x;
            }
        };
        let r = gradient_check(&model, &x, Target::Label(i % 3), 0.1).unwrap();
        assert_eq!(r.failures, 0, "config {i}: {}", r.worst_entry);
    }
}

#[test]
fn fixed_kernel_scale_gradients() {
    let mut rng = seeded(5);
    for mode in [
        KernelMode::FixedGaussianRbf { gamma: 1.5 },
        KernelMode::FixedPolynomial { degree: 4 },
        KernelMode::Linear,
    ] {
        let mut series = KernelSeries::fixed(mode);
        series.scale_raw = 1.3;
        let model = Model::head_only(ClassifierParams::kernelized(4, 3, series, &mut rng));
        let r = gradient_check(&model, &[0.2, -0.7, 0.4], Target::Label(2), 1.0).unwrap();
        assert_eq!(r.failures, 0, "{mode:?}: {}", r.worst_entry);
    }
}
