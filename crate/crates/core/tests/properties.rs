//! Property tests for the pipeline-wide invariants: projection idempotence,
//! budget bounds, bound-by-construction generation, metric symmetry, and
//! feature finiteness.

use dfshield_core::image::synth::{render_face, SynthConfig};
use dfshield_core::image::tensor::{
    apply_perturbation, clip_eps, clip_image_range, ImageTensor, Perturbation,
};
use dfshield_core::iqa::{brisque, fsim, ssim};
use dfshield_core::substitute::{SubstituteArch, SubstituteModel};
use dfshield_core::tcagan::{generate_perturbation, loss_disr, AdversaryGenerator, UNet};
use ndarray::Array3;
use proptest::prelude::*;

fn grid_strategy(h: usize, w: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array3<f64>> {
    proptest::collection::vec(lo..hi, h * w).prop_map(move |v| {
        Array3::from_shape_vec((h, w, 1), v).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clip_eps_is_idempotent(delta in grid_strategy(8, 8, -0.5, 0.5), eps in 0.001f64..0.2) {
        let once = clip_eps(&delta, eps).unwrap();
        let twice = clip_eps(once.data(), eps).unwrap();
        prop_assert_eq!(once.data(), twice.data());
        prop_assert!(once.max_abs() <= eps + 1e-12);
    }

    #[test]
    fn perturbed_images_respect_the_budget(
        base in grid_strategy(8, 8, 0.0, 1.0),
        delta in grid_strategy(8, 8, -0.5, 0.5),
        eps in 0.001f64..0.1,
    ) {
        let x = ImageTensor::new(base).unwrap();
        let r = clip_eps(&delta, eps).unwrap();
        let adv = apply_perturbation(&x, &r).unwrap();
        prop_assert!(adv.linf_distance(&x).unwrap() <= eps + 1e-6);
        prop_assert!(adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn clip_image_range_is_elementwise_clamp(vals in grid_strategy(8, 8, -2.0, 3.0)) {
        let out = clip_image_range(&vals).unwrap();
        for (&a, &b) in vals.iter().zip(out.data().iter()) {
            prop_assert_eq!(a.clamp(0.0, 1.0), b);
        }
    }
}

fn synthetic(h: usize, w: usize, id: u64, k: u64) -> ImageTensor {
    render_face(
        &SynthConfig {
            height: h,
            width: w,
            ..Default::default()
        },
        id,
        k,
    )
}

#[test]
fn generator_bound_holds_across_many_inputs() {
    let gen = AdversaryGenerator {
        net: UNet::init(3, 3, &[4, 8], 7, "prop-gen"),
        output_bound: 0.03,
    };
    for k in 0..32u64 {
        let x = synthetic(16, 16, k % 3, k);
        let r = generate_perturbation(&gen, &x).unwrap();
        assert!(r.max_abs() <= 0.03, "bound violated at input {k}");
    }
}

#[test]
fn disruption_loss_stays_in_half_open_interval() {
    let s = SubstituteModel::new(
        SubstituteArch {
            input_height: 16,
            input_width: 16,
            input_channels: 3,
            encoder_channels: vec![4, 8],
            encoder_kernel: 3,
            leaky_slope: 0.2,
        },
        11,
    )
    .unwrap();
    for k in 0..12u64 {
        let x = synthetic(16, 16, 0, k);
        let mut d = x.data().clone();
        for (i, v) in d.iter_mut().enumerate() {
            let delta = 0.03 * ((((i as u64) * 31 + k * 17) % 7) as f64 / 3.0 - 1.0);
            *v = (*v + delta).clamp(0.0, 1.0);
        }
        let x_adv = ImageTensor::new(d).unwrap();
        let v = loss_disr(&s, &x, &x_adv).unwrap();
        assert!(v > 0.0 && v <= 2.0, "loss_disr {v} out of (0, 2]");
    }
    let x = synthetic(16, 16, 0, 0);
    assert_eq!(loss_disr(&s, &x, &x).unwrap(), 2.0);
}

#[test]
fn referenced_metrics_are_symmetric_and_bounded() {
    for k in 0..4u64 {
        let a = synthetic(32, 32, 0, k);
        let b = synthetic(32, 32, 1, k);
        let s_ab = ssim(&a, &b).unwrap();
        let s_ba = ssim(&b, &a).unwrap();
        assert!((s_ab - s_ba).abs() < 1e-9);
        assert!(s_ab <= 1.0 + 1e-12);
        let f_ab = fsim(&a, &b).unwrap();
        let f_ba = fsim(&b, &a).unwrap();
        assert!((f_ab - f_ba).abs() < 1e-9);
        assert!((0.0..=1.0 + 1e-9).contains(&f_ab));
    }
}

#[test]
fn ssim_strictly_below_one_for_distinct_images() {
    let a = synthetic(32, 32, 0, 1);
    let b = synthetic(32, 32, 0, 2);
    assert!(ssim(&a, &b).unwrap() < 1.0);
}

#[test]
fn brisque_features_finite_everywhere() {
    for k in 0..6u64 {
        let x = synthetic(64, 64, k % 2, k);
        let f = dfshield_core::iqa::brisque::features(&x).unwrap();
        assert_eq!(f.len(), 36);
        assert!(f.iter().all(|v| v.is_finite()));
        assert!(brisque(&x).unwrap().is_finite());
    }
}

#[test]
fn perturbation_type_rejects_out_of_bound_grids() {
    let ok = Perturbation::new(Array3::from_elem((8, 8, 1), 0.0299), 0.03);
    assert!(ok.is_ok());
    let bad = Perturbation::new(Array3::from_elem((8, 8, 1), 0.0302), 0.03);
    assert!(bad.is_err());
}
