use rand::Rng;

use geocond::diffnet::{gradcheck, Tensor};
use geocond::domain::{Measurement, MeasurementSet};
use geocond::gan::{self, GanConfig};
use geocond::inpaint::{evaluate_networks, expand_mask, total_loss, IdentityHarness};
use geocond::seed;

fn measurements(count: usize, n: usize, stream: u64) -> MeasurementSet {
    let mut rng = seed::stream(stream, 0);
    let mut items = Vec::new();
    let mut taken = std::collections::HashSet::new();
    while items.len() < count {
        let (r, c) = (rng.random_range(0..n), rng.random_range(0..n));
        if taken.insert((r, c)) {
            items.push(Measurement::new(r, c, rng.random_range(0..2)).unwrap());
        }
    }
    MeasurementSet::new(items).unwrap()
}

#[test]
fn every_layer_kind_matches_finite_differences() {
    for r in gradcheck::layer_suite(gradcheck::DEFAULT_STEP, 1e-3).unwrap() {
        assert!(
            r.passed(),
            "{}: {:.3e} over {} coordinates",
            r.name,
            r.max_rel_error,
            r.checked
        );
    }
}

#[test]
fn composed_generator_discriminator_graph() {
    let results = gan::composed_gradcheck(gradcheck::COMPOSED_STEP, 1e-3).unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        assert_eq!(r.checked, 10);
        assert!(r.passed(), "{}: {:.3e}", r.name, r.max_rel_error);
    }
}

#[test]
fn conv_transpose_is_the_adjoint_of_conv() {
    for s in 0..3 {
        assert!(gradcheck::adjoint_gap(s).unwrap() < 1e-4);
    }
}

#[test]
fn inpainting_loss_gradient_on_a_real_model() {
    let model = gan::build(&GanConfig {
        image_size: 32,
        seed: 3,
        ..GanConfig::default()
    })
    .unwrap();
    let g = model.generator.cast::<f64>();
    let d = model.discriminator.cast::<f64>();
    let mask = expand_mask(&measurements(10, 32, 1), 3, (32, 32)).unwrap();
    let mut rng = seed::stream(2, 0);
    let z: Vec<f64> = (0..100).map(|_| rng.random_range(-2.0..2.0)).collect();
    let at = |z: &[f64]| {
        let t = Tensor::from_vec(&[1, 100], z.to_vec()).unwrap();
        evaluate_networks(&g, &d, &t, &mask, 10.0).unwrap()
    };
    let analytic = at(&z).grad.into_data();
    let h = gradcheck::COMPOSED_STEP;
    for i in (0..100).step_by(10) {
        let mut zp = z.clone();
        zp[i] += h;
        let mut zm = z.clone();
        zm[i] -= h;
        let numeric = (at(&zp).parts[0].total - at(&zm).parts[0].total) / (2.0 * h);
        let err = gradcheck::relative_error(analytic[i], numeric);
        assert!(
            err < 1e-3,
            "z[{i}]: analytic {} numeric {numeric}",
            analytic[i]
        );
    }
}

#[test]
fn inpainting_loss_gradient_on_the_identity_harness() {
    let harness = IdentityHarness {
        height: 16,
        width: 16,
    };
    let ms = measurements(10, 16, 4);
    let mask = expand_mask(&ms, 3, (16, 16)).unwrap();
    let mut rng = seed::stream(5, 0);
    // Pixels kept at least 0.2 away from ±1 so a step of 0.05 never
    // crosses a kink of the absolute value.
    let z: Vec<f32> = (0..256).map(|_| rng.random_range(-0.8f32..0.8)).collect();
    let (parts, grad) = total_loss(&harness, &z, &mask, 10.0).unwrap();
    assert!((parts.prior - 0.5f64.ln()).abs() < 1e-12);
    let h = 0.05f32;
    let mut checked = 0;
    for i in 0..256 {
        let (w, y) = (mask.weights()[i], mask.targets()[i]);
        let closed_form = if w > 0.0 {
            w * (f64::from(z[i]) - y).signum()
        } else {
            0.0
        };
        assert!((f64::from(grad[i]) - closed_form).abs() < 1e-6, "pixel {i}");
        if w > 0.0 && checked < 10 {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let up = total_loss(&harness, &zp, &mask, 10.0).unwrap().0.total;
            let down = total_loss(&harness, &zm, &mask, 10.0).unwrap().0.total;
            let numeric = (up - down) / (2.0 * f64::from(h));
            assert!(
                gradcheck::relative_error(f64::from(grad[i]), numeric) < 1e-3,
                "pixel {i}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 10);
}
