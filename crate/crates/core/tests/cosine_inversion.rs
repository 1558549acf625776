use fracmag::inverse::{canonical_sign, gauge_field, recover_a_adaptive, recover_a_from_r, CosineInversion};
use fracmag::point::{self, Point, ORIGIN};
use fracmag::FracError;
use proptest::prelude::*;

fn constant_sampler(a: Point) -> impl Fn(&Point, &Point, f64) -> fracmag::Result<f64> {
    move |_m, d, _t| Ok(point::dot(d, &a).cos())
}

fn max_sign_error(est: &Point, a: &Point, dim: usize) -> f64 {
    let plus = (0..dim).map(|k| (est[k] - a[k]).abs()).fold(0.0, f64::max);
    let minus = (0..dim).map(|k| (est[k] + a[k]).abs()).fold(0.0, f64::max);
    plus.min(minus)
}

proptest! {
    #[test]
    fn recovers_constant_field_up_to_sign(a0 in -2.0f64..2.0, a1 in -2.0f64..2.0) {
        let a = [a0, a1, 0.0];
        let opts = CosineInversion::new(0.1);
        let est = recover_a_from_r(constant_sampler(a), &ORIGIN, 2, 0.0, &opts).unwrap();
        prop_assert!(max_sign_error(&est, &a, 2) < 1e-9);
        prop_assert_eq!(canonical_sign(&est, 2), est);
    }

    #[test]
    fn canonical_sign_is_even(a0 in -5.0f64..5.0, a1 in -5.0f64..5.0) {
        let a = [a0, a1, 0.0];
        let neg = point::scale(&a, -1.0);
        prop_assert_eq!(canonical_sign(&a, 2), canonical_sign(&neg, 2));
    }

    #[test]
    fn gauge_field_is_invariant_under_global_flip(v in prop::collection::vec(0.5f64..2.0, 2..8)) {
        let mut x: Vec<Point> = v.iter().map(|&c| [c, 0.3 * c, 0.0]).collect();
        let mut y: Vec<Point> = x.iter().map(|p| point::scale(p, -1.0)).collect();
        gauge_field(&mut x, 2);
        gauge_field(&mut y, 2);
        prop_assert_eq!(x, y);
    }
}

#[test]
fn one_dimensional_magnitude() {
    let a = [-1.3, 0.0, 0.0];
    let est = recover_a_from_r(constant_sampler(a), &ORIGIN, 1, 0.0, &CosineInversion::new(0.2)).unwrap();
    assert!((est[0] - 1.3).abs() < 1e-12);
}

#[test]
fn inconsistent_samples_are_rejected() {
    let opts = CosineInversion::new(0.1);
    let r = recover_a_from_r(|_: &Point, _: &Point, _| Ok(1.1), &ORIGIN, 1, 0.0, &opts);
    assert!(matches!(r, Err(FracError::DataInconsistency(_))));
}

#[test]
fn branch_margin_requests_smaller_step() {
    let a = [30.0, 0.0, 0.0];
    let opts = CosineInversion::new(0.1);
    let r = recover_a_from_r(constant_sampler(a), &ORIGIN, 1, 0.0, &opts);
    assert!(matches!(r, Err(FracError::ProbeScale(_))));
    let (est, delta) = recover_a_adaptive(constant_sampler(a), &ORIGIN, 1, 0.0, &opts, 4).unwrap();
    assert!(delta < 0.1);
    assert!((est[0] - 30.0).abs() < 1e-9);
}
