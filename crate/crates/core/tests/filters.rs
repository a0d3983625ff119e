use std::f64::consts::PI;

use lpvslc::filters::{cascade_frf, lead_transfer, notch_transfer, Cascade, FilterSpec, LpvNotch, NotchParams};
use lpvslc::freqresp::{jw, FrequencyGrid};
use lpvslc::plant::SchedulingPoint;
use lpvslc::scheduling::{CoefficientSurface, Normalization, Units};
use num_complex::Complex64;
use proptest::prelude::*;

// textbook biquad written out independently of the library
fn biquad(f1: f64, f2: f64, b1: f64, b2: f64, w: f64) -> Complex64 {
    let s = Complex64::new(0.0, w);
    let (w1, w2) = (2.0 * PI * f1, 2.0 * PI * f2);
    let num = (s * s + 2.0 * b1 * w1 * s + w1 * w1) / (w1 * w1);
    let den = (s * s + 2.0 * b2 * w2 * s + w2 * w2) / (w2 * w2);
    num / den
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

proptest! {
    #[test]
    fn notch_realization_matches_biquad(
        f1 in 20.0..2000.0f64,
        skew in 0.3..4.0f64,
        b1 in 0.0..0.5f64,
        b2 in 0.01..0.8f64,
        f in 1.0..5000.0f64,
    ) {
        let p = NotchParams { f1, f2: skew * f1, beta1: b1, beta2: b2 };
        let w = 2.0 * PI * f;
        let expect = biquad(f1, skew * f1, b1, b2, w);
        let ss = p.realize().unwrap().eval_siso(jw(f)).unwrap();
        prop_assert!(rel(ss, expect) <= 1e-10);
        prop_assert!(rel(notch_transfer(f1, skew * f1, b1, b2, w).unwrap(), expect) <= 1e-12);
    }

    #[test]
    fn notch_unit_dc_and_skewed_hf(f1 in 50.0..500.0f64, skew in 0.5..3.0f64) {
        let p = NotchParams { f1, f2: skew * f1, beta1: 0.05, beta2: 0.2 };
        prop_assert!((p.transfer(jw(1e-9)) - 1.0).norm() < 1e-9);
        let hf = p.transfer(jw(1e9)).norm();
        prop_assert!((hf - skew * skew).abs() < 1e-6 * skew * skew);
    }

    #[test]
    fn cascade_realization_matches_product(f_bw in 20.0..300.0f64, k in 0.1..1e5f64, f in 2.0..4000.0f64) {
        let c = Cascade::new(
            vec![
                FilterSpec::Gain { k },
                FilterSpec::Integrator { f_i: Some(f_bw / 6.0) },
                FilterSpec::Lead { f_bw, alpha: 3.0 },
                FilterSpec::notch(NotchParams { f1: 226.5, f2: 260.0, beta1: 0.02, beta2: 0.2 }),
            ],
            vec![],
        )
        .unwrap();
        let ss = c.realize(None).unwrap().eval_siso(jw(f)).unwrap();
        prop_assert!(rel(ss, c.response(None, jw(f)).unwrap()) < 1e-9);
    }
}

#[test]
fn lead_peak_phase_and_gains() {
    let (f_bw, alpha) = (95.0, 3.0);
    let at = |f: f64| lead_transfer(f_bw, alpha, jw(f));
    let peak = at(f_bw).arg().to_degrees();
    assert!((peak - 53.130).abs() < 0.05, "peak phase {peak}");
    // the phase maximum sits at f_bw
    for f in [0.9 * f_bw, 1.1 * f_bw] {
        assert!(at(f).arg().to_degrees() < peak);
    }
    assert!((at(1e-9).norm() - 1.0).abs() < 1e-10);
    assert!((at(1e12).norm() - 9.0).abs() < 1e-6);
    let ss = FilterSpec::Lead { f_bw, alpha }.realize(None).unwrap();
    assert!((ss.eval_siso(jw(f_bw)).unwrap() - at(f_bw)).norm() < 1e-12);
}

#[test]
fn pi_corner_and_integrator() {
    let f_i = 15.0;
    let pi = FilterSpec::Integrator { f_i: Some(f_i) };
    let h = pi.response(None, jw(f_i)).unwrap();
    assert!((h.norm() - 2f64.sqrt()).abs() < 1e-12);
    assert!((h.arg().to_degrees() + 45.0).abs() < 1e-10);
    let ss = pi.realize(None).unwrap();
    assert!((ss.eval_siso(jw(3.0)).unwrap() - pi.response(None, jw(3.0)).unwrap()).norm() < 1e-12);
    let pure = FilterSpec::Integrator { f_i: None }.response(None, jw(1.0)).unwrap();
    assert!((pure - 1.0 / jw(1.0)).norm() < 1e-15);
}

#[test]
fn scheduled_notch_follows_surfaces() {
    let norm = Normalization::IDENTITY;
    let surf = |theta: Vec<f64>, units| CoefficientSurface::new(2, 1, theta, units, norm).unwrap();
    let n = LpvNotch {
        beta1: CoefficientSurface::constant(0.02, Units::Dimensionless),
        beta2: CoefficientSurface::constant(0.2, Units::Dimensionless),
        f1: surf(vec![200.0, 100.0], Units::Hz),
        f2: surf(vec![250.0, 200.0], Units::Hz),
    };
    let spec = FilterSpec::LpvNotch(n);
    let p = SchedulingPoint::new(0.2, 0.1);
    let params = spec.notch_params(Some(p), f64::INFINITY).unwrap().unwrap();
    assert!((params.f1 - 220.0).abs() < 1e-12 && (params.f2 - 290.0).abs() < 1e-12);
    assert!(spec.realize(None).is_err());
    // frozen scheduled notch equals the LTI notch with the same parameters
    let lti = FilterSpec::notch(params);
    let grid = FrequencyGrid::log(1.0, 5000.0, 50).unwrap();
    let a = cascade_frf(&Cascade::new(vec![], vec![spec]).unwrap(), Some(p), &grid).unwrap();
    let b = cascade_frf(&Cascade::new(vec![lti], vec![]).unwrap(), None, &grid).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).norm() < 1e-14);
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(NotchParams { f1: 0.0, f2: 100.0, beta1: 0.1, beta2: 0.1 }.realize().is_err());
    assert!(NotchParams { f1: 100.0, f2: 100.0, beta1: 0.1, beta2: 0.0 }.realize().is_err());
    assert!(FilterSpec::Lead { f_bw: -1.0, alpha: 3.0 }.realize(None).is_err());
    // an LTI filter in the scheduled part is a structural error
    assert!(Cascade::new(vec![], vec![FilterSpec::Gain { k: 1.0 }]).is_err());
}
