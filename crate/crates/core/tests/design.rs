use std::f64::consts::PI;

use lpvslc::design::{
    certify, design_lpv_slc, design_lti_slc, identify_resonance, rigid_body_decouple, tune_gain, DesignSpec,
};
use lpvslc::filters::{Cascade, FilterSpec};
use lpvslc::freqresp::{jw, FrequencyGrid, SisoFrf};
use lpvslc::plant::ModalPlantModel;
use proptest::prelude::*;

fn rigid_plus_mode(mass: f64, f: f64, zeta: f64, rel: f64) -> impl Fn(f64) -> num_complex::Complex64 {
    move |fr| {
        let s = jw(fr);
        let w = 2.0 * PI * f;
        1.0 / (mass * s * s) + rel / mass * 1.0 / (s * s + 2.0 * zeta * w * s + w * w)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resonance_is_identified(f in 120.0..380.0f64, zeta in 0.005..0.05f64, rel in prop_oneof![-0.9..-0.05f64, 0.05..2.0f64]) {
        let grid = FrequencyGrid::log(1.0, 5000.0, 2000).unwrap();
        let g = SisoFrf::from_fn(&grid, rigid_plus_mode(7.0, f, zeta, rel));
        let id = identify_resonance(&g, [100.0, 400.0], 0.03).unwrap();
        prop_assert!((id.f_hz - f).abs() < 1e-3 * f, "f {} vs {f}", id.f_hz);
        prop_assert!((id.zeta - zeta).abs() < 0.02 * zeta, "zeta {} vs {zeta}", id.zeta);
        // h = g (-m w^2) - 1 = rel (-w^2) / (w_r^2 - w^2 + ...), so c = -rel
        prop_assert!((id.residue + rel).abs() < 0.02 * rel.abs(), "residue {} vs {rel}", id.residue);
        prop_assert!(id.visible);
    }

    #[test]
    fn tuned_gain_puts_crossover_at_target(f_bw in 20.0..300.0f64, mass in 0.5..50.0f64) {
        let grid = FrequencyGrid::log(1.0, 5000.0, 3000).unwrap();
        let g = SisoFrf::from_fn(&grid, |f| 1.0 / (mass * jw(f) * jw(f)));
        let c = Cascade::new(vec![FilterSpec::Integrator { f_i: Some(f_bw / 6.0) }, FilterSpec::Lead { f_bw, alpha: 3.0 }], vec![]).unwrap();
        let k = tune_gain(&g, &c, f_bw).unwrap();
        let l = k * c.response(None, jw(f_bw)).unwrap() / (mass * jw(f_bw) * jw(f_bw));
        prop_assert!((l.norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn weak_mode_is_not_visible() {
    let grid = FrequencyGrid::log(1.0, 5000.0, 2000).unwrap();
    let g = SisoFrf::from_fn(&grid, rigid_plus_mode(7.0, 226.5, 0.02, 0.005));
    assert!(!identify_resonance(&g, [100.0, 400.0], 0.03).unwrap().visible);
}

#[test]
fn rigid_plant_reaches_the_cap() {
    let model = ModalPlantModel::rigid_mass(4.0);
    let spec = DesignSpec::for_axes(vec![80.0]);
    let lti = design_lti_slc(&model, &spec).unwrap();
    assert!(lti.certification.passed);
    assert!((lti.controllers.bandwidth_hz[0] - 80.0).abs() < 1e-9);
    // no resonance, so scheduling adds nothing
    let lpv = design_lpv_slc(&model, &spec).unwrap();
    assert_eq!(lpv.controllers.bandwidth_hz, lti.controllers.bandwidth_hz);
    assert!(lpv.loops[0].notch.is_none());
    assert!(lti.certification.worst_peak_db <= spec.sensitivity_bound_db);
}

#[test]
fn design_is_deterministic() {
    let model = ModalPlantModel::rigid_mass(2.0);
    let spec = DesignSpec::for_axes(vec![50.0]);
    let a = serde_json::to_string(&design_lti_slc(&model, &spec).unwrap()).unwrap();
    let b = serde_json::to_string(&design_lti_slc(&model, &spec).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decoupling_is_constant_and_exact() {
    let model = ModalPlantModel::benchmark();
    let (tu0, ty0) = rigid_body_decouple(&model, model.workspace.center()).unwrap();
    let n = model.n_rigid();
    for p in model.workspace.grid(5, 5) {
        let (tu, ty) = rigid_body_decouple(&model, p).unwrap();
        assert_eq!(tu, tu0);
        assert_eq!(ty, ty0);
        let (pa, ps) = model.mode_shape_eval(p).unwrap();
        let eye = nalgebra::DMatrix::<f64>::identity(n, n);
        assert!((pa.rows(0, n) * &tu - &eye).abs().max() < 1e-12);
        assert!((&ty * ps.columns(0, n) - &eye).abs().max() < 1e-12);
    }
}

#[test]
fn certification_rejects_a_sign_flip() {
    let model = ModalPlantModel::rigid_mass(4.0);
    let spec = DesignSpec::for_axes(vec![60.0]);
    let mut c = design_lti_slc(&model, &spec).unwrap().controllers;
    let grid = spec.frequency_grid.build().unwrap();
    let pts = spec.verification_points(&model);
    assert!(certify(&model, &c, &pts, 6.0, &grid).unwrap().passed);
    if let FilterSpec::Gain { k } = &mut c.loops[0].elements[0] {
        *k = -*k;
    } else {
        panic!("gain first");
    }
    let report = certify(&model, &c, &pts, 6.0, &grid).unwrap();
    assert!(!report.passed);
    assert!(report.points.iter().all(|p| !p.eigen_stable && p.nyquist_matches_eigen));
}
