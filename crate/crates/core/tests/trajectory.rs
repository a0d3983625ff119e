use lpvslc::trajectory::{mass_feedforward, plan, MotionBounds, TrajectoryProfile, TrajectorySpec};
use proptest::prelude::*;

/// Classical RK4 on the four-integrator chain, many substeps per segment.
/// The exact solution is a quartic inside each segment, so RK4 reproduces it
/// up to rounding and serves as an oracle independent of the closed form.
fn dense_endpoint(p: &TrajectoryProfile, substeps: usize) -> [f64; 4] {
    let f = |x: [f64; 4], s: f64| [x[1], x[2], x[3], s];
    let mut x = p.initial;
    for seg in &p.segments {
        let h = seg.duration / substeps as f64;
        for _ in 0..substeps {
            let k1 = f(x, seg.snap);
            let k2 = f(std::array::from_fn(|i| x[i] + 0.5 * h * k1[i]), seg.snap);
            let k3 = f(std::array::from_fn(|i| x[i] + 0.5 * h * k2[i]), seg.snap);
            let k4 = f(std::array::from_fn(|i| x[i] + h * k3[i]), seg.snap);
            x = std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
    }
    x
}

fn bounds() -> impl Strategy<Value = MotionBounds> {
    (0.05..2.0f64, 1.0..50.0f64, 100.0..1e4f64, 1e4..1e7f64).prop_map(|(v_max, a_max, j_max, s_max)| MotionBounds {
        v_max,
        a_max,
        j_max,
        s_max,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivative_bounds_hold(d in -0.3..0.3f64, b in bounds(), fs in prop::option::of(Just(10_000.0))) {
        let p = plan(d, &b, fs).unwrap();
        let tol = 1.0 + 1e-9;
        for seg in &p.segments {
            prop_assert!(seg.snap.abs() <= b.s_max * tol);
        }
        let n = 4000;
        let t_end = p.duration();
        for i in 0..=n {
            let s = p.sample(t_end * i as f64 / n as f64);
            prop_assert!(s.vel.abs() <= b.v_max * tol, "vel {}", s.vel);
            prop_assert!(s.acc.abs() <= b.a_max * tol, "acc {}", s.acc);
            prop_assert!(s.jerk.abs() <= b.j_max * tol, "jerk {}", s.jerk);
        }
    }

    #[test]
    fn dense_integration_reaches_the_endpoint(d in -0.3..0.3f64, b in bounds(), start in -0.1..0.1f64) {
        let mut p = plan(d, &b, Some(10_000.0)).unwrap();
        p.initial[0] = start;
        let x = dense_endpoint(&p, 200);
        prop_assert!((x[0] - (start + d)).abs() <= 1e-9, "endpoint off by {:e}", x[0] - start - d);
        // at rest
        prop_assert!(x[1].abs() <= 1e-9 && x[2].abs() <= 1e-6 && x[3].abs() <= 1e-3);
    }

    #[test]
    fn profile_is_odd_about_the_midpoint(d in -0.3..0.3f64, b in bounds()) {
        let p = plan(d, &b, Some(10_000.0)).unwrap();
        let n = p.segments.len();
        for k in 0..n {
            let (a, z) = (p.segments[k], p.segments[n - 1 - k]);
            prop_assert_eq!(a.duration, z.duration);
            prop_assert_eq!(a.snap, -z.snap);
        }
        let t_end = p.duration();
        let samples = (t_end * 10_000.0).round() as usize;
        for i in 0..=samples {
            let t = i as f64 / 10_000.0;
            let (u, v) = (p.sample(t), p.sample(t_end - t));
            let scale = d.abs().max(1e-12);
            prop_assert!((u.pos + v.pos - 2.0 * p.initial[0] - d).abs() <= 1e-12 * scale.max(1.0));
            prop_assert!((u.vel - v.vel).abs() <= 1e-9 * b.v_max);
            prop_assert!((u.acc + v.acc).abs() <= 1e-8 * b.a_max);
        }
    }
}

#[test]
fn phase_durations_land_on_samples() {
    let p = plan(0.1, &MotionBounds::default(), Some(10_000.0)).unwrap();
    for s in &p.segments {
        let n = s.duration * 10_000.0;
        assert!((n - n.round()).abs() < 1e-9, "segment of {n} samples");
    }
}

#[test]
fn benchmark_move_cruises() {
    let spec = TrajectorySpec::default();
    let planar = spec.plan().unwrap();
    for (i, axis) in planar.axes.iter().enumerate() {
        assert!(axis.phases[3] > 0.0, "axis {i} never reaches v_max");
        assert_eq!(axis.sample(axis.duration() + 1.0).pos, spec.end[i]);
        assert_eq!(axis.sample(0.0).pos, spec.start[i]);
    }
}

#[test]
fn feedforward_is_mass_times_acceleration() {
    let p = plan(0.1, &MotionBounds::default(), Some(10_000.0)).unwrap();
    let s = p.sample_grid(10_000.0, 0.3);
    let ff = mass_feedforward(&s, 2.5);
    for (f, x) in ff.iter().zip(&s) {
        assert_eq!(*f, 2.5 * x.acc);
    }
    assert_eq!(s.len(), 3001);
}

#[test]
fn zero_move_and_bad_bounds() {
    let p = plan(0.0, &MotionBounds::default(), None).unwrap();
    assert!(p.segments.is_empty());
    let bad = MotionBounds { v_max: 0.0, ..MotionBounds::default() };
    assert!(plan(0.1, &bad, None).is_err());
    assert!(plan(f64::NAN, &MotionBounds::default(), None).is_err());
}
