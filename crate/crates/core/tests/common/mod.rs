//! Random systems shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use lpvslc::filters::{Cascade, FilterSpec, NotchParams};
use lpvslc::freqresp::{jw, max_real_eigenvalue, closed_loop_matrix, FrequencyGrid};
use lpvslc::statespace::FrozenStateSpace;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random stable MIMO system, poles at least `margin` left of the axis.
pub fn stable_mimo(rng: &mut ChaCha8Rng, n_states: usize, n_io: usize) -> FrozenStateSpace {
    let mut a = DMatrix::from_fn(n_states, n_states, |_, _| rng.gen_range(-50.0..50.0));
    let shift = max_real_eigenvalue(&a) + rng.gen_range(5.0..50.0);
    for i in 0..n_states {
        a[(i, i)] -= shift;
    }
    let b = DMatrix::from_fn(n_states, n_io, |_, _| rng.gen_range(-10.0..10.0));
    let c = DMatrix::from_fn(n_io, n_states, |_, _| rng.gen_range(-10.0..10.0));
    let d = DMatrix::from_fn(n_io, n_io, |_, _| rng.gen_range(-0.1..0.1));
    FrozenStateSpace::new(a, b, c, d).unwrap()
}

/// `g (s + a) / (s + b)`.
pub fn lead_lag(g: f64, a: f64, b: f64) -> FrozenStateSpace {
    FrozenStateSpace::new(
        DMatrix::from_element(1, 1, -b),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, g * (a - b)),
        DMatrix::from_element(1, 1, g),
    )
    .unwrap()
}

/// Diagonal controller that stabilizes `plant`, found by shrinking random gains.
pub fn stabilizing_diagonal(rng: &mut ChaCha8Rng, plant: &FrozenStateSpace) -> Vec<FrozenStateSpace> {
    let n = plant.n_inputs();
    let mut scale = 1.0;
    loop {
        let ks: Vec<FrozenStateSpace> = (0..n)
            .map(|_| lead_lag(scale * rng.gen_range(0.05..2.0), rng.gen_range(1.0..100.0), rng.gen_range(1.0..100.0)))
            .collect();
        let k = FrozenStateSpace::block_diag(&ks).unwrap();
        if max_real_eigenvalue(&closed_loop_matrix(plant, &k).unwrap()) < 0.0 {
            return ks;
        }
        scale *= 0.5;
    }
}

/// Rigid mass with a few flexible modes, SISO.
pub struct ModalSiso {
    pub mass: f64,
    /// `(f_hz, zeta, residue)`.
    pub modes: Vec<(f64, f64, f64)>,
}

impl ModalSiso {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(0..4);
        let modes = (0..n)
            .map(|_| (rng.gen_range(150.0..1500.0), rng.gen_range(0.01..0.08), rng.gen_range(-0.5..0.5)))
            .collect();
        Self { mass: rng.gen_range(0.5..20.0), modes }
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        let mut h = 1.0 / (self.mass * s * s);
        for &(f, z, r) in &self.modes {
            let w = 2.0 * PI * f;
            h += r / self.mass / (s * s + 2.0 * z * w * s + w * w);
        }
        h
    }

    pub fn realize(&self) -> FrozenStateSpace {
        let nq = 1 + self.modes.len();
        let mut a = DMatrix::zeros(2 * nq, 2 * nq);
        let mut b = DMatrix::zeros(2 * nq, 1);
        let mut c = DMatrix::zeros(1, 2 * nq);
        a[(0, nq)] = 1.0;
        b[(nq, 0)] = 1.0 / self.mass;
        c[(0, 0)] = 1.0;
        for (k, &(f, z, r)) in self.modes.iter().enumerate() {
            let w = 2.0 * PI * f;
            let i = 1 + k;
            a[(i, nq + i)] = 1.0;
            a[(nq + i, i)] = -w * w;
            a[(nq + i, nq + i)] = -2.0 * z * w;
            b[(nq + i, 0)] = r / self.mass;
            c[(0, i)] = 1.0;
        }
        FrozenStateSpace::new(a, b, c, DMatrix::zeros(1, 1)).unwrap()
    }
}

/// PID-like cascade around `f_bw` with an optional notch, gain set for unit
/// loop magnitude at `f_bw` times `detune`.
pub fn random_cascade(rng: &mut ChaCha8Rng, plant: &ModalSiso) -> Cascade {
    let f_bw = rng.gen_range(10.0..200.0);
    let mut g = vec![FilterSpec::Integrator { f_i: Some(f_bw / 6.0) }, FilterSpec::Lead { f_bw, alpha: 3.0 }];
    if let Some(&(f, _, _)) = plant.modes.first() {
        if rng.gen_bool(0.5) {
            g.push(FilterSpec::notch(NotchParams { f1: f, f2: f * rng.gen_range(0.7..1.6), beta1: 0.02, beta2: 0.3 }));
        }
    }
    let unit = Cascade::new(g.clone(), vec![]).unwrap();
    let mag = (plant.eval(jw(f_bw)) * unit.response(None, jw(f_bw)).unwrap()).norm();
    let mut all = vec![FilterSpec::Gain { k: rng.gen_range(0.2..6.0) / mag }];
    all.extend(g);
    Cascade::new(all, vec![]).unwrap()
}

pub fn dense_grid() -> FrequencyGrid {
    FrequencyGrid::log(0.01, 1e5, 6000).unwrap()
}
