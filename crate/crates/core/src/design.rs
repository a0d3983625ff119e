//! Sequential loop closing with LTI or position-scheduled notch filters.
//!
//! Each loop gets `gain * PI * lead * notch`. The gain, integrator corner and
//! lead are common to all positions (the LTI part). The notch is either one
//! worst-case LTI filter or a scheduled filter whose coefficients are fitted
//! over the design grid. Bandwidth is maximized per loop by bisection.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{Cascade, FilterSpec, LpvNotch, NotchParams};
use crate::freqresp::{
    closed_loop_matrix, det_identity_residual_ordered, equivalent_plant, equivalent_plant_at, frf, jw,
    margins_and_bandwidth, max_real_eigenvalue, nyquist_stable, nyquist_stable_eval, sensitivity_peak_db,
    sequential_equivalent_plants, FrequencyGrid, FrfMatrix, SisoFrf, StabilityVerdict,
};
use crate::io::matrix_rows;
use crate::plant::{ModalPlantModel, SchedulingPoint};
use crate::scheduling::{fit_surface, FrozenDesignSet, Normalization, Units};
use crate::statespace::FrozenStateSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignMode {
    Lti,
    Lpv,
}

impl DesignMode {
    pub fn name(self) -> &'static str {
        match self {
            DesignMode::Lti => "lti",
            DesignMode::Lpv => "lpv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::log(self.f_min_hz, self.f_max_hz, self.points)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { f_min_hz: 1.0, f_max_hz: 5000.0, points: 1000 }
    }
}

/// Design targets and tuning knobs. Unset grids default to uniform 3x3
/// (design) and 5x5 (verification) grids over the workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSpec {
    /// Upper bandwidth per loop (axis order); bisection never exceeds it.
    pub target_bandwidth_hz: Vec<f64>,
    pub min_bandwidth_hz: f64,
    pub sensitivity_bound_db: f64,
    pub design_grid: Vec<SchedulingPoint>,
    pub verification_grid: Vec<SchedulingPoint>,
    /// 1-based permutation of the axes.
    pub loop_order: Vec<usize>,
    /// Axis whose bandwidth is reported as the design's bandwidth.
    pub performance_axis: usize,
    pub alpha: f64,
    /// Integrator corner at `f_bw / integrator_ratio`.
    pub integrator_ratio: f64,
    pub bisection_iterations: usize,
    /// Geometric scan points between the minimum bandwidth and the cap.
    pub scan_points: usize,
    pub resonance_band_hz: [f64; 2],
    /// Minimum relative modal residue for a resonance to receive a notch.
    pub visibility_threshold: f64,
    pub surface_order: [usize; 2],
    /// Largest accepted fit residual relative to the largest fitted value.
    pub fit_tolerance: f64,
    pub beta1_candidates: Vec<f64>,
    pub beta2_candidates: Vec<f64>,
    /// Range of `f2 / f1` searched for the notch skew.
    pub skew_range: [f64; 2],
    pub skew_steps: usize,
    pub frequency_grid: GridSpec,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            target_bandwidth_hz: vec![400.0, 60.0, 60.0],
            min_bandwidth_hz: 10.0,
            sensitivity_bound_db: 6.0,
            design_grid: vec![],
            verification_grid: vec![],
            loop_order: vec![2, 3, 1],
            performance_axis: 0,
            alpha: 3.0,
            integrator_ratio: 6.0,
            bisection_iterations: 20,
            scan_points: 16,
            resonance_band_hz: [100.0, 400.0],
            visibility_threshold: 0.03,
            surface_order: [3, 3],
            fit_tolerance: 0.05,
            beta1_candidates: vec![0.02, 0.05, 0.1],
            beta2_candidates: vec![0.05, 0.1, 0.2, 0.35],
            skew_range: [1.0, 6.0],
            skew_steps: 60,
            frequency_grid: GridSpec::default(),
        }
    }
}

impl DesignSpec {
    /// Defaults with per-axis bandwidth caps and natural loop order.
    pub fn for_axes(target_bandwidth_hz: Vec<f64>) -> Self {
        let n = target_bandwidth_hz.len();
        Self { target_bandwidth_hz, loop_order: (1..=n).collect(), ..Self::default() }
    }

    pub fn design_points(&self, model: &ModalPlantModel) -> Vec<SchedulingPoint> {
        if self.design_grid.is_empty() {
            model.workspace.grid(3, 3)
        } else {
            self.design_grid.clone()
        }
    }

    pub fn verification_points(&self, model: &ModalPlantModel) -> Vec<SchedulingPoint> {
        if self.verification_grid.is_empty() {
            model.workspace.grid(5, 5)
        } else {
            self.verification_grid.clone()
        }
    }

    /// 0-based loop order.
    pub fn order(&self) -> Vec<usize> {
        self.loop_order.iter().map(|i| i.wrapping_sub(1)).collect()
    }

    pub fn skews(&self) -> Vec<f64> {
        let n = self.skew_steps.max(1);
        let (a, b) = (self.skew_range[0].ln(), self.skew_range[1].ln());
        (0..n)
            .map(|k| if n == 1 { a.exp() } else { (a + (b - a) * k as f64 / (n - 1) as f64).exp() })
            .collect()
    }

    pub fn validate(&self, model: &ModalPlantModel) -> Result<()> {
        let n = model.n_axes();
        let bad = |m: String| Err(Error::Config(m));
        if self.target_bandwidth_hz.len() != n {
            return bad(format!("{} bandwidth targets for {n} axes", self.target_bandwidth_hz.len()));
        }
        if self.target_bandwidth_hz.iter().any(|b| !(*b > 0.0)) || !(self.min_bandwidth_hz > 0.0) {
            return bad("bandwidths must be positive".into());
        }
        if self.target_bandwidth_hz.iter().any(|b| *b < self.min_bandwidth_hz) {
            return bad("a bandwidth target lies below min_bandwidth_hz".into());
        }
        crate::freqresp::check_order(&self.order(), n).map_err(|e| Error::Config(e.to_string()))?;
        if self.performance_axis >= n {
            return bad(format!("performance axis {} out of range", self.performance_axis));
        }
        if !(self.alpha > 0.0) || !(self.integrator_ratio > 0.0) || !(self.sensitivity_bound_db > 0.0) {
            return bad("alpha, integrator_ratio and sensitivity bound must be positive".into());
        }
        if self.beta1_candidates.is_empty()
            || self.beta2_candidates.is_empty()
            || self.beta1_candidates.iter().any(|b| !(*b >= 0.0))
            || self.beta2_candidates.iter().any(|b| !(*b > 0.0))
        {
            return bad("notch damping candidates must be nonempty with beta1 >= 0, beta2 > 0".into());
        }
        if !(self.skew_range[0] > 0.0 && self.skew_range[1] >= self.skew_range[0]) || self.skew_steps == 0 {
            return bad("invalid skew range".into());
        }
        if self.surface_order[0] == 0 || self.surface_order[1] == 0 {
            return bad("surface orders must be positive".into());
        }
        let dp = self.design_points(model);
        let need = self.surface_order[0] * self.surface_order[1];
        if dp.len() < need {
            return bad(format!("{} design points cannot determine {need} surface coefficients", dp.len()));
        }
        for p in dp.iter().chain(self.verification_points(model).iter()) {
            model.workspace.check(*p)?;
        }
        self.frequency_grid.build().map(|_| ())
    }
}

/// Static input/output transformations `(T_u: n_act x n_rb, T_y: n_rb x n_sens)`
/// that make the rigid-body part of `T_y P T_u` equal to `diag(1/(m_i s^2))`.
pub fn rigid_body_decouple(model: &ModalPlantModel, p: SchedulingPoint) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    model.workspace.check(p)?;
    let (pa, ps) = model.rigid_maps();
    let n = model.n_rigid();
    let tol = 1e-10;
    let rank_err = |what: &str| Error::Model(format!("rigid-body {what} map is rank deficient at ({}, {})", p.x, p.y));
    let t_u = pa.clone().pseudo_inverse(tol).map_err(|_| rank_err("actuation"))?;
    let t_y = ps.clone().pseudo_inverse(tol).map_err(|_| rank_err("sensing"))?;
    let eye = DMatrix::<f64>::identity(n, n);
    if (&pa * &t_u - &eye).abs().max() > 1e-9 {
        return Err(rank_err("actuation"));
    }
    if (&t_y * &ps - &eye).abs().max() > 1e-9 {
        return Err(rank_err("sensing"));
    }
    Ok((t_u, t_y))
}

/// Frozen realization of `T_y P(p) T_u`.
pub fn decoupled_realization(
    model: &ModalPlantModel,
    p: SchedulingPoint,
    t_u: &DMatrix<f64>,
    t_y: &DMatrix<f64>,
) -> Result<FrozenStateSpace> {
    let ss = model.frozen_realization(p)?;
    FrozenStateSpace::new(ss.a.clone(), &ss.b * t_u, t_y * &ss.c, t_y * &ss.d * t_u)
}

/// Gain `k` with `|k * cascade * g| = 1` at `f_bw`.
pub fn tune_gain(g: &SisoFrf, cascade: &Cascade, f_bw: f64) -> Result<f64> {
    let mag = (g.interp(f_bw) * cascade.response(None, jw(f_bw))?).norm();
    if !(mag > 0.0) || !mag.is_finite() {
        return Err(Error::Parameter(format!("loop magnitude at {f_bw} Hz is {mag}")));
    }
    Ok(1.0 / mag)
}

/// Dominant resonance of an equivalent plant, normalized by its rigid-body line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceId {
    pub f_hz: f64,
    pub zeta: f64,
    /// Modal residue relative to the rigid-body line.
    pub residue: f64,
    pub visible: bool,
}

/// Peak-picks `h = g * (-m w^2)` in `band` and fits
/// `h - 1 = c w^2 / (w_r^2 - w^2 + 2 j d w)` around the peak by linear least squares.
pub fn identify_resonance(g: &SisoFrf, band: [f64; 2], threshold: f64) -> Option<ResonanceId> {
    let f = g.grid.freqs();
    let w0 = 2.0 * PI * f[0];
    let mass = -1.0 / (g.values[0].re * w0 * w0);
    if !(mass > 0.0) || !mass.is_finite() {
        return None;
    }
    let h: Vec<Complex64> = f.iter().zip(&g.values).map(|(fr, v)| v * (-mass * (2.0 * PI * fr).powi(2)) - 1.0).collect();
    let peak = (0..f.len())
        .filter(|&k| f[k] >= band[0] && f[k] <= band[1])
        .max_by(|&a, &b| h[a].norm().total_cmp(&h[b].norm()))?;
    let fp = f[peak];
    let rows: Vec<usize> = (0..f.len()).filter(|&k| f[k] >= 0.7 * fp && f[k] <= 1.4 * fp).collect();
    if rows.len() < 3 {
        return None;
    }
    let wp = 2.0 * PI * fp;
    // unknowns scaled to O(1): [w_r^2 / wp^2, d / wp, c]
    let mut a = DMatrix::zeros(2 * rows.len(), 3);
    let mut y = DVector::zeros(2 * rows.len());
    for (r, &k) in rows.iter().enumerate() {
        let w = 2.0 * PI * f[k];
        let e = h[k];
        let jwe = Complex64::new(0.0, 2.0 * w) * e;
        a[(2 * r, 0)] = e.re * wp * wp;
        a[(2 * r, 1)] = jwe.re * wp;
        a[(2 * r, 2)] = -w * w;
        y[2 * r] = e.re * w * w;
        a[(2 * r + 1, 0)] = e.im * wp * wp;
        a[(2 * r + 1, 1)] = jwe.im * wp;
        a[(2 * r + 1, 2)] = 0.0;
        y[2 * r + 1] = e.im * w * w;
    }
    let scale = wp * wp;
    let x = (a / scale).svd(true, true).solve(&(y / scale), 1e-14).ok()?;
    let wr2 = x[0] * wp * wp;
    let d = x[1] * wp;
    let c = x[2];
    if !(wr2 > 0.0) || !(d > 0.0) || !c.is_finite() {
        return Some(ResonanceId { f_hz: fp, zeta: f64::NAN, residue: 0.0, visible: false });
    }
    let wr = wr2.sqrt();
    let f_hz = wr / (2.0 * PI);
    let visible = c.abs() >= threshold && f_hz >= 0.5 * band[0] && f_hz <= 2.0 * band[1];
    Some(ResonanceId { f_hz, zeta: d / wr, residue: c, visible })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Controllers of all loops plus the static decoupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSet {
    pub mode: DesignMode,
    pub axes: Vec<String>,
    /// Per-axis cascade `k_i = Gamma_i Psi_i`.
    pub loops: Vec<Cascade>,
    pub bandwidth_hz: Vec<f64>,
    /// 1-based.
    pub loop_order: Vec<usize>,
    pub performance_axis: usize,
    #[serde(with = "matrix_rows")]
    pub t_u: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub t_y: DMatrix<f64>,
}

impl ControllerSet {
    pub fn n_loops(&self) -> usize {
        self.loops.len()
    }

    pub fn order(&self) -> Vec<usize> {
        self.loop_order.iter().map(|i| i.wrapping_sub(1)).collect()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth_hz[self.performance_axis]
    }

    pub fn validate(&self, model: &ModalPlantModel) -> Result<()> {
        let n = model.n_axes();
        if self.loops.len() != n || self.bandwidth_hz.len() != n {
            return Err(Error::Config(format!("controller set has {} loops for {n} axes", self.loops.len())));
        }
        if self.t_u.shape() != (model.n_actuators(), n) || self.t_y.shape() != (n, model.n_sensors()) {
            return Err(Error::Config("decoupling matrices do not match the plant".into()));
        }
        crate::freqresp::check_order(&self.order(), n).map_err(|e| Error::Config(e.to_string()))?;
        self.loops.iter().try_for_each(Cascade::validate)
    }

    /// Diagonal controller realization at `p`.
    pub fn frozen(&self, p: SchedulingPoint) -> Result<FrozenStateSpace> {
        let parts = self.loops.iter().map(|c| c.realize(Some(p))).collect::<Result<Vec<_>>>()?;
        FrozenStateSpace::block_diag(&parts)
    }

    pub fn loop_frfs(&self, p: SchedulingPoint, grid: &FrequencyGrid) -> Result<Vec<SisoFrf>> {
        self.loops.iter().map(|c| crate::filters::cascade_frf(c, Some(p), grid)).collect()
    }
}

/// Per-loop summary of a design run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub axis: String,
    pub bandwidth_hz: f64,
    pub gain: f64,
    pub notch: Option<NotchChoice>,
    /// Worst sensitivity peak over the design grid.
    pub design_peak_db: f64,
    /// Worst sensitivity peak over the verification grid (sequential closing).
    pub verification_peak_db: f64,
    pub identified: Vec<Option<ResonanceId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotchChoice {
    /// Damping pair per design point.
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    /// Notch center per design point.
    pub f1_hz: Vec<f64>,
    /// `f2 / f1` per design point.
    pub skew: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutcome {
    pub controllers: ControllerSet,
    pub loops: Vec<LoopReport>,
    pub design_grid: Vec<SchedulingPoint>,
    pub certification: CertificationReport,
}

struct PointPlant {
    p: SchedulingPoint,
    frf: FrfMatrix,
}

fn point_plants(
    model: &ModalPlantModel,
    pts: &[SchedulingPoint],
    t_u: &DMatrix<f64>,
    t_y: &DMatrix<f64>,
    grid: &FrequencyGrid,
) -> Result<Vec<PointPlant>> {
    pts.par_iter()
        .map(|&p| {
            let ss = decoupled_realization(model, p, t_u, t_y)?;
            Ok(PointPlant { p, frf: frf(&ss, grid)? })
        })
        .collect()
}

fn equivalent_plants(plants: &[PointPlant], loops: &[Option<Cascade>], i: usize, grid: &FrequencyGrid) -> Result<Vec<SisoFrf>> {
    plants
        .par_iter()
        .map(|pp| {
            let ks = loops
                .iter()
                .map(|c| c.as_ref().map(|c| crate::filters::cascade_frf(c, Some(pp.p), grid)).transpose())
                .collect::<Result<Vec<_>>>()?;
            equivalent_plant(&pp.frf, &ks, i)
        })
        .collect()
}

const LPV_PEAK_SLACK_DB: f64 = 0.5;

struct LoopProblem<'a> {
    spec: &'a DesignSpec,
    mode: DesignMode,
    norm: Normalization,
    design_pts: Vec<SchedulingPoint>,
    g_design: Vec<SisoFrf>,
    verif_pts: Vec<SchedulingPoint>,
    g_verif: Vec<SisoFrf>,
    /// Notch center per design point, `None` when no resonance is visible.
    f1: Option<Vec<f64>>,
}

struct NotchCandidate {
    /// Damping pair index per design point.
    pair: Vec<usize>,
    worst_db: f64,
    worst_point: usize,
    centers: Vec<f64>,
    /// Skew index per design point.
    choice: Vec<usize>,
    gain: f64,
}

struct Candidate {
    f_bw: f64,
    gain: f64,
    cascade: Cascade,
    notch: Option<NotchChoice>,
    design_peak_db: f64,
    verification_peak_db: f64,
}

/// Peak of `1/(1+L)` if the loop is Nyquist-stable on the data, else `None`.
fn stable_peak(l: &SisoFrf) -> Option<f64> {
    match nyquist_stable(l, 0) {
        Ok(n) if n.stable => Some(sensitivity_peak_db(l)),
        _ => None,
    }
}

impl<'a> LoopProblem<'a> {
    fn gamma(&self, f_bw: f64, gain: f64) -> Vec<FilterSpec> {
        vec![
            FilterSpec::Gain { k: gain },
            FilterSpec::Integrator { f_i: Some(f_bw / self.spec.integrator_ratio) },
            FilterSpec::Lead { f_bw, alpha: self.spec.alpha },
        ]
    }

    fn at(&self, x: SchedulingPoint) -> String {
        format!("({:.4}, {:.4})", x.x, x.y)
    }

    fn evaluate(&self, f_bw: f64) -> std::result::Result<Candidate, String> {
        let bound = self.spec.sensitivity_bound_db;
        let grid = &self.g_design[0].grid;
        let unit = Cascade::new(self.gamma(f_bw, 1.0), vec![]).map_err(|e| e.to_string())?;
        let unit_at = unit.response(None, jw(f_bw)).map_err(|e| e.to_string())?;
        let unit_frf = crate::filters::cascade_frf(&unit, None, grid).map_err(|e| e.to_string())?;
        // unit-gain loop and its value at f_bw, per design point
        let base: Vec<(SisoFrf, Complex64)> =
            self.g_design.iter().map(|g| (g.mul(&unit_frf), g.interp(f_bw) * unit_at)).collect();
        let geo_gain = |mags: &mut dyn Iterator<Item = f64>| {
            let (sum, n) = mags.fold((0.0, 0usize), |(s, n), m| (s + m.ln(), n + 1));
            (-sum / n as f64).exp()
        };

        let Some(f1) = &self.f1 else {
            let gain = geo_gain(&mut base.iter().map(|b| b.1.norm()));
            if !(gain.is_finite() && gain > 0.0) {
                return Err(format!("no usable loop magnitude at {f_bw:.2} Hz"));
            }
            let mut worst = f64::NEG_INFINITY;
            for ((l, _), x) in base.iter().zip(&self.design_pts) {
                match stable_peak(&l.scale(gain)) {
                    Some(pk) if pk <= bound => worst = worst.max(pk),
                    Some(pk) => return Err(format!("sensitivity peak {pk:.2} dB at design point {}", self.at(*x))),
                    None => return Err(format!("unstable at design point {}", self.at(*x))),
                }
            }
            let cascade = Cascade::new(self.gamma(f_bw, gain), vec![]).unwrap();
            let verification_peak_db = self.verify(&cascade)?;
            return Ok(Candidate { f_bw, gain, cascade, notch: None, design_peak_db: worst, verification_peak_db });
        };

        let skews = self.spec.skews();
        let f1_lti = median(&mut f1.clone());
        let uniform_centers = vec![f1_lti; f1.len()];
        let pairs: Vec<(f64, f64)> = self
            .spec
            .beta1_candidates
            .iter()
            .flat_map(|&b1| self.spec.beta2_candidates.iter().map(move |&b2| (b1, b2)))
            .collect();
        let notch = |centers: &[f64], l: usize, s: usize, b1: f64, b2: f64| NotchParams {
            f1: centers[l],
            f2: skews[s] * centers[l],
            beta1: b1,
            beta2: b2,
        };
        let notch_frf = |n: &NotchParams| -> Vec<Complex64> { grid.freqs().iter().map(|&f| n.transfer(jw(f))).collect() };
        // peaks above the bound are returned without the stability check,
        // they are rejected either way
        let peak_with = |l: usize, nv: &[Complex64], gain: f64| {
            let (bl, _) = &base[l];
            let lv = SisoFrf { grid: bl.grid.clone(), values: bl.values.iter().zip(nv).map(|(v, n)| v * n * gain).collect() };
            let pk = sensitivity_peak_db(&lv);
            if pk > bound {
                return pk;
            }
            stable_peak(&lv).unwrap_or(f64::INFINITY)
        };
        // |unit loop * notch| at f_bw per design point and skew
        let mag_at = |l: usize, n: &NotchParams| (base[l].1 * n.transfer(jw(f_bw))).norm();
        let np = base.len();

        // one notch for every point: median center, common skew
        let uniform = |pair: usize| {
            let (b1, b2) = pairs[pair];
            let c = &uniform_centers;
            let mut best: Option<NotchCandidate> = None;
            for s in 0..skews.len() {
                let n = notch(c, 0, s, b1, b2);
                let nv = notch_frf(&n);
                let gain = geo_gain(&mut (0..np).map(|l| mag_at(l, &n)));
                let mut worst = (f64::NEG_INFINITY, 0);
                for l in 0..np {
                    let pk = peak_with(l, &nv, gain);
                    if pk > worst.0 {
                        worst = (pk, l);
                    }
                    if pk.is_infinite() {
                        break;
                    }
                }
                if best.as_ref().map_or(true, |b| worst.0 < b.worst_db) {
                    best = Some(NotchCandidate {
                        pair: vec![pair; np],
                        worst_db: worst.0,
                        worst_point: worst.1,
                        centers: c.clone(),
                        choice: vec![s; np],
                        gain,
                    });
                }
            }
            best.expect("skew grid is never empty")
        };
        // per-point center, damping and skew with the loop crossing at f_bw at
        // each point; the mildest skew within LPV_PEAK_SLACK_DB of the local
        // optimum keeps neighbouring points alike and the fitted surfaces smooth
        let local_peaks = |l: usize, pair: usize| -> Vec<f64> {
            let (b1, b2) = pairs[pair];
            (0..skews.len())
                .map(|s| {
                    let n = notch(f1, l, s, b1, b2);
                    peak_with(l, &notch_frf(&n), 1.0 / mag_at(l, &n))
                })
                .collect()
        };
        let pick = |options: &[(usize, usize, f64)]| -> (usize, usize) {
            let best = options.iter().map(|o| o.2).fold(f64::INFINITY, f64::min);
            let limit = (best + LPV_PEAK_SLACK_DB).min(bound - LPV_PEAK_SLACK_DB).max(best);
            let mild = |o: &(usize, usize, f64)| skews[o.1].ln().abs();
            let o = options
                .iter()
                .filter(|o| o.2 <= limit)
                .min_by(|a, b| mild(a).total_cmp(&mild(b)).then(a.0.cmp(&b.0)))
                .unwrap_or(&options[0]);
            (o.0, o.1)
        };
        let assemble = |choice: Vec<(usize, usize)>| {
            let ns: Vec<NotchParams> = choice
                .iter()
                .enumerate()
                .map(|(l, &(pr, s))| notch(f1, l, s, pairs[pr].0, pairs[pr].1))
                .collect();
            let gain = geo_gain(&mut (0..np).map(|l| mag_at(l, &ns[l])));
            let peaks: Vec<f64> = (0..np).map(|l| peak_with(l, &notch_frf(&ns[l]), gain)).collect();
            let wl = (0..np).fold(0, |b, l| if peaks[l] > peaks[b] { l } else { b });
            NotchCandidate {
                pair: choice.iter().map(|c| c.0).collect(),
                worst_db: peaks[wl],
                worst_point: wl,
                centers: f1.clone(),
                choice: choice.iter().map(|c| c.1).collect(),
                gain,
            }
        };

        let mut ranked: Vec<NotchCandidate> = match self.mode {
            DesignMode::Lti => (0..pairs.len()).into_par_iter().map(uniform).collect(),
            DesignMode::Lpv => {
                // table[l][pair][skew]
                let table: Vec<Vec<Vec<f64>>> = (0..np)
                    .into_par_iter()
                    .map(|l| (0..pairs.len()).map(|pr| local_peaks(l, pr)).collect())
                    .collect();
                let table = &table;
                let options = |l: usize, prs: &[usize]| -> Vec<(usize, usize, f64)> {
                    prs.iter().flat_map(|&pr| (0..skews.len()).map(move |s| (pr, s, table[l][pr][s]))).collect()
                };
                let options = &options;
                let all: Vec<usize> = (0..pairs.len()).collect();
                let mut v: Vec<NotchCandidate> = (0..pairs.len())
                    .into_par_iter()
                    .map(|pr| assemble((0..np).map(|l| pick(&options(l, &[pr]))).collect()))
                    .collect();
                v.push(assemble((0..np).map(|l| pick(&options(l, &all))).collect()));
                // a uniform notch is also a valid scheduled notch, so the LPV
                // search contains the LTI one
                v.extend((0..pairs.len()).into_par_iter().map(uniform).collect::<Vec<_>>());
                v
            }
        };
        ranked.sort_by(|a, b| a.worst_db.total_cmp(&b.worst_db).then(a.pair.cmp(&b.pair)));
        let best = &ranked[0];
        if best.worst_db > bound {
            let x = self.at(self.design_pts[best.worst_point]);
            return Err(if best.worst_db.is_finite() {
                format!("sensitivity peak {:.2} dB above bound at design point {x}", best.worst_db)
            } else {
                format!("no stabilizing notch setting at design point {x}")
            });
        }
        let mut last_err = String::new();
        for cand in ranked.iter().filter(|r| r.worst_db <= bound) {
            let b1: Vec<f64> = cand.pair.iter().map(|&p| pairs[p].0).collect();
            let b2: Vec<f64> = cand.pair.iter().map(|&p| pairs[p].1).collect();
            let skew: Vec<f64> = cand.choice.iter().map(|&s| skews[s]).collect();
            let cascade = match self.mode {
                DesignMode::Lti => {
                    let mut g = self.gamma(f_bw, cand.gain);
                    g.push(FilterSpec::notch(notch(&cand.centers, 0, cand.choice[0], b1[0], b2[0])));
                    Cascade::new(g, vec![])
                }
                DesignMode::Lpv => match self.fit_notch(&cand.centers, &skew, &b1, &b2) {
                    Ok(n) => Cascade::new(self.gamma(f_bw, cand.gain), vec![FilterSpec::LpvNotch(n)]),
                    Err(e) => {
                        last_err = e.to_string();
                        continue;
                    }
                },
            };
            let cascade = cascade.map_err(|e| e.to_string())?;
            match self.verify(&cascade) {
                Ok(vp) => {
                    return Ok(Candidate {
                        f_bw,
                        gain: cand.gain,
                        cascade,
                        notch: Some(NotchChoice { beta1: b1, beta2: b2, f1_hz: cand.centers.clone(), skew }),
                        design_peak_db: cand.worst_db,
                        verification_peak_db: vp,
                    })
                }
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    fn fit_notch(&self, f1: &[f64], skew: &[f64], b1: &[f64], b2: &[f64]) -> Result<LpvNotch> {
        let [oi, oj] = self.spec.surface_order;
        let fit = |vals: Vec<f64>, units: Units| -> Result<crate::scheduling::CoefficientSurface> {
            let set = FrozenDesignSet::from_values(&self.design_pts, &vals, units)?;
            let rep = fit_surface(&set, oi, oj, self.norm)?;
            let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if rep.max_abs_residual() > self.spec.fit_tolerance * scale {
                return Err(Error::Fit(format!(
                    "residual {:.3e} exceeds {:.1}% of the fitted range",
                    rep.max_abs_residual(),
                    100.0 * self.spec.fit_tolerance
                )));
            }
            Ok(rep.surface)
        };
        Ok(LpvNotch {
            beta1: fit(b1.to_vec(), Units::Dimensionless)?,
            beta2: fit(b2.to_vec(), Units::Dimensionless)?,
            f1: fit(f1.to_vec(), Units::Hz)?,
            f2: fit(f1.iter().zip(skew).map(|(f, s)| f * s).collect(), Units::Hz)?,
        })
    }

    /// Worst verification-grid sensitivity peak of the candidate loop, or the reason it fails.
    fn verify(&self, cascade: &Cascade) -> std::result::Result<f64, String> {
        let bound = self.spec.sensitivity_bound_db;
        let res: Vec<std::result::Result<f64, String>> = self
            .verif_pts
            .par_iter()
            .zip(&self.g_verif)
            .map(|(x, g)| {
                let k = crate::filters::cascade_frf(cascade, Some(*x), &g.grid).map_err(|e| e.to_string())?;
                match stable_peak(&g.mul(&k)) {
                    Some(pk) if pk <= bound => Ok(pk),
                    Some(pk) => Err(format!("sensitivity peak {pk:.2} dB at verification point {}", self.at(*x))),
                    None => Err(format!("unstable at verification point {}", self.at(*x))),
                }
            })
            .collect();
        res.into_iter().try_fold(f64::NEG_INFINITY, |m, r| r.map(|v| m.max(v)))
    }

    /// Feasibility in `f_bw` is not monotone (a notch that works at one
    /// crossover can fail at a lower one), so a coarse geometric scan from the
    /// top finds the highest feasible bracket before bisecting inside it.
    fn bisect(&self, cap: f64) -> Result<Candidate> {
        let lo_f = self.spec.min_bandwidth_hz;
        if let Ok(c) = self.evaluate(cap) {
            return Ok(c);
        }
        let n = self.spec.scan_points.max(1);
        let ratio = (cap / lo_f).powf(1.0 / n as f64);
        let mut bracket = None;
        for k in (0..n).rev() {
            let f = if k == 0 { lo_f } else { lo_f * ratio.powi(k as i32) };
            match self.evaluate(f) {
                Ok(c) => {
                    bracket = Some((f, lo_f * ratio.powi(k as i32 + 1), c));
                    break;
                }
                Err(e) if k == 0 => {
                    return Err(Error::Infeasible(format!("infeasible at the minimum bandwidth {lo_f} Hz: {e}")))
                }
                Err(e) => log::debug!("scan: f_bw = {f:.3} Hz rejected: {e}"),
            }
        }
        let (mut lo, mut hi, mut best) = bracket.expect("scan ends at the minimum bandwidth");
        for _ in 0..self.spec.bisection_iterations {
            let mid = 0.5 * (lo + hi);
            match self.evaluate(mid) {
                Ok(c) => {
                    lo = mid;
                    best = c;
                }
                Err(e) => {
                    log::debug!("f_bw = {mid:.3} Hz rejected: {e}");
                    hi = mid;
                }
            }
        }
        Ok(best)
    }
}

/// Runs sequential loop closing in `mode` and certifies the result.
pub fn design_slc(model: &ModalPlantModel, spec: &DesignSpec, mode: DesignMode) -> Result<DesignOutcome> {
    model.validate()?;
    spec.validate(model)?;
    let grid = spec.frequency_grid.build()?;
    let (t_u, t_y) = rigid_body_decouple(model, model.workspace.center())?;
    let design_pts = spec.design_points(model);
    let verif_pts = spec.verification_points(model);
    let dplants = point_plants(model, &design_pts, &t_u, &t_y, &grid)?;
    let vplants = point_plants(model, &verif_pts, &t_u, &t_y, &grid)?;
    let n = model.n_axes();
    let norm = Normalization::from_workspace(&model.workspace);
    let mut loops: Vec<Option<Cascade>> = vec![None; n];
    let mut reports: Vec<Option<LoopReport>> = vec![None; n];
    let mut bandwidth = vec![0.0; n];
    for &i in &spec.order() {
        let axis = model.rigid_modes[i].axis.name();
        let g_design = equivalent_plants(&dplants, &loops, i, &grid)?;
        let g_verif = equivalent_plants(&vplants, &loops, i, &grid)?;
        let ids: Vec<Option<ResonanceId>> = g_design
            .iter()
            .map(|g| identify_resonance(g, spec.resonance_band_hz, spec.visibility_threshold))
            .collect();
        let mut seen: Vec<f64> = ids.iter().flatten().filter(|r| r.visible).map(|r| r.f_hz).collect();
        let f1 = if seen.is_empty() {
            None
        } else {
            let fill = median(&mut seen);
            Some(ids.iter().map(|r| r.filter(|r| r.visible).map_or(fill, |r| r.f_hz)).collect())
        };
        // crossovers above a notched resonance lean on phase-stabilizing the
        // mode; the search stays below the lowest visible one
        let cap = f1.iter().flatten().fold(spec.target_bandwidth_hz[i], |c: f64, f: &f64| c.min(*f));
        let problem = LoopProblem {
            spec,
            mode,
            norm,
            design_pts: design_pts.clone(),
            g_design,
            verif_pts: verif_pts.clone(),
            g_verif,
            f1,
        };
        let cand = problem
            .bisect(cap)
            .map_err(|e| match e {
                Error::Infeasible(m) => Error::Infeasible(format!("{} loop {axis}: {m}", mode.name())),
                other => other,
            })?;
        log::info!(
            "{} loop {axis}: bandwidth {:.2} Hz, design peak {:.2} dB, verification peak {:.2} dB",
            mode.name(),
            cand.f_bw,
            cand.design_peak_db,
            cand.verification_peak_db
        );
        bandwidth[i] = cand.f_bw;
        reports[i] = Some(LoopReport {
            axis: axis.to_string(),
            bandwidth_hz: cand.f_bw,
            gain: cand.gain,
            notch: cand.notch,
            design_peak_db: cand.design_peak_db,
            verification_peak_db: cand.verification_peak_db,
            identified: ids,
        });
        loops[i] = Some(cand.cascade);
    }
    let controllers = ControllerSet {
        mode,
        axes: model.rigid_modes.iter().map(|r| r.axis.name().to_string()).collect(),
        loops: loops.into_iter().map(Option::unwrap).collect(),
        bandwidth_hz: bandwidth,
        loop_order: spec.loop_order.clone(),
        performance_axis: spec.performance_axis,
        t_u,
        t_y,
    };
    let certification = certify(model, &controllers, &verif_pts, spec.sensitivity_bound_db, &grid)?;
    Ok(DesignOutcome {
        controllers,
        loops: reports.into_iter().map(Option::unwrap).collect(),
        design_grid: design_pts,
        certification,
    })
}

pub fn design_lti_slc(model: &ModalPlantModel, spec: &DesignSpec) -> Result<DesignOutcome> {
    design_slc(model, spec, DesignMode::Lti)
}

pub fn design_lpv_slc(model: &ModalPlantModel, spec: &DesignSpec) -> Result<DesignOutcome> {
    design_slc(model, spec, DesignMode::Lpv)
}

/// Loop measures with all other loops closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopCheck {
    /// Encirclements of the sequential-closing Nyquist test.
    pub encirclements: i32,
    pub sensitivity_peak_db: f64,
    pub crossover_hz: Option<f64>,
    pub phase_margin_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCertificate {
    pub p: SchedulingPoint,
    pub verdict: StabilityVerdict,
    pub loops: Vec<LoopCheck>,
    pub det_residual: f64,
    pub eigen_stable: bool,
    pub nyquist_matches_eigen: bool,
    pub passed: bool,
    pub issues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub sensitivity_bound_db: f64,
    pub points: Vec<PointCertificate>,
    pub worst_peak_db: f64,
    pub passed: bool,
}

impl CertificationReport {
    pub fn failures(&self) -> Vec<String> {
        self.points
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("({:.4}, {:.4}): {}", c.p.x, c.p.y, c.issues.join("; ")))
            .collect()
    }

    /// Plain-text table, one row per point.
    pub fn table(&self) -> String {
        let mut out = String::from("    q_x      q_y   stable  eig_max_re      det_res   peaks_dB\n");
        for c in &self.points {
            let peaks: Vec<String> = c.loops.iter().map(|l| format!("{:6.2}", l.sensitivity_peak_db)).collect();
            out.push_str(&format!(
                "{:8.4} {:8.4}   {:6} {:11.3e} {:12.3e}   {}{}\n",
                c.p.x,
                c.p.y,
                c.verdict.stable,
                c.verdict.closed_loop_eigen_max_real.unwrap_or(f64::NAN),
                c.det_residual,
                peaks.join(" "),
                if c.passed { "" } else { "   FAIL" }
            ));
        }
        out
    }
}

pub const DET_RESIDUAL_LIMIT: f64 = 1e-6;

fn certify_point(
    model: &ModalPlantModel,
    controllers: &ControllerSet,
    p: SchedulingPoint,
    bound_db: f64,
    grid: &FrequencyGrid,
) -> Result<PointCertificate> {
    let ss = decoupled_realization(model, p, &controllers.t_u, &controllers.t_y)?;
    let pf = frf(&ss, grid)?;
    let k = controllers.loop_frfs(p, grid)?;
    let order = controllers.order();
    let n = controllers.n_loops();
    let g_seq = sequential_equivalent_plants(&pf, &k, &order)?;
    let mut issues = Vec::new();
    let mut counts = vec![0; n];
    for (m, &i) in order.iter().enumerate() {
        let l = g_seq[i].mul(&k[i]);
        let count = match nyquist_stable(&l, 0) {
            Ok(c) => c,
            Err(Error::InsufficientGrid { .. }) => {
                let before: Vec<usize> = order[..m].to_vec();
                let eval = |s: Complex64| -> Result<Complex64> {
                    let ps = ss.eval(s)?;
                    let mut ks = vec![None; n];
                    for &j in &before {
                        ks[j] = Some(controllers.loops[j].response(Some(p), s)?);
                    }
                    let ki = controllers.loops[i].response(Some(p), s)?;
                    Ok(equivalent_plant_at(&ps, &ks, i, s.im / (2.0 * PI))? * ki)
                };
                nyquist_stable_eval(eval, grid, 0)?
            }
            Err(e) => return Err(e),
        };
        counts[i] = count.encirclements;
    }
    let total: i32 = counts.iter().sum();
    let nyq_stable = total == 0;
    if !nyq_stable {
        issues.push(format!("net encirclements {total} (per loop {counts:?})"));
    }
    let det_residual = det_identity_residual_ordered(&pf, &k, &order)?;
    if det_residual > DET_RESIDUAL_LIMIT {
        issues.push(format!("determinant identity residual {det_residual:.2e}"));
    }
    let a_cl = closed_loop_matrix(&ss, &controllers.frozen(p)?)?;
    let max_re = max_real_eigenvalue(&a_cl);
    let eigen_stable = max_re < 0.0;
    let mut loops = Vec::with_capacity(n);
    for i in 0..n {
        let others: Vec<Option<SisoFrf>> = (0..n).map(|j| (j != i).then(|| k[j].clone())).collect();
        let l = equivalent_plant(&pf, &others, i)?.mul(&k[i]);
        let peak = sensitivity_peak_db(&l);
        let m = margins_and_bandwidth(&l).ok();
        if peak > bound_db {
            issues.push(format!("loop {} sensitivity peak {peak:.2} dB", controllers.axes[i]));
        }
        loops.push(LoopCheck {
            encirclements: counts[i],
            sensitivity_peak_db: peak,
            crossover_hz: m.map(|m| m.f_crossover_hz),
            phase_margin_deg: m.map(|m| m.phase_margin_deg),
        });
    }
    if nyq_stable != eigen_stable {
        issues.push(format!("Nyquist verdict {nyq_stable} disagrees with eigenvalues (max Re {max_re:.3e})"));
    } else if !eigen_stable {
        issues.push(format!("closed loop unstable (max Re {max_re:.3e})"));
    }
    let passed = issues.is_empty();
    Ok(PointCertificate {
        p,
        verdict: StabilityVerdict {
            per_loop_encirclements: counts,
            closed_loop_eigen_max_real: Some(max_re),
            stable: nyq_stable,
        },
        loops,
        det_residual,
        eigen_stable,
        nyquist_matches_eigen: nyq_stable == eigen_stable,
        passed,
        issues,
    })
}

/// Frozen-position certification with the scheduled controller evaluated at each point.
pub fn certify(
    model: &ModalPlantModel,
    controllers: &ControllerSet,
    points: &[SchedulingPoint],
    bound_db: f64,
    grid: &FrequencyGrid,
) -> Result<CertificationReport> {
    controllers.validate(model)?;
    if points.is_empty() {
        return Err(Error::Config("empty verification grid".into()));
    }
    let certs = points
        .par_iter()
        .map(|&p| certify_point(model, controllers, p, bound_db, grid))
        .collect::<Result<Vec<_>>>()?;
    let worst_peak_db = certs
        .iter()
        .flat_map(|c| c.loops.iter().map(|l| l.sensitivity_peak_db))
        .fold(f64::NEG_INFINITY, f64::max);
    let passed = certs.iter().all(|c| c.passed);
    Ok(CertificationReport { sensitivity_bound_db: bound_db, points: certs, worst_peak_db, passed })
}
