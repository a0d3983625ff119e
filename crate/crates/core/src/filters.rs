//! Controller building blocks and their state-space realizations.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqresp::{jw, FrequencyGrid, SisoFrf};
use crate::plant::SchedulingPoint;
use crate::scheduling::CoefficientSurface;
use crate::statespace::FrozenStateSpace;

/// Lowest admissible scheduled notch frequency.
pub const MIN_NOTCH_HZ: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchParams {
    pub f1: f64,
    pub f2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl NotchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f1 > 0.0 && self.f2 > 0.0 && self.f1.is_finite() && self.f2.is_finite()) {
            return Err(Error::Parameter(format!("notch frequencies must be positive: f1={} f2={}", self.f1, self.f2)));
        }
        if !(self.beta1 >= 0.0) || !(self.beta2 > 0.0) {
            return Err(Error::Parameter(format!(
                "notch damping must satisfy beta1 >= 0, beta2 > 0: beta1={} beta2={}",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }

    pub fn realize(&self) -> Result<FrozenStateSpace> {
        self.validate()?;
        let NotchParams { f1, f2, beta1, beta2 } = *self;
        let w2 = 2.0 * PI * f2;
        FrozenStateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-2.0 * beta2 * w2, -w2 * w2, 1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[w2 * w2, 0.0]),
            DMatrix::from_row_slice(1, 2, &[(beta1 * f1 - beta2 * f2) / (PI * f1 * f1), 1.0 - f2 * f2 / (f1 * f1)]),
            DMatrix::from_element(1, 1, f2 * f2 / (f1 * f1)),
        )
    }

    pub fn transfer(&self, s: Complex64) -> Complex64 {
        let w1 = 2.0 * PI * self.f1;
        let w2 = 2.0 * PI * self.f2;
        (w2 * w2 / (w1 * w1)) * (s * s + 2.0 * self.beta1 * w1 * s + w1 * w1)
            / (s * s + 2.0 * self.beta2 * w2 * s + w2 * w2)
    }
}

/// `(w2^2 / w1^2) ((jw)^2 + 2 b1 w1 jw + w1^2) / ((jw)^2 + 2 b2 w2 jw + w2^2)`.
pub fn notch_transfer(f1: f64, f2: f64, beta1: f64, beta2: f64, omega: f64) -> Result<Complex64> {
    let p = NotchParams { f1, f2, beta1, beta2 };
    p.validate()?;
    Ok(p.transfer(Complex64::new(0.0, omega)))
}

/// `alpha^2 (s + 2 pi f_bw / alpha) / (s + 2 pi alpha f_bw)`.
pub fn lead_transfer(f_bw: f64, alpha: f64, s: Complex64) -> Complex64 {
    let w = 2.0 * PI * f_bw;
    alpha * alpha * (s + w / alpha) / (s + alpha * w)
}

/// Four scheduled notch coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpvNotch {
    pub beta1: CoefficientSurface,
    pub beta2: CoefficientSurface,
    pub f1: CoefficientSurface,
    pub f2: CoefficientSurface,
}

impl LpvNotch {
    pub fn constant(p: NotchParams) -> Self {
        use crate::scheduling::Units;
        Self {
            beta1: CoefficientSurface::constant(p.beta1, Units::Dimensionless),
            beta2: CoefficientSurface::constant(p.beta2, Units::Dimensionless),
            f1: CoefficientSurface::constant(p.f1, Units::Hz),
            f2: CoefficientSurface::constant(p.f2, Units::Hz),
        }
    }

    /// Frozen notch parameters at `p`. Frequencies are clamped to
    /// `[MIN_NOTCH_HZ, f_max]` with a log message; invalid damping is an error.
    pub fn params_at(&self, p: SchedulingPoint, f_max: f64) -> Result<NotchParams> {
        let clamp = |name: &str, f: f64| {
            let c = f.clamp(MIN_NOTCH_HZ, f_max);
            if c != f {
                log::warn!("scheduled notch {name} = {f} Hz clamped to {c} Hz at ({}, {})", p.x, p.y);
            }
            c
        };
        let out = NotchParams {
            f1: clamp("f1", self.f1.eval(p)),
            f2: clamp("f2", self.f2.eval(p)),
            beta1: self.beta1.eval(p),
            beta2: self.beta2.eval(p),
        };
        out.validate().map_err(|e| Error::Parameter(format!("scheduled notch at ({}, {}): {e}", p.x, p.y)))?;
        Ok(out)
    }
}

pub fn evaluate_lpv_notch(spec: &LpvNotch, p: SchedulingPoint) -> Result<NotchParams> {
    spec.params_at(p, f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FilterSpec {
    Gain { k: f64 },
    /// `1/s`, or `(s + 2 pi f_i)/s` when a corner frequency is given.
    Integrator {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f_i: Option<f64>,
    },
    Lead { f_bw: f64, alpha: f64 },
    Notch { f1: f64, f2: f64, beta1: f64, beta2: f64 },
    LpvNotch(LpvNotch),
}

impl FilterSpec {
    pub fn notch(p: NotchParams) -> Self {
        FilterSpec::Notch { f1: p.f1, f2: p.f2, beta1: p.beta1, beta2: p.beta2 }
    }

    pub fn is_lpv(&self) -> bool {
        matches!(self, FilterSpec::LpvNotch(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FilterSpec::Gain { k } if !k.is_finite() => Err(Error::Parameter("gain must be finite".into())),
            FilterSpec::Integrator { f_i: Some(f) } if !(*f > 0.0) => {
                Err(Error::Parameter("integrator corner frequency must be positive".into()))
            }
            FilterSpec::Lead { f_bw, alpha } if !(*f_bw > 0.0 && *alpha > 0.0) => {
                Err(Error::Parameter(format!("lead needs f_bw > 0 and alpha > 0, got {f_bw}, {alpha}")))
            }
            FilterSpec::Notch { f1, f2, beta1, beta2 } => {
                NotchParams { f1: *f1, f2: *f2, beta1: *beta1, beta2: *beta2 }.validate()
            }
            FilterSpec::LpvNotch(n) => {
                for s in [&n.beta1, &n.beta2, &n.f1, &n.f2] {
                    s.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Frozen notch parameters (LTI or scheduled), if this is a notch.
    pub fn notch_params(&self, p: Option<SchedulingPoint>, f_max: f64) -> Result<Option<NotchParams>> {
        match self {
            FilterSpec::Notch { f1, f2, beta1, beta2 } => Ok(Some(NotchParams { f1: *f1, f2: *f2, beta1: *beta1, beta2: *beta2 })),
            FilterSpec::LpvNotch(n) => {
                let p = p.ok_or_else(|| Error::Parameter("LPV filter needs a scheduling point".into()))?;
                n.params_at(p, f_max).map(Some)
            }
            _ => Ok(None),
        }
    }

    pub fn realize_with(&self, p: Option<SchedulingPoint>, f_max: f64) -> Result<FrozenStateSpace> {
        self.validate()?;
        let scalar = |a: f64, b: f64, c: f64, d: f64| {
            FrozenStateSpace::new(
                DMatrix::from_element(1, 1, a),
                DMatrix::from_element(1, 1, b),
                DMatrix::from_element(1, 1, c),
                DMatrix::from_element(1, 1, d),
            )
        };
        match self {
            FilterSpec::Gain { k } => Ok(FrozenStateSpace::gain(*k)),
            FilterSpec::Integrator { f_i: None } => scalar(0.0, 1.0, 1.0, 0.0),
            FilterSpec::Integrator { f_i: Some(f) } => scalar(0.0, 1.0, 2.0 * PI * f, 1.0),
            FilterSpec::Lead { f_bw, alpha } => {
                let w = 2.0 * PI * alpha * f_bw;
                scalar(-w, w, 1.0 - alpha * alpha, alpha * alpha)
            }
            FilterSpec::Notch { .. } | FilterSpec::LpvNotch(_) => self.notch_params(p, f_max)?.unwrap().realize(),
        }
    }

    /// Frozen realization; LPV variants require `p`, LTI variants ignore it.
    pub fn realize(&self, p: Option<SchedulingPoint>) -> Result<FrozenStateSpace> {
        self.realize_with(p, f64::INFINITY)
    }

    /// Closed-form transfer at a complex frequency.
    pub fn response(&self, p: Option<SchedulingPoint>, s: Complex64) -> Result<Complex64> {
        Ok(match self {
            FilterSpec::Gain { k } => Complex64::new(*k, 0.0),
            FilterSpec::Integrator { f_i: None } => 1.0 / s,
            FilterSpec::Integrator { f_i: Some(f) } => (s + 2.0 * PI * f) / s,
            FilterSpec::Lead { f_bw, alpha } => lead_transfer(*f_bw, *alpha, s),
            FilterSpec::Notch { .. } | FilterSpec::LpvNotch(_) => {
                self.notch_params(p, f64::INFINITY)?.unwrap().transfer(s)
            }
        })
    }
}

pub fn realize(spec: &FilterSpec, p: Option<SchedulingPoint>) -> Result<FrozenStateSpace> {
    spec.realize(p)
}

/// Ordered filters; `elements[..partition]` is the LTI part, the rest is scheduled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub elements: Vec<FilterSpec>,
    pub partition: usize,
}

impl Cascade {
    pub fn new(gamma: Vec<FilterSpec>, psi: Vec<FilterSpec>) -> Result<Self> {
        let partition = gamma.len();
        let mut elements = gamma;
        elements.extend(psi);
        let c = Self { elements, partition };
        c.validate()?;
        Ok(c)
    }

    pub fn empty() -> Self {
        Self { elements: vec![], partition: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.partition > self.elements.len() {
            return Err(Error::Parameter("cascade partition beyond its length".into()));
        }
        if self.gamma().iter().any(FilterSpec::is_lpv) {
            return Err(Error::Parameter("LTI part of a cascade holds a scheduled filter".into()));
        }
        if self.psi().iter().any(|f| !f.is_lpv()) {
            return Err(Error::Parameter("scheduled part of a cascade holds an LTI filter".into()));
        }
        self.elements.iter().try_for_each(FilterSpec::validate)
    }

    pub fn gamma(&self) -> &[FilterSpec] {
        &self.elements[..self.partition]
    }

    pub fn psi(&self) -> &[FilterSpec] {
        &self.elements[self.partition..]
    }

    pub fn is_scheduled(&self) -> bool {
        !self.psi().is_empty()
    }

    pub fn response(&self, p: Option<SchedulingPoint>, s: Complex64) -> Result<Complex64> {
        self.elements.iter().try_fold(Complex64::new(1.0, 0.0), |acc, f| Ok(acc * f.response(p, s)?))
    }

    pub fn realize_with(&self, p: Option<SchedulingPoint>, f_max: f64) -> Result<FrozenStateSpace> {
        let mut out = FrozenStateSpace::identity_siso();
        for f in &self.elements {
            out = out.series(&f.realize_with(p, f_max)?)?;
        }
        Ok(out)
    }

    /// Series realization of the whole cascade at `p`.
    pub fn realize(&self, p: Option<SchedulingPoint>) -> Result<FrozenStateSpace> {
        self.realize_with(p, f64::INFINITY)
    }

    /// Notch frequencies currently used by the cascade at `p`.
    pub fn notch_params(&self, p: Option<SchedulingPoint>) -> Result<Vec<NotchParams>> {
        let mut out = Vec::new();
        for f in &self.elements {
            if let Some(n) = f.notch_params(p, f64::INFINITY)? {
                out.push(n);
            }
        }
        Ok(out)
    }
}

pub fn cascade_frf(c: &Cascade, p: Option<SchedulingPoint>, grid: &FrequencyGrid) -> Result<SisoFrf> {
    let values = grid.freqs().iter().map(|&f| c.response(p, jw(f))).collect::<Result<Vec<_>>>()?;
    SisoFrf::new(grid.clone(), values)
}

/// Discrete state of a scheduled filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: DVector<f64>,
}

impl FilterState {
    pub fn zeros(n: usize) -> Self {
        Self { x: DVector::zeros(n) }
    }
}

/// Advances `x' = A(p) x + B(p) u` over `dt` with `u` held and the
/// coefficients frozen at `p` (exact zero-order-hold step). Returns the
/// output `y = C(p) x + D(p) u` at the start of the step.
pub fn step_lpv_filter(
    spec: &FilterSpec,
    state: &FilterState,
    u: f64,
    p: SchedulingPoint,
    dt: f64,
) -> Result<(FilterState, f64)> {
    if !(dt > 0.0) {
        return Err(Error::Parameter("step size must be positive".into()));
    }
    let ss = spec.realize(Some(p))?;
    let n = ss.order();
    if state.x.len() != n {
        return Err(Error::Parameter(format!("filter state has {} entries, realization {}", state.x.len(), n)));
    }
    let y = (&ss.c * &state.x)[0] + ss.d[(0, 0)] * u;
    if n == 0 {
        return Ok((state.clone(), y));
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&ss.a * dt));
    aug.view_mut((0, n), (n, 1)).copy_from(&(&ss.b * dt));
    let e = aug.exp();
    let phi = e.view((0, 0), (n, n));
    let gam = e.view((0, n), (n, 1));
    let x = phi * &state.x + gam * u;
    Ok((FilterState { x }, y))
}
