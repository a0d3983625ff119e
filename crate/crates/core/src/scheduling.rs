//! Polynomial coefficient surfaces over the scheduling plane.
//!
//! A coefficient is parameterized as `Phi(p) = sum_v sum_w theta_vw x^v y^w`
//! with `(x, y)` the affinely normalized position, and `theta` stored in the
//! Kronecker order of `chi(p) = [1 .. x^{i-1}] (x) [1 .. y^{j-1}]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{SchedulingPoint, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Hz,
    Dimensionless,
}

/// Affine map `x_n = (q_x - x_center) / x_half`, likewise for `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_center: f64,
    pub x_half: f64,
    pub y_center: f64,
    pub y_half: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { x_center: 0.0, x_half: 1.0, y_center: 0.0, y_half: 1.0 };

    /// Maps the workspace box onto `[-1, 1]^2`.
    pub fn from_workspace(ws: &Workspace) -> Self {
        let c = ws.center();
        Self { x_center: c.x, x_half: 0.5 * ws.width(), y_center: c.y, y_half: 0.5 * ws.height() }
    }

    pub fn apply(&self, p: SchedulingPoint) -> SchedulingPoint {
        SchedulingPoint::new((p.x - self.x_center) / self.x_half, (p.y - self.y_center) / self.y_half)
    }
}

/// Monomial basis `chi(p)[v * j + w] = q_x^v q_y^w`.
pub fn chi(p: SchedulingPoint, i: usize, j: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(i * j);
    let mut xv = 1.0;
    for _ in 0..i {
        let mut yw = 1.0;
        for _ in 0..j {
            out.push(xv * yw);
            yw *= p.y;
        }
        xv *= p.x;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSurface {
    pub order_i: usize,
    pub order_j: usize,
    pub theta: Vec<f64>,
    pub units: Units,
    pub normalization: Normalization,
}

impl CoefficientSurface {
    pub fn new(order_i: usize, order_j: usize, theta: Vec<f64>, units: Units, normalization: Normalization) -> Result<Self> {
        if order_i == 0 || order_j == 0 {
            return Err(Error::Parameter("surface orders must be positive".into()));
        }
        if theta.len() != order_i * order_j {
            return Err(Error::Parameter(format!(
                "surface of order {order_i}x{order_j} needs {} coefficients, got {}",
                order_i * order_j,
                theta.len()
            )));
        }
        Ok(Self { order_i, order_j, theta, units, normalization })
    }

    pub fn constant(c: f64, units: Units) -> Self {
        Self { order_i: 1, order_j: 1, theta: vec![c], units, normalization: Normalization::IDENTITY }
    }

    pub fn eval(&self, p: SchedulingPoint) -> f64 {
        chi(self.normalization.apply(p), self.order_i, self.order_j)
            .iter()
            .zip(&self.theta)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.order_i, self.order_j, self.theta.clone(), self.units, self.normalization).map(|_| ())
    }
}

pub fn eval_surface(s: &CoefficientSurface, p: SchedulingPoint) -> f64 {
    s.eval(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSample {
    pub p: SchedulingPoint,
    pub value: f64,
    pub units: Units,
}

/// Frozen-position values of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenDesignSet {
    pub samples: Vec<DesignSample>,
}

impl FrozenDesignSet {
    pub fn new(samples: Vec<DesignSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Fit("design set is empty".into()));
        }
        for (a, s) in samples.iter().enumerate() {
            if samples[..a].iter().any(|t| t.p == s.p) {
                return Err(Error::Fit(format!("duplicate design point ({}, {})", s.p.x, s.p.y)));
            }
        }
        Ok(Self { samples })
    }

    pub fn from_values(points: &[SchedulingPoint], values: &[f64], units: Units) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::Fit("point and value counts differ".into()));
        }
        Self::new(
            points.iter().zip(values).map(|(&p, &value)| DesignSample { p, value, units }).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub surface: CoefficientSurface,
    /// `A theta - Y` per design point.
    pub residuals: Vec<f64>,
    pub rank: usize,
    /// Ratio of extreme singular values of `A`.
    pub condition: f64,
    /// Set when `A` is rank deficient and the minimum-norm solution was returned.
    pub min_norm: bool,
}

impl FitReport {
    pub fn sum_squared_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Least-squares fit of `theta` to a frozen design set.
pub fn fit_surface(designs: &FrozenDesignSet, i: usize, j: usize, normalization: Normalization) -> Result<FitReport> {
    if i == 0 || j == 0 {
        return Err(Error::Parameter("surface orders must be positive".into()));
    }
    let units = designs.samples[0].units;
    if let Some(bad) = designs.samples.iter().find(|s| s.units != units) {
        return Err(Error::Fit(format!(
            "unit mismatch: {:?} at ({}, {}) but {:?} elsewhere",
            bad.units, bad.p.x, bad.p.y, units
        )));
    }
    let ng = designs.samples.len();
    let nc = i * j;
    let mut a = DMatrix::zeros(ng, nc);
    let mut y = DVector::zeros(ng);
    for (r, s) in designs.samples.iter().enumerate() {
        for (c, v) in chi(normalization.apply(s.p), i, j).into_iter().enumerate() {
            a[(r, c)] = v;
        }
        y[r] = s.value;
    }

    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = if ng >= nc { sv.min() } else { 0.0 };
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let tol = f64::EPSILON * (ng.max(nc) as f64) * r[(0, 0)].abs().max(f64::MIN_POSITIVE);
    let rank = (0..ng.min(nc)).take_while(|&k| r[(k, k)].abs() > tol).count();

    let (theta, min_norm) = if rank == nc {
        let qty = qr.q().transpose() * &y;
        let mut z = r
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Fit("triangular solve failed".into()))?;
        qr.p().inv_permute_rows(&mut z);
        (z, false)
    } else {
        log::warn!("surface fit is rank deficient ({rank} < {nc}); returning the minimum-norm solution");
        let svd = a.clone().svd(true, true);
        let z = svd
            .solve(&y, tol.max(f64::EPSILON * smax))
            .map_err(|e| Error::Fit(e.to_string()))?;
        (z, true)
    };
    let residuals = (&a * &theta - &y).iter().copied().collect();
    Ok(FitReport {
        surface: CoefficientSurface::new(i, j, theta.iter().copied().collect(), units, normalization)?,
        residuals,
        rank,
        condition,
        min_norm,
    })
}
