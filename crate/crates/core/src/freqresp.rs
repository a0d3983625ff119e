//! Frequency responses, equivalent plants and frozen-position stability checks.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::statespace::FrozenStateSpace;

/// Strictly increasing list of positive frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    freqs: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Parameter("frequency grid is empty".into()));
        }
        if freqs.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::Parameter("grid frequencies must be positive and finite".into()));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("grid frequencies must be strictly increasing".into()));
        }
        Ok(Self { freqs })
    }

    /// `n` log-spaced points from `f_lo` to `f_hi` inclusive.
    pub fn log(f_lo: f64, f_hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(f_lo > 0.0) || !(f_hi > f_lo) {
            return Err(Error::Parameter(format!("bad log grid {f_lo}..{f_hi} with {n} points")));
        }
        let (a, b) = (f_lo.ln(), f_hi.ln());
        let freqs = (0..n)
            .map(|k| {
                if k == n - 1 {
                    f_hi
                } else {
                    (a + (b - a) * k as f64 / (n - 1) as f64).exp()
                }
            })
            .collect();
        Self::new(freqs)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Index of the grid point closest to `f` in log distance.
    pub fn nearest(&self, f: f64) -> usize {
        let lf = f.ln();
        let mut best = 0;
        for (k, g) in self.freqs.iter().enumerate() {
            if (g.ln() - lf).abs() < (self.freqs[best].ln() - lf).abs() {
                best = k;
            }
        }
        best
    }
}

impl Default for FrequencyGrid {
    /// 1 Hz to 5 kHz, 1000 log-spaced points.
    fn default() -> Self {
        Self::log(1.0, 5000.0, 1000).expect("valid default grid")
    }
}

pub fn jw(f_hz: f64) -> Complex64 {
    Complex64::new(0.0, 2.0 * PI * f_hz)
}

/// Scalar frequency response on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoFrf {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl SisoFrf {
    pub fn new(grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Parameter(format!(
                "{} FRF values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn ones(grid: &FrequencyGrid) -> Self {
        Self { grid: grid.clone(), values: vec![Complex64::new(1.0, 0.0); grid.len()] }
    }

    pub fn from_fn(grid: &FrequencyGrid, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.freqs().iter().map(|&x| f(x)).collect();
        Self { grid: grid.clone(), values }
    }

    /// Pointwise product. Both factors must live on the same grid.
    pub fn mul(&self, other: &SisoFrf) -> SisoFrf {
        debug_assert_eq!(self.grid, other.grid);
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        SisoFrf { grid: self.grid.clone(), values }
    }

    pub fn scale(&self, k: f64) -> SisoFrf {
        SisoFrf { grid: self.grid.clone(), values: self.values.iter().map(|v| v * k).collect() }
    }

    /// Response between grid points: log-magnitude and phase interpolated
    /// linearly in log-frequency. Clamps outside the grid.
    pub fn interp(&self, f: f64) -> Complex64 {
        let fs = self.grid.freqs();
        if f <= fs[0] {
            return self.values[0];
        }
        if f >= fs[fs.len() - 1] {
            return self.values[fs.len() - 1];
        }
        let k = fs.partition_point(|&x| x <= f) - 1;
        let t = (f.ln() - fs[k].ln()) / (fs[k + 1].ln() - fs[k].ln());
        let (a, b) = (self.values[k], self.values[k + 1]);
        if a.norm() == 0.0 || b.norm() == 0.0 {
            return a + (b - a) * t;
        }
        let mag = a.norm().ln() + t * (b.norm().ln() - a.norm().ln());
        let ph = a.arg() + t * wrap(b.arg() - a.arg());
        Complex64::from_polar(mag.exp(), ph)
    }
}

/// Per-frequency complex `n_y x n_u` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FrfMatrix {
    pub grid: FrequencyGrid,
    pub values: Vec<DMatrix<Complex64>>,
}

impl FrfMatrix {
    pub fn new(grid: FrequencyGrid, values: Vec<DMatrix<Complex64>>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Parameter("one FRF matrix per grid point required".into()));
        }
        if let Some(first) = values.first() {
            let shape = first.shape();
            if values.iter().any(|m| m.shape() != shape) {
                return Err(Error::Parameter("FRF matrix dimensions vary over the grid".into()));
            }
        }
        Ok(Self { grid, values })
    }

    pub fn n_outputs(&self) -> usize {
        self.values.first().map_or(0, |m| m.nrows())
    }

    pub fn n_inputs(&self) -> usize {
        self.values.first().map_or(0, |m| m.ncols())
    }

    pub fn entry(&self, i: usize, j: usize) -> SisoFrf {
        SisoFrf { grid: self.grid.clone(), values: self.values.iter().map(|m| m[(i, j)]).collect() }
    }

    /// `T_y H T_u` at every frequency.
    pub fn transform(&self, t_y: &DMatrix<f64>, t_u: &DMatrix<f64>) -> FrfMatrix {
        let ty = t_y.map(|v| Complex64::new(v, 0.0));
        let tu = t_u.map(|v| Complex64::new(v, 0.0));
        let values = self.values.iter().map(|h| &ty * h * &tu).collect();
        FrfMatrix { grid: self.grid.clone(), values }
    }

    /// CSV with columns `freq_hz, re_i_j, im_i_j` (1-based, row-major entries).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (ny, nu) = (self.n_outputs(), self.n_inputs());
        let mut header = vec!["freq_hz".to_string()];
        for i in 1..=ny {
            for j in 1..=nu {
                header.push(format!("re_{i}_{j}"));
                header.push(format!("im_{i}_{j}"));
            }
        }
        w.write_record(&header)?;
        for (f, h) in self.grid.freqs().iter().zip(&self.values) {
            let mut row = vec![fmt_f64(*f)];
            for i in 0..ny {
                for j in 0..nu {
                    row.push(fmt_f64(h[(i, j)].re));
                    row.push(fmt_f64(h[(i, j)].im));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("freq_hz") || header.len() < 3 || (header.len() - 1) % 2 != 0 {
            return Err(Error::Config("FRF CSV must start with freq_hz followed by re/im pairs".into()));
        }
        let mut ny = 0;
        let mut nu = 0;
        let mut cols = Vec::new();
        for k in (1..header.len()).step_by(2) {
            let re = &header[k];
            let im = &header[k + 1];
            let (i, j) = parse_entry(re, "re_")?;
            if parse_entry(im, "im_")? != (i, j) {
                return Err(Error::Config(format!("column {im} does not pair with {re}")));
            }
            ny = ny.max(i);
            nu = nu.max(j);
            cols.push((i - 1, j - 1));
        }
        if cols.len() != ny * nu {
            return Err(Error::Config(format!("expected {} entries for a {ny}x{nu} FRF", ny * nu)));
        }
        let mut freqs = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("FRF CSV line {}: bad number in column {}", line + 2, k + 1)))
            };
            freqs.push(num(0)?);
            let mut m = DMatrix::zeros(ny, nu);
            for (c, &(i, j)) in cols.iter().enumerate() {
                m[(i, j)] = Complex64::new(num(1 + 2 * c)?, num(2 + 2 * c)?);
            }
            values.push(m);
        }
        FrfMatrix::new(FrequencyGrid::new(freqs)?, values)
    }
}

fn parse_entry(name: &str, prefix: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("unrecognized FRF column {name:?}"));
    let rest = name.strip_prefix(prefix).ok_or_else(bad)?;
    let (i, j) = rest.split_once('_').ok_or_else(bad)?;
    let i: usize = i.parse().map_err(|_| bad())?;
    let j: usize = j.parse().map_err(|_| bad())?;
    if i == 0 || j == 0 {
        return Err(bad());
    }
    Ok((i, j))
}

/// `H(jw) = C (jwI - A)^-1 B + D` on every grid frequency.
pub fn frf(ss: &FrozenStateSpace, grid: &FrequencyGrid) -> Result<FrfMatrix> {
    let values = grid
        .freqs()
        .par_iter()
        .map(|&f| ss.eval(jw(f)))
        .collect::<Result<Vec<_>>>()?;
    FrfMatrix::new(grid.clone(), values)
}

pub fn frf_siso(ss: &FrozenStateSpace, grid: &FrequencyGrid) -> Result<SisoFrf> {
    let values = grid.freqs().iter().map(|&f| ss.eval_siso(jw(f))).collect::<Result<Vec<_>>>()?;
    SisoFrf::new(grid.clone(), values)
}

/// Equivalent plant of loop `i` at one frequency, closing loop `j` with `-k[j]`
/// wherever `k[j]` is `Some` (entry `i` is ignored).
pub fn equivalent_plant_at(p: &DMatrix<Complex64>, k: &[Option<Complex64>], i: usize, freq_hz: f64) -> Result<Complex64> {
    let closed: Vec<usize> = (0..p.nrows()).filter(|&j| j != i && k[j].is_some()).collect();
    if closed.is_empty() {
        return Ok(p[(i, i)]);
    }
    let nc = closed.len();
    // (I + P_cc K_c) x = P_ci
    let mut m = DMatrix::<Complex64>::identity(nc, nc);
    let mut rhs = DMatrix::<Complex64>::zeros(nc, 1);
    for (r, &jr) in closed.iter().enumerate() {
        for (c, &jc) in closed.iter().enumerate() {
            m[(r, c)] += p[(jr, jc)] * k[jc].unwrap();
        }
        rhs[(r, 0)] = p[(jr, i)];
    }
    let x = m.lu().solve(&rhs).ok_or_else(|| Error::Singular {
        freq_hz,
        what: format!("closing matrix of loop {} is singular", i + 1),
    })?;
    let mut corr = Complex64::new(0.0, 0.0);
    for (c, &jc) in closed.iter().enumerate() {
        corr += p[(i, jc)] * k[jc].unwrap() * x[(c, 0)];
    }
    let g = p[(i, i)] - corr;
    if !g.is_finite() {
        return Err(Error::Singular { freq_hz, what: format!("equivalent plant of loop {} is not finite", i + 1) });
    }
    Ok(g)
}

/// SISO plant seen by loop `i` after closing every loop `j != i` that has a controller.
/// `None` entries (or all-zero responses) leave the loop open.
pub fn equivalent_plant(p: &FrfMatrix, k_others: &[Option<SisoFrf>], i: usize) -> Result<SisoFrf> {
    let n = p.n_inputs();
    if p.n_outputs() != n || k_others.len() != n || i >= n {
        return Err(Error::Parameter(format!(
            "equivalent plant needs a square plant and {} controllers, got {}x{} and {}",
            n,
            p.n_outputs(),
            n,
            k_others.len()
        )));
    }
    let values = (0..p.grid.len())
        .map(|w| {
            let k: Vec<Option<Complex64>> = k_others.iter().map(|c| c.as_ref().map(|c| c.values[w])).collect();
            equivalent_plant_at(&p.values[w], &k, i, p.grid.freqs()[w])
        })
        .collect::<Result<Vec<_>>>()?;
    SisoFrf::new(p.grid.clone(), values)
}

/// Equivalent plants of sequential loop closing: loop `order[m]` sees the loops
/// `order[..m]` closed and the rest open.
pub fn sequential_equivalent_plants(p: &FrfMatrix, k: &[SisoFrf], order: &[usize]) -> Result<Vec<SisoFrf>> {
    let n = k.len();
    let mut out = vec![None; n];
    for (m, &i) in order.iter().enumerate() {
        let mut ks: Vec<Option<SisoFrf>> = vec![None; n];
        for &j in &order[..m] {
            ks[j] = Some(k[j].clone());
        }
        out[i] = Some(equivalent_plant(p, &ks, i)?);
    }
    out.into_iter()
        .map(|g| g.ok_or_else(|| Error::Parameter("loop order is not a permutation".into())))
        .collect()
}

pub fn check_order(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::Parameter(format!("loop order has {} entries for {n} loops", order.len())));
    }
    for &i in order {
        if i >= n || seen[i] {
            return Err(Error::Parameter(format!("loop order {order:?} is not a permutation")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// `max_w |det(I + PK) - prod_i (1 + g^i k_i)| / |det(I + PK)|` with the
/// equivalent plants of sequential closing in `order`.
pub fn det_identity_residual_ordered(p: &FrfMatrix, k: &[SisoFrf], order: &[usize]) -> Result<f64> {
    check_order(order, k.len())?;
    let g = sequential_equivalent_plants(p, k, order)?;
    let n = k.len();
    let mut worst = 0.0_f64;
    for w in 0..p.grid.len() {
        let mut m = DMatrix::<Complex64>::identity(n, n);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] += p.values[w][(r, c)] * k[c].values[w];
            }
        }
        let det = m.lu().determinant();
        let prod = (0..n).fold(Complex64::new(1.0, 0.0), |acc, i| acc * (1.0 + g[i].values[w] * k[i].values[w]));
        if det.norm() == 0.0 {
            return Err(Error::Singular { freq_hz: p.grid.freqs()[w], what: "det(I + PK) vanishes".into() });
        }
        worst = worst.max((det - prod).norm() / det.norm());
    }
    Ok(worst)
}

pub fn det_identity_residual(p: &FrfMatrix, k: &[SisoFrf]) -> Result<f64> {
    let order: Vec<usize> = (0..k.len()).collect();
    det_identity_residual_ordered(p, k, &order)
}

/// Encirclement count of one SISO loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NyquistCount {
    /// Net clockwise encirclements of -1.
    pub encirclements: i32,
    pub stable: bool,
}

/// Frozen-position stability verdict for a set of loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub per_loop_encirclements: Vec<i32>,
    pub closed_loop_eigen_max_real: Option<f64>,
    pub stable: bool,
}

const MAX_STEP: f64 = PI / 2.0;

fn wrap(d: f64) -> f64 {
    let mut d = d % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Sums wrapped phase increments of `1 + L` around a closed point sequence and
/// returns net clockwise encirclements. `checked` marks increments that come
/// from grid data and must stay below 90 degrees.
fn winding(points: &[(Complex64, Option<f64>)]) -> Result<i32> {
    let mut total = 0.0;
    for k in 0..points.len() {
        let (a, fa) = points[k];
        let (b, _) = points[(k + 1) % points.len()];
        let a1 = 1.0 + a;
        let b1 = 1.0 + b;
        if a1.norm() == 0.0 || b1.norm() == 0.0 {
            return Err(Error::Singular { freq_hz: fa.unwrap_or(0.0), what: "loop passes through -1".into() });
        }
        let d = wrap(b1.arg() - a1.arg());
        if let Some(f) = fa {
            if d.abs() > MAX_STEP {
                return Err(Error::InsufficientGrid { freq_hz: f, step_deg: d.abs().to_degrees() });
            }
        }
        total += d;
    }
    // counter-clockwise phase gain = counter-clockwise encirclements
    Ok(-(total / (2.0 * PI)).round() as i32)
}

fn verdict(encirclements: i32, n_open_rhp: i32) -> NyquistCount {
    NyquistCount { encirclements, stable: encirclements == -n_open_rhp }
}

/// Low-frequency slope of `|L|` in decades per decade, rounded: the number of
/// open-loop poles at the origin.
fn origin_order(l: &SisoFrf) -> i32 {
    let f = l.grid.freqs();
    if f.len() < 2 {
        return 0;
    }
    let slope = (l.values[1].norm().ln() - l.values[0].norm().ln()) / (f[1].ln() - f[0].ln());
    (-slope).round().max(0.0) as i32
}

/// Nyquist encirclement count from FRF data on the positive-frequency grid.
///
/// The contour is closed with the conjugate branch, a right-hand indentation at
/// the origin (approximated by the low-frequency asymptote `L(jw0) e^{jn(pi/2 - theta)}`
/// with `n` read off the low-frequency slope) and the large arc where `L -> 0`.
pub fn nyquist_stable(l: &SisoFrf, n_open_rhp: i32) -> Result<NyquistCount> {
    let f = l.grid.freqs();
    let last = *l.values.last().ok_or(Error::NoCrossover)?;
    if last.norm() >= 1.0 {
        return Err(Error::InsufficientGrid { freq_hz: f[f.len() - 1], step_deg: 0.0 });
    }
    let n = origin_order(l);
    let mut pts: Vec<(Complex64, Option<f64>)> = Vec::with_capacity(2 * f.len() + 256);
    // +j w0 -> +j inf
    for (v, fr) in l.values.iter().zip(f) {
        pts.push((*v, Some(*fr)));
    }
    // large arc: both ends inside |L| < 1, the wrapped jump is exact
    pts.last_mut().unwrap().1 = None;
    // -j inf -> -j w0
    for (v, fr) in l.values.iter().zip(f).rev() {
        pts.push((v.conj(), Some(*fr)));
    }
    pts.last_mut().unwrap().1 = None;
    if n > 0 {
        let l0 = l.values[0];
        // Below the first grid point the phase of L drifts by delta towards its
        // asymptote; the wrapped closing jump is exact while |2 delta| < 180 deg
        // and |L| stays large.
        let mismatch = wrap(-l0.arg() - (l0.arg() + n as f64 * PI)).abs();
        if l0.norm() < 10.0 || mismatch > 5.0 * PI / 6.0 {
            return Err(Error::InsufficientGrid { freq_hz: f[0], step_deg: mismatch.to_degrees() });
        }
        let steps = 64 * n as usize;
        for s in 1..steps {
            let theta = -PI / 2.0 + PI * s as f64 / steps as f64;
            let rot = Complex64::from_polar(1.0, n as f64 * (PI / 2.0 - theta));
            pts.push((l0 * rot, None));
        }
    }
    Ok(verdict(winding(&pts)?, n_open_rhp))
}

/// Nyquist count with an evaluator for `L(s)`: exact indentation arc of radius
/// `2 pi f_min` and adaptive refinement wherever the phase of `1 + L` jumps.
pub fn nyquist_stable_eval<F>(l: F, grid: &FrequencyGrid, n_open_rhp: i32) -> Result<NyquistCount>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    let f = grid.freqs();
    let mut branch: Vec<(f64, Complex64)> = Vec::with_capacity(f.len());
    for &fr in f {
        branch.push((fr, l(jw(fr))?));
    }
    let mut refined = Vec::with_capacity(branch.len() * 2);
    refined.push(branch[0]);
    for w in branch.windows(2) {
        refine(&l, w[0], w[1], 0, &mut refined)?;
    }
    let (f_last, last) = *refined.last().unwrap();
    if last.norm() >= 1.0 {
        return Err(Error::InsufficientGrid { freq_hz: f_last, step_deg: 0.0 });
    }
    let mut pts: Vec<(Complex64, Option<f64>)> = Vec::with_capacity(2 * refined.len() + 512);
    for &(fr, v) in &refined {
        pts.push((v, Some(fr)));
    }
    pts.last_mut().unwrap().1 = None;
    for &(fr, v) in refined.iter().rev() {
        pts.push((v.conj(), Some(fr)));
    }
    let eps = 2.0 * PI * f[0];
    let steps = 512;
    for s in 1..steps {
        let theta = -PI / 2.0 + PI * s as f64 / steps as f64;
        pts.push((l(Complex64::from_polar(eps, theta))?, Some(f[0])));
    }
    Ok(verdict(winding(&pts)?, n_open_rhp))
}

fn refine<F>(l: &F, a: (f64, Complex64), b: (f64, Complex64), depth: u32, out: &mut Vec<(f64, Complex64)>) -> Result<()>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    let d = wrap((1.0 + b.1).arg() - (1.0 + a.1).arg());
    if d.abs() <= MAX_STEP / 2.0 || depth >= 24 {
        out.push(b);
        return Ok(());
    }
    let fm = (a.0 * b.0).sqrt();
    let m = (fm, l(jw(fm))?);
    refine(l, a, m, depth + 1, out)?;
    refine(l, m, b, depth + 1, out)
}

/// Crossover, phase margin and sensitivity peak of a loop gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub f_crossover_hz: f64,
    pub phase_margin_deg: f64,
    pub sensitivity_peak_db: f64,
}

pub fn sensitivity_peak_db(l: &SisoFrf) -> f64 {
    l.values.iter().map(|v| -20.0 * (1.0 + v).norm().log10()).fold(f64::NEG_INFINITY, f64::max)
}

pub fn margins_and_bandwidth(l: &SisoFrf) -> Result<Margins> {
    let f = l.grid.freqs();
    let mag: Vec<f64> = l.values.iter().map(|v| v.norm().ln()).collect();
    let k = (0..f.len().saturating_sub(1))
        .find(|&k| mag[k] == 0.0 || mag[k].signum() != mag[k + 1].signum() || mag[k + 1] == 0.0)
        .ok_or(Error::NoCrossover)?;
    let (x0, x1) = (f[k].ln(), f[k + 1].ln());
    let t = if mag[k] == mag[k + 1] { 0.0 } else { mag[k] / (mag[k] - mag[k + 1]) };
    let fc = (x0 + t * (x1 - x0)).exp();
    let p0 = l.values[k].arg();
    let p1 = p0 + wrap(l.values[k + 1].arg() - p0);
    let phase = p0 + t * (p1 - p0);
    Ok(Margins {
        f_crossover_hz: fc,
        phase_margin_deg: wrap(phase + PI).to_degrees(),
        sensitivity_peak_db: sensitivity_peak_db(l),
    })
}

/// State matrix of the negative-feedback interconnection `u = -K y`.
pub fn closed_loop_matrix(plant: &FrozenStateSpace, k: &FrozenStateSpace) -> Result<DMatrix<f64>> {
    if k.n_inputs() != plant.n_outputs() || k.n_outputs() != plant.n_inputs() {
        return Err(Error::Model("controller dimensions do not match the plant".into()));
    }
    let (np, nk) = (plant.order(), k.order());
    let nu = plant.n_inputs();
    // u = Ck xk - Dk (Cp xp + Dp u)  =>  (I + Dk Dp) u = Ck xk - Dk Cp xp
    let lhs = DMatrix::<f64>::identity(nu, nu) + &k.d * &plant.d;
    let inv = lhs.try_inverse().ok_or_else(|| Error::Singular {
        freq_hz: f64::INFINITY,
        what: "algebraic loop (I + Dk Dp) is singular".into(),
    })?;
    let mut u_of_x = DMatrix::zeros(nu, np + nk);
    u_of_x.view_mut((0, 0), (nu, np)).copy_from(&(-(&inv * &k.d * &plant.c)));
    u_of_x.view_mut((0, np), (nu, nk)).copy_from(&(&inv * &k.c));
    let mut y_of_x = &plant.d * &u_of_x;
    {
        let mut yp = y_of_x.view_mut((0, 0), (plant.n_outputs(), np));
        yp += &plant.c;
    }
    let mut a = DMatrix::zeros(np + nk, np + nk);
    a.view_mut((0, 0), (np, np)).copy_from(&plant.a);
    let bu = &plant.b * &u_of_x;
    {
        let mut top = a.view_mut((0, 0), (np, np + nk));
        top += &bu;
    }
    a.view_mut((np, np), (nk, nk)).copy_from(&k.a);
    let by = -(&k.b * &y_of_x);
    {
        let mut bottom = a.view_mut((np, 0), (nk, np + nk));
        bottom += &by;
    }
    Ok(a)
}

/// Diagonal similarity `D^-1 A D` with power-of-two scalings that equalize row
/// and column norms. High-gain loops give closed-loop matrices spanning ~15
/// decades, where the unbalanced eigen solver returns spurious unstable poles.
pub fn balance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut b = a.clone();
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| b[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let mut cc = c;
            while cc < r / 2.0 {
                cc *= 4.0;
                f *= 2.0;
            }
            while cc > r * 2.0 {
                cc /= 4.0;
                f /= 2.0;
            }
            let s = c + r;
            if (c * f + r / f) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    b
}

pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    balance(a).complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}
