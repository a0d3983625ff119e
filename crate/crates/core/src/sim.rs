//! Fixed-step closed-loop simulation of the position-dependent plant with
//! the scheduled controllers, plus the moving-average / moving-standard-
//! deviation exposure metrics.
//!
//! Plant and controller states are integrated jointly by classical RK4. The
//! scheduling point is frozen over each step; controller coefficients are
//! re-realized at the new point and the states carry over.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::ControllerSet;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::plant::{ModalPlantModel, RigidAxis, SchedulingPoint};
use crate::statespace::FrozenStateSpace;
use crate::trajectory::{PlanarTrajectory, Sampler, TrajectoryProfile, TrajectorySpec};

const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulingSource {
    /// Planned in-plane position at the start of the step.
    Reference,
    /// In-plane position one sample earlier, as a sampled measurement would give.
    MeasuredDelayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub scheduling_source: SchedulingSource,
    pub exposure_window_s: f64,
    /// Settling band after each acceleration phase, excluded from the
    /// constant-velocity interval.
    pub settling_s: f64,
    pub feedback: bool,
    pub feedforward: bool,
    /// Drive the plant with the in-plane forces `m a_xy` through the
    /// model's in-plane coupling.
    pub inplane_forces: bool,
    /// Initial `[q, q', controller states]`; empty means zero.
    pub initial_state: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 10_000.0,
            duration_s: 2.0,
            scheduling_source: SchedulingSource::Reference,
            exposure_window_s: 0.005,
            settling_s: 0.02,
            feedback: true,
            feedforward: true,
            inplane_forces: true,
            initial_state: vec![],
        }
    }
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn validate(&self, model: &ModalPlantModel) -> Result<()> {
        let fs = self.sample_rate_hz;
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Config(format!("sample rate must be positive, got {fs}")));
        }
        let f_top = model.frequencies_hz.iter().fold(0.0_f64, |m, f| m.max(*f));
        if fs <= 2.0 * f_top {
            return Err(Error::Config(format!("sample rate {fs} Hz must exceed twice the highest mode ({f_top} Hz)")));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration must be non-negative, got {}", self.duration_s)));
        }
        half_window(self.exposure_window_s, self.dt())?;
        if !(self.settling_s >= 0.0) {
            return Err(Error::Config("settling time must be non-negative".into()));
        }
        Ok(())
    }
}

/// What the stage is asked to do: the in-plane move that drives scheduling
/// and optional references for the controlled axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub planar: PlanarTrajectory,
    /// Per controlled axis; `None` holds the axis at zero.
    pub axis_refs: Vec<Option<TrajectoryProfile>>,
}

impl Scenario {
    /// In-plane move from `spec`, controlled axes regulated at zero.
    pub fn planar_move(spec: &TrajectorySpec, n_axes: usize) -> Result<Self> {
        Ok(Self { planar: spec.plan()?, axis_refs: vec![None; n_axes] })
    }

    /// Mover parked at `p`.
    pub fn stationary(p: SchedulingPoint, n_axes: usize) -> Self {
        let park = |x: f64| TrajectoryProfile {
            segments: vec![],
            initial: [x, 0.0, 0.0, 0.0],
            displacement: 0.0,
            sample_rate: None,
            phases: [0.0; 4],
        };
        Self { planar: PlanarTrajectory { axes: vec![park(p.x), park(p.y)] }, axis_refs: vec![None; n_axes] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    Acceleration,
    Settling,
    ConstantVelocity,
    Deceleration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub kind: IntervalKind,
    pub t_start: f64,
    pub t_end: f64,
}

/// Acceleration, settling and constant-velocity zones of an in-plane move.
pub fn intervals(planar: &PlanarTrajectory, settling_s: f64) -> Vec<Interval> {
    let moving: Vec<&TrajectoryProfile> = planar.axes.iter().filter(|a| !a.segments.is_empty()).collect();
    if moving.is_empty() {
        return vec![];
    }
    let ramp = |a: &TrajectoryProfile| {
        let [ts, tj, ta, _] = a.phases;
        4.0 * ts + 2.0 * tj + ta
    };
    let acc_end = moving.iter().map(|a| ramp(a)).fold(0.0, f64::max);
    let dec_start = moving.iter().map(|a| a.duration() - ramp(a)).fold(f64::INFINITY, f64::min);
    let end = planar.duration();
    let iv = |kind, t_start, t_end| Interval { kind, t_start, t_end };
    let mut out = vec![iv(IntervalKind::Acceleration, 0.0, acc_end)];
    let settle_end = (acc_end + settling_s).min(dec_start.max(acc_end));
    if settle_end > acc_end {
        out.push(iv(IntervalKind::Settling, acc_end, settle_end));
    }
    if dec_start > settle_end {
        out.push(iv(IntervalKind::ConstantVelocity, settle_end, dec_start));
    }
    out.push(iv(IntervalKind::Deceleration, dec_start.max(acc_end), end));
    if settling_s > 0.0 {
        out.push(iv(IntervalKind::Settling, end, end + settling_s));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub axes: Vec<String>,
    pub t: Vec<f64>,
    /// Scheduling point used for the step starting at each sample.
    pub p: Vec<[f64; 2]>,
    /// Per axis, per sample.
    pub r: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    /// Axis command `K_p(e) + u_ff` before the input decoupling.
    pub u: Vec<Vec<f64>>,
    /// NaN where the exposure window does not fit.
    pub ma: Vec<Vec<f64>>,
    pub msd: Vec<Vec<f64>>,
    /// Euclidean norm of the joint state.
    pub state_norm: Vec<f64>,
    pub intervals: Vec<Interval>,
    pub window_s: f64,
}

fn half_window(window: f64, dt: f64) -> Result<usize> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::Config(format!("exposure window must be positive, got {window}")));
    }
    let n = (0.5 * window / dt).round();
    if n < 1.0 || (2.0 * n * dt - window).abs() > 1e-9 * window {
        return Err(Error::Config(format!(
            "exposure window {window} s must span an even number of {dt} s steps"
        )));
    }
    Ok(n as usize)
}

/// Centered moving average and moving standard deviation over `window`
/// seconds, trapezoid rule on the sample grid. NaN where the window does not fit.
pub fn ma_msd(e: &[f64], dt: f64, window: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = half_window(window, dt)?;
    if 2 * h + 1 > e.len() {
        return Err(Error::Config(format!(
            "exposure window {window} s is longer than the {} s series",
            (e.len().saturating_sub(1)) as f64 * dt
        )));
    }
    let n = e.len();
    let mut ma = vec![f64::NAN; n];
    let mut msd = vec![f64::NAN; n];
    let trap = |w: &[f64], f: &dyn Fn(f64) -> f64| {
        let inner: f64 = w[1..w.len() - 1].iter().map(|v| f(*v)).sum();
        (inner + 0.5 * (f(w[0]) + f(w[w.len() - 1]))) * dt / window
    };
    for k in h..n - h {
        let w = &e[k - h..=k + h];
        let m = trap(w, &|v| v);
        ma[k] = m;
        msd[k] = trap(w, &|v| (v - m) * (v - m)).max(0.0).sqrt();
    }
    Ok((ma, msd))
}

/// Mean `|MA|` and mean `MSD` of one axis over `interval`. Only samples whose
/// exposure window lies inside the interval count, so a neighbouring phase
/// never leaks into the statistics.
pub fn interval_metrics(result: &SimResult, axis: usize, interval: &Interval) -> Result<(f64, f64)> {
    let (mut sa, mut sm, mut n) = (0.0, 0.0, 0usize);
    let half = 0.5 * result.window_s;
    let eps = 1e-9 * result.window_s;
    for (k, &t) in result.t.iter().enumerate() {
        let (a, m) = (result.ma[axis][k], result.msd[axis][k]);
        if t - half >= interval.t_start - eps && t + half <= interval.t_end + eps && a.is_finite() {
            sa += a.abs();
            sm += m;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Config(format!(
            "interval [{}, {}] s holds no samples with a complete exposure window",
            interval.t_start, interval.t_end
        )));
    }
    Ok((sa / n as f64, sm / n as f64))
}

struct Loop {
    ss: FrozenStateSpace,
    offset: usize,
}

/// Everything the right-hand side needs within one step.
struct Frozen {
    /// Axis command to modal force, `Phi_a T_u`.
    bf: DMatrix<f64>,
    /// Modal coordinates to decoupled outputs, `T_y Phi_s`.
    cy: DMatrix<f64>,
    /// In-plane force to modal force.
    gip: DMatrix<f64>,
    loops: Vec<Loop>,
}

struct Inputs {
    r: DVector<f64>,
    uff: DVector<f64>,
    fxy: DVector<f64>,
}

struct System<'a> {
    nq: usize,
    m: Vec<f64>,
    d: Vec<f64>,
    k: Vec<f64>,
    feedback: bool,
    planar: Vec<Sampler<'a>>,
    refs: Vec<Option<Sampler<'a>>>,
    axis_mass: Vec<f64>,
    mover_mass: f64,
    cfg: &'a SimConfig,
}

impl System<'_> {
    fn inputs(&self, t: f64) -> Inputs {
        let n = self.refs.len();
        let mut r = DVector::zeros(n);
        let mut uff = DVector::zeros(n);
        for (i, s) in self.refs.iter().enumerate() {
            if let Some(s) = s {
                let x = s.sample(t);
                r[i] = x.pos;
                if self.cfg.feedforward {
                    uff[i] = self.axis_mass[i] * x.acc;
                }
            }
        }
        let mut fxy = DVector::zeros(2);
        if self.cfg.inplane_forces {
            for (i, s) in self.planar.iter().enumerate() {
                fxy[i] = self.mover_mass * s.sample(t).acc;
            }
        }
        Inputs { r, uff, fxy }
    }

    /// Returns `(y, command)` at state `x`.
    fn outputs(&self, fz: &Frozen, x: &DVector<f64>, inp: &Inputs) -> (DVector<f64>, DVector<f64>) {
        let nq = self.nq;
        let y = &fz.cy * x.rows(0, nq);
        let mut cmd = inp.uff.clone();
        if self.feedback {
            for (i, l) in fz.loops.iter().enumerate() {
                let e = inp.r[i] - y[i];
                let xs = x.rows(l.offset, l.ss.order());
                cmd[i] += (&l.ss.c * xs)[0] + l.ss.d[(0, 0)] * e;
            }
        }
        (y, cmd)
    }

    fn deriv(&self, fz: &Frozen, x: &DVector<f64>, inp: &Inputs) -> DVector<f64> {
        let nq = self.nq;
        let (y, cmd) = self.outputs(fz, x, inp);
        let mut dx = DVector::zeros(x.len());
        let force = &fz.bf * &cmd + &fz.gip * &inp.fxy;
        for i in 0..nq {
            dx[i] = x[nq + i];
            dx[nq + i] = (force[i] - self.d[i] * x[nq + i] - self.k[i] * x[i]) / self.m[i];
        }
        if self.feedback {
            for (i, l) in fz.loops.iter().enumerate() {
                let n = l.ss.order();
                if n == 0 {
                    continue;
                }
                let e = inp.r[i] - y[i];
                let xs = x.rows(l.offset, n);
                let d = &l.ss.a * xs + &l.ss.b * e;
                dx.rows_mut(l.offset, n).copy_from(&d);
            }
        }
        dx
    }
}

/// Runs the closed loop for `config.duration_s` (at least the move length).
pub fn simulate(model: &ModalPlantModel, controllers: &ControllerSet, scenario: &Scenario, config: &SimConfig) -> Result<SimResult> {
    model.validate()?;
    controllers.validate(model)?;
    config.validate(model)?;
    let n_axes = controllers.n_loops();
    if scenario.axis_refs.len() != n_axes || scenario.planar.axes.len() != 2 {
        return Err(Error::Config(format!(
            "scenario needs 2 in-plane axes and {n_axes} axis references, got {} and {}",
            scenario.planar.axes.len(),
            scenario.axis_refs.len()
        )));
    }
    let dt = config.dt();
    let f_max = 0.45 * config.sample_rate_hz;
    let horizon = config.duration_s.max(scenario.planar.duration());
    let n_steps = (horizon * config.sample_rate_hz - 1e-9).ceil().max(0.0) as usize;

    let (m, d, k) = model.modal_matrices();
    let nq = model.n_modes();
    let masses = model.rigid_masses();
    let mover_mass = model
        .rigid_modes
        .iter()
        .find(|r| r.axis == RigidAxis::Z)
        .map_or(masses[0], |r| r.mass);
    let sys = System {
        nq,
        m,
        d,
        k,
        feedback: config.feedback,
        planar: scenario.planar.axes.iter().map(Sampler::new).collect(),
        refs: scenario.axis_refs.iter().map(|r| r.as_ref().map(Sampler::new)).collect(),
        axis_mass: masses,
        mover_mass,
        cfg: config,
    };

    let point_at = |t: f64| {
        let a = sys.planar[0].sample(t).pos;
        let b = sys.planar[1].sample(t).pos;
        SchedulingPoint::new(a, b)
    };
    let freeze = |p: SchedulingPoint| -> Result<Frozen> {
        let (pa, ps) = model.mode_shape_eval(p)?;
        let mut offset = 2 * nq;
        let mut loops = Vec::with_capacity(n_axes);
        for c in &controllers.loops {
            let ss = c.realize_with(Some(p), f_max)?;
            let n = ss.order();
            loops.push(Loop { ss, offset });
            offset += n;
        }
        Ok(Frozen {
            bf: pa * &controllers.t_u,
            cy: &controllers.t_y * ps,
            gip: model.inplane_map(p)?,
            loops,
        })
    };

    let p0 = point_at(0.0);
    let first = freeze(p0)?;
    let n_state = first.loops.last().map_or(2 * nq, |l| l.offset + l.ss.order());
    let mut x = if config.initial_state.is_empty() {
        DVector::zeros(n_state)
    } else if config.initial_state.len() == n_state {
        DVector::from_vec(config.initial_state.clone())
    } else {
        return Err(Error::Config(format!(
            "initial state has {} entries, the closed loop has {n_state}",
            config.initial_state.len()
        )));
    };

    let cap = n_steps + 1;
    let mut res = SimResult {
        axes: controllers.axes.clone(),
        t: Vec::with_capacity(cap),
        p: Vec::with_capacity(cap),
        r: vec![Vec::with_capacity(cap); n_axes],
        y: vec![Vec::with_capacity(cap); n_axes],
        e: vec![Vec::with_capacity(cap); n_axes],
        u: vec![Vec::with_capacity(cap); n_axes],
        ma: vec![],
        msd: vec![],
        state_norm: Vec::with_capacity(cap),
        intervals: intervals(&scenario.planar, config.settling_s),
        window_s: config.exposure_window_s,
    };

    let mut fz = first;
    let mut p = p0;
    for step in 0..=n_steps {
        let t = step as f64 * dt;
        if step > 0 {
            p = match config.scheduling_source {
                SchedulingSource::Reference => point_at(t),
                SchedulingSource::MeasuredDelayed => point_at(t - dt),
            };
            fz = freeze(p)?;
        }
        let inp = sys.inputs(t);
        let (y, cmd) = sys.outputs(&fz, &x, &inp);
        res.t.push(t);
        res.p.push([p.x, p.y]);
        for i in 0..n_axes {
            res.r[i].push(inp.r[i]);
            res.y[i].push(y[i]);
            res.e[i].push(inp.r[i] - y[i]);
            res.u[i].push(cmd[i]);
        }
        let norm = x.norm();
        res.state_norm.push(norm);
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { time_s: t, norm });
        }
        if step == n_steps {
            break;
        }
        let mid = sys.inputs(t + 0.5 * dt);
        let end = sys.inputs(t + dt);
        let k1 = sys.deriv(&fz, &x, &inp);
        let k2 = sys.deriv(&fz, &(&x + &k1 * (0.5 * dt)), &mid);
        let k3 = sys.deriv(&fz, &(&x + &k2 * (0.5 * dt)), &mid);
        let k4 = sys.deriv(&fz, &(&x + &k3 * dt), &end);
        x += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    }

    if 2 * half_window(config.exposure_window_s, dt)? < res.t.len() {
        for i in 0..n_axes {
            let (a, s) = ma_msd(&res.e[i], dt, config.exposure_window_s)?;
            res.ma.push(a);
            res.msd.push(s);
        }
    } else {
        res.ma = vec![vec![f64::NAN; res.t.len()]; n_axes];
        res.msd = res.ma.clone();
    }
    Ok(res)
}

impl SimResult {
    pub fn constant_velocity(&self) -> Option<Interval> {
        self.intervals.iter().copied().find(|i| i.kind == IntervalKind::ConstantVelocity)
    }

    /// One row per sample: `t, p_x, p_y` then `r, y, e, u, ma, msd` per axis.
    /// Undefined MA/MSD entries are left empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["t".to_string(), "p_x".into(), "p_y".into()];
        for a in &self.axes {
            for q in ["r", "y", "e", "u", "ma", "msd"] {
                header.push(format!("{q}_{a}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        let cell = |v: f64| if v.is_finite() { fmt_f64(v) } else { String::new() };
        for k in 0..self.t.len() {
            let mut row = vec![fmt_f64(self.t[k]), fmt_f64(self.p[k][0]), fmt_f64(self.p[k][1])];
            for i in 0..self.axes.len() {
                row.extend([self.r[i][k], self.y[i][k], self.e[i][k], self.u[i][k]].map(fmt_f64));
                row.push(cell(self.ma[i][k]));
                row.push(cell(self.msd[i][k]));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// What `write_csv` leaves out: enough to rebuild a result for `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    pub axes: Vec<String>,
    pub intervals: Vec<Interval>,
    pub window_s: f64,
}

impl SimResult {
    pub fn meta(&self) -> SimMeta {
        SimMeta { axes: self.axes.clone(), intervals: self.intervals.clone(), window_s: self.window_s }
    }

    /// Inverse of `write_csv`; the state norm is not stored and comes back empty.
    pub fn read_csv(path: &Path, meta: &SimMeta) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let header = rd.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("{}: missing column {name}", path.display())))
        };
        let (ct, cx, cy) = (col("t")?, col("p_x")?, col("p_y")?);
        let per_axis = |q: &str| meta.axes.iter().map(|a| col(&format!("{q}_{a}"))).collect::<Result<Vec<_>>>();
        let cols: Vec<Vec<usize>> =
            ["r", "y", "e", "u", "ma", "msd"].iter().map(|q| per_axis(q)).collect::<Result<_>>()?;
        let n = meta.axes.len();
        let mut res = SimResult {
            axes: meta.axes.clone(),
            t: vec![],
            p: vec![],
            r: vec![vec![]; n],
            y: vec![vec![]; n],
            e: vec![vec![]; n],
            u: vec![vec![]; n],
            ma: vec![vec![]; n],
            msd: vec![vec![]; n],
            state_norm: vec![],
            intervals: meta.intervals.clone(),
            window_s: meta.window_s,
        };
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                let s = rec.get(k).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(f64::NAN);
                }
                s.parse().map_err(|_| Error::Config(format!("{} line {}: bad number {s:?}", path.display(), line + 2)))
            };
            res.t.push(num(ct)?);
            res.p.push([num(cx)?, num(cy)?]);
            for i in 0..n {
                res.r[i].push(num(cols[0][i])?);
                res.y[i].push(num(cols[1][i])?);
                res.e[i].push(num(cols[2][i])?);
                res.u[i].push(num(cols[3][i])?);
                res.ma[i].push(num(cols[4][i])?);
                res.msd[i].push(num(cols[5][i])?);
            }
        }
        Ok(res)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub ma: f64,
    pub msd: f64,
}

/// One row of the exposure-metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub controller: String,
    pub ma_m: f64,
    pub msd_m: f64,
    /// Relative to the first row.
    pub reduction_pct: Reduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub axis: String,
    pub window_s: f64,
    pub interval: Interval,
    pub rows: Vec<MetricRow>,
}

/// `100 (1 - new / base)`.
pub fn relative_reduction(base: f64, new: f64) -> f64 {
    if base == 0.0 {
        if new == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        100.0 * (1.0 - new / base)
    }
}

/// Mean MA and MSD of `axis` over the constant-velocity interval of each run,
/// with reductions relative to the first run.
pub fn compare(runs: &[(&str, &SimResult)], axis: usize) -> Result<MetricSummary> {
    let (_, first) = runs.first().ok_or_else(|| Error::Config("no simulation results to compare".into()))?;
    let interval = first
        .constant_velocity()
        .ok_or_else(|| Error::Config("the move has no constant-velocity interval".into()))?;
    let mut rows: Vec<MetricRow> = Vec::with_capacity(runs.len());
    for (name, r) in runs {
        let (ma, msd) = interval_metrics(r, axis, &interval)?;
        let (ma0, msd0) = rows.first().map_or((ma, msd), |b| (b.ma_m, b.msd_m));
        rows.push(MetricRow {
            controller: name.to_string(),
            ma_m: ma,
            msd_m: msd,
            reduction_pct: Reduction { ma: relative_reduction(ma0, ma), msd: relative_reduction(msd0, msd) },
        });
    }
    Ok(MetricSummary { axis: first.axes[axis].clone(), window_s: first.window_s, interval, rows })
}

impl MetricSummary {
    /// Plain-text table in the layout of mean MA / MSD with relative reduction.
    pub fn table(&self) -> String {
        let mut out = format!(
            "axis {}, exposure window {} s, constant velocity [{:.4}, {:.4}] s\n{:<12} {:>14} {:>14} {:>10} {:>10}\n",
            self.axis, self.window_s, self.interval.t_start, self.interval.t_end, "controller", "mean MA [m]", "mean MSD [m]", "MA red.%", "MSD red.%"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>14.4e} {:>14.4e} {:>10.2} {:>10.2}\n",
                r.controller, r.ma_m, r.msd_m, r.reduction_pct.ma, r.reduction_pct.msd
            ));
        }
        out
    }
}
