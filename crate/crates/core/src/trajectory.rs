//! Snap-limited (fourth-order) point-to-point references and the rigid-body
//! mass feedforward.
//!
//! Profiles are the symmetric 15-segment snap-bang form: snap pulses of
//! length `t_s`, constant-jerk phases `t_j`, a constant-acceleration phase
//! `t_a` and a cruise phase `t_v`. Phases collapse to zero length when the
//! corresponding bound never saturates.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionBounds {
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
    pub s_max: f64,
}

impl MotionBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v_max", self.v_max), ("a_max", self.a_max), ("j_max", self.j_max), ("s_max", self.s_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("motion bound {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for MotionBounds {
    /// Benchmark scenario: 0.1 m stroke with a cruise phase.
    fn default() -> Self {
        Self { v_max: 0.5, a_max: 10.0, j_max: 2000.0, s_max: 1.0e6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapSegment {
    pub duration: f64,
    pub snap: f64,
}

/// Kinematic state `(pos, vel, acc, jerk)`.
pub type Kinematics = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryProfile {
    pub segments: Vec<SnapSegment>,
    pub initial: Kinematics,
    pub displacement: f64,
    /// Grid the durations were quantized to, if any.
    pub sample_rate: Option<f64>,
    /// Phase lengths `[t_s, t_j, t_a, t_v]` after quantization.
    pub phases: [f64; 4],
}

/// Displacement reached by a unit-snap profile with the given phases.
fn unit_displacement([ts, tj, ta, tv]: [f64; 4]) -> f64 {
    let v = ts * (ts + tj) * (2.0 * ts + tj + ta);
    v * (4.0 * ts + 2.0 * tj + ta + tv)
}

/// Smallest root of an increasing function on `[0, hi]` by bisection.
fn increasing_root(f: impl Fn(f64) -> f64, mut hi: f64) -> f64 {
    let mut lo = 0.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Minimum phase lengths for a positive displacement.
fn phase_lengths(d: f64, b: &MotionBounds) -> [f64; 4] {
    let s = b.s_max;
    let ts = (d / (8.0 * s))
        .powf(0.25)
        .min((b.v_max / (2.0 * s)).cbrt())
        .min((b.a_max / s).sqrt())
        .min(b.j_max / s);

    let tj_a = b.a_max / (s * ts) - ts;
    let tj_v = 0.5 * (-3.0 * ts + (ts * ts + 4.0 * b.v_max / (s * ts)).sqrt());
    let tj_d = increasing_root(|tj| 2.0 * s * ts * (ts + tj) * (2.0 * ts + tj).powi(2) - d, ts.max(1e-9));
    let tj = tj_a.min(tj_v).min(tj_d).max(0.0);

    let a = s * ts * (ts + tj);
    let (c1, c2) = (2.0 * ts + tj, 4.0 * ts + 2.0 * tj);
    let ta_v = b.v_max / a - c1;
    let ta_d = 0.5 * (-(c1 + c2) + ((c1 - c2).powi(2) + 4.0 * d / a).sqrt());
    let ta = ta_v.min(ta_d).max(0.0);

    let v = a * (c1 + ta);
    let tv = (d / v - (c2 + ta)).max(0.0);
    // roundoff leftovers of collapsed phases
    [ts, tj, ta, tv].map(|t| if t < 1e-12 * ts { 0.0 } else { t })
}

/// Symmetric snap-bang profile covering `displacement`. With a sample rate,
/// every phase is rounded up to whole samples and the snap is rescaled so the
/// end position stays exact.
pub fn plan(displacement: f64, bounds: &MotionBounds, sample_rate: Option<f64>) -> Result<TrajectoryProfile> {
    bounds.validate()?;
    if !displacement.is_finite() {
        return Err(Error::Config(format!("displacement must be finite, got {displacement}")));
    }
    if let Some(fs) = sample_rate {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Config(format!("sample rate must be positive, got {fs}")));
        }
    }
    let empty = TrajectoryProfile {
        segments: vec![],
        initial: [0.0; 4],
        displacement,
        sample_rate,
        phases: [0.0; 4],
    };
    if displacement == 0.0 {
        return Ok(empty);
    }
    let d = displacement.abs();
    let mut phases = phase_lengths(d, bounds);
    if let Some(fs) = sample_rate {
        for t in &mut phases {
            // the tolerance keeps exact multiples from gaining a sample
            *t = (*t * fs - 1e-9).ceil().max(0.0) / fs;
        }
        if phases[0] == 0.0 {
            phases[0] = 1.0 / fs;
        }
    }
    let snap = displacement.signum() * d / unit_displacement(phases);
    let [ts, tj, ta, tv] = phases;
    let pattern: [(f64, f64); 15] = [
        (ts, 1.0),
        (tj, 0.0),
        (ts, -1.0),
        (ta, 0.0),
        (ts, -1.0),
        (tj, 0.0),
        (ts, 1.0),
        (tv, 0.0),
        (ts, -1.0),
        (tj, 0.0),
        (ts, 1.0),
        (ta, 0.0),
        (ts, 1.0),
        (tj, 0.0),
        (ts, -1.0),
    ];
    let segments = pattern
        .iter()
        .filter(|(t, _)| *t > 0.0)
        .map(|&(duration, sign)| SnapSegment { duration, snap: sign * snap })
        .collect();
    Ok(TrajectoryProfile { segments, phases, ..empty })
}

/// State after `tau` seconds of constant snap `s` from `k`.
fn advance(k: Kinematics, s: f64, tau: f64) -> Kinematics {
    let [p, v, a, j] = k;
    [
        p + tau * (v + tau * (a / 2.0 + tau * (j / 6.0 + tau * s / 24.0))),
        v + tau * (a + tau * (j / 2.0 + tau * s / 6.0)),
        a + tau * (j + tau * s / 2.0),
        j + tau * s,
    ]
}

/// Sampled reference, one row per sample: `(t, pos, vel, acc, jerk, snap)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub pos: f64,
    pub vel: f64,
    pub acc: f64,
    pub jerk: f64,
    pub snap: f64,
}

impl TrajectoryProfile {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment start times and states.
    fn knots(&self) -> Vec<(f64, Kinematics)> {
        let mut out = Vec::with_capacity(self.segments.len());
        let (mut t, mut k) = (0.0, self.initial);
        for s in &self.segments {
            out.push((t, k));
            k = advance(k, s.snap, s.duration);
            t += s.duration;
        }
        out
    }

    fn final_state(&self) -> Kinematics {
        [self.initial[0] + self.displacement, 0.0, 0.0, 0.0]
    }

    /// Exact evaluation at `t`; times outside `[0, duration]` clamp to the end states.
    pub fn sample(&self, t: f64) -> TrajectorySample {
        self.sample_with(&self.knots(), t)
    }

    fn sample_with(&self, knots: &[(f64, Kinematics)], t: f64) -> TrajectorySample {
        let row = |k: Kinematics, snap: f64| TrajectorySample { t, pos: k[0], vel: k[1], acc: k[2], jerk: k[3], snap };
        if t <= 0.0 || self.segments.is_empty() {
            let k = if self.segments.is_empty() { self.final_state() } else { self.initial };
            return row(k, if t == 0.0 { self.segments.first().map_or(0.0, |s| s.snap) } else { 0.0 });
        }
        if t >= self.duration() {
            return row(self.final_state(), 0.0);
        }
        let idx = knots.partition_point(|(t0, _)| *t0 <= t) - 1;
        let (t0, k0) = knots[idx];
        let s = self.segments[idx].snap;
        row(advance(k0, s, t - t0), s)
    }

    /// Samples at `t = n / rate` for `n = 0 ..= ceil(duration * rate)`, then
    /// held to `t_end` if that is later.
    pub fn sample_grid(&self, rate: f64, t_end: f64) -> Vec<TrajectorySample> {
        let knots = self.knots();
        let n = ((self.duration().max(t_end)) * rate - 1e-9).ceil().max(0.0) as usize;
        (0..=n).map(|i| self.sample_with(&knots, i as f64 / rate)).collect()
    }
}

/// Repeated evaluation of one profile without re-integrating the segments.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    profile: &'a TrajectoryProfile,
    knots: Vec<(f64, Kinematics)>,
}

impl<'a> Sampler<'a> {
    pub fn new(profile: &'a TrajectoryProfile) -> Self {
        Self { profile, knots: profile.knots() }
    }

    pub fn sample(&self, t: f64) -> TrajectorySample {
        self.profile.sample_with(&self.knots, t)
    }
}

pub fn sample(profile: &TrajectoryProfile, t: f64) -> TrajectorySample {
    profile.sample(t)
}

/// `u_ff = m * acc` for each sample.
pub fn mass_feedforward(samples: &[TrajectorySample], mass: f64) -> Vec<f64> {
    samples.iter().map(|s| mass * s.acc).collect()
}

/// Multi-axis point-to-point move in the plane, sharing one set of bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub bounds: MotionBounds,
    pub sample_rate_hz: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self { start: [0.05, 0.05], end: [0.15, 0.15], bounds: MotionBounds::default(), sample_rate_hz: 10_000.0 }
    }
}

/// Planned axes of a [`TrajectorySpec`], each starting at its `start` coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarTrajectory {
    pub axes: Vec<TrajectoryProfile>,
}

impl TrajectorySpec {
    pub fn plan(&self) -> Result<PlanarTrajectory> {
        let axes = (0..2)
            .map(|i| {
                let mut p = plan(self.end[i] - self.start[i], &self.bounds, Some(self.sample_rate_hz))?;
                p.initial[0] = self.start[i];
                Ok(p)
            })
            .collect::<Result<_>>()?;
        Ok(PlanarTrajectory { axes })
    }
}

impl PlanarTrajectory {
    pub fn duration(&self) -> f64 {
        self.axes.iter().map(TrajectoryProfile::duration).fold(0.0, f64::max)
    }

    pub fn sample_grid(&self, rate: f64, t_end: f64) -> Vec<Vec<TrajectorySample>> {
        let t_end = t_end.max(self.duration());
        self.axes.iter().map(|a| a.sample_grid(rate, t_end)).collect()
    }
}

/// CSV with `t` and `pos,vel,acc,jerk,snap` per axis (`x_pos`, ... `y_snap`).
pub fn write_csv(path: &Path, names: &[&str], series: &[Vec<TrajectorySample>]) -> Result<()> {
    if names.len() != series.len() {
        return Err(Error::Parameter("one name per trajectory axis is required".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["t".to_string()];
    for n in names {
        for q in ["pos", "vel", "acc", "jerk", "snap"] {
            header.push(format!("{n}_{q}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    let rows = series.iter().map(Vec::len).min().unwrap_or(0);
    for r in 0..rows {
        let mut line = vec![fmt_f64(series[0][r].t)];
        for s in series {
            let x = s[r];
            line.extend([x.pos, x.vel, x.acc, x.jerk, x.snap].map(fmt_f64));
        }
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_move_is_empty() {
        let p = plan(0.0, &MotionBounds::default(), Some(1e4)).unwrap();
        assert!(p.segments.is_empty());
        assert_eq!(p.duration(), 0.0);
    }

    #[test]
    fn snap_limited_duration() {
        let b = MotionBounds { v_max: 1e6, a_max: 1e6, j_max: 1e6, s_max: 1e4 };
        let d = 0.01;
        let p = plan(d, &b, None).unwrap();
        assert_eq!(p.segments.len(), 8);
        let expect = 8.0 * (d / (8.0 * b.s_max)).powf(0.25);
        assert!((p.duration() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn rejects_bad_bounds() {
        let b = MotionBounds { j_max: 0.0, ..MotionBounds::default() };
        assert!(matches!(plan(0.1, &b, None), Err(Error::Config(_))));
    }

    #[test]
    fn endpoints_are_exact() {
        let p = plan(0.1, &MotionBounds::default(), Some(1e4)).unwrap();
        let end = p.sample(p.duration());
        assert_eq!((end.pos, end.vel, end.acc, end.jerk, end.snap), (0.1, 0.0, 0.0, 0.0, 0.0));
        let start = p.sample(0.0);
        assert_eq!((start.pos, start.vel, start.acc), (0.0, 0.0, 0.0));
    }
}
