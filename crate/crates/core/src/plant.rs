//! Position-dependent flexible-body plant and its frozen LTI realizations.
//!
//! The plant is written in modal coordinates `q = [q_rb, q_flex]`:
//!
//! ```text
//! M q'' + D q' + K q = Phi_a(p) u + Phi_d(p) f_inplane
//!                  y = Phi_s(p) q
//! ```
//!
//! Rigid-body rows of the actuation/sensing maps are the lever-arm allocation
//! of each actuator/sensor and do not depend on the scheduling point.
//! Flexible rows are separable sine plate shapes evaluated at the
//! actuator/sensor locations shifted by the scheduling point.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::statespace::FrozenStateSpace;

/// Planar position `(q_x, q_y)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulingPoint {
    pub x: f64,
    pub y: f64,
}

impl SchedulingPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Workspace {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> SchedulingPoint {
        SchedulingPoint::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn contains(&self, p: SchedulingPoint) -> bool {
        let tol = 1e-12 * (1.0 + self.width().abs() + self.height().abs());
        p.x >= self.x_min - tol && p.x <= self.x_max + tol && p.y >= self.y_min - tol && p.y <= self.y_max + tol
    }

    pub fn check(&self, p: SchedulingPoint) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutsideWorkspace { x: p.x, y: p.y })
        }
    }

    /// Uniform `nx` x `ny` grid, x-major ordering, corners included.
    pub fn grid(&self, nx: usize, ny: usize) -> Vec<SchedulingPoint> {
        let lin = |lo: f64, hi: f64, n: usize, k: usize| {
            if n <= 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                out.push(SchedulingPoint::new(
                    lin(self.x_min, self.x_max, nx, i),
                    lin(self.y_min, self.y_max, ny, j),
                ));
            }
        }
        out
    }
}

/// Out-of-plane rigid-body degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigidAxis {
    /// Vertical translation.
    Z,
    /// Rotation about the x axis (lever arm `y`).
    Rx,
    /// Rotation about the y axis (lever arm `-x`).
    Ry,
}

impl RigidAxis {
    /// Allocation/sensing weight of a point `(x, y)` in the mover frame.
    pub fn lever(self, x: f64, y: f64) -> f64 {
        match self {
            RigidAxis::Z => 1.0,
            RigidAxis::Rx => y,
            RigidAxis::Ry => -x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RigidAxis::Z => "z",
            RigidAxis::Rx => "rx",
            RigidAxis::Ry => "ry",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidMode {
    pub axis: RigidAxis,
    /// Mass (kg) or inertia (kg m^2).
    pub mass: f64,
}

/// Wave numbers and amplitude of a mass-normalized plate mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeShape {
    pub kx: u32,
    pub ky: u32,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

/// Coupling of the in-plane (x/y) drive forces into the out-of-plane dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InplaneCoupling {
    /// Height of the in-plane force line below the center of mass, meters.
    pub height_m: f64,
    /// Out-of-plane modal force per newton of in-plane force.
    pub crosstalk: f64,
}

/// Modal model of the flexible mover.
///
/// This is also the on-disk plant configuration format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalPlantModel {
    pub rigid_modes: Vec<RigidMode>,
    /// Flexible mode shapes, one per entry of `frequencies_hz`.
    pub modes: Vec<ModeShape>,
    pub frequencies_hz: Vec<f64>,
    pub damping: Vec<f64>,
    /// Actuator locations in the mover frame.
    pub actuator_xy: Vec<[f64; 2]>,
    /// Sensor locations in the mover frame.
    pub sensor_xy: Vec<[f64; 2]>,
    pub workspace: Workspace,
    /// Reference box of the sine mode shapes (`x_min`, `L_x = x_max - x_min`, ...).
    pub shape_box: Workspace,
    #[serde(default)]
    pub inplane: Option<InplaneCoupling>,
}

impl ModalPlantModel {
    /// Surrogate benchmark: 3 rigid modes (z, Rx, Ry), 3 flexible plate modes,
    /// 4 corner actuators and 3 sensors over a 0.2 m x 0.2 m stroke. The shape
    /// box is offset so the 226.5 Hz mode's collocation changes across the stroke.
    pub fn benchmark() -> Self {
        Self {
            rigid_modes: vec![
                RigidMode { axis: RigidAxis::Z, mass: 10.0 },
                RigidMode { axis: RigidAxis::Rx, mass: 0.1 },
                RigidMode { axis: RigidAxis::Ry, mass: 0.1 },
            ],
            modes: vec![
                ModeShape { kx: 1, ky: 3, amplitude: 0.164 },
                ModeShape { kx: 3, ky: 2, amplitude: 0.52 },
                ModeShape { kx: 1, ky: 1, amplitude: 0.495 },
            ],
            frequencies_hz: vec![226.5, 480.0, 710.0],
            damping: vec![0.02, 0.02, 0.02],
            actuator_xy: vec![[-0.08, -0.08], [0.08, -0.08], [0.08, 0.08], [-0.08, 0.08]],
            sensor_xy: vec![[-0.15, -0.12], [0.15, -0.12], [0.0, 0.24]],
            workspace: Workspace::new(0.0, 0.2, 0.0, 0.2),
            shape_box: Workspace::new(-0.423, 0.936, -0.413, 0.481),
            inplane: Some(InplaneCoupling { height_m: 0.005, crosstalk: 0.05 }),
        }
    }

    /// Single rigid translation with unit allocation and sensing.
    pub fn rigid_mass(mass: f64) -> Self {
        Self {
            rigid_modes: vec![RigidMode { axis: RigidAxis::Z, mass }],
            modes: vec![],
            frequencies_hz: vec![],
            damping: vec![],
            actuator_xy: vec![[0.0, 0.0]],
            sensor_xy: vec![[0.0, 0.0]],
            workspace: Workspace::new(0.0, 0.2, 0.0, 0.2),
            shape_box: Workspace::new(0.0, 0.2, 0.0, 0.2),
            inplane: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn n_rigid(&self) -> usize {
        self.rigid_modes.len()
    }

    pub fn n_flex(&self) -> usize {
        self.frequencies_hz.len()
    }

    /// Number of modal coordinates `n_q`.
    pub fn n_modes(&self) -> usize {
        self.n_rigid() + self.n_flex()
    }

    pub fn n_actuators(&self) -> usize {
        self.actuator_xy.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_xy.len()
    }

    /// Controlled axes after rigid-body decoupling.
    pub fn n_axes(&self) -> usize {
        self.n_rigid()
    }

    pub fn validate(&self) -> Result<()> {
        let nf = self.n_flex();
        if self.rigid_modes.is_empty() {
            return Err(Error::Model("at least one rigid-body mode is required".into()));
        }
        if self.modes.len() != nf || self.damping.len() != nf {
            return Err(Error::Model(format!(
                "{} flexible frequencies but {} shapes and {} damping ratios",
                nf,
                self.modes.len(),
                self.damping.len()
            )));
        }
        if self.rigid_modes.iter().any(|r| !(r.mass > 0.0)) {
            return Err(Error::Model("rigid modal masses must be positive".into()));
        }
        if self.frequencies_hz.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Model("flexible mode frequencies must be positive".into()));
        }
        if self.damping.iter().any(|z| !(*z >= 0.0)) {
            return Err(Error::Model("damping ratios must be non-negative".into()));
        }
        if self.n_sensors() < self.n_rigid() || self.n_actuators() < self.n_rigid() {
            return Err(Error::Model(format!(
                "{} rigid modes need at least as many actuators ({}) and sensors ({})",
                self.n_rigid(),
                self.n_actuators(),
                self.n_sensors()
            )));
        }
        if self.workspace.width() <= 0.0 || self.workspace.height() <= 0.0 {
            return Err(Error::Model("workspace box is empty".into()));
        }
        if self.shape_box.width() <= 0.0 || self.shape_box.height() <= 0.0 {
            return Err(Error::Model("mode shape box is empty".into()));
        }
        let mut axes: Vec<_> = self.rigid_modes.iter().map(|r| r.axis as u8).collect();
        axes.sort_unstable();
        axes.dedup();
        if axes.len() != self.n_rigid() {
            return Err(Error::Model("duplicate rigid-body axis".into()));
        }
        self.check_rigid_rank()
    }

    /// Rigid-body allocation must be decouplable: `Phi_a,rb` full row rank and
    /// `Phi_s,rb` full column rank. The rigid rows are p-invariant, so one
    /// evaluation covers the whole workspace.
    fn check_rigid_rank(&self) -> Result<()> {
        let (pa, ps) = self.rigid_maps();
        let tol = 1e-9;
        if pa.clone().svd(false, false).rank(tol) < self.n_rigid() {
            return Err(Error::Model("rigid actuation map is rank deficient".into()));
        }
        if ps.clone().svd(false, false).rank(tol) < self.n_rigid() {
            return Err(Error::Model("rigid sensing map is rank deficient".into()));
        }
        Ok(())
    }

    /// Rigid-body blocks `(Phi_a,rb: n_rb x n_act, Phi_s,rb: n_sens x n_rb)`.
    pub fn rigid_maps(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let nr = self.n_rigid();
        let pa = DMatrix::from_fn(nr, self.n_actuators(), |r, a| {
            let [x, y] = self.actuator_xy[a];
            self.rigid_modes[r].axis.lever(x, y)
        });
        let ps = DMatrix::from_fn(self.n_sensors(), nr, |s, r| {
            let [x, y] = self.sensor_xy[s];
            self.rigid_modes[r].axis.lever(x, y)
        });
        (pa, ps)
    }

    /// Flexible mode shape `k` at an absolute location.
    pub fn shape(&self, k: usize, x: f64, y: f64) -> f64 {
        let m = &self.modes[k];
        let b = &self.shape_box;
        m.amplitude
            * (m.kx as f64 * PI * (x - b.x_min) / b.width()).sin()
            * (m.ky as f64 * PI * (y - b.y_min) / b.height()).sin()
    }

    /// Actuation and sensing maps `(Phi_a: n_q x n_act, Phi_s: n_sens x n_q)` at `p`.
    pub fn mode_shape_eval(&self, p: SchedulingPoint) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.workspace.check(p)?;
        let nr = self.n_rigid();
        let nq = self.n_modes();
        let (pa_rb, ps_rb) = self.rigid_maps();
        let mut pa = DMatrix::zeros(nq, self.n_actuators());
        let mut ps = DMatrix::zeros(self.n_sensors(), nq);
        pa.view_mut((0, 0), (nr, self.n_actuators())).copy_from(&pa_rb);
        ps.view_mut((0, 0), (self.n_sensors(), nr)).copy_from(&ps_rb);
        for k in 0..self.n_flex() {
            for (a, [x, y]) in self.actuator_xy.iter().enumerate() {
                pa[(nr + k, a)] = self.shape(k, x + p.x, y + p.y);
            }
            for (s, [x, y]) in self.sensor_xy.iter().enumerate() {
                ps[(s, nr + k)] = self.shape(k, x + p.x, y + p.y);
            }
        }
        Ok((pa, ps))
    }

    /// Modal force map of the in-plane drive forces `[F_x, F_y]` (`n_q x 2`).
    pub fn inplane_map(&self, p: SchedulingPoint) -> Result<DMatrix<f64>> {
        self.workspace.check(p)?;
        let nr = self.n_rigid();
        let mut m = DMatrix::zeros(self.n_modes(), 2);
        let Some(c) = self.inplane else {
            return Ok(m);
        };
        for (r, mode) in self.rigid_modes.iter().enumerate() {
            match mode.axis {
                RigidAxis::Z => {}
                RigidAxis::Rx => m[(r, 1)] = -c.height_m,
                RigidAxis::Ry => m[(r, 0)] = c.height_m,
            }
        }
        let na = self.n_actuators() as f64;
        for k in 0..self.n_flex() {
            let mean: f64 = self
                .actuator_xy
                .iter()
                .map(|[x, y]| self.shape(k, x + p.x, y + p.y))
                .sum::<f64>()
                / na;
            m[(nr + k, 0)] = c.crosstalk * mean;
            m[(nr + k, 1)] = c.crosstalk * mean;
        }
        Ok(m)
    }

    /// Diagonal modal mass, damping and stiffness.
    pub fn modal_matrices(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut m = Vec::with_capacity(self.n_modes());
        let mut d = Vec::with_capacity(self.n_modes());
        let mut k = Vec::with_capacity(self.n_modes());
        for r in &self.rigid_modes {
            m.push(r.mass);
            d.push(0.0);
            k.push(0.0);
        }
        for (f, z) in self.frequencies_hz.iter().zip(&self.damping) {
            let w = 2.0 * PI * f;
            m.push(1.0);
            d.push(2.0 * z * w);
            k.push(w * w);
        }
        (m, d, k)
    }

    /// Frozen realization at `p`: inputs are actuator forces, outputs sensor readings.
    pub fn frozen_realization(&self, p: SchedulingPoint) -> Result<FrozenStateSpace> {
        let (pa, ps) = self.mode_shape_eval(p)?;
        let (a, b_modal, c) = self.realization_parts(&ps)?;
        let b = &b_modal * pa;
        let d = DMatrix::zeros(self.n_sensors(), self.n_actuators());
        FrozenStateSpace::new(a, b, c, d)
    }

    /// `A`, the velocity-row injection `[0; M^-1]` (`2n_q x n_q`) and `C = [Phi_s, 0]`.
    pub(crate) fn realization_parts(
        &self,
        ps: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let nq = self.n_modes();
        let (m, d, k) = self.modal_matrices();
        if m.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Model("singular modal mass matrix".into()));
        }
        let mut a = DMatrix::zeros(2 * nq, 2 * nq);
        let mut inj = DMatrix::zeros(2 * nq, nq);
        for i in 0..nq {
            a[(i, nq + i)] = 1.0;
            a[(nq + i, i)] = -k[i] / m[i];
            a[(nq + i, nq + i)] = -d[i] / m[i];
            inj[(nq + i, i)] = 1.0 / m[i];
        }
        let mut c = DMatrix::zeros(self.n_sensors(), 2 * nq);
        c.view_mut((0, 0), (self.n_sensors(), nq)).copy_from(ps);
        Ok((a, inj, c))
    }

    /// Rigid modal mass matrix `M_rb` (diagonal entries).
    pub fn rigid_masses(&self) -> Vec<f64> {
        self.rigid_modes.iter().map(|r| r.mass).collect()
    }
}
