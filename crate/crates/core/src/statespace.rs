//! Continuous-time LTI realizations `(A, B, C, D)` and their interconnection.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// LTI realization of a plant or filter at a fixed scheduling point.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenStateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl FrozenStateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n
            || b.nrows() != n
            || c.ncols() != n
            || d.nrows() != c.nrows()
            || d.ncols() != b.ncols()
        {
            return Err(Error::Model(format!(
                "inconsistent realization dimensions: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// Static gain `D = k` with no states.
    pub fn gain(k: f64) -> Self {
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 1),
            c: DMatrix::zeros(1, 0),
            d: DMatrix::from_element(1, 1, k),
        }
    }

    pub fn identity_siso() -> Self {
        Self::gain(1.0)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_siso(&self) -> bool {
        self.n_inputs() == 1 && self.n_outputs() == 1
    }

    /// Transfer matrix `C (sI - A)^-1 B + D` at a complex frequency `s`.
    pub fn eval(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.order();
        let d = self.d.map(|v| Complex64::new(v, 0.0));
        if n == 0 {
            return Ok(d);
        }
        let mut m = self.a.map(|v| Complex64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += s;
        }
        let b = self.b.map(|v| Complex64::new(v, 0.0));
        let lu = m.lu();
        let x = lu.solve(&b).ok_or_else(|| Error::Singular {
            freq_hz: s.im / (2.0 * std::f64::consts::PI),
            what: "(sI - A) is singular".into(),
        })?;
        let c = self.c.map(|v| Complex64::new(v, 0.0));
        Ok(c * x + d)
    }

    /// Scalar transfer of a SISO realization.
    pub fn eval_siso(&self, s: Complex64) -> Result<Complex64> {
        debug_assert!(self.is_siso());
        Ok(self.eval(s)?[(0, 0)])
    }

    /// Series connection `u -> self -> next -> y`.
    pub fn series(&self, next: &FrozenStateSpace) -> Result<FrozenStateSpace> {
        if next.n_inputs() != self.n_outputs() {
            return Err(Error::Model(format!(
                "series connection: {} outputs feed {} inputs",
                self.n_outputs(),
                next.n_inputs()
            )));
        }
        let (n1, n2) = (self.order(), next.order());
        let n = n1 + n2;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        let mut b = DMatrix::zeros(n, self.n_inputs());
        b.view_mut((0, 0), (n1, self.n_inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.n_inputs())).copy_from(&(&next.b * &self.d));
        let mut c = DMatrix::zeros(next.n_outputs(), n);
        c.view_mut((0, 0), (next.n_outputs(), n1)).copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.n_outputs(), n2)).copy_from(&next.c);
        let d = &next.d * &self.d;
        FrozenStateSpace::new(a, b, c, d)
    }

    /// Block-diagonal (parallel, independent channels) stacking.
    pub fn block_diag(parts: &[FrozenStateSpace]) -> Result<FrozenStateSpace> {
        let n: usize = parts.iter().map(|p| p.order()).sum();
        let ni: usize = parts.iter().map(|p| p.n_inputs()).sum();
        let no: usize = parts.iter().map(|p| p.n_outputs()).sum();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, ni);
        let mut c = DMatrix::zeros(no, n);
        let mut d = DMatrix::zeros(no, ni);
        let (mut xs, mut is, mut os) = (0, 0, 0);
        for p in parts {
            let (k, m, q) = (p.order(), p.n_inputs(), p.n_outputs());
            a.view_mut((xs, xs), (k, k)).copy_from(&p.a);
            b.view_mut((xs, is), (k, m)).copy_from(&p.b);
            c.view_mut((os, xs), (q, k)).copy_from(&p.c);
            d.view_mut((os, is), (q, m)).copy_from(&p.d);
            xs += k;
            is += m;
            os += q;
        }
        FrozenStateSpace::new(a, b, c, d)
    }

    /// Companion structure check: `A = [[0, I], [*, *]]` with equal halves.
    pub fn has_companion_structure(&self) -> bool {
        let n = self.order();
        if n % 2 != 0 {
            return false;
        }
        let h = n / 2;
        for i in 0..h {
            for j in 0..h {
                if self.a[(i, j)] != 0.0 {
                    return false;
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if self.a[(i, h + j)] != expect {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_json_matrices(&self) -> StateSpaceJson {
        StateSpaceJson {
            a: rows(&self.a),
            b: rows(&self.b),
            c: rows(&self.c),
            d: rows(&self.d),
        }
    }
}

/// Row-major JSON form of a realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSpaceJson {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
