use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Natural cubic spline through `(x_i, v_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableSpec", into = "TableSpec")]
pub struct Spline {
    x: Vec<f64>,
    v: Vec<f64>,
    m2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableSpec {
    x: Vec<f64>,
    v: Vec<f64>,
}

impl TryFrom<TableSpec> for Spline {
    type Error = DynamicsError;
    fn try_from(t: TableSpec) -> Result<Self, Self::Error> {
        Spline::new(t.x, t.v)
    }
}

impl From<Spline> for TableSpec {
    fn from(s: Spline) -> Self {
        TableSpec { x: s.x, v: s.v }
    }
}

impl Spline {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self, DynamicsError> {
        let n = x.len();
        if n < 4 || v.len() != n {
            return Err(DynamicsError::InvalidTable("need at least 4 points and matching lengths".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DynamicsError::InvalidTable("abscissae must increase".into()));
        }
        if !(x[0] < 0.0 && x[n - 1] > 0.0) {
            return Err(DynamicsError::InvalidTable("table must bracket x = 0".into()));
        }
        // tridiagonal solve for second derivatives, natural ends
        let mut m2 = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut r = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let a = h0 / 6.0;
            let b = (h0 + h1) / 3.0;
            let cc = h1 / 6.0;
            let rhs = (v[i + 1] - v[i]) / h1 - (v[i] - v[i - 1]) / h0;
            let denom = b - a * c[i - 1];
            c[i] = cc / denom;
            r[i] = (rhs - a * r[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m2[i] = r[i] - c[i] * m2[i + 1];
        }
        Ok(Self { x, v, m2 })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value, first and second derivative.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let i = self.segment(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        let (m0, m1) = (self.m2[i], self.m2[i + 1]);
        let v = a * self.v[i] + b * self.v[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let dv = (self.v[i + 1] - self.v[i]) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (v, dv, d2)
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.v)
    }
}

/// One-degree-of-freedom potential with a well at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Potential {
    /// `½x²`
    Harmonic,
    /// `1 − cos x`
    Pendulum,
    /// `½x² + c x⁴`
    Quartic { c: f64 },
    Tabulated(Spline),
}

impl Potential {
    pub fn v(&self, x: f64) -> f64 {
        match self {
            Potential::Harmonic => 0.5 * x * x,
            Potential::Pendulum => 2.0 * (0.5 * x).sin().powi(2),
            Potential::Quartic { c } => 0.5 * x * x + c * x.powi(4),
            Potential::Tabulated(s) => s.eval(x).0,
        }
    }

    pub fn dv(&self, x: f64) -> f64 {
        match self {
            Potential::Harmonic => x,
            Potential::Pendulum => x.sin(),
            Potential::Quartic { c } => x + 4.0 * c * x.powi(3),
            Potential::Tabulated(s) => s.eval(x).1,
        }
    }

    pub fn d2v(&self, x: f64) -> f64 {
        match self {
            Potential::Harmonic => 1.0,
            Potential::Pendulum => x.cos(),
            Potential::Quartic { c } => 1.0 + 12.0 * c * x * x,
            Potential::Tabulated(s) => s.eval(x).2,
        }
    }

    /// `V(a) − V(a + δ)` without cancellation for small `δ`.
    pub fn v_diff(&self, a: f64, delta: f64) -> f64 {
        let b = a + delta;
        match self {
            Potential::Harmonic => -delta * (a + 0.5 * delta),
            Potential::Pendulum => -2.0 * (a + 0.5 * delta).sin() * (0.5 * delta).sin(),
            Potential::Quartic { c } => -delta * (a + 0.5 * delta) * (1.0 + 2.0 * c * (a * a + b * b)),
            Potential::Tabulated(_) => self.v(a) - self.v(b),
        }
    }

    /// Barrier positions `(left, right)` bounding the well; infinite when the
    /// well is unbounded on that side.
    pub fn barriers(&self) -> (f64, f64) {
        use std::f64::consts::PI;
        match self {
            Potential::Harmonic => (f64::NEG_INFINITY, f64::INFINITY),
            Potential::Pendulum => (-PI, PI),
            Potential::Quartic { c } if *c < 0.0 => {
                let x = (-1.0 / (4.0 * c)).sqrt();
                (-x, x)
            }
            Potential::Quartic { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Potential::Tabulated(s) => {
                let (x, v) = s.knots();
                let zero = x.partition_point(|&t| t < 0.0);
                let mut right = zero.min(x.len() - 1);
                while right + 1 < x.len() && v[right + 1] > v[right] {
                    right += 1;
                }
                let mut left = zero.saturating_sub(1);
                while left > 0 && v[left - 1] > v[left] {
                    left -= 1;
                }
                (x[left], x[right])
            }
        }
    }

    /// Lowest energy at which the level set stops being a closed curve.
    pub fn separatrix_energy(&self) -> f64 {
        let (l, r) = self.barriers();
        let vl = if l.is_finite() { self.v(l) } else { f64::INFINITY };
        let vr = if r.is_finite() { self.v(r) } else { f64::INFINITY };
        vl.min(vr)
    }
}
