use std::f64::consts::PI;

use super::potential::Potential;
use super::quadrature::integrate;
use super::DynamicsError;

/// Energies closer than this to the separatrix are refused.
pub const SEPARATRIX_MARGIN: f64 = 1e-6;

const REL_TOL: f64 = 1e-14;

/// Action-angle chart of `½p² + V(x)` inside the well. `I` is the full
/// enclosed area, so the angle has period 1 and the frequency is `1/T(h)`.
/// The angle is 0 at the right turning point and increases clockwise, so
/// `p < 0` for `φ ∈ (0, ½)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionAngleChart {
    potential: Potential,
    h_max: f64,
    grid_h: Vec<f64>,
    grid_i: Vec<f64>,
    grid_t: Vec<f64>,
}

/// Level-set geometry: turning points `x− < 0 < x+`.
#[derive(Debug, Clone, Copy)]
struct Level {
    lo: f64,
    hi: f64,
}

impl Level {
    fn centre(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// `x(u) = c − w cos u`.
    fn x_of(&self, u: f64) -> f64 {
        if u <= 0.5 * PI {
            self.lo + 2.0 * self.half_width() * (0.5 * u).sin().powi(2)
        } else {
            self.hi - 2.0 * self.half_width() * (0.5 * u).cos().powi(2)
        }
    }
}

impl ActionAngleChart {
    /// Chart on `[0, h_max]`; `h_max` defaults to the separatrix energy less
    /// the margin and must be given for unbounded wells.
    pub fn new(potential: Potential, h_max: Option<f64>) -> Result<Self, DynamicsError> {
        let h_sep = potential.separatrix_energy();
        let limit = h_sep - SEPARATRIX_MARGIN;
        let h_max = match h_max {
            Some(h) if h > limit => return Err(DynamicsError::NearSeparatrix { h, h_sep }),
            Some(h) if h > 0.0 => h,
            Some(h) => return Err(DynamicsError::LevelSetOpen { h }),
            None if limit.is_finite() => limit,
            None => 10.0,
        };
        let mut chart = Self { potential, h_max, grid_h: Vec::new(), grid_i: Vec::new(), grid_t: Vec::new() };
        // geometric near 0, where turning points collapse, linear above
        let mut hs: Vec<f64> = (0..24).map(|k| h_max * 0.1 * 10f64.powf(-(23 - k) as f64 / 3.0)).collect();
        hs.extend((1..=40).map(|k| h_max * (0.1 + 0.9 * k as f64 / 40.0)));
        hs.insert(0, 0.0);
        for &h in &hs {
            chart.grid_i.push(chart.action_of_energy(h)?);
            chart.grid_t.push(chart.period(h)?);
        }
        chart.grid_h = hs;
        Ok(chart)
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    fn level(&self, h: f64) -> Result<Level, DynamicsError> {
        if !(h > 0.0) {
            return Err(DynamicsError::LevelSetOpen { h });
        }
        let h_sep = self.potential.separatrix_energy();
        if h > h_sep {
            return Err(DynamicsError::LevelSetOpen { h });
        }
        if h > h_sep - SEPARATRIX_MARGIN {
            return Err(DynamicsError::NearSeparatrix { h, h_sep });
        }
        let (bl, br) = self.potential.barriers();
        let hi = self.turning_point(h, br, 1.0)?;
        let lo = self.turning_point(h, bl, -1.0)?;
        Ok(Level { lo, hi })
    }

    fn turning_point(&self, h: f64, barrier: f64, sign: f64) -> Result<f64, DynamicsError> {
        let v = |x: f64| self.potential.v(x) - h;
        let mut far = if barrier.is_finite() { barrier } else { sign };
        while v(far) < 0.0 {
            if barrier.is_finite() || far.abs() > 1e8 {
                return Err(DynamicsError::LevelSetOpen { h });
            }
            far *= 2.0;
        }
        let (mut a, mut b) = (0.0f64, far);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            if v(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let mut x = 0.5 * (a + b);
        for _ in 0..3 {
            let d = self.potential.dv(x);
            if d == 0.0 {
                break;
            }
            let nx = x - v(x) / d;
            if (nx - 0.5 * (a + b)).abs() > (b - a).abs() + 1e-300 {
                break;
            }
            x = nx;
        }
        Ok(x)
    }

    /// `h − V(x(u))`, referenced to the nearer turning point.
    fn gap(&self, lv: &Level, u: f64) -> f64 {
        let w = lv.half_width();
        let g = if u <= 0.5 * PI {
            self.potential.v_diff(lv.lo, 2.0 * w * (0.5 * u).sin().powi(2))
        } else {
            self.potential.v_diff(lv.hi, -2.0 * w * (0.5 * u).cos().powi(2))
        };
        g.max(0.0)
    }

    fn time_density(&self, lv: &Level, u: f64) -> f64 {
        let g = self.gap(lv, u);
        if g == 0.0 {
            // u at an endpoint: limit w sin u / sqrt(2 V'(x±) w (1 ∓ cos u))
            let x = if u < 0.5 * PI { lv.lo } else { lv.hi };
            return (lv.half_width() / self.potential.dv(x).abs()).sqrt();
        }
        lv.half_width() * u.sin() / (2.0 * g).sqrt()
    }

    /// `I(h) = ∮ p dx`.
    pub fn action_of_energy(&self, h: f64) -> Result<f64, DynamicsError> {
        if h == 0.0 {
            return Ok(0.0);
        }
        let lv = self.level(h)?;
        let w = lv.half_width();
        Ok(2.0 * integrate(|u| (2.0 * self.gap(&lv, u)).sqrt() * w * u.sin(), 0.0, PI, 0.0, REL_TOL))
    }

    /// `T(h) = ∮ dx/p`, equal to `dI/dh`.
    pub fn period(&self, h: f64) -> Result<f64, DynamicsError> {
        if h == 0.0 {
            return Ok(2.0 * PI / self.potential.d2v(0.0).sqrt());
        }
        let lv = self.level(h)?;
        Ok(2.0 * integrate(|u| self.time_density(&lv, u), 0.0, PI, 0.0, REL_TOL))
    }

    pub fn frequency_of_energy(&self, h: f64) -> Result<f64, DynamicsError> {
        Ok(1.0 / self.period(h)?)
    }

    /// Time from the right turning point to `x(u)` along `p < 0`.
    fn partial_time(&self, lv: &Level, u: f64) -> f64 {
        integrate(|s| self.time_density(lv, s), u, PI, 0.0, REL_TOL)
    }

    pub fn to_action_angle(&self, x: f64, p: f64) -> Result<(f64, f64), DynamicsError> {
        let h = 0.5 * p * p + self.potential.v(x);
        if !(h > 0.0) {
            return if h == 0.0 { Ok((0.0, 0.0)) } else { Err(DynamicsError::OutsideChart) };
        }
        if h > self.h_max {
            return Err(DynamicsError::OutsideChart);
        }
        let lv = self.level(h).map_err(|_| DynamicsError::OutsideChart)?;
        if x < lv.lo || x > lv.hi {
            return Err(DynamicsError::OutsideChart);
        }
        let i = self.action_of_energy(h)?;
        let period = self.period(h)?;
        let c = ((lv.centre() - x) / lv.half_width()).clamp(-1.0, 1.0);
        let u = c.acos();
        let t = self.partial_time(&lv, u);
        let phi = if p <= 0.0 { t / period } else { 1.0 - t / period };
        Ok((phi.rem_euclid(1.0), i))
    }

    /// Energy with `I(h) = action`, Newton from the tabulated guess.
    pub fn energy_of_action(&self, action: f64) -> Result<f64, DynamicsError> {
        if action == 0.0 {
            return Ok(0.0);
        }
        let i_max = *self.grid_i.last().unwrap();
        if !(action > 0.0 && action <= i_max) {
            return Err(DynamicsError::OutsideChart);
        }
        let mut h = hermite(&self.grid_i, &self.grid_h, &self.grid_t.iter().map(|t| 1.0 / t).collect::<Vec<_>>(), action)
            .clamp(1e-300, self.h_max);
        for _ in 0..60 {
            let f = self.action_of_energy(h)? - action;
            let step = f / self.period(h)?;
            let nh = (h - step).clamp(0.5 * h, (2.0 * h).min(self.h_max));
            let done = (nh - h).abs() <= 4.0 * f64::EPSILON * h;
            h = nh;
            if done {
                return Ok(h);
            }
        }
        Ok(h)
    }

    /// Interpolated `I(h)` from the table (monotone cubic Hermite with the
    /// exact slopes `T(h)`).
    pub fn action_interp(&self, h: f64) -> f64 {
        hermite(&self.grid_h, &self.grid_i, &self.grid_t, h)
    }

    pub fn from_action_angle(&self, phi: f64, action: f64) -> Result<(f64, f64), DynamicsError> {
        let h = self.energy_of_action(action)?;
        if h == 0.0 {
            return Ok((0.0, 0.0));
        }
        let lv = self.level(h)?;
        let period = self.period(h)?;
        let ph = phi.rem_euclid(1.0);
        let (target, sign) = if ph <= 0.5 { (ph * period, -1.0) } else { ((1.0 - ph) * period, 1.0) };
        // partial_time decreases from T/2 at u = 0 to 0 at u = π
        let (mut a, mut b) = (0.0f64, PI);
        let mut u = PI * (1.0 - target / (0.5 * period));
        for _ in 0..100 {
            let f = self.partial_time(&lv, u) - target;
            if f > 0.0 {
                a = u;
            } else {
                b = u;
            }
            let d = -self.time_density(&lv, u);
            let mut nu = u - f / d;
            if !(nu > a && nu < b) || !nu.is_finite() {
                nu = 0.5 * (a + b);
            }
            if (nu - u).abs() <= 1e-15 || b - a <= 1e-15 {
                u = nu;
                break;
            }
            u = nu;
        }
        let x = lv.x_of(u);
        let p = sign * (2.0 * self.gap(&lv, u)).sqrt();
        Ok((x, p))
    }
}

/// Cubic Hermite interpolation with slopes `dy`; clamps outside the table.
fn hermite(xs: &[f64], ys: &[f64], dy: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let h = xs[i + 1] - xs[i];
    let t = (x - xs[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * ys[i]
        + (t3 - 2.0 * t2 + t) * h * dy[i]
        + (-2.0 * t3 + 3.0 * t2) * ys[i + 1]
        + (t3 - t2) * h * dy[i + 1]
}

/// `(p, q) = (R cos √ω x, R sin √ω x)` with `R = √(2y/√ω)`.
pub fn fast_action_angle(omega: f64, x: f64, y: f64) -> Result<(f64, f64), DynamicsError> {
    if !(y > 0.0) {
        return Err(DynamicsError::NonPositiveAction(y));
    }
    let sw = omega.sqrt();
    let r = (2.0 * y / sw).sqrt();
    let a = sw * x;
    Ok((r * a.cos(), r * a.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_area_and_frequency() {
        let ch = ActionAngleChart::new(Potential::Harmonic, Some(4.0)).unwrap();
        for h in [1e-6, 0.01, 0.5, 3.0] {
            let i = ch.action_of_energy(h).unwrap();
            assert!(((i - 2.0 * PI * h) / (2.0 * PI * h)).abs() < 1e-10);
            assert!((ch.frequency_of_energy(h).unwrap() - 0.5 / PI).abs() < 1e-10);
        }
        assert_eq!(ch.action_of_energy(0.0).unwrap(), 0.0);
        let (phi, i) = ch.to_action_angle((2.0f64 * 0.3).sqrt(), 0.0).unwrap();
        assert!(phi.abs() < 1e-12 || (1.0 - phi).abs() < 1e-12);
        assert!((i - 2.0 * PI * 0.3).abs() < 1e-10);
    }

    #[test]
    fn pendulum_small_energy_limit_and_period() {
        let ch = ActionAngleChart::new(Potential::Pendulum, None).unwrap();
        let h = 1e-4;
        assert!((ch.action_of_energy(h).unwrap() / (2.0 * PI * h) - 1.0).abs() <= 1e-4);
        let h = 1e-3;
        let t = ch.period(h).unwrap();
        assert!((t - 2.0 * PI * (1.0 + h / 8.0)).abs() <= 1e-6);
        assert!(matches!(ch.action_of_energy(2.0), Err(DynamicsError::NearSeparatrix { .. })));
        assert!(matches!(ch.action_of_energy(2.5), Err(DynamicsError::LevelSetOpen { .. })));
    }

    #[test]
    fn frequency_matches_finite_difference() {
        let ch = ActionAngleChart::new(Potential::Pendulum, None).unwrap();
        for h in [0.1, 0.8, 1.5] {
            let dh = 1e-5;
            let di = ch.action_of_energy(h + dh).unwrap() - ch.action_of_energy(h - dh).unwrap();
            let fd = 2.0 * dh / di;
            assert!((fd - ch.frequency_of_energy(h).unwrap()).abs() < 1e-7);
        }
    }

    #[test]
    fn round_trip_quartic() {
        let ch = ActionAngleChart::new(Potential::Quartic { c: 0.1 }, Some(2.0)).unwrap();
        for (x, p) in [(0.5, 0.3), (-0.7, -0.2), (0.1, -1.0), (1.0, 0.0)] {
            let (phi, i) = ch.to_action_angle(x, p).unwrap();
            let (x2, p2) = ch.from_action_angle(phi, i).unwrap();
            assert!((x - x2).abs() < 1e-9 && (p - p2).abs() < 1e-9, "{x} {p} -> {x2} {p2}");
        }
    }

    #[test]
    fn fast_chart_periodic_and_polar() {
        let (p, q) = fast_action_angle(1.0, 0.4, 0.5).unwrap();
        assert!((p - 0.4f64.cos()).abs() < 1e-15 && (q - 0.4f64.sin()).abs() < 1e-15);
        let w = 7.0f64;
        let a = fast_action_angle(w, 0.3, 0.2).unwrap();
        let b = fast_action_angle(w, 0.3 + 2.0 * PI / w.sqrt(), 0.2).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        assert!(fast_action_angle(w, 0.3, 0.0).is_err());
    }
}
