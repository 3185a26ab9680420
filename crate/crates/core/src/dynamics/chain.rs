use std::io::Write;

use serde::{Deserialize, Serialize};

use super::potential::Potential;
use super::DynamicsError;

/// `ẍ_i + V'(x_i) + ε·coupling = ε sin(ω_i t/ε^α) + ε sin(ε^β Ω_i t)` with
/// free-end nearest-neighbour coupling from `ε Σ ½(x_{i+1} − x_i)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorChain {
    pub n: usize,
    pub potential: Potential,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub omega: Vec<f64>,
    #[serde(rename = "Omega")]
    pub big_omega: Vec<f64>,
}

/// Positions, momenta, forcing phases `θ_i = ω_i t`, `ψ_i = Ω_i t` and their
/// conjugate bookkeeping actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
    pub y_conj: Vec<f64>,
    pub t: f64,
}

impl ExtendedState {
    pub fn at_rest(x: Vec<f64>, p: Vec<f64>) -> Self {
        let n = x.len();
        Self { x, p, theta: vec![0.0; n], psi: vec![0.0; n], eta: vec![0.0; n], y_conj: vec![0.0; n], t: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Kick-drift-kick, second order.
    Strang,
    /// Triple-jump composition of Strang steps, fourth order.
    Yoshida4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// Record every `stride`-th step (the final state is always recorded).
    pub stride: usize,
    pub scheme: Scheme,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { stride: 1, scheme: Scheme::Strang }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<ExtendedState>,
}

impl OscillatorChain {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.n == 0 {
            return Err(DynamicsError::InvalidChain("n must be at least 1".into()));
        }
        if self.omega.len() != self.n || self.big_omega.len() != self.n {
            return Err(DynamicsError::InvalidChain("omega and Omega need n entries".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(DynamicsError::InvalidChain("eps must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn lambda1(&self) -> f64 {
        self.eps.powf(self.alpha)
    }

    pub fn lambda2(&self) -> f64 {
        self.eps.powf(self.beta)
    }

    /// `(λ1 / max ω)/20`; unbounded without forcing.
    pub fn max_step(&self) -> f64 {
        let wmax = self.omega.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        if self.eps == 0.0 || wmax == 0.0 {
            f64::INFINITY
        } else {
            self.lambda1() / wmax / 20.0
        }
    }

    fn forcing_periods(&self) -> (f64, f64) {
        use std::f64::consts::TAU;
        (TAU * self.lambda1(), TAU / self.lambda2())
    }

    /// Extended Hamiltonian, conserved by the exact flow.
    pub fn energy(&self, s: &ExtendedState) -> f64 {
        let mut h = 0.0;
        for i in 0..self.n {
            h += self.omega[i] * s.eta[i] + self.big_omega[i] * s.y_conj[i];
            h += 0.5 * s.p[i] * s.p[i] + self.potential.v(s.x[i]);
        }
        if self.eps > 0.0 {
            let (l1, l2) = (self.lambda1(), self.lambda2());
            for i in 0..self.n {
                if i + 1 < self.n {
                    h += 0.5 * self.eps * (s.x[i + 1] - s.x[i]).powi(2);
                }
                h -= self.eps * s.x[i] * ((s.theta[i] / l1).sin() + (l2 * s.psi[i]).sin());
            }
        }
        h
    }

    /// Oscillator energy `½p_i² + V(x_i)` for each site.
    pub fn site_energies(&self, s: &ExtendedState) -> Vec<f64> {
        (0..self.n).map(|i| 0.5 * s.p[i] * s.p[i] + self.potential.v(s.x[i])).collect()
    }

    fn kick(&self, s: &mut ExtendedState, h: f64) {
        let n = self.n;
        let forced = self.eps > 0.0;
        let (l1, l2) = if forced { (self.lambda1(), self.lambda2()) } else { (1.0, 1.0) };
        for i in 0..n {
            let mut f = -self.potential.dv(s.x[i]);
            if forced {
                let mut c = 0.0;
                if i > 0 {
                    c += s.x[i] - s.x[i - 1];
                }
                if i + 1 < n {
                    c -= s.x[i + 1] - s.x[i];
                }
                let a = s.theta[i] / l1;
                let b = l2 * s.psi[i];
                f += self.eps * (a.sin() + b.sin() - c);
                s.eta[i] += h * self.eps * s.x[i] * a.cos() / l1;
                s.y_conj[i] += h * self.eps * s.x[i] * l2 * b.cos();
            }
            s.p[i] += h * f;
        }
    }

    fn drift(&self, s: &mut ExtendedState, h: f64) {
        for i in 0..self.n {
            s.x[i] += h * s.p[i];
            s.theta[i] += h * self.omega[i];
            s.psi[i] += h * self.big_omega[i];
        }
        s.t += h;
    }

    fn strang(&self, s: &mut ExtendedState, h: f64) {
        self.kick(s, 0.5 * h);
        self.drift(s, h);
        self.kick(s, 0.5 * h);
    }

    fn reduce_phases(&self, s: &mut ExtendedState) {
        if self.eps == 0.0 {
            return;
        }
        let (pt, pp) = self.forcing_periods();
        for v in s.theta.iter_mut() {
            *v = v.rem_euclid(pt);
        }
        if pp.is_finite() {
            for v in s.psi.iter_mut() {
                *v = v.rem_euclid(pp);
            }
        }
    }
}

/// Integrates `round(T/|dt|)` steps of signed size `dt`.
pub fn integrate_symplectic(
    chain: &OscillatorChain,
    init: &ExtendedState,
    dt: f64,
    t_end: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory, DynamicsError> {
    chain.validate()?;
    if init.x.len() != chain.n || init.p.len() != chain.n {
        return Err(DynamicsError::InvalidChain("state length differs from n".into()));
    }
    if dt == 0.0 || !dt.is_finite() {
        return Err(DynamicsError::InvalidChain("dt must be finite and nonzero".into()));
    }
    let bound = chain.max_step();
    if chain.eps > 0.0 && dt.abs() > bound {
        return Err(DynamicsError::StepTooLarge { dt: dt.abs(), bound });
    }
    // a shortened last step lands exactly on t_end
    let ratio = t_end.abs() / dt.abs();
    let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) { ratio.round() } else { ratio.ceil() } as usize;
    let span = t_end.abs().copysign(dt);
    let last = span - steps.saturating_sub(1) as f64 * dt;
    let stride = opts.stride.max(1);
    let mut s = init.clone();
    chain.reduce_phases(&mut s);
    let mut states = Vec::with_capacity(steps / stride + 2);
    states.push(s.clone());
    let w1 = 1.0 / (2.0 - 2f64.powf(1.0 / 3.0));
    let w0 = 1.0 - 2.0 * w1;
    let t0 = init.t;
    for k in 1..=steps {
        let h = if k == steps { last } else { dt };
        match opts.scheme {
            Scheme::Strang => chain.strang(&mut s, h),
            Scheme::Yoshida4 => {
                chain.strang(&mut s, w1 * h);
                chain.strang(&mut s, w0 * h);
                chain.strang(&mut s, w1 * h);
            }
        }
        // keep t exact instead of accumulating roundoff
        s.t = if k == steps { t0 + span } else { t0 + k as f64 * dt };
        if k % 1024 == 0 {
            chain.reduce_phases(&mut s);
        }
        if k % stride == 0 || k == steps {
            let mut rec = s.clone();
            chain.reduce_phases(&mut rec);
            states.push(rec);
        }
    }
    Ok(Trajectory { states })
}

/// `q̈ + sin q = ε sin(t/ε)`: a one-site chain with pendulum potential,
/// `α = 1`, `ω = 1` and no slow forcing.
pub fn pendulum_fast_forced(
    q0: f64,
    p0: f64,
    eps: f64,
    dt: f64,
    t_end: f64,
    opts: IntegrateOptions,
) -> Result<(OscillatorChain, Trajectory), DynamicsError> {
    let chain = OscillatorChain {
        n: 1,
        potential: Potential::Pendulum,
        eps,
        alpha: 1.0,
        beta: 0.0,
        omega: vec![1.0],
        big_omega: vec![0.0],
    };
    let traj = integrate_symplectic(&chain, &ExtendedState::at_rest(vec![q0], vec![p0]), dt, t_end, opts)?;
    Ok((chain, traj))
}

/// Mean of the last 10% of energies minus the mean of the first 10%.
pub fn energy_drift(chain: &OscillatorChain, traj: &Trajectory) -> f64 {
    let e: Vec<f64> = traj.states.iter().map(|s| chain.energy(s)).collect();
    let w = (e.len() / 10).max(1);
    let head: f64 = e[..w].iter().sum::<f64>() / w as f64;
    let tail: f64 = e[e.len() - w..].iter().sum::<f64>() / w as f64;
    tail - head
}

impl Trajectory {
    pub fn final_state(&self) -> &ExtendedState {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// CSV with columns `t, x1..xN, p1..pN, theta1..thetaN, psi1..psiN`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().map_or(0, |s| s.x.len());
        let mut header = vec!["t".to_string()];
        for name in ["x", "p", "theta", "psi"] {
            header.extend((1..=n).map(|i| format!("{name}{i}")));
        }
        w.write_record(&header)?;
        for s in &self.states {
            let mut row = vec![s.t.to_string()];
            for v in [&s.x, &s.p, &s.theta, &s.psi] {
                row.extend(v.iter().map(|x| x.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(n: usize, eps: f64) -> OscillatorChain {
        OscillatorChain {
            n,
            potential: Potential::Harmonic,
            eps,
            alpha: 0.5,
            beta: 0.1,
            omega: (0..n).map(|i| 1.0 + 0.3 * i as f64).collect(),
            big_omega: (0..n).map(|i| 0.7 + 0.2 * i as f64).collect(),
        }
    }

    #[test]
    fn unforced_harmonic_tracks_cosine() {
        let ch = harmonic(1, 0.0);
        let dt = 1e-3;
        let tr = integrate_symplectic(&ch, &ExtendedState::at_rest(vec![1.0], vec![0.0]), dt, 10.0, IntegrateOptions::default())
            .unwrap();
        let dev = tr.states.iter().map(|s| (s.x[0] - s.t.cos()).abs()).fold(0.0, f64::max);
        assert!(dev <= dt * dt * 10.0, "{dev}");
    }

    #[test]
    fn step_bound_enforced() {
        let ch = harmonic(2, 1e-3);
        let err = integrate_symplectic(&ch, &ExtendedState::at_rest(vec![0.1; 2], vec![0.0; 2]), 0.01, 1.0, IntegrateOptions::default());
        assert!(matches!(err, Err(DynamicsError::StepTooLarge { .. })));
    }

    #[test]
    fn forced_energy_is_conserved_and_reversible() {
        let ch = harmonic(2, 1e-3);
        let dt = ch.max_step() / 4.0;
        let init = ExtendedState::at_rest(vec![0.3, -0.2], vec![0.0, 0.1]);
        let fw = integrate_symplectic(&ch, &init, dt, 2.0, IntegrateOptions { stride: 200, scheme: Scheme::Strang }).unwrap();
        let e0 = ch.energy(&init);
        let emax = fw.states.iter().map(|s| (ch.energy(s) - e0).abs()).fold(0.0, f64::max);
        assert!(emax < 1e-8, "{emax}");
        let end = fw.final_state().clone();
        let bw = integrate_symplectic(&ch, &end, -dt, 2.0, IntegrateOptions::default()).unwrap();
        let back = bw.final_state();
        for i in 0..2 {
            assert!((back.x[i] - init.x[i]).abs() < 1e-10);
            assert!((back.p[i] - init.p[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn last_step_lands_on_t_end() {
        let ch = harmonic(1, 0.0);
        let init = ExtendedState::at_rest(vec![1.0], vec![0.0]);
        let tr = integrate_symplectic(&ch, &init, 0.03, 1.0, IntegrateOptions { stride: 1000, scheme: Scheme::Yoshida4 }).unwrap();
        assert_eq!(tr.final_state().t, 1.0);
        assert!((tr.final_state().x[0] - 1f64.cos()).abs() < 1e-6);
        let bw = integrate_symplectic(&ch, &init, -0.03, 1.0, IntegrateOptions::default()).unwrap();
        assert_eq!(bw.final_state().t, -1.0);
    }

    #[test]
    fn yoshida_is_fourth_order() {
        let ch = harmonic(1, 0.0);
        let init = ExtendedState::at_rest(vec![1.0], vec![0.0]);
        let err = |dt: f64| {
            let tr = integrate_symplectic(&ch, &init, dt, 5.0, IntegrateOptions { stride: 1000000, scheme: Scheme::Yoshida4 }).unwrap();
            (tr.final_state().x[0] - 5f64.cos()).abs()
        };
        let r = err(0.02) / err(0.01);
        assert!((12.0..20.0).contains(&r), "{r}");
    }
}
