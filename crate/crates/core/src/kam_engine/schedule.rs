use serde::{Deserialize, Serialize};

use crate::hamiltonian::ScaleParams;

/// Starting values of the iteration sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInit {
    pub r0: f64,
    pub s0: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub mu0: f64,
    pub c0: f64,
}

impl ScheduleInit {
    /// `s0 = ε^{2/(3m)}`, `γ0 = ε^{(1/3−σ)/(d+m+5)}`, `μ0 = ε^σ`, `β0 = s0`.
    pub fn from_eps(scales: &ScaleParams, r0: f64) -> Self {
        let (eps, d, m, sigma) = (scales.eps, scales.d as f64, scales.m as f64, scales.sigma);
        let s0 = eps.powf(2.0 / (3.0 * m));
        Self {
            r0,
            s0,
            beta0: s0,
            gamma0: eps.powf((1.0 / 3.0 - sigma) / (d + m + 5.0)),
            mu0: eps.powf(sigma),
            c0: 1.0,
        }
    }
}

/// Per-step sequences for `ν = 0..=nu_max`. `k_fast[ν]` and `k_slow[ν]` are
/// the cutoffs used by step `ν → ν+1`, computed from `μ_ν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub init: ScheduleInit,
    pub m: u32,
    pub sigma: f64,
    pub eta: u32,
    pub lambda2: f64,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    pub k_fast: Vec<u64>,
    pub k_slow: Vec<u64>,
    /// False when `μ_ν` fails to decrease somewhere in the table.
    pub decreasing: bool,
}

/// `([ln 1/μ] + 1)^{3η}`, at least 1, saturating at `u64::MAX`.
pub fn cutoff_from_mu(mu: f64, eta: u32) -> u64 {
    let base = ((1.0 / mu).ln().floor() + 1.0).max(1.0);
    saturate(base.powi(3 * eta as i32))
}

fn saturate(v: f64) -> u64 {
    if !(v < u64::MAX as f64) {
        u64::MAX
    } else {
        v.round().max(1.0) as u64
    }
}

pub fn build_schedule(scales: &ScaleParams, init: ScheduleInit, nu_max: usize) -> Schedule {
    let m = scales.m;
    let sigma = scales.sigma;
    let lambda2 = scales.lambda2();
    let amp = 8f64.powi(m as i32) * init.c0;
    let n = nu_max + 1;
    let mut mu = Vec::with_capacity(n);
    mu.push(init.mu0);
    for v in 1..n {
        let prev: f64 = mu[v - 1];
        mu.push(amp * prev.powf(1.0 + sigma));
    }
    let alpha: Vec<f64> = mu.iter().map(|u| u.powf(1.0 / (m as f64 + 1.0))).collect();
    let mut s = Vec::with_capacity(n);
    s.push(init.s0);
    for v in 1..n {
        s.push(alpha[v - 1] * s[v - 1] / 8.0);
    }
    let shrink = |v: usize| 1.0 - (1..=v).map(|i| 0.5f64.powi(i as i32 + 1)).sum::<f64>();
    let r = (0..n).map(|v| init.r0 * shrink(v)).collect();
    let beta = (0..n).map(|v| init.beta0 * shrink(v)).collect();
    let gamma = (0..n).map(|v| init.gamma0 * shrink(v)).collect();
    let k_fast: Vec<u64> = mu.iter().map(|&u| cutoff_from_mu(u, scales.eta)).collect();
    let slow_factor = ((1.0 / lambda2).floor() + 1.0).powi(2);
    let k_slow = k_fast.iter().map(|&k| saturate(k as f64 * slow_factor)).collect();
    let decreasing = mu.windows(2).all(|w| w[1] < w[0]) && init.mu0 < 1.0;
    Schedule {
        init,
        m,
        sigma,
        eta: scales.eta,
        lambda2,
        r,
        s,
        beta,
        gamma,
        mu,
        alpha,
        k_fast,
        k_slow,
        decreasing,
    }
}

impl Schedule {
    pub fn nu_max(&self) -> usize {
        self.mu.len() - 1
    }

    /// `μ_ν = (8^m c0)^{((1+σ)^ν−1)/σ} μ0^{(1+σ)^ν}`.
    pub fn mu_closed(&self, nu: usize) -> f64 {
        let g = (1.0 + self.sigma).powi(nu as i32);
        let la = (8f64.powi(self.m as i32) * self.init.c0).ln();
        (la * (g - 1.0) / self.sigma + self.init.mu0.ln() * g).exp()
    }

    /// `s_ν = 8^{−ν} s0 (8^m c0)^{((1+σ)^ν−1−σν)/(σ²(m+1))} μ0^{((1+σ)^ν−1)/(σ(m+1))}`.
    pub fn s_closed(&self, nu: usize) -> f64 {
        let sg = self.sigma;
        let m1 = self.m as f64 + 1.0;
        let g = (1.0 + sg).powi(nu as i32);
        let la = (8f64.powi(self.m as i32) * self.init.c0).ln();
        let e_amp = (g - 1.0 - sg * nu as f64) / (sg * sg * m1);
        let e_mu = (g - 1.0) / (sg * m1);
        (la * e_amp + self.init.mu0.ln() * e_mu - nu as f64 * 8f64.ln() + self.init.s0.ln()).exp()
    }
}
