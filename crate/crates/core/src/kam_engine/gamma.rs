//! Truncated lattice sums `Γ^a`, `Γ^b`, `Γ^d` and the step inequality
//! `μ^σ(Γ + 2) ≤ (γ₊/γ)^{d+m+5}`.

use serde::{Deserialize, Serialize};

use crate::fourier_taylor::binomial;
use crate::hamiltonian::{ScaleMode, ScaleParams};

/// Triples visited by the mixed-mode sum before it gives up.
const MIXED_WORK_CAP: u64 = 20_000_000;

/// Number of `k ∈ Z^d` with `|k|₁ = n`.
pub fn lattice_shell_count(d: usize, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    (1..=d.min(n as usize))
        .map(|i| 2f64.powi(i as i32) * binomial(d as u32, i as u32) * binomial(n as u32 - 1, i as u32 - 1))
        .sum()
}

/// `Σ_{1≤n≤K} exp(f(n))` for a unimodal log-term, stopping once the terms
/// past the peak fall 50 e-folds below the largest one.
fn unimodal_sum<F: Fn(f64) -> f64>(k_max: u64, log_term: F) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut total = 0.0;
    let mut prev = f64::NEG_INFINITY;
    let mut n = 1u64;
    while n <= k_max {
        let lt = log_term(n as f64);
        total += lt.exp();
        best = best.max(lt);
        if lt < prev && lt < best - 50.0 {
            break;
        }
        prev = lt;
        n += 1;
    }
    total
}

/// Fast-mode slice with fixed `|l|`, `|i| = p`, `|j| = q`:
/// `Σ_{0<|k|≤K} |k|^{(l+q+1)τ+l+p+q+1} λ1^{−p} e^{−|k|Δr/(8λ1)}`.
#[allow(clippy::too_many_arguments)]
pub fn gamma_fast_slice(l: u32, p: u32, q: u32, tau: f64, d: usize, lambda1: f64, k_max: u64, delta_r: f64) -> f64 {
    let e = (l + q + 1) as f64 * tau + (l + p + q + 1) as f64;
    let c = delta_r / (8.0 * lambda1);
    let lp = -(p as f64) * lambda1.ln();
    unimodal_sum(k_max, |n| lattice_shell_count(d, n as u64).ln() + e * n.ln() + lp - c * n)
}

/// Slow-mode slice: `λ2^{p−2}` weight and `e^{−|k|λ2Δr/8}` decay.
#[allow(clippy::too_many_arguments)]
pub fn gamma_slow_slice(l: u32, p: u32, q: u32, tau: f64, d: usize, lambda2: f64, k_max: u64, delta_r: f64) -> f64 {
    let e = (l + q + 1) as f64 * tau + (l + p + q + 1) as f64;
    let c = lambda2 * delta_r / 8.0;
    let lp = (p as f64 - 2.0) * lambda2.ln();
    unimodal_sum(k_max, |n| lattice_shell_count(d, n as u64).ln() + e * n.ln() + lp - c * n)
}

fn block_limit(c: f64, e: f64, k_max: u64) -> u64 {
    // past the peak e/c, n^e e^{−cn} loses 60 e-folds within this distance
    let peak = (e / c).max(1.0);
    let mut n = peak;
    while e * (n / peak).ln() - c * (n - peak) > -60.0 {
        n += peak.max(1.0 / c);
    }
    (n.ceil() as u64).min(k_max)
}

/// Mixed-mode sum over one of the seven nonzero-block patterns `mask`,
/// with `Σ|i| = p` and per-block exponents `kappa` (norms of the `κ_b`).
/// Returns the value and whether the work cap cut the sum short.
#[allow(clippy::too_many_arguments)]
pub fn gamma_mixed_slice(
    l: u32,
    p: u32,
    kappa: [u32; 3],
    mask: [bool; 3],
    tau: f64,
    d: usize,
    lambda1: f64,
    lambda2: f64,
    k_max: u64,
    delta_r: f64,
) -> (f64, bool) {
    let f = [1.0 / lambda1, 1.0, lambda2];
    let e = (l + p + 1) as f64 * tau + (l + p + 1) as f64;
    let weights: Vec<Vec<f64>> = (0..3)
        .map(|b| {
            if !mask[b] {
                return if kappa[b] == 0 { vec![1.0] } else { vec![0.0] };
            }
            let c = f[b] * delta_r / 8.0;
            let lim = block_limit(c, e + kappa[b] as f64 + d as f64, k_max);
            let mut w = vec![0.0];
            for n in 1..=lim {
                let x = n as f64;
                w.push((lattice_shell_count(d, n).ln() + kappa[b] as f64 * (f[b] * x).ln() - c * x).exp());
            }
            w
        })
        .collect();
    let slow_div = if mask[2] { lambda2 } else { 1.0 };
    let mut total = 0.0;
    let mut work = 0u64;
    let lo = |b: usize| if mask[b] { 1 } else { 0 };
    for n1 in lo(0)..weights[0].len() {
        for n2 in lo(1)..weights[1].len() {
            for n3 in lo(2)..weights[2].len() {
                work += 1;
                if work > MIXED_WORK_CAP {
                    return (total, true);
                }
                let nn = (n1 + n2 + n3) as u64;
                if nn == 0 || nn > k_max {
                    continue;
                }
                total += (nn as f64).powf(e) * weights[0][n1] * weights[1][n2] * weights[2][n3] / slow_div;
            }
        }
    }
    (total, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaDiagnostic {
    pub gamma_sum: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub truncated: bool,
}

/// Full `Γ` for the step and the inequality `μ^σ(Γ+2) ≤ (γ₊/γ)^{d+m+5}`.
/// Only reported; the step does not fail on it.
#[allow(clippy::too_many_arguments)]
pub fn gamma_bound_diagnostic(
    mode: ScaleMode,
    scales: &ScaleParams,
    k_max: u64,
    delta_r: f64,
    mu: f64,
    gamma: f64,
    gamma_plus: f64,
    l: u32,
) -> GammaDiagnostic {
    let d = scales.d;
    let cap = scales.m + 4;
    let mult = |p: u32, dim: usize| binomial(p + dim as u32 - 1, dim as u32 - 1);
    let (l1, l2, tau) = (scales.lambda1(), scales.lambda2(), scales.tau);
    let mut truncated = false;
    let gamma_sum = if k_max == 0 {
        0.0
    } else {
        match mode {
            ScaleMode::Fast | ScaleMode::Slow => {
                let mut acc = 0.0;
                for p in 0..=cap {
                    for q in 0..=cap {
                        let slice = if mode == ScaleMode::Fast {
                            gamma_fast_slice(l, p, q, tau, d, l1, k_max, delta_r)
                        } else {
                            gamma_slow_slice(l, p, q, tau, d, l2, k_max, delta_r)
                        };
                        acc += mult(p, d) * mult(q, d) * slice;
                    }
                }
                acc
            }
            ScaleMode::Mixed => {
                let mut acc = 0.0;
                'cases: for case in 1u8..8 {
                    let mask = [case & 1 != 0, case & 2 != 0, case & 4 != 0];
                    for p in 0..=cap {
                        for k1 in 0..=cap {
                            for k2 in 0..=cap - k1 {
                                for k3 in 0..=cap - k1 - k2 {
                                    let kappa = [k1, k2, k3];
                                    if (0..3).any(|b| !mask[b] && kappa[b] > 0) {
                                        continue;
                                    }
                                    let (v, cut) =
                                        gamma_mixed_slice(l, p, kappa, mask, tau, d, l1, l2, k_max, delta_r);
                                    let w = mult(p, 3 * d) * kappa.iter().map(|&k| mult(k, d)).product::<f64>();
                                    acc += w * v;
                                    if cut {
                                        truncated = true;
                                        break 'cases;
                                    }
                                }
                            }
                        }
                    }
                }
                acc
            }
        }
    };
    let lhs = mu.powf(scales.sigma) * (gamma_sum + 2.0);
    let rhs = (gamma_plus / gamma).powi((d + scales.m as usize + 5) as i32);
    GammaDiagnostic { gamma_sum, lhs, rhs, holds: lhs <= rhs, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_counts(d: usize, n: i64) -> usize {
        let mut count = 0;
        let mut k = vec![-n; d];
        loop {
            if k.iter().map(|v| v.abs()).sum::<i64>() == n {
                count += 1;
            }
            let mut i = 0;
            while i < d {
                k[i] += 1;
                if k[i] <= n {
                    break;
                }
                k[i] = -n;
                i += 1;
            }
            if i == d {
                return count;
            }
        }
    }

    #[test]
    fn shell_counts_match_enumeration() {
        for d in 1..=3 {
            for n in 0..6 {
                assert_eq!(lattice_shell_count(d, n as u64), brute_counts(d, n) as f64, "d={d} n={n}");
            }
        }
    }

    #[test]
    fn zero_cutoff_gives_zero() {
        let sc = ScaleParams::new(1e-4, 0.5, 0.0, 1, 1, 1.0);
        let g = gamma_bound_diagnostic(ScaleMode::Fast, &sc, 0, 0.25, 1e-2, 0.5, 0.375, 0);
        assert_eq!(g.gamma_sum, 0.0);
    }

    #[test]
    fn fast_slice_matches_direct_sum() {
        let (d, tau, l1, dr, kmax) = (2usize, 1.5, 0.1, 0.25, 400i64);
        let mut direct = 0.0;
        for a in -kmax..=kmax {
            for b in -kmax..=kmax {
                let n = (a.abs() + b.abs()) as f64;
                if n == 0.0 || n > kmax as f64 {
                    continue;
                }
                direct += n.powf(tau + 1.0) * (-n * dr / (8.0 * l1)).exp();
            }
        }
        let v = gamma_fast_slice(0, 0, 0, tau, d, l1, kmax as u64, dr);
        assert!(((v - direct) / direct).abs() < 1e-12, "{v} vs {direct}");
    }

    #[test]
    fn mixed_fast_only_case_reduces_to_fast() {
        let (d, tau, l1, l2, dr) = (1usize, 1.0, 0.1, 0.5, 0.25);
        let fast = gamma_fast_slice(0, 0, 0, tau, d, l1, 1000, dr);
        let (mixed, cut) = gamma_mixed_slice(0, 0, [0, 0, 0], [true, false, false], tau, d, l1, l2, 1000, dr);
        assert!(!cut);
        assert!(((mixed - fast) / fast).abs() < 1e-12);
    }
}
