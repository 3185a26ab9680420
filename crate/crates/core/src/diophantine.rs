//! Nonresonance checks on the truncated lattice and Monte Carlo estimates
//! of the excluded parameter fraction.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fourier_taylor::Scaling;
use crate::hamiltonian::{ScaleMode, ScaleParams};

/// Gate parameters. In fast and slow mode the frequency vector passed to
/// the checks is the block itself (`ω` or `Ω`, any length); in mixed mode it
/// is the full `(ω, Λ, Ω)` of length `3d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineSpec {
    pub gamma: f64,
    pub tau: f64,
    pub k_max: u64,
    pub scale_mode: ScaleMode,
    pub scales: ScaleParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceWitness {
    pub k: Vec<i32>,
    /// `|⟨k, ω⟩|` (fast, slow) or `|L_k|` (mixed).
    pub value: f64,
    /// `γ/|k|^τ` (fast, slow) or `|λ̃|γ/|k|^τ` (mixed).
    pub bound: f64,
}

/// All `k ∈ Z^n` with `0 < |k|₁ ≤ k_max` whose first nonzero entry is
/// positive, shell by shell.
pub fn half_ball(n: usize, k_max: u64) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    let mut cur = vec![0i32; n];
    for shell in 1..=k_max as i32 {
        shell_rec(&mut out, &mut cur, 0, shell, false);
    }
    out
}

fn shell_rec(out: &mut Vec<Vec<i32>>, cur: &mut Vec<i32>, pos: usize, left: i32, signed: bool) {
    if pos == cur.len() {
        if left == 0 {
            out.push(cur.clone());
        }
        return;
    }
    if pos + 1 == cur.len() {
        let options: &[i32] = if left == 0 {
            &[0]
        } else if signed {
            &[1, -1]
        } else {
            &[1]
        };
        for &sgn in options {
            cur[pos] = sgn * left;
            out.push(cur.clone());
        }
        cur[pos] = 0;
        return;
    }
    for v in (0..=left).rev() {
        if v == 0 {
            cur[pos] = 0;
            shell_rec(out, cur, pos + 1, left, signed);
        } else {
            let signs: &[i32] = if signed { &[1, -1] } else { &[1] };
            for &sgn in signs {
                cur[pos] = sgn * v;
                shell_rec(out, cur, pos + 1, left - v, true);
            }
        }
    }
    cur[pos] = 0;
}

fn block_lambda_tilde(k: &[i32], d: usize, scaling: &Scaling) -> f64 {
    (0..3)
        .filter(|&b| k[b * d..(b + 1) * d].iter().any(|&v| v != 0))
        .map(|b| [1.0 / scaling.lambda1, 1.0, scaling.lambda2][b])
        .sum()
}

/// `(|⟨k,a⟩| or |L_k|, gate)` for one mode.
fn value_and_gate(k: &[i32], a: &[f64], spec: &DiophantineSpec, scaling: &Scaling) -> (f64, f64) {
    let norm: f64 = k.iter().map(|v| v.unsigned_abs() as f64).sum();
    let kt = norm.powf(spec.tau);
    match spec.scale_mode {
        ScaleMode::Fast | ScaleMode::Slow => {
            let dot: f64 = k.iter().zip(a).map(|(&ki, &ai)| ki as f64 * ai).sum();
            (dot.abs(), spec.gamma / kt)
        }
        ScaleMode::Mixed => {
            let d = scaling.d;
            let mut acc = [0.0; 3];
            for (c, (&ki, &ai)) in k.iter().zip(a).enumerate() {
                acc[c / d] += ki as f64 * ai;
            }
            let l = acc[0] / scaling.lambda1 + acc[1] + scaling.lambda2 * acc[2];
            (l.abs(), block_lambda_tilde(k, d, scaling) * spec.gamma / kt)
        }
    }
}

/// `value / gate · γ`, i.e. `|⟨k,a⟩||k|^τ` or `|L_k||k|^τ/|λ̃|`.
fn normalized(k: &[i32], a: &[f64], spec: &DiophantineSpec, scaling: &Scaling) -> f64 {
    let norm: f64 = k.iter().map(|v| v.unsigned_abs() as f64).sum();
    let (v, _) = value_and_gate(k, a, spec, scaling);
    match spec.scale_mode {
        ScaleMode::Mixed => v * norm.powf(spec.tau) / block_lambda_tilde(k, scaling.d, scaling),
        _ => v * norm.powf(spec.tau),
    }
}

/// Exhaustive check of every `0 < |k| ≤ K`; the first violating mode in
/// shell order is returned as the witness.
pub fn is_nonresonant(a: &[f64], spec: &DiophantineSpec) -> (bool, Option<ResonanceWitness>) {
    if spec.gamma == 0.0 {
        return (true, None);
    }
    let scaling = spec.scales.scaling();
    for k in half_ball(a.len(), spec.k_max) {
        let (value, bound) = value_and_gate(&k, a, spec, &scaling);
        if !(value > bound) {
            return (false, Some(ResonanceWitness { k, value, bound }));
        }
    }
    (true, None)
}

/// Mode minimizing the normalized divisor, with that normalized value.
pub fn worst_divisor(a: &[f64], spec: &DiophantineSpec) -> (Vec<i32>, f64) {
    let scaling = spec.scales.scaling();
    let modes = half_ball(a.len(), spec.k_max);
    min_normalized(&modes, a, spec, &scaling).unwrap_or((Vec::new(), f64::INFINITY))
}

fn min_normalized(modes: &[Vec<i32>], a: &[f64], spec: &DiophantineSpec, scaling: &Scaling) -> Option<(Vec<i32>, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, k) in modes.iter().enumerate() {
        let v = normalized(k, a, spec, scaling);
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, v)| (modes[i].clone(), v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub gamma: f64,
    pub tau: f64,
    pub k_max: u64,
    pub fraction: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

fn sample_point(domain: &[(f64, f64)], seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    domain.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>()).collect()
}

/// Excluded fraction for each `γ` in `gammas`, sharing one sample set.
/// Sample `i` draws from stream `i` of a ChaCha8 generator keyed by `seed`,
/// so the result does not depend on thread scheduling.
pub fn excluded_measure_sweep<F>(
    domain: &[(f64, f64)],
    freq_map: F,
    spec: &DiophantineSpec,
    gammas: &[f64],
    samples: usize,
    seed: u64,
) -> Vec<MeasureEstimate>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let scaling = spec.scales.scaling();
    let dim = freq_map(&sample_point(domain, seed, 0)).len();
    let modes = half_ball(dim, spec.k_max);
    let vmin: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let a = freq_map(&sample_point(domain, seed, i));
            min_normalized(&modes, &a, spec, &scaling).map_or(f64::INFINITY, |(_, v)| v)
        })
        .collect();
    gammas
        .iter()
        .map(|&g| {
            let excluded = if g == 0.0 { 0 } else { vmin.iter().filter(|&&v| !(v > g)).count() };
            let f = excluded as f64 / samples as f64;
            MeasureEstimate {
                gamma: g,
                tau: spec.tau,
                k_max: spec.k_max,
                fraction: f,
                stderr: (f * (1.0 - f) / samples as f64).sqrt(),
                samples,
                seed,
            }
        })
        .collect()
}

pub fn excluded_measure_estimate<F>(
    domain: &[(f64, f64)],
    freq_map: F,
    spec: &DiophantineSpec,
    samples: usize,
    seed: u64,
) -> MeasureEstimate
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    excluded_measure_sweep(domain, freq_map, spec, &[spec.gamma], samples, seed).remove(0)
}

pub fn write_measure_csv<W: Write>(out: W, rows: &[MeasureEstimate]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "tau", "K", "fraction", "stderr", "samples", "seed"])?;
    for r in rows {
        w.write_record([
            r.gamma.to_string(),
            r.tau.to_string(),
            r.k_max.to_string(),
            r.fraction.to_string(),
            r.stderr.to_string(),
            r.samples.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
