//! Refined Fourier frequency extraction and torus-persistence scans.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    integrate_symplectic, ActionAngleChart, DynamicsError, ExtendedState, IntegrateOptions, OscillatorChain, Scheme,
};

pub const MIN_SAMPLES: usize = 1024;
const NO_PEAK_RATIO: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreqError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("no spectral peak above the residual floor")]
    NoPeak,
    #[error("sample step must be positive and finite")]
    BadStep,
    #[error("window of length {t} resolves 1/T = {resolution:e}, need at most {required:e}")]
    WindowTooShort { t: f64, resolution: f64, required: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
    /// Squared Hann window.
    Hann2,
}

impl Window {
    fn weights(self, n: usize) -> Vec<f64> {
        let order = match self {
            Window::Rectangular => return vec![1.0; n],
            Window::Hann => 1,
            Window::Hann2 => 2,
        };
        let raw: Vec<f64> = (0..n)
            .map(|k| {
                let tau = 2.0 * k as f64 / (n - 1) as f64 - 1.0;
                (1.0 + (PI * tau).cos()).powi(order)
            })
            .collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        raw.into_iter().map(|w| w / mean).collect()
    }
}

/// Extracted lines in ascending frequency; `amplitudes[j]` multiplies
/// `e^{2πi f_j t}` with `t` measured from the first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySpectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<Complex64>,
    pub window: Window,
    #[serde(rename = "T")]
    pub t_len: f64,
    pub dt: f64,
}

impl FrequencySpectrum {
    /// Frequency of the largest-amplitude line.
    pub fn dominant(&self) -> Option<f64> {
        self.amplitudes
            .iter()
            .zip(&self.frequencies)
            .max_by(|a, b| a.0.norm().total_cmp(&b.0.norm()))
            .map(|(_, &f)| f)
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.dt
    }
}

struct Analyser<'a> {
    w: &'a [f64],
    dt: f64,
    t_mid: f64,
}

impl Analyser<'_> {
    /// Windowed correlation with `e^{2πiνt}` and its first two ν-derivatives,
    /// times centred on the window.
    fn correlate(&self, f: &[Complex64], nu: f64) -> (Complex64, Complex64, Complex64) {
        let n = f.len() as f64;
        let (mut a, mut a1, mut a2) = (Complex64::default(), Complex64::default(), Complex64::default());
        for (k, (&z, &w)) in f.iter().zip(self.w).enumerate() {
            let t = k as f64 * self.dt - self.t_mid;
            let e = Complex64::from_polar(w, -2.0 * PI * nu * t) * z;
            let c = Complex64::new(0.0, -2.0 * PI * t);
            a += e;
            a1 += c * e;
            a2 += c * c * e;
        }
        (a / n, a1 / n, a2 / n)
    }

    fn power(&self, f: &[Complex64], nu: f64) -> f64 {
        self.correlate(f, nu).0.norm_sqr()
    }

    fn refine(&self, f: &[Complex64], nu0: f64, half: f64) -> f64 {
        let nyq = 0.5 / self.dt;
        let (mut lo, mut hi) = ((nu0 - half).max(-nyq), (nu0 + half).min(nyq));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let (mut p1, mut p2) = (self.power(f, x1), self.power(f, x2));
        let mut guard = 0;
        while hi - lo > 1e-12 && guard < 200 {
            guard += 1;
            if p1 >= p2 {
                hi = x2;
                x2 = x1;
                p2 = p1;
                x1 = hi - g * (hi - lo);
                p1 = self.power(f, x1);
            } else {
                lo = x1;
                x1 = x2;
                p1 = p2;
                x2 = lo + g * (hi - lo);
                p2 = self.power(f, x2);
            }
        }
        let (bl, bh) = (lo - half, hi + half);
        let mut nu = 0.5 * (lo + hi);
        // Newton on d|A|²/dν to remove the flat-top limit of the bracket search
        for _ in 0..6 {
            let (a, a1, a2) = self.correlate(f, nu);
            let d1 = 2.0 * (a.conj() * a1).re;
            let d2 = 2.0 * (a1.norm_sqr() + (a.conj() * a2).re);
            if !(d2 < 0.0) {
                break;
            }
            let next = nu - d1 / d2;
            if !(next > bl && next < bh) {
                break;
            }
            let done = (next - nu).abs() < 1e-16 * nu.abs().max(1.0 / self.dt);
            nu = next;
            if done {
                break;
            }
        }
        nu
    }
}

fn weighted_power(w: &[f64], f: &[Complex64]) -> f64 {
    f.iter().zip(w).map(|(z, w)| w * z.norm_sqr()).sum::<f64>() / f.len() as f64
}

/// Weighted least-squares amplitudes of `signal` on `e^{2πiν_j t}`.
fn fit_amplitudes(w: &[f64], dt: f64, signal: &[Complex64], nus: &[f64]) -> Vec<Complex64> {
    let m = nus.len();
    let basis: Vec<Vec<Complex64>> = nus
        .iter()
        .map(|&nu| (0..signal.len()).map(|k| Complex64::from_polar(1.0, 2.0 * PI * nu * k as f64 * dt)).collect())
        .collect();
    let inner = |u: &[Complex64], v: &[Complex64]| -> Complex64 {
        u.iter().zip(v).zip(w).map(|((a, b), w)| a * b.conj() * w).sum()
    };
    let g = DMatrix::from_fn(m, m, |j, k| inner(&basis[k], &basis[j]));
    let b = DVector::from_fn(m, |j, _| inner(signal, &basis[j]));
    match g.clone().lu().solve(&b) {
        Some(a) => a.iter().copied().collect(),
        None => b.iter().map(|v| v / g[(0, 0)]).collect(),
    }
}

/// NAFF-style extraction of up to `n_freq` lines from uniformly sampled data.
pub fn extract_frequencies(signal: &[Complex64], dt: f64, n_freq: usize) -> Result<FrequencySpectrum, FreqError> {
    extract_frequencies_with(signal, dt, n_freq, Window::Hann)
}

pub fn extract_frequencies_with(
    signal: &[Complex64],
    dt: f64,
    n_freq: usize,
    window: Window,
) -> Result<FrequencySpectrum, FreqError> {
    let n = signal.len();
    if n < MIN_SAMPLES {
        return Err(FreqError::TooFewSamples(n));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FreqError::BadStep);
    }
    let w = window.weights(n);
    let an = Analyser { w: &w, dt, t_mid: 0.5 * (n - 1) as f64 * dt };
    let p0 = weighted_power(&w, signal);
    if !(p0 > 0.0) || !p0.is_finite() {
        return Err(FreqError::NoPeak);
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bin = 1.0 / (n as f64 * dt);
    let mut residual = signal.to_vec();
    let mut nus: Vec<f64> = Vec::new();
    let mut amps: Vec<Complex64> = Vec::new();
    while nus.len() < n_freq {
        if weighted_power(&w, &residual) < NO_PEAK_RATIO * p0 {
            break;
        }
        let mut buf: Vec<Complex64> = residual.iter().zip(&w).map(|(z, w)| z * w).collect();
        fft.process(&mut buf);
        let (kmax, _) = buf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .expect("nonempty");
        let k = if kmax > n / 2 { kmax as f64 - n as f64 } else { kmax as f64 };
        let nu = an.refine(&residual, k * bin, bin);
        nus.push(nu);
        amps = fit_amplitudes(&w, dt, signal, &nus);
        for (kk, r) in residual.iter_mut().enumerate() {
            let t = kk as f64 * dt;
            *r = signal[kk]
                - nus.iter().zip(&amps).map(|(&nu, a)| a * Complex64::from_polar(1.0, 2.0 * PI * nu * t)).sum::<Complex64>();
        }
    }
    if nus.is_empty() {
        return Err(FreqError::NoPeak);
    }
    let mut idx: Vec<usize> = (0..nus.len()).collect();
    idx.sort_by(|&a, &b| nus[a].total_cmp(&nus[b]));
    Ok(FrequencySpectrum {
        frequencies: idx.iter().map(|&i| nus[i]).collect(),
        amplitudes: idx.iter().map(|&i| amps[i]).collect(),
        window,
        t_len: n as f64 * dt,
        dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersistenceLabel {
    Persistent,
    Diffusing,
    Resonant,
    Escaped,
}

impl PersistenceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PersistenceLabel::Persistent => "persistent",
            PersistenceLabel::Diffusing => "diffusing",
            PersistenceLabel::Resonant => "resonant",
            PersistenceLabel::Escaped => "escaped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersistenceConfig {
    /// Drift threshold between the two windows, in frequency units.
    pub delta_f: f64,
    /// Samples per window.
    pub samples: usize,
    /// Largest integration step; clamped further by the forcing bound.
    pub dt_max: f64,
    pub window: Window,
    pub scheme: Scheme,
    /// Resonances `⟨k, f⟩ ≈ 0` are searched for `0 < |k|₁ ≤ res_order`.
    pub res_order: u32,
    pub res_tol: f64,
    /// Starting angle for every oscillator.
    pub phase0: f64,
    /// Analyse `√I e^{2πiφ}` from the chart instead of `x − i p`.
    pub lift: bool,
}

impl Default for PersistenceConfig {
    fn default() -> Self {
        Self {
            delta_f: 1e-6,
            samples: 4096,
            dt_max: 0.01,
            window: Window::Hann,
            scheme: Scheme::Strang,
            res_order: 4,
            res_tol: 1e-4,
            phase0: 0.25,
            lift: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistencePoint {
    pub actions: Vec<f64>,
    pub eps: f64,
    pub label: PersistenceLabel,
    pub drift: f64,
    pub freqs_first: Vec<f64>,
    pub freqs_second: Vec<f64>,
    /// Resonance `k` when labelled resonant.
    pub resonance: Option<Vec<i32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceMap {
    pub points: Vec<PersistencePoint>,
    pub windows: (f64, f64),
    pub delta_f: f64,
}

impl PersistenceMap {
    pub fn at_eps(&self, eps: f64) -> impl Iterator<Item = &PersistencePoint> {
        self.points.iter().filter(move |p| p.eps == eps)
    }

    /// Median drift over the non-escaped points at `eps`.
    pub fn median_drift(&self, eps: f64) -> Option<f64> {
        let mut d: Vec<f64> =
            self.at_eps(eps).filter(|p| p.label != PersistenceLabel::Escaped).map(|p| p.drift).collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        let m = d.len();
        Some(if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) })
    }

    pub fn fraction(&self, eps: f64, label: PersistenceLabel) -> f64 {
        let all = self.at_eps(eps).count();
        if all == 0 {
            return 0.0;
        }
        self.at_eps(eps).filter(|p| p.label == label).count() as f64 / all as f64
    }

    /// Columns `I1..In, eps, label, drift, f1..fn` (second-window frequencies).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let n = self.points.first().map_or(0, |p| p.actions.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=n).map(|i| format!("I{i}")).collect();
        header.extend(["eps", "label", "drift"].map(String::from));
        header.extend((1..=n).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for p in &self.points {
            let mut row: Vec<String> = p.actions.iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", p.eps));
            row.push(p.label.as_str().into());
            row.push(format!("{:e}", p.drift));
            row.extend(p.freqs_second.iter().map(|v| format!("{v:.15e}")));
            row.resize(header.len(), String::new());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Smallest `|⟨k, f⟩|` over `0 < |k|₁ ≤ order`, half-space representatives.
pub fn nearest_resonance(f: &[f64], order: u32) -> Option<(Vec<i32>, f64)> {
    let n = f.len();
    let mut best: Option<(Vec<i32>, f64)> = None;
    let mut k = vec![0i32; n];
    fn rec(i: usize, budget: i32, k: &mut Vec<i32>, f: &[f64], best: &mut Option<(Vec<i32>, f64)>) {
        if i == k.len() {
            let lead = k.iter().find(|&&v| v != 0);
            if lead.is_some_and(|&v| v > 0) {
                let val = k.iter().zip(f).map(|(&a, b)| a as f64 * b).sum::<f64>().abs();
                if best.as_ref().is_none_or(|b| val < b.1) {
                    *best = Some((k.clone(), val));
                }
            }
            return;
        }
        for v in -budget..=budget {
            k[i] = v;
            rec(i + 1, budget - v.abs(), k, f, best);
        }
        k[i] = 0;
    }
    if n >= 2 {
        rec(0, order as i32, &mut k, f, &mut best);
    }
    best
}

fn lifted_signals(
    chain: &OscillatorChain,
    chart: Option<&ActionAngleChart>,
    states: &[ExtendedState],
) -> Result<Vec<Vec<Complex64>>, FreqError> {
    let mut out = vec![Vec::with_capacity(states.len()); chain.n];
    for s in states {
        for i in 0..chain.n {
            let z = match chart {
                Some(ch) => {
                    let (phi, a) = ch.to_action_angle(s.x[i], s.p[i])?;
                    Complex64::from_polar(a.sqrt(), 2.0 * PI * phi)
                }
                // clockwise libration: x − ip has positive frequency
                None => Complex64::new(s.x[i], -s.p[i]),
            };
            out[i].push(z);
        }
    }
    Ok(out)
}

fn window_frequencies(signals: &[Vec<Complex64>], dt: f64, window: Window) -> Result<Vec<f64>, FreqError> {
    signals
        .iter()
        .map(|sig| {
            let sp = extract_frequencies_with(sig, dt, 3, window)?;
            sp.dominant().ok_or(FreqError::NoPeak)
        })
        .collect()
}

/// Classifies one initial torus. Integration or chart failures count as
/// escape; resonances are only meaningful once the sites interact.
fn classify_point(
    chain: &OscillatorChain,
    chart: &ActionAngleChart,
    actions: &[f64],
    windows: (f64, f64),
    cfg: &PersistenceConfig,
) -> Result<PersistencePoint, FreqError> {
    let escaped = |freqs: Vec<f64>| PersistencePoint {
        actions: actions.to_vec(),
        eps: chain.eps,
        label: PersistenceLabel::Escaped,
        drift: f64::INFINITY,
        freqs_first: freqs.clone(),
        freqs_second: freqs,
        resonance: None,
    };
    let mut x = Vec::with_capacity(chain.n);
    let mut p = Vec::with_capacity(chain.n);
    for &a in actions {
        let (xi, pi) = chart.from_action_angle(cfg.phase0, a)?;
        x.push(xi);
        p.push(pi);
    }
    let (t1, t2) = windows;
    let n1 = cfg.samples;
    let sample_dt = t1 / n1 as f64;
    let n2 = (t2 / sample_dt).round() as usize;
    let dt_cap = cfg.dt_max.min(chain.max_step());
    let stride = (sample_dt / dt_cap).ceil().max(1.0) as usize;
    let dt = sample_dt / stride as f64;
    let traj = match integrate_symplectic(
        chain,
        &ExtendedState::at_rest(x, p),
        dt,
        (n1 + n2) as f64 * sample_dt,
        IntegrateOptions { stride, scheme: cfg.scheme },
    ) {
        Ok(t) => t,
        Err(DynamicsError::StepTooLarge { .. }) | Err(DynamicsError::InvalidChain(_)) => {
            return Err(FreqError::Dynamics(DynamicsError::NoConvergence))
        }
        Err(_) => return Ok(escaped(Vec::new())),
    };
    let states = &traj.states;
    let finite = states.iter().all(|s| s.x.iter().chain(&s.p).all(|v| v.is_finite()));
    let h_top = chart.h_max();
    let bounded = states.iter().all(|s| chain.site_energies(s).iter().all(|&h| h <= h_top));
    if !finite || !bounded || states.len() < n1 + n2 {
        return Ok(escaped(Vec::new()));
    }
    let lift = if cfg.lift { Some(chart) } else { None };
    let first = lifted_signals(chain, lift, &states[..n1])?;
    let second = lifted_signals(chain, lift, &states[n1..n1 + n2])?;
    let f1 = window_frequencies(&first, sample_dt, cfg.window)?;
    let f2 = window_frequencies(&second, sample_dt, cfg.window)?;
    let drift = f1.iter().zip(&f2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let resonance = if chain.eps > 0.0 {
        nearest_resonance(&f1, cfg.res_order).filter(|(_, v)| *v <= cfg.res_tol).map(|(k, _)| k)
    } else {
        None
    };
    let label = if resonance.is_some() {
        PersistenceLabel::Resonant
    } else if drift <= cfg.delta_f {
        PersistenceLabel::Persistent
    } else {
        PersistenceLabel::Diffusing
    };
    Ok(PersistencePoint {
        actions: actions.to_vec(),
        eps: chain.eps,
        label,
        drift,
        freqs_first: f1,
        freqs_second: f2,
        resonance,
    })
}

/// Integrates every `(actions, ε)` pair over `[0, T1 + T2]` and compares the
/// dominant per-site frequencies of the two windows. Orbits run in parallel;
/// output order follows `eps_list` then `init_grid`.
pub fn persistence_scan(
    chain: &OscillatorChain,
    init_grid: &[Vec<f64>],
    eps_list: &[f64],
    windows: (f64, f64),
    cfg: &PersistenceConfig,
) -> Result<PersistenceMap, FreqError> {
    chain.validate()?;
    let t = windows.0.min(windows.1);
    let required = cfg.delta_f / 10.0;
    if !(t > 0.0) || 1.0 / t > required {
        return Err(FreqError::WindowTooShort { t, resolution: 1.0 / t, required });
    }
    if cfg.samples < MIN_SAMPLES {
        return Err(FreqError::TooFewSamples(cfg.samples));
    }
    if let Some(bad) = init_grid.iter().find(|a| a.len() != chain.n) {
        return Err(FreqError::Dynamics(DynamicsError::InvalidChain(format!(
            "action vector of length {} for a chain of {} sites",
            bad.len(),
            chain.n
        ))));
    }
    let chart = ActionAngleChart::new(chain.potential.clone(), None)?;
    let jobs: Vec<(f64, &Vec<f64>)> = eps_list.iter().flat_map(|&e| init_grid.iter().map(move |a| (e, a))).collect();
    let points = jobs
        .par_iter()
        .map(|&(eps, actions)| {
            let mut c = chain.clone();
            c.eps = eps;
            classify_point(&c, &chart, actions, windows, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PersistenceMap { points, windows, delta_f: cfg.delta_f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Potential;

    fn tone(n: usize, dt: f64, lines: &[(f64, Complex64)]) -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                lines.iter().map(|&(f, a)| a * Complex64::from_polar(1.0, 2.0 * PI * f * t)).sum()
            })
            .collect()
    }

    #[test]
    fn single_tone() {
        let s = tone(4096, 1.0, &[(0.123, Complex64::new(1.0, 0.0))]);
        let sp = extract_frequencies(&s, 1.0, 1).unwrap();
        assert!((sp.frequencies[0] - 0.123).abs() < 1e-8, "{:?}", sp.frequencies);
        assert!((sp.amplitudes[0] - Complex64::new(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn zero_and_short_signals() {
        assert_eq!(extract_frequencies(&vec![Complex64::default(); 2048], 1.0, 2), Err(FreqError::NoPeak));
        assert_eq!(extract_frequencies(&vec![Complex64::new(1.0, 0.0); 100], 1.0, 2), Err(FreqError::TooFewSamples(100)));
    }

    #[test]
    fn two_tones_with_ratio() {
        let s = tone(4096, 1.0, &[(0.123, Complex64::new(1.0, 0.0)), (0.456, Complex64::new(0.0, 0.3))]);
        let sp = extract_frequencies(&s, 1.0, 2).unwrap();
        assert!((sp.frequencies[0] - 0.123).abs() < 1e-7);
        assert!((sp.frequencies[1] - 0.456).abs() < 1e-7);
        let ratio = sp.amplitudes[1].norm() / sp.amplitudes[0].norm();
        assert!((ratio - 0.3).abs() < 1e-4);
        // signal is exhausted after two lines
        let more = extract_frequencies(&s, 1.0, 5).unwrap();
        assert!(more.frequencies.len() <= 5);
    }

    #[test]
    fn negative_frequency_and_windows() {
        for w in [Window::Rectangular, Window::Hann, Window::Hann2] {
            let s = tone(2048, 0.5, &[(-0.31, Complex64::new(0.5, 0.5))]);
            let sp = extract_frequencies_with(&s, 0.5, 1, w).unwrap();
            assert!((sp.frequencies[0] + 0.31).abs() < 1e-8, "{w:?} {:?}", sp.frequencies);
        }
    }

    #[test]
    fn resonance_search() {
        let (k, v) = nearest_resonance(&[0.1, 0.2], 4).unwrap();
        assert!(v < 1e-15);
        assert_eq!(k, vec![2, -1]);
        assert!(nearest_resonance(&[0.1], 4).is_none());
    }

    #[test]
    fn window_precondition() {
        let chain = OscillatorChain {
            n: 1,
            potential: Potential::Pendulum,
            eps: 0.0,
            alpha: 0.5,
            beta: 0.1,
            omega: vec![1.0],
            big_omega: vec![1.0],
        };
        let cfg = PersistenceConfig::default();
        let r = persistence_scan(&chain, &[vec![1.0]], &[0.0], (100.0, 100.0), &cfg);
        assert!(matches!(r, Err(FreqError::WindowTooShort { .. })));
    }
}
