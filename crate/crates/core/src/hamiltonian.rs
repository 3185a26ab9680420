//! Normal forms `N = e + ⟨a,b⟩ + ½⟨b,𝔄b⟩ + ĥ(b)`, perturbations, scale
//! parameters and the state carried between KAM steps.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fourier_taylor::{ModeIndex, Scaling, Series, SeriesError, SeriesJson};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("integrable part depends on the angles")]
    NotAngleFree,
    #[error("expansion degree insufficient: input has Taylor degree {degree}, cap is {cap}")]
    ExpansionDegreeInsufficient { degree: u32, cap: u32 },
    #[error("no nonsingular {n}x{n} principal minor (condition {condition:e})")]
    NoNonsingularMinor { n: usize, condition: f64 },
    #[error("minor size {n} outside 1..={max}")]
    MinorSize { n: usize, max: usize },
    #[error("parameter point has length {got}, expected {expected}")]
    ParameterLength { expected: usize, got: usize },
    #[error("normal form invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    Fast,
    Slow,
    Mixed,
}

/// ε, the scale exponents and the iteration exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleParams {
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub d: usize,
    pub m: u32,
    pub tau: f64,
    pub sigma: f64,
    pub eta: u32,
}

/// One failed validity rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleViolation {
    pub code: String,
    pub message: String,
    pub value: f64,
    pub bound: Option<f64>,
}

impl ScaleParams {
    /// Fills in `σ = 1/(2(m+1))` and the smallest `η` with `(1+σ)^η > 2`.
    pub fn new(eps: f64, alpha: f64, beta: f64, d: usize, m: u32, tau: f64) -> Self {
        let sigma = Self::sigma_for(m);
        Self { eps, alpha, beta, d, m, tau, sigma, eta: Self::eta_for(sigma) }
    }

    pub fn sigma_for(m: u32) -> f64 {
        1.0 / (2.0 * (m as f64 + 1.0))
    }

    pub fn eta_for(sigma: f64) -> u32 {
        let mut eta = 1;
        while (1.0 + sigma).powi(eta as i32) <= 2.0 {
            eta += 1;
        }
        eta
    }

    pub fn lambda1(&self) -> f64 {
        self.eps.powf(self.alpha)
    }

    pub fn lambda2(&self) -> f64 {
        self.eps.powf(self.beta)
    }

    pub fn scaling(&self) -> Scaling {
        Scaling::new(self.d, self.lambda1(), self.lambda2())
    }

    /// Upper bound on β for the three-scale iteration.
    pub fn beta_bound_mixed(&self) -> f64 {
        let (d, m) = (self.d as f64, self.m as f64);
        self.sigma * self.sigma / (3.0 * ((d + m + 5.0) * self.tau + d + 2.0 * m + 13.0))
    }

    /// Upper bound on β for the slow-only iteration.
    pub fn beta_bound_slow(&self) -> f64 {
        let (d, m) = (self.d as f64, self.m as f64);
        self.sigma * self.sigma / ((d + m + 5.0) * self.tau + d + m + 9.0)
    }

    pub fn tau_bound(&self) -> f64 {
        let d = self.d as f64;
        d * (d - 1.0) - 1.0
    }

    pub fn validate(&self, mode: ScaleMode) -> Vec<ScaleViolation> {
        let mut out = Vec::new();
        let mut push = |code: &str, message: String, value: f64, bound: Option<f64>| {
            out.push(ScaleViolation { code: code.to_string(), message, value, bound });
        };
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            push("eps_out_of_range", "eps must be positive and finite".into(), self.eps, Some(0.0));
        }
        if !(self.alpha >= 0.0) {
            push("alpha_out_of_range", "alpha must be nonnegative".into(), self.alpha, Some(0.0));
        }
        if !(self.beta >= 0.0) {
            push("beta_out_of_range", "beta must be nonnegative".into(), self.beta, Some(0.0));
        }
        if self.d == 0 {
            push("d_out_of_range", "block dimension must be at least 1".into(), 0.0, Some(1.0));
        }
        if self.m == 0 {
            push("m_out_of_range", "Taylor order m must be at least 1".into(), 0.0, Some(1.0));
        }
        let sigma_req = Self::sigma_for(self.m);
        if (self.sigma - sigma_req).abs() > 1e-15 {
            push(
                "sigma_m_mismatch",
                format!("sigma must equal 1/(2(m+1)) = {sigma_req}"),
                self.sigma,
                Some(sigma_req),
            );
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0 / 3.0) {
            push("sigma_out_of_range", "sigma must lie in (0, 1/3)".into(), self.sigma, Some(1.0 / 3.0));
        }
        let tb = self.tau_bound();
        if !(self.tau > tb) {
            push(
                "tau_out_of_range",
                format!("tau must exceed d(d-1)-1 = {tb}"),
                self.tau,
                Some(tb),
            );
        }
        if !((1.0 + self.sigma).powi(self.eta as i32) > 2.0) {
            push(
                "eta_too_small",
                "eta must satisfy (1+sigma)^eta > 2".into(),
                self.eta as f64,
                Some(Self::eta_for(self.sigma) as f64),
            );
        }
        let bound = match mode {
            ScaleMode::Mixed => Some(self.beta_bound_mixed()),
            ScaleMode::Slow => Some(self.beta_bound_slow()),
            ScaleMode::Fast => None,
        };
        if let Some(b) = bound {
            if self.beta >= b {
                push(
                    "beta_out_of_range",
                    format!("beta must be below {b:e} in {mode:?} mode"),
                    self.beta,
                    Some(b),
                );
            }
        }
        out
    }
}

/// `e + ⟨a,b⟩ + ½⟨b,𝔄b⟩ + ĥ(b)` with `b = (y, η, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalForm {
    pub e: f64,
    pub a: Vec<f64>,
    pub hess: DMatrix<f64>,
    pub hhat: Series,
}

impl NormalForm {
    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn scaling(&self) -> Scaling {
        self.hhat.scaling()
    }

    /// Splits an angle-free series by Taylor degree. Imaginary parts are
    /// discarded; the caller is responsible for passing a real function.
    pub fn from_angle_free(series: &Series) -> Result<NormalForm, HamiltonianError> {
        if !series.is_angle_free() {
            return Err(HamiltonianError::NotAngleFree);
        }
        let scaling = series.scaling();
        let n = 3 * scaling.d;
        let mut e = 0.0;
        let mut a = vec![0.0; n];
        let mut hess = DMatrix::zeros(n, n);
        let mut high = Vec::new();
        for (m, c) in series.iter() {
            let j = m.j();
            match m.degree() {
                0 => e = c.re,
                1 => {
                    let i = j.iter().position(|&v| v == 1).unwrap();
                    a[i] = c.re;
                }
                2 => {
                    let idx: Vec<usize> = (0..n).filter(|&i| j[i] > 0).collect();
                    if idx.len() == 1 {
                        hess[(idx[0], idx[0])] = 2.0 * c.re;
                    } else {
                        hess[(idx[0], idx[1])] = c.re;
                        hess[(idx[1], idx[0])] = c.re;
                    }
                }
                _ => high.push((m.clone(), Complex64::new(c.re, 0.0))),
            }
        }
        Ok(NormalForm { e, a, hess, hhat: Series::from_terms(scaling, high) })
    }

    /// Quadratic part `½⟨b,𝔄b⟩` as a series.
    pub fn quadratic_series(&self) -> Series {
        let scaling = self.scaling();
        let n = self.dim();
        let mut terms = Vec::new();
        for r in 0..n {
            for c in r..n {
                let v = self.hess[(r, c)];
                if v == 0.0 {
                    continue;
                }
                let mut j = vec![0u32; n];
                j[r] += 1;
                j[c] += 1;
                let coef = if r == c { 0.5 * v } else { 0.5 * (v + self.hess[(c, r)]) };
                terms.push((ModeIndex::action(j), Complex64::new(coef, 0.0)));
            }
        }
        Series::from_terms(scaling, terms)
    }

    pub fn linear_series(&self) -> Series {
        let n = self.dim();
        let terms = (0..n).map(|i| {
            let mut j = vec![0u32; n];
            j[i] = 1;
            (ModeIndex::action(j), Complex64::new(self.a[i], 0.0))
        });
        Series::from_terms(self.scaling(), terms)
    }

    /// The full normal form as a series.
    pub fn as_series(&self) -> Series {
        let scaling = self.scaling();
        let mut terms: Vec<(ModeIndex, Complex64)> =
            vec![(ModeIndex::zero(scaling.d), Complex64::new(self.e, 0.0))];
        terms.extend(self.linear_series().iter().map(|(m, c)| (m.clone(), *c)));
        terms.extend(self.quadratic_series().iter().map(|(m, c)| (m.clone(), *c)));
        terms.extend(self.hhat.iter().map(|(m, c)| (m.clone(), *c)));
        Series::from_terms(scaling, terms)
    }

    /// The part of the normal form above the linear terms.
    pub fn nonlinear_series(&self) -> Series {
        self.quadratic_series().add(&self.hhat).expect("same scaling")
    }

    pub fn check_invariants(&self) -> Result<(), HamiltonianError> {
        let n = self.dim();
        if self.hess.nrows() != n || self.hess.ncols() != n {
            return Err(HamiltonianError::Invariant("Hessian shape".into()));
        }
        let scale = self.hess.amax().max(1.0);
        for r in 0..n {
            for c in 0..n {
                if (self.hess[(r, c)] - self.hess[(c, r)]).abs() > 1e-13 * scale {
                    return Err(HamiltonianError::Invariant("Hessian not symmetric".into()));
                }
            }
        }
        for (m, _) in self.hhat.iter() {
            if !m.is_angle_free() || m.degree() < 3 {
                return Err(HamiltonianError::Invariant("hhat must be angle-free with degree >= 3".into()));
            }
        }
        Ok(())
    }
}

/// Principal-minor row selection (0-based indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorSelector {
    pub rows: Vec<usize>,
    pub condition: f64,
    pub det: f64,
}

impl MinorSelector {
    pub fn extract(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.rows.len();
        DMatrix::from_fn(n, n, |r, c| m[(self.rows[r], self.rows[c])])
    }

    pub fn select(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&i| v[i]).collect()
    }

    /// Places `v` at the selected rows of a zero vector of length `n`.
    pub fn embed(&self, v: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&i, &x) in self.rows.iter().zip(v) {
            out[i] = x;
        }
        out
    }
}

pub const MINOR_CONDITION_LIMIT: f64 = 1e12;

fn principal_det(hess: &DMatrix<f64>, rows: &[usize]) -> f64 {
    let n = rows.len();
    DMatrix::from_fn(n, n, |r, c| hess[(rows[r], rows[c])]).determinant()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Chooses an `n×n` principal minor of `hess`: greedy symmetric pivoting on
/// the Schur-complement diagonal, then single swaps while the determinant
/// grows by more than 5%.
pub fn select_minor(hess: &DMatrix<f64>, n: usize) -> Result<MinorSelector, HamiltonianError> {
    let size = hess.nrows();
    if n == 0 || n > size {
        return Err(HamiltonianError::MinorSize { n, max: size });
    }
    let mut schur = hess.clone();
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best = None;
        let mut best_val = -1.0;
        for i in 0..size {
            if chosen.contains(&i) {
                continue;
            }
            let v = schur[(i, i)].abs();
            if v > best_val {
                best_val = v;
                best = Some(i);
            }
        }
        let p = best.unwrap();
        chosen.push(p);
        let piv = schur[(p, p)];
        if piv != 0.0 {
            let col = schur.column(p).clone_owned();
            let row = schur.row(p).clone_owned();
            schur -= (col * row) / piv;
        }
    }
    let mut det = principal_det(hess, &chosen).abs();
    loop {
        let mut improved = false;
        'outer: for slot in 0..n {
            for cand in 0..size {
                if chosen.contains(&cand) {
                    continue;
                }
                let mut trial = chosen.clone();
                trial[slot] = cand;
                let d = principal_det(hess, &trial).abs();
                if d > 1.05 * det {
                    chosen = trial;
                    det = d;
                    improved = true;
                    break 'outer;
                }
            }
        }
        if !improved {
            break;
        }
    }
    chosen.sort_unstable();
    let minor = DMatrix::from_fn(n, n, |r, c| hess[(chosen[r], chosen[c])]);
    let condition = condition_number(&minor);
    if !(condition <= MINOR_CONDITION_LIMIT) {
        return Err(HamiltonianError::NoNonsingularMinor { n, condition });
    }
    Ok(MinorSelector { det: minor.determinant(), rows: chosen, condition })
}

/// Samples the box on a regular interior grid and checks that the
/// derivative columns `∂^α a`, `|α| ≤ n_order`, span the full frequency
/// space (singular values above `1e−8` relative).
pub fn check_rank_condition<F>(a_of_xi: F, domain: &[(f64, f64)], n_order: usize) -> bool
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = domain.len();
    let per_dim: usize = match p {
        0 => 1,
        1 => 7,
        2 => 4,
        _ => 3,
    };
    let alphas = multi_indices(p, n_order);
    let total = per_dim.pow(p as u32);
    for idx in 0..total {
        let mut xi = Vec::with_capacity(p);
        let mut rem = idx;
        for &(lo, hi) in domain {
            let t = (rem % per_dim) as f64;
            rem /= per_dim;
            xi.push(lo + (hi - lo) * (t + 0.5) / per_dim as f64);
        }
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for alpha in &alphas {
            cols.push(fd_derivative(&a_of_xi, &xi, alpha, domain));
        }
        let rows = cols[0].len();
        let m = DMatrix::from_fn(rows, cols.len(), |r, c| cols[c][r]);
        let sv = m.svd(false, false).singular_values;
        let smax = sv.max();
        let tol = 1e-8 * smax.max(1e-300);
        let rank = sv.iter().filter(|&&v| v > tol).count();
        if smax == 0.0 || rank < rows {
            return false;
        }
    }
    true
}

fn multi_indices(p: usize, max_order: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; p]];
    for order in 1..=max_order {
        let mut cur = vec![0usize; p];
        fill(&mut out, &mut cur, 0, order);
    }
    out
}

fn fill(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, pos: usize, left: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    if cur.is_empty() {
        return;
    }
    for v in (0..=left).rev() {
        cur[pos] = v;
        fill(out, cur, pos + 1, left - v);
    }
}

/// Tensor-product central difference for `∂^α f(x)`.
fn fd_derivative<F>(f: &F, x: &[f64], alpha: &[usize], domain: &[(f64, f64)]) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let order: usize = alpha.iter().sum();
    if order == 0 {
        return f(x);
    }
    let steps: Vec<f64> = domain
        .iter()
        .map(|&(lo, hi)| (hi - lo).abs().max(1.0) * 1e-16f64.powf(1.0 / (order as f64 + 2.0)))
        .collect();
    // stencil offsets and weights per dimension
    let stencils: Vec<Vec<(f64, f64)>> = alpha
        .iter()
        .zip(steps.iter())
        .map(|(&n, &h)| {
            (0..=n)
                .map(|i| {
                    let w = if i % 2 == 0 { 1.0 } else { -1.0 } * crate::fourier_taylor::binomial(n as u32, i as u32);
                    ((n as f64 / 2.0 - i as f64) * h, w / h.powi(n as i32))
                })
                .collect()
        })
        .collect();
    let mut acc: Option<Vec<f64>> = None;
    let mut idx = vec![0usize; x.len()];
    loop {
        let mut pt = x.to_vec();
        let mut w = 1.0;
        for d in 0..x.len() {
            let (off, wd) = stencils[d][idx[d]];
            pt[d] += off;
            w *= wd;
        }
        let v = f(&pt);
        match acc.as_mut() {
            None => acc = Some(v.iter().map(|t| t * w).collect()),
            Some(a) => a.iter_mut().zip(v.iter()).for_each(|(s, t)| *s += t * w),
        }
        let mut d = 0;
        while d < x.len() {
            idx[d] += 1;
            if idx[d] < stencils[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == x.len() {
            break;
        }
    }
    acc.unwrap()
}

/// Everything carried from one KAM step to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct KamState {
    pub scales: ScaleParams,
    pub normal: NormalForm,
    pub pert: Series,
    pub r: f64,
    pub s: f64,
    pub gamma: f64,
    pub mu: f64,
    pub nu: usize,
    pub xi: Vec<f64>,
}

/// Initial domain choices not fixed by ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    pub r0: f64,
    pub taylor_cap: Option<u32>,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { r0: 1.0, taylor_cap: None }
    }
}

/// Expands `h` about `ξ` and sets up the initial state with the standard
/// smallness bookkeeping: `s0 = ε^{2/(3m)}`, `γ0 = ε^{(1/3−σ)/(d+m+5)}`,
/// `μ0 = ε^σ`.
pub fn from_integrable(
    h_of_actions: &Series,
    eps: f64,
    pert: &Series,
    scales: &ScaleParams,
    xi: &[f64],
) -> Result<KamState, HamiltonianError> {
    from_integrable_with(h_of_actions, eps, pert, scales, xi, InitOptions::default())
}

pub fn from_integrable_with(
    h_of_actions: &Series,
    eps: f64,
    pert: &Series,
    scales: &ScaleParams,
    xi: &[f64],
    opts: InitOptions,
) -> Result<KamState, HamiltonianError> {
    let n = 3 * scales.d;
    if xi.len() != n {
        return Err(HamiltonianError::ParameterLength { expected: n, got: xi.len() });
    }
    if !h_of_actions.is_angle_free() {
        return Err(HamiltonianError::NotAngleFree);
    }
    let cap = opts.taylor_cap.unwrap_or(scales.m + 4);
    for s in [h_of_actions, pert] {
        if s.max_degree() > cap {
            return Err(HamiltonianError::ExpansionDegreeInsufficient { degree: s.max_degree(), cap });
        }
    }
    let shifted = h_of_actions.translate_actions(xi);
    let normal = NormalForm::from_angle_free(&shifted)?;
    let pert = pert.translate_actions(xi).scale_real(eps);
    let (d, m, sigma) = (scales.d as f64, scales.m as f64, scales.sigma);
    Ok(KamState {
        scales: scales.clone(),
        normal,
        pert,
        r: opts.r0,
        s: eps.powf(2.0 / (3.0 * m)),
        gamma: eps.powf((1.0 / 3.0 - sigma) / (d + m + 5.0)),
        mu: eps.powf(sigma),
        nu: 0,
        xi: xi.to_vec(),
    })
}

impl KamState {
    pub fn hamiltonian(&self) -> Series {
        self.normal.as_series().add(&self.pert).expect("normal form and perturbation share scaling")
    }

    pub fn to_json(&self) -> KamStateJson {
        KamStateJson {
            scales: self.scales.clone(),
            normal: NormalFormJson {
                e: self.normal.e,
                a: self.normal.a.clone(),
                hess: (0..self.normal.dim())
                    .map(|r| (0..self.normal.dim()).map(|c| self.normal.hess[(r, c)]).collect())
                    .collect(),
                hhat: self.normal.hhat.to_json(),
            },
            pert: self.pert.to_json(),
            r: self.r,
            s: self.s,
            gamma: self.gamma,
            mu: self.mu,
            nu: self.nu,
            xi: self.xi.clone(),
        }
    }

    pub fn from_json(js: &KamStateJson) -> Result<KamState, HamiltonianError> {
        let scaling = js.scales.scaling();
        let n = js.normal.a.len();
        if js.normal.hess.len() != n || js.normal.hess.iter().any(|r| r.len() != n) {
            return Err(HamiltonianError::Invariant("Hessian shape".into()));
        }
        let normal = NormalForm {
            e: js.normal.e,
            a: js.normal.a.clone(),
            hess: DMatrix::from_fn(n, n, |r, c| js.normal.hess[r][c]),
            hhat: Series::from_json(&js.normal.hhat, scaling)?,
        };
        normal.check_invariants()?;
        Ok(KamState {
            scales: js.scales.clone(),
            normal,
            pert: Series::from_json(&js.pert, scaling)?,
            r: js.r,
            s: js.s,
            gamma: js.gamma,
            mu: js.mu,
            nu: js.nu,
            xi: js.xi.clone(),
        })
    }
}

/// On-disk form (`*.kamstate.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KamStateJson {
    pub scales: ScaleParams,
    pub normal: NormalFormJson,
    pub pert: SeriesJson,
    pub r: f64,
    pub s: f64,
    pub gamma: f64,
    pub mu: f64,
    pub nu: usize,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalFormJson {
    pub e: f64,
    pub a: Vec<f64>,
    pub hess: Vec<Vec<f64>>,
    pub hhat: SeriesJson,
}
