use serde::{Deserialize, Serialize};

use super::gamma::{gamma_bound_diagnostic, GammaDiagnostic};
use super::homological::solve_homological;
use super::lie::{lie_increment, lie_tail};
use super::schedule::Schedule;
use super::translate::{absorb_average, isoenergetic_translate, retention_translate};
use super::EngineError;
use crate::fourier_taylor::Series;
use crate::hamiltonian::{select_minor, KamState, MinorSelector, ScaleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    Existence,
    Retention,
    Isoenergetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub scale_mode: ScaleMode,
    pub mode: StepMode,
    pub lie_order: usize,
    /// Taylor degree cap for brackets; `m + 4` when unset.
    pub taylor_cap: Option<u32>,
    pub newton_tol: f64,
    pub homological_tol: f64,
    /// Size of the retained minor; numerical rank of `𝔄` when unset.
    pub minor_size: Option<usize>,
    pub selector: Option<MinorSelector>,
    /// Terms below this fraction of the new perturbation norm are dropped.
    pub drop_tol: f64,
    pub gamma_diagnostic: bool,
}

impl StepConfig {
    pub fn new(scale_mode: ScaleMode, mode: StepMode) -> Self {
        Self {
            scale_mode,
            mode,
            lie_order: 4,
            taylor_cap: None,
            newton_tol: 1e-12,
            homological_tol: 1e-12,
            minor_size: None,
            selector: None,
            drop_tol: 1e-18,
            gamma_diagnostic: false,
        }
    }

    pub(crate) fn resolve_selector(&self, state: &KamState) -> Result<Option<MinorSelector>, EngineError> {
        if self.mode == StepMode::Existence {
            return Ok(None);
        }
        if let Some(sel) = &self.selector {
            return Ok(Some(sel.clone()));
        }
        let hess = &state.normal.hess;
        let n = match self.minor_size {
            Some(n) => n,
            None => {
                let sv = hess.clone().svd(false, false).singular_values;
                let tol = 1e-12 * sv.max();
                sv.iter().filter(|&&v| v > tol).count().max(1)
            }
        };
        Ok(Some(select_minor(hess, n)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl AdmissibilityCheck {
    fn below(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.to_string(), value, bound, pass: value <= bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub checks: Vec<AdmissibilityCheck>,
}

/// `∫_K^∞ t^d e^{−ct} dt = e^{−cK} Σ_{i≤d} d!/i! K^i / c^{d+1−i}`, summed in
/// log space.
pub fn tail_integral(k: f64, d: usize, c: f64) -> f64 {
    let lnfact = |n: usize| (1..=n).map(|v| (v as f64).ln()).sum::<f64>();
    let ld = lnfact(d);
    let mut total = 0.0;
    for i in 0..=d {
        if i > 0 && k == 0.0 {
            break;
        }
        let lk = if i == 0 { 0.0 } else { i as f64 * k.ln() };
        total += (-c * k + ld - lnfact(i) + lk - (d + 1 - i) as f64 * c.ln()).exp();
    }
    total
}

/// `R = truncate(P, K, m)` plus the tail-integral admissibility checks for
/// the given scale mode.
pub fn truncate_perturbation(
    pert: &Series,
    k_cut: u64,
    m: u32,
    mode: ScaleMode,
    delta_r: f64,
    mu: f64,
) -> Result<(Series, TailReport), EngineError> {
    let scaling = pert.scaling();
    let r = pert.truncate(k_cut, m);
    let d = scaling.d;
    let k = k_cut as f64;
    let fast = || tail_integral(k, d, delta_r / (4.0 * scaling.lambda1));
    let normal = || tail_integral(k, d, delta_r / 4.0);
    let slow = || tail_integral(k, d, scaling.lambda2 * delta_r / 4.0);
    let checks = if pert.is_empty() {
        Vec::new()
    } else {
        match mode {
            ScaleMode::Fast => vec![AdmissibilityCheck::below("tail_fast", fast(), mu)],
            ScaleMode::Slow => vec![AdmissibilityCheck::below("tail_slow", slow(), mu)],
            ScaleMode::Mixed => {
                let b = mu.powf(1.0 / 3.0);
                vec![
                    AdmissibilityCheck::below("tail_fast", fast(), b),
                    AdmissibilityCheck::below("tail_normal", normal(), b),
                    AdmissibilityCheck::below("tail_slow", slow(), b),
                ]
            }
        }
    };
    let report = TailReport { checks };
    fail_on(&report.checks)?;
    Ok((r, report))
}

fn fail_on(checks: &[AdmissibilityCheck]) -> Result<(), EngineError> {
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(EngineError::AdmissibilityFailed { failed, checks: checks.to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub nu: usize,
    pub k_used: u64,
    pub gamma_used: f64,
    pub divisor_min: f64,
    pub divisor_min_mode: Option<Vec<i32>>,
    pub rejected_modes: Vec<Vec<i32>>,
    pub homological_residual: f64,
    pub pert_norm_before: f64,
    pub pert_norm_after: f64,
    pub pert_terms_after: usize,
    pub generator_terms: usize,
    pub freq_drift: Vec<f64>,
    pub translation: Vec<f64>,
    pub t_star: Option<f64>,
    pub newton_residual: f64,
    pub newton_iterations: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub admissibility: Vec<AdmissibilityCheck>,
    pub implied_c0: f64,
    pub gamma_diagnostic: Option<GammaDiagnostic>,
}

/// Truncate, solve, transform, translate and advance to the next domain.
pub fn kam_step(
    state: &KamState,
    schedule: &Schedule,
    cfg: &StepConfig,
) -> Result<(KamState, StepReport), EngineError> {
    let nu = state.nu;
    if nu + 1 > schedule.nu_max() {
        return Err(EngineError::ScheduleExhausted(nu));
    }
    let sc = &state.scales;
    let d = sc.d;
    let m = sc.m;
    let cap = cfg.taylor_cap.unwrap_or(m + 4);
    let k_cut = match cfg.scale_mode {
        ScaleMode::Fast => schedule.k_fast[nu],
        ScaleMode::Slow | ScaleMode::Mixed => schedule.k_slow[nu],
    };
    let (r, s, gamma, mu) = (state.r, state.s, state.gamma, state.mu);
    let (r_plus, s_plus, gamma_plus, mu_plus) =
        (schedule.r[nu + 1], schedule.s[nu + 1], schedule.gamma[nu + 1], schedule.mu[nu + 1]);
    let normal = &state.normal;
    let pert = &state.pert;
    let norm_before = pert.weighted_norm(r, s)?;

    let (big_r, tail) = truncate_perturbation(pert, k_cut, m, cfg.scale_mode, r - r_plus, mu)?;
    let mut checks = tail.checks;
    let k_eff = k_cut.min(big_r.max_harmonic());
    if k_eff > 0 {
        let m_star = (0..normal.dim())
            .map(|i| normal.hess.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let lhs = 2.0 * s * (m_star + 1.0) * (k_eff as f64).powf(sc.tau + 1.0);
        checks.push(AdmissibilityCheck::below("divisor_margin", lhs, gamma - gamma_plus));
    }
    fail_on(&checks)?;

    let hom = solve_homological(normal, &big_r, gamma, sc.tau, cfg.scale_mode)?;
    let f = &hom.generator;
    let order = cfg.lie_order.max(1);

    // {N, F} = −(R − [R]) + {N_nl, F} by construction, so the cancellation
    // against R is done symbolically.
    let avg_r = big_r.average();
    let bracket_nl = normal.nonlinear_series().poisson_bracket(f, cap)?;
    let g1 = avg_r.sub(&big_r)?.add(&bracket_nl)?;
    let higher_n = if order >= 2 && !f.is_empty() {
        lie_tail(&g1.poisson_bracket(f, cap)?, f, order, cap, 2)?
    } else {
        Series::zero(pert.scaling())
    };
    let rest = pert.filter(|mode| !(mode.k_norm() <= k_cut && mode.degree() <= m));
    let pbar = rest
        .add(&bracket_nl)?
        .add(&higher_n)?
        .add(&lie_increment(pert, f, order, cap)?)?;

    let selector = cfg.resolve_selector(state)?;
    let tr = match (cfg.mode, selector.as_ref()) {
        (StepMode::Retention, Some(sel)) => retention_translate(normal, &avg_r, sel, cfg.newton_tol)?,
        (StepMode::Isoenergetic, Some(sel)) => isoenergetic_translate(normal, &avg_r, sel, cfg.newton_tol)?,
        _ => absorb_average(normal, &avg_r)?,
    };
    let shifted = if tr.b_star.iter().all(|&v| v == 0.0) { pbar } else { pbar.translate_actions(&tr.b_star) };
    let p_plus = shifted.add(&tr.psi)?;
    let raw_norm = p_plus.weighted_norm(r_plus, s_plus)?;
    let p_plus = if raw_norm > 0.0 { p_plus.prune_weighted(r_plus, s_plus, cfg.drop_tol * raw_norm) } else { p_plus };
    let norm_after = p_plus.weighted_norm(r_plus, s_plus)?;
    let denom = gamma_plus.powi((d + m as usize + 5) as i32) * s_plus.powi(m as i32) * mu_plus;

    let gamma_diag = cfg.gamma_diagnostic.then(|| {
        gamma_bound_diagnostic(cfg.scale_mode, sc, k_cut, r - r_plus, mu, gamma, gamma_plus, 0)
    });

    let report = StepReport {
        nu,
        k_used: k_cut,
        gamma_used: gamma,
        divisor_min: hom.divisor_min,
        divisor_min_mode: hom.divisor_min_mode.clone(),
        rejected_modes: Vec::new(),
        homological_residual: hom.residual,
        pert_norm_before: norm_before,
        pert_norm_after: norm_after,
        pert_terms_after: p_plus.len(),
        generator_terms: f.len(),
        freq_drift: tr.normal.a.iter().zip(&normal.a).map(|(x, y)| x - y).collect(),
        translation: tr.b_star.clone(),
        t_star: tr.t_star,
        newton_residual: tr.residual,
        newton_iterations: tr.iterations,
        energy_before: normal.e,
        energy_after: tr.normal.e,
        admissibility: checks,
        implied_c0: if denom > 0.0 { norm_after / denom } else { f64::INFINITY },
        gamma_diagnostic: gamma_diag,
    };
    let next = KamState {
        scales: sc.clone(),
        normal: tr.normal,
        pert: p_plus,
        r: r_plus,
        s: s_plus,
        gamma: gamma_plus,
        mu: mu_plus,
        nu: nu + 1,
        xi: state.xi.clone(),
    };
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier_taylor::{ModeIndex, Scaling};
    use crate::hamiltonian::{from_integrable_with, InitOptions, ScaleParams};
    use crate::kam_engine::schedule::{build_schedule, ScheduleInit};
    use num_complex::Complex64;

    /// Gauss–Legendre on `[K, K + 60/c]`, far past where the integrand dies.
    fn quadrature(k: f64, d: usize, c: f64) -> f64 {
        let nodes = [
            (-0.906179845938664, 0.236926885056189),
            (-0.538469310105683, 0.478628670499366),
            (0.0, 0.568888888888889),
            (0.538469310105683, 0.478628670499366),
            (0.906179845938664, 0.236926885056189),
        ];
        let hi = k + 80.0 / c;
        let n = 20000;
        let h = (hi - k) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let mid = k + (i as f64 + 0.5) * h;
            for (x, w) in nodes {
                let t = mid + 0.5 * h * x;
                total += 0.5 * h * w * t.powi(d as i32) * (-c * t).exp();
            }
        }
        total
    }

    #[test]
    fn tail_integral_matches_quadrature() {
        let c = 2f64.powi(-6) / (4.0 * 0.1);
        let closed = tail_integral(200.0, 1, c);
        let q = quadrature(200.0, 1, c);
        assert!(((closed - q) / q).abs() < 1e-8, "{closed} vs {q}");
        assert!((tail_integral(0.0, 0, 2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_pert_passes_and_keeps_single_mode() {
        let s = Scaling::new(1, 0.1, 1.0);
        let (r, rep) = truncate_perturbation(&Series::zero(s), 10, 1, ScaleMode::Mixed, 0.1, 1e-3).unwrap();
        assert!(r.is_empty() && rep.checks.is_empty());
        let p = Series::monomial(s, ModeIndex::harmonic(vec![2, 0, 0]), Complex64::new(1.0, 0.0));
        let (r, _) = truncate_perturbation(&p, 1u64 << 40, 1, ScaleMode::Fast, 0.25, 1e-3).unwrap();
        assert_eq!(r, p);
        let err = truncate_perturbation(&p, 1, 1, ScaleMode::Fast, 0.25, 1e-3).unwrap_err();
        assert!(matches!(err, EngineError::AdmissibilityFailed { .. }));
    }

    fn pendulum_like(eps: f64) -> (KamState, Schedule) {
        let lambda1 = 0.1f64;
        let alpha = lambda1.ln() / eps.ln();
        let scales = ScaleParams::new(eps, alpha, 0.0, 1, 1, 1.0);
        let s = scales.scaling();
        let h = Series::from_terms(
            s,
            [
                (ModeIndex::action(vec![1, 0, 0]), Complex64::new(1.0, 0.0)),
                (ModeIndex::action(vec![2, 0, 0]), Complex64::new(0.5, 0.0)),
            ],
        );
        let p = Series::from_terms(
            s,
            [
                (ModeIndex::harmonic(vec![1, 0, 0]), Complex64::new(0.5, 0.0)),
                (ModeIndex::harmonic(vec![-1, 0, 0]), Complex64::new(0.5, 0.0)),
            ],
        );
        let st = from_integrable_with(&h, eps, &p, &scales, &[0.0; 3], InitOptions::default()).unwrap();
        let init = ScheduleInit::from_eps(&scales, 1.0);
        (st, build_schedule(&scales, init, 8))
    }

    #[test]
    fn zero_perturbation_only_advances() {
        let (mut st, sched) = pendulum_like(1e-8);
        st.pert = Series::zero(st.pert.scaling());
        let (next, rep) = kam_step(&st, &sched, &StepConfig::new(ScaleMode::Fast, StepMode::Existence)).unwrap();
        assert_eq!(next.normal, st.normal);
        assert!(next.pert.is_empty());
        assert_eq!(next.nu, 1);
        assert_eq!(next.r, sched.r[1]);
        assert_eq!(rep.pert_norm_after, 0.0);
    }

    #[test]
    fn single_step_contracts() {
        let (st, sched) = pendulum_like(1e-8);
        let cfg = StepConfig::new(ScaleMode::Fast, StepMode::Existence);
        let (_, rep) = kam_step(&st, &sched, &cfg).unwrap();
        let ratio = rep.pert_norm_after / rep.pert_norm_before;
        assert!(ratio <= rep.pert_norm_before.powf(st.scales.sigma / 2.0), "{rep:?}");
    }

    #[test]
    fn retention_keeps_selected_frequency() {
        let (st, sched) = pendulum_like(1e-8);
        let cfg = StepConfig::new(ScaleMode::Fast, StepMode::Retention);
        let (next, rep) = kam_step(&st, &sched, &cfg).unwrap();
        assert!(rep.freq_drift[0].abs() <= 1e-11);
        let (_, rep2) = kam_step(&next, &sched, &cfg).unwrap();
        assert!(rep2.freq_drift[0].abs() <= 1e-11);
    }
}
