use serde::{Deserialize, Serialize};

use super::schedule::{build_schedule, Schedule};
use super::step::{kam_step, StepConfig, StepReport};
use super::EngineError;
use crate::hamiltonian::KamState;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationConfig {
    /// Converged once the perturbation norm drops below this.
    pub stop_tol: f64,
    pub nu_max: usize,
    pub step: StepConfig,
    /// Rebuild the schedule with the measured `c0` when it exceeds the
    /// seeded one and the rebuilt `μ` sequence still decreases.
    pub rebuild_schedule: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StallReason {
    NuMax,
    Admissibility { failed: Vec<String> },
    NewtonDiverged { residual: f64 },
    BorderedSingular { condition: f64 },
    Numerical { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Classification {
    Converged { step: usize },
    Excluded { step: usize, k: Vec<i32>, value: f64, bound: f64 },
    Stalled { step: usize, reason: StallReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub steps: Vec<StepReport>,
    pub classification: Classification,
    /// Norm of `P_ν` on `D(r_ν, s_ν)` for every state reached.
    pub pert_norms: Vec<f64>,
    pub final_frequency: Vec<f64>,
    pub final_energy: f64,
    pub cumulative_drift: f64,
    /// `γ0^{d+m+4} μ0`.
    pub drift_bound: f64,
    pub drift_within_bound: bool,
    pub schedule_decreasing: bool,
    pub c0: f64,
    pub schedule_rebuilds: usize,
}

fn classify(err: EngineError, step: usize) -> Classification {
    match err {
        EngineError::SmallDivisorViolation { k, value, bound } => Classification::Excluded { step, k, value, bound },
        EngineError::AdmissibilityFailed { failed, .. } => {
            Classification::Stalled { step, reason: StallReason::Admissibility { failed } }
        }
        EngineError::NewtonDiverged { residual, .. } => {
            Classification::Stalled { step, reason: StallReason::NewtonDiverged { residual } }
        }
        EngineError::BorderedSingular { condition } => {
            Classification::Stalled { step, reason: StallReason::BorderedSingular { condition } }
        }
        e => Classification::Stalled { step, reason: StallReason::Numerical { message: e.to_string() } },
    }
}

/// Runs `kam_step` until the perturbation is below `stop_tol`, a step
/// fails, or `nu_max` steps are done. Steps are numbered from 1.
pub fn iterate(state0: &KamState, schedule: &Schedule, cfg: &IterationConfig) -> (IterationReport, KamState) {
    let mut schedule = schedule.clone();
    let mut step_cfg = cfg.step.clone();
    let mut state = state0.clone();
    let mut steps = Vec::new();
    let mut rebuilds = 0;
    let mut norms = Vec::new();
    let nu_max = cfg.nu_max.min(schedule.nu_max());

    let classification = 'run: {
        match state.pert.weighted_norm(state.r, state.s) {
            Ok(n) => norms.push(n),
            Err(e) => break 'run classify(e.into(), 0),
        }
        if state.pert.is_empty() || norms[0] < cfg.stop_tol {
            break 'run Classification::Converged { step: 0 };
        }
        match step_cfg.resolve_selector(&state) {
            Ok(sel) => step_cfg.selector = sel,
            Err(e) => break 'run classify(e, 1),
        }
        for i in 0..nu_max {
            match kam_step(&state, &schedule, &step_cfg) {
                Ok((next, rep)) => {
                    log::debug!("step {} norm {:e} -> {:e}", i + 1, rep.pert_norm_before, rep.pert_norm_after);
                    norms.push(rep.pert_norm_after);
                    let implied = rep.implied_c0;
                    steps.push(rep);
                    state = next;
                    if state.pert.is_empty() || *norms.last().unwrap() < cfg.stop_tol {
                        break 'run Classification::Converged { step: i + 1 };
                    }
                    if cfg.rebuild_schedule && implied > schedule.init.c0 && implied.is_finite() {
                        let mut init = schedule.init;
                        init.c0 = implied;
                        let rebuilt = build_schedule(&state.scales, init, schedule.nu_max());
                        if rebuilt.decreasing {
                            schedule = rebuilt;
                            rebuilds += 1;
                        }
                    }
                }
                Err(e) => break 'run classify(e, i + 1),
            }
        }
        Classification::Stalled { step: nu_max, reason: StallReason::NuMax }
    };

    let sc = &state0.scales;
    let drift = state
        .normal
        .a
        .iter()
        .zip(&state0.normal.a)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let drift_bound = schedule.init.gamma0.powi((sc.d + sc.m as usize + 4) as i32) * schedule.init.mu0;
    let report = IterationReport {
        steps,
        classification,
        pert_norms: norms,
        final_frequency: state.normal.a.clone(),
        final_energy: state.normal.e,
        cumulative_drift: drift,
        drift_bound,
        drift_within_bound: drift <= drift_bound,
        schedule_decreasing: schedule.decreasing,
        c0: schedule.init.c0,
        schedule_rebuilds: rebuilds,
    };
    (report, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier_taylor::{ModeIndex, Series};
    use crate::hamiltonian::{from_integrable, ScaleMode, ScaleParams};
    use crate::kam_engine::schedule::ScheduleInit;
    use crate::kam_engine::step::StepMode;
    use num_complex::Complex64;

    fn cfg(mode: StepMode) -> IterationConfig {
        IterationConfig {
            stop_tol: 0.0,
            nu_max: 4,
            step: StepConfig::new(ScaleMode::Fast, mode),
            rebuild_schedule: true,
        }
    }

    #[test]
    fn integrable_start_converges_immediately() {
        let sc = ScaleParams::new(1e-6, 0.5, 0.0, 1, 1, 1.0);
        let s = sc.scaling();
        let h = Series::monomial(s, ModeIndex::action(vec![2, 0, 0]), Complex64::new(0.5, 0.0));
        let st = from_integrable(&h, 1e-6, &Series::zero(s), &sc, &[1.0, 0.0, 0.0]).unwrap();
        let sched = build_schedule(&sc, ScheduleInit::from_eps(&sc, 1.0), 4);
        let (rep, _) = iterate(&st, &sched, &cfg(StepMode::Existence));
        assert_eq!(rep.classification, Classification::Converged { step: 0 });
    }

    #[test]
    fn resonant_frequency_is_excluded() {
        let sc = ScaleParams::new(1e-6, 0.0, 0.0, 2, 1, 2.0);
        let s = sc.scaling();
        let h = Series::from_terms(
            s,
            (0..6).map(|i| {
                let mut j = vec![0; 6];
                j[i] = 2;
                (ModeIndex::action(j), Complex64::new(0.5, 0.0))
            }),
        );
        let mut terms = Vec::new();
        for k in [[1, -1], [-1, 1], [1, 0], [-1, 0]] {
            terms.push((ModeIndex::harmonic(vec![k[0], k[1], 0, 0, 0, 0]), Complex64::new(0.5, 0.0)));
        }
        let p = Series::from_terms(s, terms);
        let st = from_integrable(&h, 1e-6, &p, &sc, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let sched = build_schedule(&sc, ScheduleInit::from_eps(&sc, 1.0), 4);
        let (rep, _) = iterate(&st, &sched, &cfg(StepMode::Existence));
        match rep.classification {
            Classification::Excluded { step, k, .. } => {
                assert_eq!(step, 1);
                assert_eq!(k.iter().map(|v| v.unsigned_abs()).sum::<u32>(), 2);
                assert_eq!(k[0] + k[1], 0);
            }
            c => panic!("{c:?}"),
        }
    }
}
