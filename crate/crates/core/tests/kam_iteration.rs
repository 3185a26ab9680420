use kam_core::fourier_taylor::{ModeIndex, Series};
use kam_core::hamiltonian::{from_integrable, ScaleMode, ScaleParams};
use kam_core::kam_engine::{build_schedule, iterate, Classification, IterationConfig, ScheduleInit, StepConfig, StepMode};
use num_complex::Complex64;

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

#[test]
fn pendulum_like_norms_contract_superlinearly() {
    let eps = 1e-8f64;
    let lambda1 = 0.1f64;
    let sc = ScaleParams::new(eps, lambda1.ln() / eps.ln(), 0.0, 1, 1, 1.0);
    let s = sc.scaling();
    let h = Series::from_terms(s, [(ModeIndex::action(vec![1, 0, 0]), c(1.0)), (ModeIndex::action(vec![2, 0, 0]), c(0.5))]);
    let p = Series::from_terms(s, [(ModeIndex::harmonic(vec![1, 0, 0]), c(0.5)), (ModeIndex::harmonic(vec![-1, 0, 0]), c(0.5))]);
    let st = from_integrable(&h, eps, &p, &sc, &[0.0; 3]).unwrap();
    let sched = build_schedule(&sc, ScheduleInit::from_eps(&sc, 1.0), 8);
    let cfg = IterationConfig { stop_tol: 0.0, nu_max: 6, step: StepConfig::new(ScaleMode::Fast, StepMode::Existence), rebuild_schedule: true };
    let (rep, _) = iterate(&st, &sched, &cfg);
    let sigma = sc.sigma;
    let ok = rep.pert_norms.windows(2).filter(|w| w[1].ln() <= (1.0 + sigma / 2.0) * w[0].ln()).count();
    assert!(ok >= 3, "{ok}");
    assert!(!matches!(rep.classification, Classification::Excluded { .. }));
}
