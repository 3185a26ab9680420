use num_complex::Complex64;

use super::EngineError;
use crate::fourier_taylor::{ModeIndex, Scaling, Series};
use crate::hamiltonian::{NormalForm, ScaleMode};

/// `L_k = i⟨k_eff, a⟩` with `k_eff = (k1/λ1, k2, λ2 k3)`.
pub fn small_divisor(k: &ModeIndex, a: &[f64], scaling: &Scaling) -> Result<Complex64, EngineError> {
    if k.k().iter().all(|&v| v == 0) {
        return Err(EngineError::ZeroMode);
    }
    let kk = k.k();
    let mut acc = [0.0f64; 3];
    for (c, &kc) in kk.iter().enumerate() {
        acc[c / scaling.d] += kc as f64 * a[c];
    }
    let v = acc[0] / scaling.lambda1 + acc[1] + scaling.lambda2 * acc[2];
    Ok(Complex64::new(0.0, v))
}

/// Lower bound a divisor must exceed before division is allowed.
pub fn divisor_gate(k: &ModeIndex, gamma: f64, tau: f64, scaling: &Scaling, mode: ScaleMode) -> f64 {
    let kn = (k.k_norm() as f64).powf(tau);
    match mode {
        ScaleMode::Fast => gamma / (2.0 * scaling.lambda1 * kn),
        ScaleMode::Slow => gamma * scaling.lambda2 / (2.0 * kn),
        ScaleMode::Mixed => k.lambda_tilde(scaling) * gamma / kn,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomologicalSolution {
    pub generator: Series,
    pub divisor_min: f64,
    pub divisor_min_mode: Option<Vec<i32>>,
    /// `l1({N_lin, F} + R − [R]) / l1(R)`.
    pub residual: f64,
}

/// Solves `{N_lin, F} + R − [R] = 0` mode by mode. The first mode (in the
/// order of smallest `|L_k| / gate`) that fails the gate aborts the solve.
pub fn solve_homological(
    normal: &NormalForm,
    r: &Series,
    gamma: f64,
    tau: f64,
    mode: ScaleMode,
) -> Result<HomologicalSolution, EngineError> {
    let scaling = r.scaling();
    let mut terms = Vec::with_capacity(r.len());
    let mut divisor_min = f64::INFINITY;
    let mut divisor_min_mode = None;
    let mut worst: Option<(f64, Vec<i32>, f64, f64)> = None;
    for (m, c) in r.iter() {
        if m.is_angle_free() {
            continue;
        }
        let l = small_divisor(m, &normal.a, &scaling)?;
        let value = l.im.abs();
        let gate = divisor_gate(m, gamma, tau, &scaling, mode);
        if value < divisor_min {
            divisor_min = value;
            divisor_min_mode = Some(m.k().to_vec());
        }
        if !(value > gate) {
            let ratio = value / gate;
            if worst.as_ref().map_or(true, |w| ratio < w.0) {
                worst = Some((ratio, m.k().to_vec(), value, gate));
            }
            continue;
        }
        terms.push((m.clone(), c / l));
    }
    if let Some((_, k, value, bound)) = worst {
        return Err(EngineError::SmallDivisorViolation { k, value, bound });
    }
    let generator = Series::from_terms(scaling, terms);
    let rn = r.l1();
    let residual = if rn == 0.0 {
        0.0
    } else {
        let lin = normal.linear_series();
        let res = lin
            .poisson_bracket(&generator, u32::MAX)?
            .add(r)?
            .sub(&r.average())?;
        res.l1() / rn
    };
    Ok(HomologicalSolution { generator, divisor_min, divisor_min_mode, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn normal(scaling: Scaling, a: Vec<f64>) -> NormalForm {
        let n = a.len();
        NormalForm { e: 0.0, a, hess: DMatrix::zeros(n, n), hhat: Series::zero(scaling) }
    }

    #[test]
    fn divisor_examples() {
        let s = Scaling::new(1, 0.1, 0.01);
        let l = small_divisor(&ModeIndex::harmonic(vec![1, 0, 0]), &[1.0, 0.0, 0.0], &s).unwrap();
        assert!((l - Complex64::new(0.0, 10.0)).norm() < 1e-14);
        let a = [1.0, 2f64.sqrt(), 3f64.sqrt()];
        let l = small_divisor(&ModeIndex::harmonic(vec![1, 1, 1]), &a, &s).unwrap();
        assert!((l.im - (10.0 + 1.4142135624 + 0.0173205081)).abs() < 1e-9);
        assert_eq!(small_divisor(&ModeIndex::zero(1), &a, &s), Err(EngineError::ZeroMode));
    }

    #[test]
    fn one_mode_division() {
        let s = Scaling::new(1, 0.1, 1.0);
        let eps = 1e-3;
        let r = Series::monomial(s, ModeIndex::harmonic(vec![1, 0, 0]), Complex64::new(eps, 0.0));
        let sol = solve_homological(&normal(s, vec![1.0, 0.0, 0.0]), &r, 0.1, 1.0, ScaleMode::Fast).unwrap();
        let f = sol.generator.get(&ModeIndex::harmonic(vec![1, 0, 0]));
        assert!((f - Complex64::new(0.0, -0.1 * eps)).norm() < 1e-18);
        assert!(sol.residual < 1e-15);
    }

    #[test]
    fn average_gives_empty_generator() {
        let s = Scaling::new(1, 0.1, 1.0);
        let r = Series::monomial(s, ModeIndex::action(vec![1, 0, 0]), Complex64::new(1.0, 0.0));
        let sol = solve_homological(&normal(s, vec![1.0, 0.0, 0.0]), &r, 0.1, 1.0, ScaleMode::Fast).unwrap();
        assert!(sol.generator.is_empty());
    }

    #[test]
    fn resonance_reports_mode() {
        let s = Scaling::new(2, 1.0, 1.0);
        let r = Series::from_terms(
            s,
            [
                (ModeIndex::harmonic(vec![1, -1, 0, 0, 0, 0]), Complex64::new(1.0, 0.0)),
                (ModeIndex::harmonic(vec![1, 0, 0, 0, 0, 0]), Complex64::new(1.0, 0.0)),
            ],
        );
        let err = solve_homological(&normal(s, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]), &r, 0.1, 2.0, ScaleMode::Fast)
            .unwrap_err();
        match err {
            EngineError::SmallDivisorViolation { k, value, .. } => {
                assert_eq!(k, vec![1, -1, 0, 0, 0, 0]);
                assert_eq!(value, 0.0);
            }
            e => panic!("unexpected {e:?}"),
        }
    }
}
