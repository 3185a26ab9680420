use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::EngineError;
use crate::fourier_taylor::{ModeIndex, Series};
use crate::hamiltonian::{condition_number, MinorSelector, NormalForm, MINOR_CONDITION_LIMIT};

const MAX_NEWTON: usize = 50;

/// Result of moving the torus to `b = b*` after absorbing `[R]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub b_star: Vec<f64>,
    pub t_star: Option<f64>,
    pub normal: NormalForm,
    /// Linear remainder `⟨∇[R](b*) − p01, b⟩` handed back to the perturbation.
    pub psi: Series,
    pub residual: f64,
    pub iterations: usize,
}

fn real_part(s: &Series) -> Series {
    Series::from_terms(s.scaling(), s.iter().map(|(m, c)| (m.clone(), Complex64::new(c.re, 0.0))))
}

fn linear_coefficients(s: &Series, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (m, c) in s.iter() {
        if m.is_angle_free() && m.degree() == 1 {
            let i = m.j().iter().position(|&v| v == 1).unwrap();
            out[i] = c.re;
        }
    }
    out
}

fn hess_times(h: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    (h * DVector::from_column_slice(b)).iter().copied().collect()
}

/// `a + p01 + 𝔄b + ∇ĥ(b)`.
fn shifted_frequency(normal: &NormalForm, p01: &[f64], b: &[f64]) -> Vec<f64> {
    let hb = hess_times(&normal.hess, b);
    let gh = normal.hhat.action_gradient(b);
    (0..b.len()).map(|i| normal.a[i] + p01[i] + hb[i] + gh[i]).collect()
}

fn hessian_at(normal: &NormalForm, b: &[f64]) -> DMatrix<f64> {
    let n = b.len();
    let hh = normal.hhat.action_hessian(b);
    DMatrix::from_fn(n, n, |r, c| normal.hess[(r, c)] + hh[r][c])
}

fn assemble(normal: &NormalForm, avg: &Series, b: &[f64]) -> Result<(NormalForm, Series), EngineError> {
    let n = normal.dim();
    let scaling = normal.scaling();
    let p01 = linear_coefficients(avg, n);
    let total = normal.as_series().add(avg)?;
    let zero_shift = b.iter().all(|&v| v == 0.0);
    let shifted = if zero_shift { total } else { total.translate_actions(b) };
    let mut plus = NormalForm::from_angle_free(&real_part(&shifted))?;
    plus.a = shifted_frequency(normal, &p01, b);
    let psi = if zero_shift {
        Series::zero(scaling)
    } else {
        let g = avg.action_gradient(b);
        Series::from_terms(
            scaling,
            (0..n).map(|i| {
                let mut j = vec![0u32; n];
                j[i] = 1;
                (ModeIndex::action(j), Complex64::new(g[i] - p01[i], 0.0))
            }),
        )
    };
    Ok((plus, psi))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Newton on `F(x) = 0` until `|F| ≤ 1e−3·tol`, or until roundoff stalls
/// the decrease once `|F| ≤ tol`.
fn newton<F>(mut x: Vec<f64>, tol: f64, mut eval: F) -> Result<(Vec<f64>, f64, usize), EngineError>
where
    F: FnMut(&[f64]) -> (Vec<f64>, DMatrix<f64>),
{
    let mut last = f64::INFINITY;
    for it in 0..=MAX_NEWTON {
        let (res, jac) = eval(&x);
        let norm = max_abs(&res);
        if !norm.is_finite() {
            return Err(EngineError::NewtonDiverged { iterations: it, residual: norm });
        }
        if norm <= tol * 1e-3 || (norm <= tol && norm >= 0.5 * last) {
            return Ok((x, norm, it));
        }
        if it == MAX_NEWTON {
            return Err(EngineError::NewtonDiverged { iterations: it, residual: norm });
        }
        let rhs = -DVector::from_column_slice(&res);
        let dx = jac
            .lu()
            .solve(&rhs)
            .ok_or(EngineError::NewtonDiverged { iterations: it, residual: norm })?;
        for (xi, d) in x.iter_mut().zip(dx.iter()) {
            *xi += d;
        }
        last = norm;
    }
    unreachable!()
}

/// Existence mode: `N₊ = N + [R]`, no translation.
pub fn absorb_average(normal: &NormalForm, avg_r: &Series) -> Result<Translation, EngineError> {
    let avg = real_part(&avg_r.average());
    let b = vec![0.0; normal.dim()];
    let (plus, psi) = assemble(normal, &avg, &b)?;
    Ok(Translation { b_star: b, t_star: None, normal: plus, psi, residual: 0.0, iterations: 0 })
}

/// Solves `(𝔄b* + ∇ĥ(b*) + p01)_sel = 0` with `b*` supported on the
/// selected rows, so the selected frequency components do not move.
pub fn retention_translate(
    normal: &NormalForm,
    avg_r: &Series,
    selector: &MinorSelector,
    tol: f64,
) -> Result<Translation, EngineError> {
    let avg = real_part(&avg_r.average());
    let n = normal.dim();
    let p01 = linear_coefficients(&avg, n);
    let rows = &selector.rows;
    let (z, residual, iterations) = newton(vec![0.0; rows.len()], tol, |z| {
        let b = selector.embed(z, n);
        let f = shifted_frequency(normal, &p01, &b);
        let res = rows.iter().map(|&i| f[i] - normal.a[i]).collect();
        (res, selector.extract(&hessian_at(normal, &b)))
    })?;
    let b = selector.embed(&z, n);
    let (plus, psi) = assemble(normal, &avg, &b)?;
    Ok(Translation { b_star: b, t_star: None, normal: plus, psi, residual, iterations })
}

/// Solves for `(b*, t*)` with `a₊_sel = (1+t*) a_sel` and `e₊ = e`.
pub fn isoenergetic_translate(
    normal: &NormalForm,
    avg_r: &Series,
    selector: &MinorSelector,
    tol: f64,
) -> Result<Translation, EngineError> {
    let avg = real_part(&avg_r.average());
    let n = normal.dim();
    let p01 = linear_coefficients(&avg, n);
    let rows = &selector.rows;
    let q = rows.len();
    let a_sel = selector.select(&normal.a);
    let minor = selector.extract(&normal.hess);
    let bordered = DMatrix::from_fn(q + 1, q + 1, |r, c| match (r < q, c < q) {
        (true, true) => minor[(r, c)],
        (true, false) => a_sel[r],
        (false, true) => a_sel[c],
        (false, false) => 0.0,
    });
    let condition = condition_number(&bordered);
    if !(condition <= MINOR_CONDITION_LIMIT) {
        return Err(EngineError::BorderedSingular { condition });
    }
    let nonlinear = normal.nonlinear_series();
    let energy_shift = |b: &[f64]| -> f64 {
        let lin: f64 = normal.a.iter().zip(b).map(|(a, x)| a * x).sum();
        lin + nonlinear.eval_actions(b).re + avg.eval_actions(b).re
    };
    let (x, residual, iterations) = newton(vec![0.0; q + 1], tol, |x| {
        let b = selector.embed(&x[..q], n);
        let t = x[q];
        let f = shifted_frequency(normal, &p01, &b);
        let mut res: Vec<f64> = rows.iter().zip(&a_sel).map(|(&i, &ai)| f[i] - normal.a[i] - t * ai).collect();
        res.push(energy_shift(&b));
        let h = selector.extract(&hessian_at(normal, &b));
        let ga = avg.action_gradient(&b);
        let jac = DMatrix::from_fn(q + 1, q + 1, |r, c| match (r < q, c < q) {
            (true, true) => h[(r, c)],
            (true, false) => -a_sel[r],
            (false, true) => f[rows[c]] - p01[rows[c]] + ga[rows[c]],
            (false, false) => 0.0,
        });
        (res, jac)
    })?;
    let b = selector.embed(&x[..q], n);
    let (plus, psi) = assemble(normal, &avg, &b)?;
    Ok(Translation { b_star: b, t_star: Some(x[q]), normal: plus, psi, residual, iterations })
}
