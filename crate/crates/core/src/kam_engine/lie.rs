use crate::fourier_taylor::{Series, SeriesError};

/// `Σ_{n=0}^{order} ad_F^n H / n!` with `ad_F G = {G, F}`; the truncated
/// pullback of `H` by the time-1 flow of `F`.
pub fn lie_transform(h: &Series, f: &Series, order: usize, degree_cap: u32) -> Result<Series, SeriesError> {
    h.add(&lie_increment(h, f, order, degree_cap)?)
}

/// The same sum without the `n = 0` term.
pub fn lie_increment(h: &Series, f: &Series, order: usize, degree_cap: u32) -> Result<Series, SeriesError> {
    let first = h.poisson_bracket(f, degree_cap)?;
    lie_tail(&first, f, order, degree_cap, 1)
}

/// Continues a Lie series from its `start`-th bracket `g = ad_F^start H`:
/// returns `Σ_{n=start}^{order} ad_F^{n−start} g / n!`.
pub(crate) fn lie_tail(g: &Series, f: &Series, order: usize, degree_cap: u32, start: usize) -> Result<Series, SeriesError> {
    let mut fact: f64 = (1..=start).map(|v| v as f64).product();
    let mut term = g.clone();
    let mut acc = g.scale_real(1.0 / fact);
    for n in start + 1..=order {
        if term.is_empty() || f.is_empty() {
            break;
        }
        term = term.poisson_bracket(f, degree_cap)?;
        fact *= n as f64;
        acc = acc.add(&term.scale_real(1.0 / fact))?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier_taylor::{ModeIndex, Scaling};
    use num_complex::Complex64;

    #[test]
    fn empty_generator_is_identity() {
        let s = Scaling::unit(1);
        let h = Series::monomial(s, ModeIndex::action(vec![2, 0, 0]), Complex64::new(0.5, 0.0));
        assert_eq!(lie_transform(&h, &Series::zero(s), 4, 8).unwrap(), h);
    }

    #[test]
    fn translation_generator_is_exact() {
        // F = c·x is not periodic, but F = c·y generates a rigid angle shift;
        // with H = e^{ix} the exact pullback is e^{i(x + c)}.
        let s = Scaling::unit(1);
        let h = Series::monomial(s, ModeIndex::harmonic(vec![1, 0, 0]), Complex64::new(1.0, 0.0));
        let c = 0.3;
        let f = Series::monomial(s, ModeIndex::action(vec![1, 0, 0]), Complex64::new(c, 0.0));
        let out = lie_transform(&h, &f, 12, 8).unwrap();
        let got = out.get(&ModeIndex::harmonic(vec![1, 0, 0]));
        assert!((got - Complex64::new(0.0, c).exp()).norm() < 1e-10);
    }
}
