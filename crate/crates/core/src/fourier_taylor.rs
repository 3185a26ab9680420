//! Sparse Fourier-Taylor series over three angle blocks (fast `x`, normal `θ`,
//! slow `φ`) and their conjugate action blocks (`y`, `η`, `I`).
//!
//! Angles live on the standard torus. A fast harmonic `k1` oscillates like
//! `e^{i⟨k1,x⟩/λ1}` and a slow one like `e^{iλ2⟨k3,φ⟩}`, so every angle
//! derivative multiplies by the effective wavevector `(k1/λ1, k2, λ2 k3)`.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("block dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("series carry different scale factors")]
    ScaleMismatch,
    #[error("weighted norm overflows f64")]
    NormOverflow,
    #[error("phase point has {got} entries per block, expected {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("malformed term: {0}")]
    Malformed(String),
}

/// One of the three angle/action blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Fast,
    Normal,
    Slow,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Fast, Block::Normal, Block::Slow];

    pub fn index(self) -> usize {
        match self {
            Block::Fast => 0,
            Block::Normal => 1,
            Block::Slow => 2,
        }
    }
}

/// A differentiation variable: block plus component inside the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Angle(Block, usize),
    Action(Block, usize),
}

/// Block size and the two scale factors a series needs to turn harmonics
/// into effective wavevectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub d: usize,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Scaling {
    pub fn new(d: usize, lambda1: f64, lambda2: f64) -> Self {
        Self { d, lambda1, lambda2 }
    }

    /// Classical single-scale algebra (`λ1 = λ2 = 1`).
    pub fn unit(d: usize) -> Self {
        Self::new(d, 1.0, 1.0)
    }

    pub fn block_factor(&self, block: Block) -> f64 {
        match block {
            Block::Fast => 1.0 / self.lambda1,
            Block::Normal => 1.0,
            Block::Slow => self.lambda2,
        }
    }

    /// Factor for flat component `c` in `0..3d`.
    pub fn component_factor(&self, c: usize) -> f64 {
        self.block_factor(Block::ALL[c / self.d])
    }

    fn same_as(&self, other: &Scaling) -> Result<(), SeriesError> {
        if self.d != other.d {
            return Err(SeriesError::DimensionMismatch(self.d, other.d));
        }
        if self.lambda1.to_bits() != other.lambda1.to_bits()
            || self.lambda2.to_bits() != other.lambda2.to_bits()
        {
            return Err(SeriesError::ScaleMismatch);
        }
        Ok(())
    }
}

/// Packed mode index: harmonics `(k1, k2, k3)` and Taylor orders `(j1, j2, j3)`,
/// each block of length `d`. Ordering is lexicographic on `(k, j)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeIndex {
    k: Box<[i32]>,
    j: Box<[u32]>,
}

impl ModeIndex {
    /// `k` and `j` are flat vectors of length `3d`.
    pub fn new(k: Vec<i32>, j: Vec<u32>) -> Self {
        assert_eq!(k.len(), j.len(), "harmonic and Taylor parts must match");
        assert_eq!(k.len() % 3, 0, "flat index length must be 3d");
        Self { k: k.into_boxed_slice(), j: j.into_boxed_slice() }
    }

    pub fn from_blocks(k: [&[i32]; 3], j: [&[u32]; 3]) -> Self {
        let kk: Vec<i32> = k.iter().flat_map(|b| b.iter().copied()).collect();
        let jj: Vec<u32> = j.iter().flat_map(|b| b.iter().copied()).collect();
        Self::new(kk, jj)
    }

    pub fn zero(d: usize) -> Self {
        Self::new(vec![0; 3 * d], vec![0; 3 * d])
    }

    /// Pure Taylor monomial.
    pub fn action(j: Vec<u32>) -> Self {
        let n = j.len();
        Self::new(vec![0; n], j)
    }

    /// Pure harmonic.
    pub fn harmonic(k: Vec<i32>) -> Self {
        let n = k.len();
        Self::new(k, vec![0; n])
    }

    pub fn d(&self) -> usize {
        self.k.len() / 3
    }

    pub fn k(&self) -> &[i32] {
        &self.k
    }

    pub fn j(&self) -> &[u32] {
        &self.j
    }

    pub fn k_block(&self, b: Block) -> &[i32] {
        let d = self.d();
        &self.k[b.index() * d..(b.index() + 1) * d]
    }

    pub fn j_block(&self, b: Block) -> &[u32] {
        let d = self.d();
        &self.j[b.index() * d..(b.index() + 1) * d]
    }

    /// ℓ¹ norm of the full harmonic vector.
    pub fn k_norm(&self) -> u64 {
        self.k.iter().map(|v| v.unsigned_abs() as u64).sum()
    }

    /// ℓ¹ norm of one harmonic block.
    pub fn k_block_norm(&self, b: Block) -> u64 {
        self.k_block(b).iter().map(|v| v.unsigned_abs() as u64).sum()
    }

    pub fn degree(&self) -> u32 {
        self.j.iter().sum()
    }

    pub fn is_angle_free(&self) -> bool {
        self.k.iter().all(|&v| v == 0)
    }

    pub fn is_constant(&self) -> bool {
        self.is_angle_free() && self.degree() == 0
    }

    /// Same Taylor part, negated harmonics.
    pub fn conjugate(&self) -> Self {
        Self { k: self.k.iter().map(|v| -v).collect(), j: self.j.clone() }
    }

    /// `δ_b`: 0 when block `b` carries no harmonic, else 1.
    pub fn delta(&self, b: Block) -> f64 {
        if self.k_block(b).iter().all(|&v| v == 0) {
            0.0
        } else {
            1.0
        }
    }

    /// Effective wavevector `(δ1 k1/λ1, δ2 k2, δ3 λ2 k3)`.
    pub fn effective_wavevector(&self, scaling: &Scaling) -> Vec<f64> {
        (0..self.k.len())
            .map(|c| self.k[c] as f64 * scaling.component_factor(c))
            .collect()
    }

    /// `|λ̃| = δ1/λ1 + δ2 + δ3 λ2`.
    pub fn lambda_tilde(&self, scaling: &Scaling) -> f64 {
        Block::ALL.iter().map(|&b| self.delta(b) * scaling.block_factor(b)).sum()
    }

    fn weight_exponent(&self, scaling: &Scaling) -> f64 {
        (0..self.k.len())
            .map(|c| (self.k[c].unsigned_abs() as f64) * scaling.component_factor(c))
            .sum()
    }
}

/// Evaluation point `(x, y, θ, η, φ, I)`, stored as flat angle and action
/// vectors of length `3d` in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub angles: Vec<f64>,
    pub actions: Vec<f64>,
}

impl PhasePoint {
    pub fn new(angles: Vec<f64>, actions: Vec<f64>) -> Self {
        Self { angles, actions }
    }

    pub fn from_blocks(x: &[f64], y: &[f64], theta: &[f64], eta: &[f64], phi: &[f64], big_i: &[f64]) -> Self {
        Self {
            angles: [x, theta, phi].concat(),
            actions: [y, eta, big_i].concat(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    scaling: Scaling,
    terms: BTreeMap<ModeIndex, Complex64>,
}

fn is_zero(c: Complex64) -> bool {
    c.re == 0.0 && c.im == 0.0
}

impl Series {
    pub fn zero(scaling: Scaling) -> Self {
        Self { scaling, terms: BTreeMap::new() }
    }

    pub fn constant(scaling: Scaling, c: Complex64) -> Self {
        Self::monomial(scaling, ModeIndex::zero(scaling.d), c)
    }

    pub fn monomial(scaling: Scaling, mode: ModeIndex, c: Complex64) -> Self {
        assert_eq!(mode.d(), scaling.d, "mode block size must match scaling");
        let mut s = Self::zero(scaling);
        if !is_zero(c) {
            s.terms.insert(mode, c);
        }
        s
    }

    /// Builds a series, summing duplicate modes and pruning exact zeros.
    pub fn from_terms<I>(scaling: Scaling, terms: I) -> Self
    where
        I: IntoIterator<Item = (ModeIndex, Complex64)>,
    {
        let mut map: BTreeMap<ModeIndex, Complex64> = BTreeMap::new();
        for (m, c) in terms {
            assert_eq!(m.d(), scaling.d, "mode block size must match scaling");
            *map.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        map.retain(|_, c| !is_zero(*c));
        Self { scaling, terms: map }
    }

    fn from_accumulator(scaling: Scaling, acc: HashMap<ModeIndex, Complex64>) -> Self {
        let terms = acc.into_iter().filter(|(_, c)| !is_zero(*c)).collect();
        Self { scaling, terms }
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn dims(&self) -> usize {
        self.scaling.d
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModeIndex, &Complex64)> {
        self.terms.iter()
    }

    pub fn get(&self, mode: &ModeIndex) -> Complex64 {
        self.terms.get(mode).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Highest Taylor degree present (0 for an empty series).
    pub fn max_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    /// Largest ℓ¹ harmonic norm present.
    pub fn max_harmonic(&self) -> u64 {
        self.terms.keys().map(|m| m.k_norm()).max().unwrap_or(0)
    }

    pub fn is_angle_free(&self) -> bool {
        self.terms.keys().all(|m| m.is_angle_free())
    }

    pub fn add(&self, other: &Series) -> Result<Series, SeriesError> {
        self.scaling.same_as(&other.scaling)?;
        let mut terms = self.terms.clone();
        for (m, c) in &other.terms {
            *terms.entry(m.clone()).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        terms.retain(|_, c| !is_zero(*c));
        Ok(Series { scaling: self.scaling, terms })
    }

    pub fn sub(&self, other: &Series) -> Result<Series, SeriesError> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, factor: Complex64) -> Series {
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| (m.clone(), c * factor))
            .filter(|(_, c)| !is_zero(*c))
            .collect();
        Series { scaling: self.scaling, terms }
    }

    pub fn scale_real(&self, factor: f64) -> Series {
        self.scale(Complex64::new(factor, 0.0))
    }

    /// Convolution in `(k, j)`; products above `degree_cap` are dropped.
    pub fn multiply(&self, other: &Series, degree_cap: u32) -> Result<Series, SeriesError> {
        self.scaling.same_as(&other.scaling)?;
        let mut acc: HashMap<ModeIndex, Complex64> = HashMap::new();
        for (ma, ca) in &self.terms {
            let da = ma.degree();
            for (mb, cb) in &other.terms {
                if da + mb.degree() > degree_cap {
                    continue;
                }
                let k: Vec<i32> = ma.k.iter().zip(mb.k.iter()).map(|(a, b)| a + b).collect();
                let j: Vec<u32> = ma.j.iter().zip(mb.j.iter()).map(|(a, b)| a + b).collect();
                *acc.entry(ModeIndex::new(k, j)).or_insert(Complex64::new(0.0, 0.0)) += ca * cb;
            }
        }
        Ok(Self::from_accumulator(self.scaling, acc))
    }

    /// `{A,B} = Σ (∂A/∂angle · ∂B/∂action − ∂A/∂action · ∂B/∂angle)`.
    pub fn poisson_bracket(&self, other: &Series, degree_cap: u32) -> Result<Series, SeriesError> {
        self.scaling.same_as(&other.scaling)?;
        let n = 3 * self.scaling.d;
        let keff_b: Vec<Vec<f64>> =
            other.terms.keys().map(|m| m.effective_wavevector(&self.scaling)).collect();
        let mut acc: HashMap<ModeIndex, Complex64> = HashMap::new();
        for (ma, ca) in &self.terms {
            let keff_a = ma.effective_wavevector(&self.scaling);
            let da = ma.degree();
            for ((mb, cb), kb) in other.terms.iter().zip(keff_b.iter()) {
                let total = da + mb.degree();
                if total == 0 || total - 1 > degree_cap {
                    continue;
                }
                let prod = ca * cb;
                let mut k: Option<Vec<i32>> = None;
                for c in 0..n {
                    let f = keff_a[c] * mb.j[c] as f64 - ma.j[c] as f64 * kb[c];
                    if f == 0.0 {
                        continue;
                    }
                    let k = k.get_or_insert_with(|| {
                        ma.k.iter().zip(mb.k.iter()).map(|(a, b)| a + b).collect()
                    });
                    let mut j: Vec<u32> = ma.j.iter().zip(mb.j.iter()).map(|(a, b)| a + b).collect();
                    j[c] -= 1;
                    *acc.entry(ModeIndex::new(k.clone(), j)).or_insert(Complex64::new(0.0, 0.0)) +=
                        Complex64::new(0.0, f) * prod;
                }
            }
        }
        Ok(Self::from_accumulator(self.scaling, acc))
    }

    /// Angle average: keeps exactly the zero-harmonic modes.
    pub fn average(&self) -> Series {
        self.filter(|m| m.is_angle_free())
    }

    /// Keeps modes with `|k| ≤ k_max` and `|j| ≤ m`.
    pub fn truncate(&self, k_max: u64, m: u32) -> Series {
        self.filter(|mode| mode.k_norm() <= k_max && mode.degree() <= m)
    }

    pub fn truncate_degree(&self, m: u32) -> Series {
        self.filter(|mode| mode.degree() <= m)
    }

    /// Terms of Taylor degree exactly `deg`.
    pub fn homogeneous_part(&self, deg: u32) -> Series {
        self.filter(|mode| mode.degree() == deg)
    }

    pub fn filter<F: Fn(&ModeIndex) -> bool>(&self, keep: F) -> Series {
        let terms = self
            .terms
            .iter()
            .filter(|(m, _)| keep(m))
            .map(|(m, c)| (m.clone(), *c))
            .collect();
        Series { scaling: self.scaling, terms }
    }

    /// Drops terms whose contribution to `weighted_norm(r, s)` is below `floor`.
    pub fn prune_weighted(&self, r: f64, s: f64, floor: f64) -> Series {
        let ls = s.ln();
        let lf = floor.ln();
        let terms = self
            .terms
            .iter()
            .filter(|(m, c)| {
                c.norm().ln() + r * m.weight_exponent(&self.scaling) + m.degree() as f64 * ls >= lf
            })
            .map(|(m, c)| (m.clone(), *c))
            .collect();
        Series { scaling: self.scaling, terms }
    }

    /// Majorant norm `Σ |c| exp(⟨|k_eff|, r⟩) s^{|j|}`, summed in log space
    /// per term so large weights on tiny coefficients do not overflow.
    pub fn weighted_norm(&self, r: f64, s: f64) -> Result<f64, SeriesError> {
        let ls = s.ln();
        let mut total = 0.0;
        for (m, c) in &self.terms {
            let lt = c.norm().ln() + r * m.weight_exponent(&self.scaling) + m.degree() as f64 * ls;
            let t = lt.exp();
            if !t.is_finite() {
                return Err(SeriesError::NormOverflow);
            }
            total += t;
        }
        if !total.is_finite() {
            return Err(SeriesError::NormOverflow);
        }
        Ok(total)
    }

    /// Sum of coefficient magnitudes.
    pub fn l1(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    pub fn evaluate(&self, point: &PhasePoint) -> Result<Complex64, SeriesError> {
        let n = 3 * self.scaling.d;
        for v in [&point.angles, &point.actions] {
            if v.len() != n {
                return Err(SeriesError::PointDimension { expected: n, got: v.len() / 3 });
            }
        }
        let scaled: Vec<f64> = (0..n).map(|c| point.angles[c] * self.scaling.component_factor(c)).collect();
        let mut sum = Complex64::new(0.0, 0.0);
        for (m, c) in &self.terms {
            let mut phase = 0.0;
            let mut mono = 1.0;
            for i in 0..n {
                if m.k[i] != 0 {
                    phase += m.k[i] as f64 * scaled[i];
                }
                if m.j[i] != 0 {
                    mono *= point.actions[i].powi(m.j[i] as i32);
                }
            }
            sum += c * Complex64::from_polar(mono, phase);
        }
        Ok(sum)
    }

    /// Value at zero angles; for angle-free series this is the function of
    /// the actions alone.
    pub fn eval_actions(&self, actions: &[f64]) -> Complex64 {
        let n = 3 * self.scaling.d;
        let point = PhasePoint::new(vec![0.0; n], actions.to_vec());
        self.evaluate(&point).expect("action vector length must be 3d")
    }

    pub fn derivative(&self, var: Var) -> Series {
        let d = self.scaling.d;
        let terms = match var {
            Var::Angle(b, i) => {
                let c = b.index() * d + i;
                let f = self.scaling.component_factor(c);
                self.terms
                    .iter()
                    .filter(|(m, _)| m.k[c] != 0)
                    .map(|(m, coef)| (m.clone(), coef * Complex64::new(0.0, m.k[c] as f64 * f)))
                    .collect()
            }
            Var::Action(b, i) => {
                let c = b.index() * d + i;
                self.terms
                    .iter()
                    .filter(|(m, _)| m.j[c] != 0)
                    .map(|(m, coef)| {
                        let mut j = m.j.to_vec();
                        let p = j[c];
                        j[c] -= 1;
                        (ModeIndex { k: m.k.clone(), j: j.into_boxed_slice() }, coef * p as f64)
                    })
                    .collect()
            }
        };
        Series { scaling: self.scaling, terms }
    }

    /// Derivative with respect to flat action component `c` in `0..3d`.
    pub fn action_derivative(&self, c: usize) -> Series {
        let d = self.scaling.d;
        self.derivative(Var::Action(Block::ALL[c / d], c % d))
    }

    /// Real gradient in the actions at `b` (angles zero).
    pub fn action_gradient(&self, b: &[f64]) -> Vec<f64> {
        (0..3 * self.scaling.d).map(|c| self.action_derivative(c).eval_actions(b).re).collect()
    }

    /// Real Hessian in the actions at `b` (angles zero), row-major.
    pub fn action_hessian(&self, b: &[f64]) -> Vec<Vec<f64>> {
        let n = 3 * self.scaling.d;
        let firsts: Vec<Series> = (0..n).map(|c| self.action_derivative(c)).collect();
        (0..n)
            .map(|r| (0..n).map(|c| firsts[r].action_derivative(c).eval_actions(b).re).collect())
            .collect()
    }

    /// Re-expands `A(b + shift)` as a series in `b`. Exact for polynomial
    /// Taylor parts; the degree never increases.
    pub fn translate_actions(&self, shift: &[f64]) -> Series {
        let n = 3 * self.scaling.d;
        assert_eq!(shift.len(), n, "shift length must be 3d");
        if shift.iter().all(|&v| v == 0.0) {
            return self.clone();
        }
        let mut acc: HashMap<ModeIndex, Complex64> = HashMap::new();
        for (m, c) in &self.terms {
            // expansion[i] lists (new exponent, factor) for component i
            let expansion: Vec<Vec<(u32, f64)>> = (0..n)
                .map(|i| {
                    let p = m.j[i];
                    if p == 0 || shift[i] == 0.0 {
                        vec![(p, 1.0)]
                    } else {
                        (0..=p)
                            .map(|l| (l, binomial(p, l) * shift[i].powi((p - l) as i32)))
                            .collect()
                    }
                })
                .collect();
            let mut idx = vec![0usize; n];
            loop {
                let mut j = Vec::with_capacity(n);
                let mut f = 1.0;
                for i in 0..n {
                    let (e, w) = expansion[i][idx[i]];
                    j.push(e);
                    f *= w;
                }
                if f != 0.0 {
                    *acc.entry(ModeIndex { k: m.k.clone(), j: j.into_boxed_slice() })
                        .or_insert(Complex64::new(0.0, 0.0)) += c * f;
                }
                let mut pos = 0;
                loop {
                    if pos == n {
                        break;
                    }
                    idx[pos] += 1;
                    if idx[pos] < expansion[pos].len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == n {
                    break;
                }
            }
        }
        Self::from_accumulator(self.scaling, acc)
    }

    /// Conjugate symmetry `coeff(−k, j) = conj(coeff(k, j))` within `tol`
    /// relative to the larger of the two magnitudes.
    pub fn is_real(&self, tol: f64) -> bool {
        self.terms.iter().all(|(m, c)| {
            let partner = self.get(&m.conjugate());
            let scale = c.norm().max(partner.norm());
            (c - partner.conj()).norm() <= tol * scale
        })
    }

    pub fn to_json(&self) -> SeriesJson {
        let d = self.scaling.d;
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| TermJson {
                k1: m.k[..d].to_vec(),
                k2: m.k[d..2 * d].to_vec(),
                k3: m.k[2 * d..].to_vec(),
                j1: m.j[..d].to_vec(),
                j2: m.j[d..2 * d].to_vec(),
                j3: m.j[2 * d..].to_vec(),
                re: c.re,
                im: c.im,
            })
            .collect();
        SeriesJson { dims: d, terms }
    }

    pub fn from_json(json: &SeriesJson, scaling: Scaling) -> Result<Series, SeriesError> {
        if json.dims != scaling.d {
            return Err(SeriesError::DimensionMismatch(json.dims, scaling.d));
        }
        let d = json.dims;
        let mut out = Vec::with_capacity(json.terms.len());
        for (i, t) in json.terms.iter().enumerate() {
            let lens = [t.k1.len(), t.k2.len(), t.k3.len(), t.j1.len(), t.j2.len(), t.j3.len()];
            if lens.iter().any(|&l| l != d) {
                return Err(SeriesError::Malformed(format!("term {i}: every block needs {d} entries")));
            }
            if !t.re.is_finite() || !t.im.is_finite() {
                return Err(SeriesError::Malformed(format!("term {i}: non-finite coefficient")));
            }
            let mode = ModeIndex::from_blocks([&t.k1, &t.k2, &t.k3], [&t.j1, &t.j2, &t.j3]);
            out.push((mode, Complex64::new(t.re, t.im)));
        }
        Ok(Series::from_terms(scaling, out))
    }
}

pub fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

/// Wire format for a series. Terms are emitted in packed-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesJson {
    pub dims: usize,
    pub terms: Vec<TermJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermJson {
    pub k1: Vec<i32>,
    pub k2: Vec<i32>,
    pub k3: Vec<i32>,
    pub j1: Vec<u32>,
    pub j2: Vec<u32>,
    pub j3: Vec<u32>,
    pub re: f64,
    pub im: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn fast1() -> Scaling {
        Scaling::new(1, 0.1, 1.0)
    }

    fn mode(k: [i32; 3], j: [u32; 3]) -> ModeIndex {
        ModeIndex::new(k.to_vec(), j.to_vec())
    }

    #[test]
    fn add_identity_and_inverse() {
        let s = fast1();
        let a = Series::from_terms(s, [(mode([1, 0, 0], [1, 0, 0]), c(2.0)), (mode([0, 0, 0], [0, 0, 0]), c(1.0))]);
        assert_eq!(a.add(&Series::zero(s)).unwrap(), a);
        assert!(a.add(&a.scale_real(-1.0)).unwrap().is_empty());
        let one = Series::monomial(s, mode([0, 1, 0], [0, 0, 0]), c(1.0));
        let two = Series::monomial(s, mode([0, 1, 0], [0, 0, 0]), c(2.0));
        let sum = one.add(&two).unwrap();
        assert_eq!(sum.len(), 1);
        assert_eq!(sum.get(&mode([0, 1, 0], [0, 0, 0])), c(3.0));
    }

    #[test]
    fn mismatched_scales_rejected() {
        let a = Series::constant(fast1(), c(1.0));
        let b = Series::constant(Scaling::new(1, 0.2, 1.0), c(1.0));
        assert_eq!(a.add(&b), Err(SeriesError::ScaleMismatch));
        let e = Series::constant(Scaling::unit(2), c(1.0));
        assert_eq!(a.multiply(&e, 3), Err(SeriesError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn monomial_product() {
        let s = fast1();
        let y = Series::monomial(s, mode([0, 0, 0], [1, 0, 0]), c(1.0));
        let one = Series::constant(s, c(1.0));
        assert_eq!(y.multiply(&one, 4).unwrap(), y);
        let y2 = y.multiply(&y, 2).unwrap();
        assert_eq!(y2.get(&mode([0, 0, 0], [2, 0, 0])), c(1.0));
        assert!(y.multiply(&y, 1).unwrap().is_empty());
    }

    #[test]
    fn bracket_of_fast_exponential_with_action() {
        let s = fast1();
        let e = Series::monomial(s, mode([1, 0, 0], [0, 0, 0]), c(1.0));
        let y = Series::monomial(s, mode([0, 0, 0], [1, 0, 0]), c(1.0));
        let b = e.poisson_bracket(&y, 8).unwrap();
        assert_eq!(b.len(), 1);
        let v = b.get(&mode([1, 0, 0], [0, 0, 0]));
        assert!((v - Complex64::new(0.0, 10.0)).norm() < 1e-14);
        assert!(e.poisson_bracket(&e, 8).unwrap().is_empty());
    }

    #[test]
    fn slow_and_normal_bracket_factors() {
        let s = Scaling::new(1, 0.1, 0.01);
        let slow = Series::monomial(s, mode([0, 0, 1], [0, 0, 0]), c(1.0));
        let big_i = Series::monomial(s, mode([0, 0, 0], [0, 0, 1]), c(1.0));
        let v = slow.poisson_bracket(&big_i, 8).unwrap().get(&mode([0, 0, 1], [0, 0, 0]));
        assert!((v - Complex64::new(0.0, 0.01)).norm() < 1e-16);
        let normal = Series::monomial(s, mode([0, 2, 0], [0, 0, 0]), c(1.0));
        let eta = Series::monomial(s, mode([0, 0, 0], [0, 1, 0]), c(1.0));
        let v = normal.poisson_bracket(&eta, 8).unwrap().get(&mode([0, 2, 0], [0, 0, 0]));
        assert!((v - Complex64::new(0.0, 2.0)).norm() < 1e-16);
    }

    #[test]
    fn average_and_truncate() {
        let s = fast1();
        let a = Series::from_terms(
            s,
            [
                (mode([0, 0, 0], [2, 0, 0]), c(1.0)),
                (mode([0, 1, 0], [1, 0, 0]), c(1.0)),
                (mode([3, 0, 0], [0, 0, 0]), c(1.0)),
            ],
        );
        let avg = a.average();
        assert_eq!(avg.len(), 1);
        assert_eq!(avg.average(), avg);
        let single = Series::monomial(s, mode([0, 1, 0], [1, 0, 0]), c(1.0));
        assert!(single.average().is_empty());
        assert_eq!(a.truncate(3, 2), a);
        assert_eq!(a.truncate(2, 2).len(), 2);
        let far = Series::monomial(s, mode([2, 1, 0], [0, 0, 0]), c(1.0));
        assert!(far.truncate(2, 5).is_empty());
    }

    #[test]
    fn weighted_norm_definition() {
        let s = fast1();
        assert_eq!(Series::zero(s).weighted_norm(1.0, 1.0).unwrap(), 0.0);
        let a = Series::monomial(s, mode([0, 0, 0], [0, 1, 0]), c(2.0));
        assert!((a.weighted_norm(0.3, 0.5).unwrap() - 1.0).abs() < 1e-15);
        let b = Series::monomial(s, mode([1, 0, 0], [0, 0, 0]), c(1.0));
        assert!((b.weighted_norm(0.5, 1.0).unwrap() - 5f64.exp()).abs() < 1e-12);
        let huge = Series::monomial(s, mode([100, 0, 0], [0, 0, 0]), c(1.0));
        assert_eq!(huge.weighted_norm(1.0, 1.0), Err(SeriesError::NormOverflow));
        let tiny = Series::monomial(s, mode([100, 0, 0], [0, 0, 0]), c(1e-300));
        assert!(tiny.weighted_norm(0.5, 1.0).unwrap().is_finite());
    }

    #[test]
    fn derivative_examples() {
        let s = fast1();
        let k = Series::constant(s, c(3.0));
        assert!(k.derivative(Var::Action(Block::Fast, 0)).is_empty());
        let e = Series::monomial(s, mode([1, 0, 0], [0, 0, 0]), c(1.0));
        let dx = e.derivative(Var::Angle(Block::Fast, 0));
        assert!((dx.get(&mode([1, 0, 0], [0, 0, 0])) - Complex64::new(0.0, 10.0)).norm() < 1e-14);
    }

    #[test]
    fn evaluate_constant_and_exponential() {
        let s = Scaling::new(1, 0.1, 0.5);
        let p = PhasePoint::from_blocks(&[0.3], &[0.7], &[1.1], &[0.2], &[2.0], &[0.4]);
        assert_eq!(Series::constant(s, c(2.5)).evaluate(&p).unwrap(), c(2.5));
        let m = Series::monomial(s, mode([1, 1, 1], [1, 0, 2]), c(1.0));
        let expect = Complex64::from_polar(0.7 * 0.16, 0.3 / 0.1 + 1.1 + 0.5 * 2.0);
        assert!((m.evaluate(&p).unwrap() - expect).norm() < 1e-14);
    }

    #[test]
    fn translation_matches_pointwise_shift() {
        let s = Scaling::unit(1);
        let a = Series::from_terms(
            s,
            [
                (mode([0, 0, 0], [3, 0, 0]), c(1.0)),
                (mode([1, 0, 0], [1, 2, 0]), c(0.5)),
                (mode([0, 0, 0], [0, 0, 1]), c(-2.0)),
            ],
        );
        let shift = [0.5, -0.25, 0.1];
        let t = a.translate_actions(&shift);
        let b = [0.2, 0.3, -0.4];
        let bs: Vec<f64> = b.iter().zip(shift.iter()).map(|(u, v)| u + v).collect();
        let p1 = PhasePoint::new(vec![0.4, 0.0, 0.0], b.to_vec());
        let p2 = PhasePoint::new(vec![0.4, 0.0, 0.0], bs);
        assert!((t.evaluate(&p1).unwrap() - a.evaluate(&p2).unwrap()).norm() < 1e-14);
        assert!(t.max_degree() <= a.max_degree());
    }

    #[test]
    fn json_round_trip_is_ordered() {
        let s = Scaling::unit(1);
        let a = Series::from_terms(
            s,
            [(mode([1, 0, 0], [0, 0, 0]), Complex64::new(0.5, -0.5)), (mode([-1, 0, 0], [0, 0, 0]), Complex64::new(0.5, 0.5))],
        );
        let js = a.to_json();
        assert_eq!(js.terms[0].k1, vec![-1]);
        let text = serde_json::to_string(&js).unwrap();
        let back: SeriesJson = serde_json::from_str(&text).unwrap();
        assert_eq!(Series::from_json(&back, s).unwrap(), a);
        assert!(a.is_real(1e-15));
    }

    #[test]
    fn delta_and_lambda_tilde() {
        let s = Scaling::new(1, 0.1, 0.01);
        let m = mode([0, 2, -1], [0, 0, 0]);
        assert_eq!(m.delta(Block::Fast), 0.0);
        assert_eq!(m.delta(Block::Normal), 1.0);
        assert_eq!(m.delta(Block::Slow), 1.0);
        assert!((m.lambda_tilde(&s) - 1.01).abs() < 1e-15);
        assert_eq!(m.effective_wavevector(&s), vec![0.0, 2.0, -0.01]);
    }
}
