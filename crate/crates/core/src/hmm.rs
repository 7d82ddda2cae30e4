//! Hidden Markov models as deterministic functions of a finite Markov chain.
//!
//! A model is a row-stochastic transition matrix over `B` states together
//! with a symbol map sending every state to one of `A` output symbols.
//! Symbols are 0-based internally.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums must equal 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Negative entries above `-NEGATIVE_CLAMP` are treated as rounding noise.
pub const NEGATIVE_CLAMP: f64 = 1e-12;
/// Stationary masses below this are set to zero.
const STATIONARY_DUST: f64 = 1e-14;
/// Largest state space the dense routines accept.
pub const MAX_STATES: usize = 64;
/// Two eigenvalues closer than this are counted as one repeated eigenvalue.
pub const MULTIPLICITY_TOL: f64 = 1e-8;
/// The dominant eigenvalue is isolated if its modulus beats the rest by more than this.
pub const ISOLATION_TOL: f64 = 1e-10;

/// A validated row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    entries: DMatrix<f64>,
    flat: Vec<f64>,
}

impl StochasticMatrix {
    /// Validates raw rows. Entries in `[-1e-12, 0)` are clamped to zero and
    /// their row renormalized; anything more negative is rejected.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(Error::Empty);
        }
        if size > MAX_STATES {
            return Err(Error::MatrixTooLarge { size, max: MAX_STATES });
        }
        let mut flat = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {size}",
                    row.len()
                )));
            }
            let mut clamped = false;
            let mut cleaned = Vec::with_capacity(size);
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if v < -NEGATIVE_CLAMP {
                    return Err(Error::NegativeEntry { row: i, col: j, value: v });
                }
                if v < 0.0 {
                    clamped = true;
                    cleaned.push(0.0);
                } else {
                    cleaned.push(v);
                }
            }
            let sum: f64 = cleaned.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NonStochastic { row: i, sum });
            }
            if clamped {
                cleaned.iter_mut().for_each(|v| *v /= sum);
            }
            flat.extend(cleaned);
        }
        let entries = DMatrix::from_row_slice(size, size, &flat);
        Ok(Self { entries, flat })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        Self::new(&rows)
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.flat[i * self.size() + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.flat.chunks(self.size()).map(<[f64]>::to_vec).collect()
    }

    /// Row vector times matrix: `out = x Δ`.
    #[inline]
    pub(crate) fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        let n = self.size();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.flat[i * n..(i + 1) * n];
            for (o, &d) in out.iter_mut().zip(row) {
                *o += xi * d;
            }
        }
    }
}

/// Deterministic map from Markov states to output symbols `0..alphabet`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SymbolMap {
    map: Vec<usize>,
    alphabet: usize,
    #[serde(skip)]
    preimages: Vec<Vec<usize>>,
}

impl SymbolMap {
    /// `map[i]` is the symbol of state `i`; every symbol below `alphabet`
    /// must be attained.
    pub fn new(map: Vec<usize>, alphabet: usize) -> Result<Self> {
        if map.is_empty() || alphabet == 0 {
            return Err(Error::Empty);
        }
        let mut preimages = vec![Vec::new(); alphabet];
        for (state, &s) in map.iter().enumerate() {
            if s >= alphabet {
                return Err(Error::PhiOutOfRange { state, label: s as i64, alphabet });
            }
            preimages[s].push(state);
        }
        if let Some(missing) = preimages.iter().position(Vec::is_empty) {
            return Err(Error::InvalidParameter(format!("symbol {missing} is never emitted")));
        }
        Ok(Self { map, alphabet, preimages })
    }

    /// Accepts raw labels as they appear in model files. Labels are 0-based
    /// when any label is 0 and 1-based otherwise; the alphabet size is the
    /// number of distinct labels, and every label must fall inside it.
    pub fn from_labels(labels: &[i64]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty);
        }
        let distinct: BTreeSet<i64> = labels.iter().copied().collect();
        let alphabet = distinct.len();
        let base = if distinct.contains(&0) { 0 } else { 1 };
        let mut map = Vec::with_capacity(labels.len());
        for (state, &label) in labels.iter().enumerate() {
            let shifted = label - base;
            if shifted < 0 || shifted as usize >= alphabet {
                return Err(Error::PhiOutOfRange { state, label, alphabet });
            }
            map.push(shifted as usize);
        }
        Self::new(map, alphabet)
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn symbol(&self, state: usize) -> usize {
        self.map[state]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// States emitting symbol `a`, in increasing order.
    #[inline]
    pub fn states_of(&self, a: usize) -> &[usize] {
        &self.preimages[a]
    }

    pub fn is_unambiguous(&self, a: usize) -> bool {
        self.preimages[a].len() == 1
    }
}

/// A stationary Markov chain observed through a deterministic symbol map.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMarkovModel {
    delta: StochasticMatrix,
    phi: SymbolMap,
}

impl HiddenMarkovModel {
    pub fn new(delta: StochasticMatrix, phi: SymbolMap) -> Result<Self> {
        if delta.size() != phi.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} states but a symbol map of length {}",
                delta.size(),
                phi.len()
            )));
        }
        Ok(Self { delta, phi })
    }

    pub fn delta(&self) -> &StochasticMatrix {
        &self.delta
    }

    pub fn phi(&self) -> &SymbolMap {
        &self.phi
    }

    pub fn num_states(&self) -> usize {
        self.delta.size()
    }

    pub fn alphabet_size(&self) -> usize {
        self.phi.alphabet_size()
    }

    /// `Δ_a`: the columns of `Δ` belonging to symbol `a`, others zeroed.
    pub fn symbol_matrices(&self) -> Vec<DMatrix<f64>> {
        symbol_matrices(self)
    }

    pub fn stationary(&self) -> Result<StationaryDistribution> {
        stationary_distribution(&self.delta)
    }
}

/// Builds a model from raw rows and raw symbol labels.
pub fn validate(delta_rows: &[Vec<f64>], phi_values: &[i64]) -> Result<HiddenMarkovModel> {
    let delta = StochasticMatrix::new(delta_rows)?;
    let phi = SymbolMap::from_labels(phi_values)?;
    HiddenMarkovModel::new(delta, phi)
}

pub fn symbol_matrices(model: &HiddenMarkovModel) -> Vec<DMatrix<f64>> {
    let d = model.delta.entries();
    (0..model.alphabet_size())
        .map(|a| {
            let mut m = DMatrix::zeros(d.nrows(), d.ncols());
            for &j in model.phi.states_of(a) {
                m.set_column(j, &d.column(j));
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDistribution {
    pub probs: Vec<f64>,
}

/// Solves `vΔ = v`, `v·1 = 1` as one least-squares system with the
/// normalization appended as an extra row.
pub fn stationary_distribution(delta: &StochasticMatrix) -> Result<StationaryDistribution> {
    let n = delta.size();
    let system = delta.entries().transpose() - DMatrix::<f64>::identity(n, n);

    let singular = system.clone().svd(false, false).singular_values;
    let multiplicity = singular.iter().filter(|&&s| s < MULTIPLICITY_TOL).count();
    if multiplicity > 1 {
        return Err(Error::NonSimpleUnitEigenvalue { multiplicity });
    }

    let mut augmented = DMatrix::<f64>::zeros(n + 1, n);
    augmented.view_mut((0, 0), (n, n)).copy_from(&system);
    augmented.row_mut(n).fill(1.0);
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = 1.0;
    let svd = augmented.svd(true, true);
    let solution = svd.solve(&rhs, 1e-14).map_err(|_| Error::EigenSolverFailure)?;

    // Transient states come back as rounding dust of either sign.
    let mut probs: Vec<f64> = solution.iter().map(|&v| if v < STATIONARY_DUST { 0.0 } else { v }).collect();
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EigenSolverFailure);
    }
    probs.iter_mut().for_each(|p| *p /= total);

    let mut image = vec![0.0; n];
    delta.left_mul(&probs, &mut image);
    if image.iter().zip(&probs).any(|(a, b)| (a - b).abs() > ROW_SUM_TOL) {
        return Err(Error::EigenSolverFailure);
    }
    Ok(StationaryDistribution { probs })
}

/// `-p ln p` with `0 ln 0 = 0`.
#[inline]
pub(crate) fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy in nats.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter().map(|&x| plogp(x)).sum()
}

/// Entropy rate of the underlying Markov chain, `-Σ π_i Δ_ij ln Δ_ij`.
pub fn markov_entropy(delta: &StochasticMatrix) -> Result<f64> {
    let pi = stationary_distribution(delta)?;
    let n = delta.size();
    Ok((0..n)
        .map(|i| pi.probs[i] * (0..n).map(|j| plogp(delta.get(i, j))).sum::<f64>())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub spectral_radius: f64,
    pub dominant_eigenvalue: Complex64,
    pub is_simple_isolated: bool,
    /// `|λ₁| − max_{i≠1} |λᵢ|`, reported as 0 whenever the dominant
    /// eigenvalue is not simple and isolated.
    pub modulus_gap: f64,
    pub eigenvalues: Vec<Complex64>,
}

pub fn eigenvalues(matrix: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !matrix.is_square() {
        return Err(Error::DimensionMismatch("eigenvalues of a non-square matrix".into()));
    }
    let n = matrix.nrows();
    if n > MAX_STATES {
        return Err(Error::MatrixTooLarge { size: n, max: MAX_STATES });
    }
    if n == 0 {
        return Err(Error::Empty);
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenSolverFailure);
    }
    let schur = nalgebra::linalg::Schur::try_new(matrix.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::EigenSolverFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_report(matrix: &DMatrix<f64>) -> Result<SpectralReport> {
    let eig = eigenvalues(matrix)?;
    // Largest modulus; among (near) ties prefer the largest real part.
    let mut best = 0;
    for (k, z) in eig.iter().enumerate() {
        let (bz, cz) = (eig[best].norm(), z.norm());
        if cz > bz + MULTIPLICITY_TOL || ((cz - bz).abs() <= MULTIPLICITY_TOL && z.re > eig[best].re) {
            best = k;
        }
    }
    let dominant = eig[best];
    let radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let runner_up = eig
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != best)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max);
    let raw_gap = (dominant.norm() - runner_up).max(0.0);
    let multiplicity = eig.iter().filter(|z| (*z - dominant).norm() < MULTIPLICITY_TOL).count();
    let is_simple_isolated = multiplicity == 1 && raw_gap > ISOLATION_TOL;
    Ok(SpectralReport {
        spectral_radius: radius,
        dominant_eigenvalue: dominant,
        is_simple_isolated,
        modulus_gap: if is_simple_isolated { raw_gap } else { 0.0 },
        eigenvalues: eig,
    })
}

/// Binary Markov source `pi` observed through a binary symmetric channel
/// with crossover `eps`. States are (input, noise) pairs ordered
/// (0,0), (0,1), (1,0), (1,1); the output is their XOR.
pub fn build_bsc(pi: &[[f64; 2]; 2], eps: f64) -> Result<HiddenMarkovModel> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidEps(eps));
    }
    StochasticMatrix::new(&[pi[0].to_vec(), pi[1].to_vec()])?;
    let row = |y: usize| {
        vec![
            pi[y][0] * (1.0 - eps),
            pi[y][0] * eps,
            pi[y][1] * (1.0 - eps),
            pi[y][1] * eps,
        ]
    };
    let rows = vec![row(0), row(0), row(1), row(1)];
    let delta = StochasticMatrix::new(&rows)?;
    HiddenMarkovModel::new(delta, SymbolMap::new(vec![0, 1, 1, 0], 2)?)
}

/// Parameters of the three-state family whose unambiguous state has the
/// self-transition `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example71Params {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    #[serde(default)]
    pub eps: f64,
}

/// `Δ(ε) = [[ε, a−ε, b], [g, c, d], [h, e, f]]`, `Φ = (0, 1, 1)`.
pub fn build_example_7_1(p: &Example71Params) -> Result<HiddenMarkovModel> {
    let rows = vec![
        vec![p.eps, p.a - p.eps, p.b],
        vec![p.g, p.c, p.d],
        vec![p.h, p.e, p.f],
    ];
    HiddenMarkovModel::new(StochasticMatrix::new(&rows)?, SymbolMap::new(vec![0, 1, 1], 2)?)
}

/// Parameters of the three-state family whose ambiguous block is upper
/// triangular with off-diagonal entry `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example72Params {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    #[serde(default)]
    pub eps: f64,
}

/// `Δ(ε) = [[e, a, b], [f−ε, c, ε], [g, 0, d]]`, `Φ = (0, 1, 1)`.
pub fn build_example_7_2(p: &Example72Params) -> Result<HiddenMarkovModel> {
    let rows = vec![
        vec![p.e, p.a, p.b],
        vec![p.f - p.eps, p.c, p.eps],
        vec![p.g, 0.0, p.d],
    ];
    HiddenMarkovModel::new(StochasticMatrix::new(&rows)?, SymbolMap::new(vec![0, 1, 1], 2)?)
}
