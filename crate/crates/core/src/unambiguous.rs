//! Binary hidden Markov chains with an unambiguous symbol.
//!
//! With the unambiguous state moved to the front,
//!
//! ```text
//!     Δ = [ a  r ]
//!         [ c  B ]
//! ```
//!
//! and the entropy rate is the run-length series
//! `π₁H₀ + Σ_{n≥1} (π₁ r Bⁿ⁻¹ 1) H_n`, where `H_n` is the binary entropy of
//! the next symbol after a 0 followed by `n` ones.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::entropy::EntropyEstimate;
use crate::error::{Error, Result};
use crate::hmm::{plogp, spectral_report, HiddenMarkovModel, ROW_SUM_TOL};

/// Default number of `r Bʲ c` terms checked directly.
pub const DEFAULT_J_MAX: usize = 200;
/// Series longer than this are abandoned.
pub const MAX_SERIES_TERMS: usize = 1_000_000;
/// Cap on the support-pattern walk used when no dominant term exists.
const MAX_PATTERN_STEPS: usize = 1 << 20;

fn rows_of<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnambiguousDecomposition {
    pub a: f64,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(rename = "B", serialize_with = "rows_of")]
    pub b: DMatrix<f64>,
    pub pi1: f64,
    /// Index of the unambiguous state in the original model.
    pub state: usize,
    /// Original indices of the remaining states, in block order.
    pub others: Vec<usize>,
}

impl UnambiguousDecomposition {
    /// Builds a decomposition from explicit blocks, checking that
    /// `[a r; c B]` is row-stochastic.
    pub fn from_blocks(a: f64, r: Vec<f64>, c: Vec<f64>, b: DMatrix<f64>, pi1: f64) -> Result<Self> {
        let k = r.len();
        if c.len() != k || b.nrows() != k || b.ncols() != k || k == 0 {
            return Err(Error::DimensionMismatch("block sizes do not agree".into()));
        }
        let negative = a < 0.0 || r.iter().chain(&c).chain(b.iter()).any(|&v| v < 0.0 || !v.is_finite());
        if negative {
            return Err(Error::InvalidParameter("blocks must be finite and nonnegative".into()));
        }
        let top = a + r.iter().sum::<f64>();
        if (top - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NonStochastic { row: 0, sum: top });
        }
        for i in 0..k {
            let s = c[i] + b.row(i).sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NonStochastic { row: i + 1, sum: s });
            }
        }
        Ok(Self { a, r, c, b, pi1, state: 0, others: (1..=k).collect() })
    }

    pub fn size(&self) -> usize {
        self.r.len()
    }
}

pub(crate) fn is_irreducible(model: &HiddenMarkovModel) -> bool {
    let n = model.num_states();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let p = if forward { model.delta().get(i, j) } else { model.delta().get(j, i) };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// First symbol with a single preimage, if any.
pub fn find_unambiguous_symbol(model: &HiddenMarkovModel) -> Option<usize> {
    (0..model.alphabet_size()).find(|&a| model.phi().is_unambiguous(a))
}

/// Decomposition around symbol 0.
pub fn decompose(model: &HiddenMarkovModel) -> Result<UnambiguousDecomposition> {
    decompose_for(model, 0)
}

pub fn decompose_for(model: &HiddenMarkovModel, symbol: usize) -> Result<UnambiguousDecomposition> {
    if model.alphabet_size() != 2 {
        return Err(Error::NotBinary(model.alphabet_size()));
    }
    if symbol >= 2 {
        return Err(Error::InvalidParameter(format!("symbol {symbol} outside the binary alphabet")));
    }
    let pre = model.phi().states_of(symbol);
    if pre.len() != 1 {
        return Err(Error::NoUnambiguousSymbol(format!("symbol {symbol} has {} preimage states", pre.len())));
    }
    if !is_irreducible(model) {
        return Err(Error::NonIrreducible);
    }
    let u = pre[0];
    let others = model.phi().states_of(1 - symbol).to_vec();
    let pi = model.stationary().map_err(|_| Error::NonIrreducible)?;
    let d = model.delta();
    let k = others.len();
    let b = DMatrix::from_fn(k, k, |i, j| d.get(others[i], others[j]));
    Ok(UnambiguousDecomposition {
        a: d.get(u, u),
        r: others.iter().map(|&j| d.get(u, j)).collect(),
        c: others.iter().map(|&i| d.get(i, u)).collect(),
        b,
        pi1: pi.probs[u],
        state: u,
        others,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureWitness {
    /// The unambiguous state has no self-transition.
    ZeroSelfTransition,
    /// `r Bʲ c = 0` at this `j`.
    ZeroTerm { j: u64 },
    /// The two eigenvalues of `B` of largest modulus.
    EigenvaluePair { first: Complex64, second: Complex64 },
    /// `r` is zero, so no run of ones ever starts.
    NoRuns,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticityVerdict {
    pub condition1: bool,
    pub condition2: bool,
    pub analytic: bool,
    /// Number of `j` for which `r Bʲ c > 0` was checked directly.
    pub j_checked: usize,
    /// `j₀` beyond which the dominant term `λ₁ʲ (r x)(y c)` provably wins.
    pub crossover: Option<u64>,
    pub failure_witness: Option<FailureWitness>,
    pub spectral_radius: f64,
    pub modulus_gap: f64,
}

fn null_vector(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    Some(v_t.row(idx).transpose())
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Dominant-term crossover: the smallest `j₀` such that
/// `|r Uʲ c| < λ₁ʲ (r x)(y c)` for every `j ≥ j₀`, or `None` when no
/// contracting power of `U/λ₁` turns up within `j_max` steps.
fn dominant_crossover(dec: &UnambiguousDecomposition, lambda: f64, j_max: usize) -> Option<std::result::Result<u64, ()>> {
    let k = dec.size();
    let b = &dec.b;
    let shifted = b - DMatrix::<f64>::identity(k, k) * lambda;
    let mut x = null_vector(&shifted)?;
    let mut y = null_vector(&shifted.transpose())?;
    if x.sum() < 0.0 {
        x = -x;
    }
    let yx = y.dot(&x);
    if yx.abs() < 1e-14 {
        return None;
    }
    y /= yx;
    let r = DVector::from_column_slice(&dec.r);
    let c = DVector::from_column_slice(&dec.c);
    let (rx, yc) = (r.dot(&x), y.dot(&c));
    if !(rx * yc > 1e-14) || !(lambda > 0.0) {
        return None;
    }
    let step = (b - &x * y.transpose() * lambda) / lambda;
    let mut power = DMatrix::<f64>::identity(k, k);
    let mut m_max = 1.0_f64;
    for m in 1..=j_max.max(1) {
        power = &power * &step;
        let norm = spectral_norm(&power);
        if norm < 1.0 {
            let theta = norm;
            let ratio = r.norm() * c.norm() * m_max / (rx * yc);
            let mut q: u64 = if ratio < 1.0 {
                0
            } else if theta == 0.0 {
                1
            } else {
                (ratio.ln() / (1.0 / theta).ln()).floor().max(0.0) as u64
            };
            while theta.powf(q as f64) * ratio >= 1.0 {
                q += 1;
            }
            let j0 = q.saturating_mul(m as u64);
            return Some(if j0 <= j_max as u64 { Ok(j0) } else { Err(()) });
        }
        m_max = m_max.max(norm);
    }
    Some(Err(()))
}

/// Exact test of `r Bʲ c > 0` for all `j` using the support pattern of
/// `r Bʲ`, which is eventually periodic because all blocks are nonnegative.
fn pattern_check(dec: &UnambiguousDecomposition) -> Option<std::result::Result<(), u64>> {
    let k = dec.size();
    let mut support: Vec<bool> = dec.r.iter().map(|&v| v > 0.0).collect();
    let mut seen: HashMap<Vec<bool>, u64> = HashMap::new();
    for j in 0..MAX_PATTERN_STEPS as u64 {
        if !(0..k).any(|i| support[i] && dec.c[i] > 0.0) {
            return Some(Err(j));
        }
        if seen.insert(support.clone(), j).is_some() {
            return Some(Ok(()));
        }
        support = (0..k).map(|col| (0..k).any(|i| support[i] && dec.b[(i, col)] > 0.0)).collect();
    }
    None
}

/// Checks `a > 0`, `r Bʲ c > 0` for all `j`, and that the top eigenvalue
/// of `B` is simple and strictly dominant in modulus.
pub fn check_conditions(dec: &UnambiguousDecomposition, j_max: usize) -> Result<AnalyticityVerdict> {
    let spectrum = spectral_report(&dec.b)?;
    let condition2 = spectrum.is_simple_isolated;
    let mut witness = None;
    if !condition2 {
        let mut order: Vec<Complex64> = spectrum.eigenvalues.clone();
        order.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        if order.len() >= 2 {
            witness = Some(FailureWitness::EigenvaluePair { first: order[0], second: order[1] });
        }
    }
    let verdict = |condition1: bool, j_checked, crossover, w: Option<FailureWitness>| AnalyticityVerdict {
        condition1,
        condition2,
        analytic: condition1 && condition2,
        j_checked,
        crossover,
        failure_witness: w,
        spectral_radius: spectrum.spectral_radius,
        modulus_gap: spectrum.modulus_gap,
    };

    if !(dec.a > 0.0) {
        return Ok(verdict(false, 0, None, Some(FailureWitness::ZeroSelfTransition)));
    }
    if dec.r.iter().all(|&v| v == 0.0) {
        return Ok(verdict(false, 0, None, Some(FailureWitness::NoRuns)));
    }

    // Direct check on a normalized iterate so long runs do not underflow.
    let mut v = DVector::from_column_slice(&dec.r);
    let c = DVector::from_column_slice(&dec.c);
    for j in 0..=j_max {
        if !(v.dot(&c) > 0.0) {
            return Ok(verdict(false, j + 1, None, Some(FailureWitness::ZeroTerm { j: j as u64 })));
        }
        let next = (v.transpose() * &dec.b).transpose();
        let s = next.sum();
        if !(s > 0.0) {
            return Ok(verdict(false, j + 2, None, Some(FailureWitness::ZeroTerm { j: j as u64 + 1 })));
        }
        v = next / s;
    }

    let lambda = spectrum.dominant_eigenvalue.re;
    let dominant = if condition2 { dominant_crossover(dec, lambda, j_max) } else { None };
    match dominant {
        Some(Ok(j0)) => Ok(verdict(true, j_max + 1, Some(j0), witness)),
        Some(Err(())) => Err(Error::Inconclusive { j0: u64::MAX, j_max }),
        None => match pattern_check(dec) {
            Some(Ok(())) => Ok(verdict(true, j_max + 1, None, witness)),
            Some(Err(j)) => Ok(verdict(false, j_max + 1, None, Some(FailureWitness::ZeroTerm { j }))),
            None => Err(Error::Inconclusive { j0: u64::MAX, j_max }),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesTerm {
    pub n: usize,
    /// `π₁` for `n = 0`, otherwise `π₁ r Bⁿ⁻¹ 1`.
    pub weight: f64,
    /// Probability that a 1 follows the run.
    pub a_n: f64,
    /// Probability that a 0 follows the run.
    pub b_n: f64,
    /// `−a_n ln a_n − b_n ln b_n`.
    pub term_entropy: f64,
}

/// Walks the run-length terms, keeping `r Bⁿ⁻¹` normalized.
struct TermWalker<'a> {
    dec: &'a UnambiguousDecomposition,
    n: usize,
    dir: DVector<f64>,
    scale: f64,
}

impl<'a> TermWalker<'a> {
    fn new(dec: &'a UnambiguousDecomposition) -> Self {
        let r = DVector::from_column_slice(&dec.r);
        let s = r.sum();
        Self { dec, n: 0, dir: if s > 0.0 { r / s } else { r }, scale: s }
    }

    /// `π₁ r Bⁿ 1` for the current `n`.
    fn mass_after(&self) -> f64 {
        self.dec.pi1 * self.scale
    }
}

impl Iterator for TermWalker<'_> {
    type Item = SeriesTerm;

    fn next(&mut self) -> Option<SeriesTerm> {
        let dec = self.dec;
        let term = if self.n == 0 {
            let a0 = dec.r.iter().sum::<f64>();
            SeriesTerm { n: 0, weight: dec.pi1, a_n: a0, b_n: dec.a, term_entropy: plogp(a0) + plogp(dec.a) }
        } else {
            if !(self.scale > 0.0) {
                return None;
            }
            let weight = dec.pi1 * self.scale;
            let c = DVector::from_column_slice(&dec.c);
            let next = (self.dir.transpose() * &dec.b).transpose();
            let a_n = next.sum();
            let b_n = self.dir.dot(&c);
            self.scale *= a_n;
            self.dir = if a_n > 0.0 { next / a_n } else { next };
            SeriesTerm { n: self.n, weight, a_n, b_n, term_entropy: plogp(a_n) + plogp(b_n) }
        };
        self.n += 1;
        Some(term)
    }
}

/// Terms `n = 0..=n_max`.
pub fn series_terms(dec: &UnambiguousDecomposition, n_max: usize) -> Vec<SeriesTerm> {
    TermWalker::new(dec).take(n_max + 1).collect()
}

fn resolvent_ones(dec: &UnambiguousDecomposition) -> Result<DVector<f64>> {
    let k = dec.size();
    let radius = spectral_report(&dec.b)?.spectral_radius;
    if !(radius < 1.0 - 1e-12) {
        return Err(Error::ConditionsFailed(format!("spectral radius of B is {radius}, not below 1")));
    }
    let g = (DMatrix::<f64>::identity(k, k) - &dec.b)
        .lu()
        .solve(&DVector::from_element(k, 1.0))
        .ok_or_else(|| Error::ConditionsFailed("I − B is singular".into()))?;
    Ok(g.map(|v| v.max(0.0)))
}

/// Sums the run-length series until the remaining weight times the
/// largest plausible term entropy drops below `tol`.
///
/// The weight left after `N` terms is exactly `π₁ r Bᴺ (I − B)⁻¹ 1`. The
/// term entropies are bounded by `min(ln 2, 2·max_{n≤N} H_n)`.
pub fn series_entropy(dec: &UnambiguousDecomposition, tol: f64) -> Result<EntropyEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if dec.r.iter().all(|&v| v == 0.0) {
        return Err(Error::ConditionsFailed("r = 0: no run of ones has positive probability".into()));
    }
    let g = resolvent_ones(dec)?;
    let mut walker = TermWalker::new(dec);
    let (mut sum, mut h_sup) = (0.0, 0.0_f64);
    let mut last = 0;
    while let Some(t) = walker.next() {
        sum += t.weight * t.term_entropy;
        if t.n >= 1 {
            h_sup = h_sup.max(t.term_entropy);
        }
        last = t.n;
        if t.n == 0 {
            continue;
        }
        let tail_weight = walker.mass_after() * walker.dir.dot(&g);
        let tail = tail_weight * (2.0 * h_sup).min(std::f64::consts::LN_2);
        let est = EntropyEstimate { value: sum + 0.5 * tail, lower: sum, upper: sum + tail, depth_n: t.n, certificate: None };
        if tail <= tol || walker.scale == 0.0 {
            return Ok(est);
        }
        if t.n >= MAX_SERIES_TERMS {
            return Err(Error::ToleranceNotReached { best: Box::new(est) });
        }
    }
    Ok(EntropyEstimate { value: sum, lower: sum, upper: sum, depth_n: last, certificate: None })
}

/// Probability bookkeeping of the run-length partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionMass {
    /// `Σ_{n≥0}` weights; every time index ends some run, so this is 1.
    pub total_weight: f64,
    /// `π₁ a + Σ_{n≥1} weight_n b_n`: the mass of a 0 coming next, i.e. `π₁`.
    pub zero_mass: f64,
    pub pi1: f64,
    pub terms: usize,
    /// Weight not yet summed.
    pub remainder: f64,
}

pub fn partition_mass(dec: &UnambiguousDecomposition, tol: f64) -> Result<PartitionMass> {
    let g = resolvent_ones(dec)?;
    let mut walker = TermWalker::new(dec);
    let (mut total, mut zero) = (0.0, 0.0);
    let mut terms = 0;
    while let Some(t) = walker.next() {
        total += t.weight;
        zero += t.weight * t.b_n;
        terms += 1;
        let remainder = walker.mass_after() * walker.dir.dot(&g);
        if t.n >= 1 && (remainder <= tol || terms > MAX_SERIES_TERMS) {
            return Ok(PartitionMass { total_weight: total, zero_mass: zero, pi1: dec.pi1, terms, remainder });
        }
    }
    Ok(PartitionMass { total_weight: total, zero_mass: zero, pi1: dec.pi1, terms, remainder: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{build_example_7_1, build_example_7_2, validate, Example71Params, Example72Params};
    use approx::assert_abs_diff_eq;

    fn ex72(c: f64, d: f64, eps: f64) -> HiddenMarkovModel {
        build_example_7_2(&Example72Params { e: 0.2, a: 0.5, b: 0.3, f: 1.0 - c, c, g: 1.0 - d, d, eps }).unwrap()
    }

    #[test]
    fn decomposes_triangular_family() {
        let dec = decompose(&ex72(0.4, 0.3, 0.05)).unwrap();
        assert_eq!(dec.a, 0.2);
        assert_eq!(dec.r, vec![0.5, 0.3]);
        assert_abs_diff_eq!(dec.c[0], 0.55, epsilon = 1e-15);
        assert_eq!(dec.c[1], 0.7);
        assert_eq!(dec.b, DMatrix::from_row_slice(2, 2, &[0.4, 0.05, 0.0, 0.3]));
    }

    #[test]
    fn rejects_non_unambiguous_and_reducible() {
        let m = validate(&[vec![0.2, 0.3, 0.5], vec![0.3, 0.3, 0.4], vec![0.5, 0.25, 0.25]], &[0, 0, 1]).unwrap();
        assert!(matches!(decompose(&m), Err(Error::NoUnambiguousSymbol(_))));
        assert!(decompose_for(&m, 1).is_ok());
        let red = validate(&[vec![0.5, 0.5], vec![0.0, 1.0]], &[0, 1]).unwrap();
        assert!(matches!(decompose(&red), Err(Error::NonIrreducible)));
    }

    #[test]
    fn verdicts_for_examples() {
        for eps in [0.0, 0.05] {
            let v = check_conditions(&decompose(&ex72(0.4, 0.3, eps)).unwrap(), DEFAULT_J_MAX).unwrap();
            assert!(v.analytic && v.crossover.is_some(), "{v:?}");
            let v = check_conditions(&decompose(&ex72(0.35, 0.35, eps)).unwrap(), DEFAULT_J_MAX).unwrap();
            assert!(v.condition1 && !v.condition2 && !v.analytic, "{v:?}");
        }
        let p = Example71Params { a: 0.4, b: 0.6, c: 0.3, d: 0.5, e: 0.2, f: 0.3, g: 0.2, h: 0.5, eps: 0.0 };
        let v = check_conditions(&decompose(&build_example_7_1(&p).unwrap()).unwrap(), DEFAULT_J_MAX).unwrap();
        assert!(!v.condition1 && !v.analytic);
        assert_eq!(v.failure_witness, Some(FailureWitness::ZeroSelfTransition));
        let v = check_conditions(&decompose(&build_example_7_1(&Example71Params { eps: 0.01, ..p }).unwrap()).unwrap(), DEFAULT_J_MAX).unwrap();
        assert!(v.analytic);
    }

    #[test]
    fn zero_term_is_found() {
        // From the ambiguous states the chain can only return through state 2,
        // but r only enters state 1, which never leads back in one step.
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.5]);
        let dec = UnambiguousDecomposition::from_blocks(0.5, vec![0.5, 0.0], vec![0.0, 0.5], b, 0.3).unwrap();
        let v = check_conditions(&dec, 10).unwrap();
        assert!(!v.condition1);
        assert_eq!(v.failure_witness, Some(FailureWitness::ZeroTerm { j: 0 }));
    }

    #[test]
    fn series_terms_are_consistent() {
        let dec = decompose(&ex72(0.4, 0.3, 0.05)).unwrap();
        let terms = series_terms(&dec, 40);
        assert_abs_diff_eq!(terms[1].weight, dec.pi1 * 0.8, epsilon = 1e-15);
        for t in &terms {
            assert!((t.a_n + t.b_n - 1.0).abs() < 1e-9 && t.weight >= 0.0);
        }
        let ratio = terms[40].weight / terms[39].weight;
        assert_abs_diff_eq!(ratio, 0.4, epsilon = 1e-3);
    }

    #[test]
    fn series_value_for_triangular_family() {
        let dec = decompose(&ex72(0.4, 0.3, 0.05)).unwrap();
        let est = series_entropy(&dec, 1e-8).unwrap();
        assert_abs_diff_eq!(est.value, 0.5973729278053502, epsilon = 1e-8);
        assert!(est.upper - est.lower <= 1e-8);
        let mass = partition_mass(&dec, 1e-13).unwrap();
        assert_abs_diff_eq!(mass.total_weight, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mass.zero_mass, dec.pi1, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_r_fails() {
        let b = DMatrix::from_row_slice(1, 1, &[0.5]);
        let dec = UnambiguousDecomposition::from_blocks(1.0, vec![0.0], vec![0.5], b, 1.0).unwrap();
        assert!(matches!(series_entropy(&dec, 1e-8), Err(Error::ConditionsFailed(_))));
    }
}
