//! Belief dynamics on the probability simplex.
//!
//! For a symbol `a` the one-step symbol probability is `r_a(w) = w Δ_a 1`
//! and the belief update is `f_a(w) = w Δ_a / r_a(w)`. Iterating `f_{z_i}`
//! along an observed word turns the stationary vector into the conditional
//! law of the hidden state.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_ordered, Execution};
use crate::hmm::HiddenMarkovModel;

/// Symbol probabilities at or below this are structural zeros.
pub const ZERO_MASS: f64 = 1e-300;
/// Resolution used to merge nearly identical limit-set points.
pub const DEDUP_RESOLUTION: f64 = 1e-10;
/// Above this many grid points per face the density is reduced.
pub const MAX_GRID_POINTS: usize = 50_000;
/// Default barycentric grid subdivisions.
pub const DEFAULT_GRID_DENSITY: usize = 20;
/// Cap on the number of points kept at one level of the limit-set tree.
pub const MAX_LIMIT_POINTS: usize = 1 << 20;

/// A probability vector over Markov states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    /// Renormalizes `coords` to sum to one. Negative entries above `-1e-12`
    /// are clamped to zero.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty);
        }
        let mut coords = coords;
        for (i, c) in coords.iter_mut().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFinite { row: 0, col: i });
            }
            if *c < -crate::hmm::NEGATIVE_CLAMP {
                return Err(Error::NegativeEntry { row: 0, col: i, value: *c });
            }
            if *c < 0.0 {
                *c = 0.0;
            }
        }
        let total: f64 = coords.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("simplex point has zero total mass".into()));
        }
        coords.iter_mut().for_each(|c| *c /= total);
        Ok(Self { coords })
    }

    pub fn vertex(size: usize, i: usize) -> Self {
        let mut coords = vec![0.0; size];
        coords[i] = 1.0;
        Self { coords }
    }

    pub fn uniform(size: usize) -> Self {
        Self { coords: vec![1.0 / size as f64; size] }
    }

    pub(crate) fn from_normalized(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Indices with strictly positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.coords.len()).filter(|&i| self.coords[i] > 0.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Hilbert,
}

/// Unnormalized image `w Δ_a`, restricted to `Φ⁻¹(a)` and written into `out`.
#[inline]
pub(crate) fn masked_image(model: &HiddenMarkovModel, a: usize, w: &[f64], out: &mut [f64]) -> f64 {
    let b = model.num_states();
    let delta = model.delta().as_slice();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for &j in model.phi().states_of(a) {
        let mut acc = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            acc += wi * delta[i * b + j];
        }
        out[j] = acc;
        total += acc;
    }
    total
}

/// Next-symbol distribution `(r_a(w))_a`.
pub(crate) fn symbol_distribution(model: &HiddenMarkovModel, w: &[f64]) -> Vec<f64> {
    let b = model.num_states();
    let mut next = vec![0.0; b];
    model.delta().left_mul(w, &mut next);
    let mut r = vec![0.0; model.alphabet_size()];
    for (j, &v) in next.iter().enumerate() {
        r[model.phi().symbol(j)] += v;
    }
    r
}

/// `r_a(w) = w Δ_a 1`, the probability of emitting `a` next from belief `w`.
pub fn symbol_probability(model: &HiddenMarkovModel, a: usize, w: &SimplexPoint) -> f64 {
    let mut buf = vec![0.0; model.num_states()];
    masked_image(model, a, w.coords(), &mut buf)
}

/// `f_a(w) = w Δ_a / r_a(w)`.
pub fn belief_update(model: &HiddenMarkovModel, a: usize, w: &SimplexPoint) -> Result<SimplexPoint> {
    let mut buf = vec![0.0; model.num_states()];
    let mass = masked_image(model, a, w.coords(), &mut buf);
    if mass <= ZERO_MASS {
        return Err(Error::ZeroMass { symbol: a, mass });
    }
    buf.iter_mut().for_each(|v| *v /= mass);
    Ok(SimplexPoint::from_normalized(buf))
}

/// Applies `f_{word[0]}` first, then `f_{word[1]}`, and so on.
pub fn apply_word(model: &HiddenMarkovModel, word: &[usize], w: &SimplexPoint) -> Result<SimplexPoint> {
    let mut x = w.clone();
    for &a in word {
        x = belief_update(model, a, &x)?;
    }
    Ok(x)
}

/// Hilbert projective distance `max_{i,j} ln((u_i/u_j)/(v_i/v_j))` over `support`.
pub fn hilbert_distance(u: &SimplexPoint, v: &SimplexPoint, support: &[usize]) -> Result<f64> {
    if u.len() != v.len() || support.iter().any(|&i| i >= u.len()) {
        return Err(Error::SupportMismatch);
    }
    let mut on = vec![false; u.len()];
    for &i in support {
        on[i] = true;
    }
    for i in 0..u.len() {
        if on[i] {
            if !(u.coords[i] > 0.0) || !(v.coords[i] > 0.0) {
                return Err(Error::NonPositiveCoordinate { index: i });
            }
        } else if u.coords[i] != 0.0 || v.coords[i] != 0.0 {
            return Err(Error::SupportMismatch);
        }
    }
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for &i in support {
        let l = (u.coords[i] / v.coords[i]).ln();
        hi = hi.max(l);
        lo = lo.min(l);
    }
    Ok(if support.is_empty() { 0.0 } else { (hi - lo).max(0.0) })
}

pub fn euclidean_distance(u: &SimplexPoint, v: &SimplexPoint) -> f64 {
    u.coords.iter().zip(&v.coords).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Constants with `c1·d_B < d_E < c2·d_B` on a box of positive points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricEquivalence {
    pub c1: f64,
    pub c2: f64,
    /// Smallest and largest `d_E/d_B` over the sampled pairs.
    pub observed_min: f64,
    pub observed_max: f64,
    pub pairs: usize,
}

/// Equivalence constants between the Euclidean and Hilbert metrics for
/// the region spanned by `sample`.
///
/// With `m` the smallest sampled coordinate and `M_i` the largest sampled
/// `i`-th coordinate, every pair in the box `{x : m ≤ x_i ≤ M_i}` satisfies
/// `(m/2)·d_B ≤ d_E ≤ min(1/2, (Σ M_i²)^{1/2})·d_B`. The returned constants
/// take the weaker of these bounds and the sampled extremes, padded by a
/// relative `1e-9`, so they hold beyond the sampled pairs.
pub fn metric_equivalence_constants(sample: &[SimplexPoint]) -> Result<MetricEquivalence> {
    if sample.len() < 2 {
        return Err(Error::DegenerateSample("need at least two points".into()));
    }
    let support = sample[0].support();
    if support.len() < 2 {
        return Err(Error::DegenerateSample("support has fewer than two states".into()));
    }
    for p in sample {
        if p.len() != sample[0].len() || p.support() != support {
            return Err(Error::SupportMismatch);
        }
    }
    let (mut lo, mut hi, mut pairs) = (f64::INFINITY, 0.0_f64, 0usize);
    for (k, u) in sample.iter().enumerate() {
        for v in &sample[k + 1..] {
            let db = hilbert_distance(u, v, &support)?;
            if db == 0.0 {
                continue;
            }
            let ratio = euclidean_distance(u, v) / db;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::DegenerateSample("all points coincide".into()));
    }
    let min_coord = sample
        .iter()
        .flat_map(|p| support.iter().map(move |&i| p.coords[i]))
        .fold(f64::INFINITY, f64::min);
    let max_norm = support
        .iter()
        .map(|&i| sample.iter().map(|p| p.coords[i]).fold(0.0, f64::max).powi(2))
        .sum::<f64>()
        .sqrt();
    let c1 = (min_coord / 2.0).min(lo) * (1.0 - 1e-9);
    let c2 = max_norm.min(0.5).max(hi) * (1.0 + 1e-9);
    Ok(MetricEquivalence { c1, c2, observed_min: lo, observed_max: hi, pairs })
}

/// Birkhoff contraction coefficient `τ = (1−√φ)/(1+√φ)` of the block of
/// `matrix` formed by `positive_columns` and the rows that hit them, where
/// `φ = min (A_ik A_jl)/(A_jk A_il)`.
pub fn hilbert_contraction_coefficient(matrix: &DMatrix<f64>, positive_columns: &[usize]) -> Result<f64> {
    if positive_columns.iter().any(|&c| c >= matrix.ncols()) {
        return Err(Error::DimensionMismatch("column index out of range".into()));
    }
    let rows: Vec<usize> = (0..matrix.nrows())
        .filter(|&i| positive_columns.iter().any(|&c| matrix[(i, c)] != 0.0))
        .collect();
    for &i in &rows {
        for &c in positive_columns {
            if !(matrix[(i, c)] > 0.0) {
                return Err(Error::ZeroEntryInBlock { row: i, col: c });
            }
        }
    }
    let mut phi = 1.0_f64;
    for (p, &i) in rows.iter().enumerate() {
        for &j in &rows[p + 1..] {
            for (q, &k) in positive_columns.iter().enumerate() {
                for &l in &positive_columns[q + 1..] {
                    let cross = (matrix[(i, k)] * matrix[(j, l)]) / (matrix[(j, k)] * matrix[(i, l)]);
                    phi = phi.min(cross.min(1.0 / cross));
                }
            }
        }
    }
    let s = phi.sqrt();
    Ok((1.0 - s) / (1.0 + s))
}

/// Orthonormal basis (as rows of a `(k−1)×B` matrix) of the directions
/// `{x : Σ x_i = 0, x_j = 0 for j ∉ support}`.
pub(crate) fn tangent_basis(size: usize, support: &[usize]) -> DMatrix<f64> {
    let k = support.len();
    let mut q = DMatrix::zeros(k.saturating_sub(1), size);
    for t in 1..k {
        let norm = ((t * (t + 1)) as f64).sqrt();
        for &s in &support[..t] {
            q[(t - 1, s)] = 1.0 / norm;
        }
        q[(t - 1, support[t])] = -(t as f64) / norm;
    }
    q
}

/// Face of the simplex a point is treated as living in: `Φ⁻¹(b)` when the
/// point is supported inside it, otherwise the whole simplex.
pub(crate) fn domain_support(model: &HiddenMarkovModel, w: &[f64]) -> Vec<usize> {
    let phi = model.phi();
    let mut symbol = None;
    for (i, &x) in w.iter().enumerate() {
        if x > 0.0 {
            match symbol {
                None => symbol = Some(phi.symbol(i)),
                Some(s) if s != phi.symbol(i) => return (0..w.len()).collect(),
                _ => {}
            }
        }
    }
    match symbol {
        Some(s) => phi.states_of(s).to_vec(),
        None => (0..w.len()).collect(),
    }
}

/// Jacobian of the composed map `f_{word[last]} ∘ … ∘ f_{word[0]}` at `w`,
/// acting on row vectors (`h ↦ h J`), together with the image point.
pub fn word_jacobian(model: &HiddenMarkovModel, word: &[usize], w: &SimplexPoint) -> Result<(DMatrix<f64>, SimplexPoint)> {
    let n = model.num_states();
    let delta = model.delta().entries();
    let mut jac = DMatrix::<f64>::identity(n, n);
    let mut x = w.coords().to_vec();
    let mut image = vec![0.0; n];
    for &a in word {
        let s = masked_image(model, a, &x, &mut image);
        if s <= ZERO_MASS {
            return Err(Error::ZeroMass { symbol: a, mass: s });
        }
        let cols = model.phi().states_of(a);
        let mut step = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let row_mass: f64 = cols.iter().map(|&j| delta[(i, j)]).sum();
            for &j in cols {
                step[(i, j)] = delta[(i, j)] / s - row_mass * image[j] / (s * s);
            }
        }
        jac *= step;
        x.iter_mut().zip(&image).for_each(|(xi, &yi)| *xi = yi / s);
    }
    Ok((jac, SimplexPoint::from_normalized(x)))
}

/// Euclidean operator norm of the derivative of the composed map at `w`,
/// restricted to directions parallel to the face containing `w`.
pub fn jacobian_norm(model: &HiddenMarkovModel, word: &[usize], w: &SimplexPoint) -> Result<f64> {
    let support = domain_support(model, w.coords());
    if support.len() < 2 {
        return Ok(0.0);
    }
    if word.is_empty() {
        return Ok(1.0);
    }
    let (jac, _) = word_jacobian(model, word, w)?;
    let restricted = tangent_basis(model.num_states(), &support) * jac;
    Ok(restricted.singular_values().max())
}

/// Barycentric grid `{x : x = k/density, Σ k = density}` on the face `support`.
pub fn barycentric_grid(size: usize, support: &[usize], density: usize) -> Vec<SimplexPoint> {
    let k = support.len();
    if k == 0 {
        return Vec::new();
    }
    let density = density.max(1);
    let mut out = Vec::new();
    let mut counts = vec![0usize; k];
    fn rec(pos: usize, left: usize, counts: &mut [usize], emit: &mut dyn FnMut(&[usize])) {
        if pos == counts.len() - 1 {
            counts[pos] = left;
            emit(counts);
            return;
        }
        for c in 0..=left {
            counts[pos] = c;
            rec(pos + 1, left - c, counts, emit);
        }
    }
    rec(0, density, &mut counts, &mut |c| {
        let mut coords = vec![0.0; size];
        for (t, &s) in support.iter().enumerate() {
            coords[s] = c[t] as f64 / density as f64;
        }
        out.push(SimplexPoint::from_normalized(coords));
    });
    out
}

fn grid_count(k: usize, density: usize) -> f64 {
    // C(density + k − 1, k − 1)
    let mut acc = 1.0;
    for t in 1..k {
        acc *= (density + t) as f64 / t as f64;
    }
    acc
}

/// Largest density not above `density` whose grid on a `k`-state face has
/// at most `MAX_GRID_POINTS` points.
pub fn effective_density(k: usize, density: usize) -> usize {
    let mut d = density.max(1);
    while d > 1 && grid_count(k, d) > MAX_GRID_POINTS as f64 {
        d -= 1;
    }
    d
}

/// Evidence that every composition of a fixed depth contracts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionCertificate {
    /// Largest derivative norm found at `composition_depth`.
    pub rho: f64,
    pub composition_depth: usize,
    pub metric: Metric,
    pub witness_points: Vec<SimplexPoint>,
    /// Largest derivative norm of a single map over the same points.
    pub single_step_norm: f64,
    /// Largest norm found at each depth `1..=composition_depth`.
    pub depth_norms: Vec<f64>,
    pub grid_density: usize,
    pub points_checked: usize,
}

pub(crate) fn all_words(alphabet: usize, len: usize) -> Vec<Vec<usize>> {
    let mut words = vec![Vec::new()];
    for _ in 0..len {
        words = words
            .into_iter()
            .flat_map(|w| {
                (0..alphabet).map(move |a| {
                    let mut v = w.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    words
}

/// Largest derivative norm over all words of length `depth` at each point,
/// returning the maximum and a point attaining it. Words that reach a zero
/// mass symbol are skipped.
pub fn contraction_at_points(
    model: &HiddenMarkovModel,
    points: &[SimplexPoint],
    depth: usize,
    exec: Execution,
) -> (f64, Option<SimplexPoint>) {
    let words = all_words(model.alphabet_size(), depth);
    let per_point = map_ordered(points, exec, |w| {
        words
            .iter()
            .filter_map(|word| jacobian_norm(model, word, w).ok())
            .fold(0.0_f64, f64::max)
    });
    let mut best: (f64, Option<SimplexPoint>) = (0.0, None);
    for (norm, p) in per_point.into_iter().zip(points) {
        if best.1.is_none() || norm > best.0 {
            best = (norm, Some(p.clone()));
        }
    }
    best
}

/// Grid points on every face `W_b`.
pub fn face_grids(model: &HiddenMarkovModel, density: usize) -> (Vec<SimplexPoint>, usize) {
    let mut points = Vec::new();
    let mut used = density;
    for b in 0..model.alphabet_size() {
        let face = model.phi().states_of(b);
        let d = effective_density(face.len(), density);
        used = used.min(d);
        points.extend(barycentric_grid(model.num_states(), face, d));
    }
    (points, used)
}

/// Finds the smallest depth `n ≤ max_depth` at which every length-`n`
/// composition has derivative norm below 1 at every grid point of every
/// face and at every limit-set point of depth `n`.
pub fn eventual_contraction_check(
    model: &HiddenMarkovModel,
    max_depth: usize,
    grid_density: usize,
) -> Result<ContractionCertificate> {
    eventual_contraction_check_with(model, max_depth, grid_density, Execution::default())
}

pub fn eventual_contraction_check_with(
    model: &HiddenMarkovModel,
    max_depth: usize,
    grid_density: usize,
    exec: Execution,
) -> Result<ContractionCertificate> {
    if max_depth == 0 {
        return Err(Error::InvalidParameter("max_depth must be at least 1".into()));
    }
    let (mut points, density) = face_grids(model, grid_density);
    if let Ok(limit) = limit_set_approximation(model, max_depth.min(8)) {
        points.extend(limit.points);
    }
    let mut depth_norms = Vec::new();
    for n in 1..=max_depth {
        let (norm, witness) = contraction_at_points(model, &points, n, exec);
        depth_norms.push(norm);
        if norm < 1.0 {
            return Ok(ContractionCertificate {
                rho: norm,
                composition_depth: n,
                metric: Metric::Euclidean,
                witness_points: witness.into_iter().collect(),
                single_step_norm: depth_norms[0],
                depth_norms,
                grid_density: density,
                points_checked: points.len(),
            });
        }
    }
    Err(Error::NoContractionFound { depth: max_depth, max_norm: *depth_norms.last().unwrap() })
}

/// Finite approximation of the limit set of the belief iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSetApprox {
    pub points: Vec<SimplexPoint>,
    /// For each point, a word leading to it from the stationary vector.
    pub words: Vec<Vec<usize>>,
    pub depth: usize,
}

fn quantize(x: &[f64]) -> Vec<i64> {
    x.iter().map(|&v| (v / DEDUP_RESOLUTION).round() as i64).collect()
}

/// Images of the stationary vector under every word of length `depth`,
/// with zero-probability branches dropped and duplicates merged.
pub fn limit_set_approximation(model: &HiddenMarkovModel, depth: usize) -> Result<LimitSetApprox> {
    let start = model.stationary()?.probs;
    let mut level: BTreeMap<Vec<i64>, (SimplexPoint, Vec<usize>)> = BTreeMap::new();
    level.insert(quantize(&start), (SimplexPoint::from_normalized(start), Vec::new()));
    for _ in 0..depth {
        let mut next = BTreeMap::new();
        for (point, word) in level.values() {
            for a in 0..model.alphabet_size() {
                if let Ok(img) = belief_update(model, a, point) {
                    let key = quantize(img.coords());
                    next.entry(key).or_insert_with(|| {
                        let mut w = word.clone();
                        w.push(a);
                        (img, w)
                    });
                }
            }
        }
        if next.len() > MAX_LIMIT_POINTS {
            return Err(Error::BudgetExceeded { leaves: next.len() as u128, budget: MAX_LIMIT_POINTS as u128 });
        }
        level = next;
    }
    let (points, words) = level.into_values().unzip();
    Ok(LimitSetApprox { points, words, depth })
}

/// Draws a symbol from `r`, falling back to the last symbol with positive mass.
pub(crate) fn draw_symbol<R: Rng>(rng: &mut R, r: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in r.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = a;
            if u < acc {
                return a;
            }
        }
    }
    last
}

/// Runs the belief iteration along a path drawn from the hidden chain.
pub(crate) fn sample_path_belief<R: Rng>(model: &HiddenMarkovModel, path_length: usize, rng: &mut R, start: &[f64]) -> Vec<f64> {
    let mut x = start.to_vec();
    let mut buf = vec![0.0; x.len()];
    for _ in 0..path_length {
        let r = symbol_distribution(model, &x);
        let a = draw_symbol(rng, &r);
        let mass = masked_image(model, a, &x, &mut buf);
        buf.iter().zip(x.iter_mut()).for_each(|(&b, xi)| *xi = b / mass);
    }
    x
}

/// Belief after `path_length` steps of a hidden path drawn with `seed`,
/// started from the stationary vector; one draw from the finite-time
/// approximation of the Blackwell measure.
pub fn blackwell_sample(model: &HiddenMarkovModel, path_length: usize, seed: u64) -> Result<SimplexPoint> {
    let start = model.stationary()?.probs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(SimplexPoint::from_normalized(sample_path_belief(model, path_length, &mut rng, &start)))
}
