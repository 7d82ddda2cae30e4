//! Entropy rate by exact enumeration of symbol trees.
//!
//! `upper(n) = H(Z_0 | Z_{-n}^{-1})` is nonincreasing in `n` and
//! `lower(n) = H(Z_0 | Z_{-n}^{-1}, Y_{-n-1})` is nondecreasing; both tend
//! to the entropy rate. Their difference is the conditional mutual
//! information `I(Z_0; Y_{-n-1} | Z_{-n}^{-1})`, which is accumulated
//! directly as a sum of Kullback-Leibler divergences so that it stays
//! accurate far below the rounding error of either bound.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{map_ordered, map_range, Execution};
use crate::hmm::{plogp, shannon_entropy, HiddenMarkovModel};
use crate::simplex::{
    eventual_contraction_check, limit_set_approximation, sample_path_belief, symbol_distribution,
    ContractionCertificate, DEFAULT_GRID_DENSITY, ZERO_MASS,
};

/// Largest number of enumerated sequences `A^{n+1}`.
pub const DEFAULT_BUDGET: u128 = 1 << 26;
/// Prefix trees are split into at least this many subtrees for parallel work.
const MIN_SUBTREES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub depth_n: usize,
    pub certificate: Option<ContractionCertificate>,
}

impl EntropyEstimate {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Both bounds at one depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    pub n: usize,
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub gaps: Vec<(usize, f64)>,
    /// Least-squares slope of `ln gap` against `n`, exponentiated.
    pub fitted_rate: f64,
}

/// `p(z) = π Δ_{z_1} ⋯ Δ_{z_m} 1`.
pub fn block_probability(model: &HiddenMarkovModel, z: &[usize]) -> Result<f64> {
    check_symbols(model, z)?;
    let b = model.num_states();
    let mut x = model.stationary()?.probs;
    let mut y = vec![0.0; b];
    for &a in z {
        model.delta().left_mul(&x, &mut y);
        for (j, v) in y.iter_mut().enumerate() {
            if model.phi().symbol(j) != a {
                *v = 0.0;
            }
        }
        std::mem::swap(&mut x, &mut y);
    }
    Ok(x.iter().sum())
}

/// `p(z) = Π_k p(z_k | z_1^{k-1})`, computed through normalized beliefs.
pub fn block_probability_by_prediction(model: &HiddenMarkovModel, z: &[usize]) -> Result<f64> {
    check_symbols(model, z)?;
    let mut x = model.stationary()?.probs;
    let mut y = vec![0.0; x.len()];
    let mut p = 1.0;
    for &a in z {
        let r = crate::simplex::masked_image(model, a, &x, &mut y);
        p *= r;
        if r <= 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().zip(&y).for_each(|(xi, &yi)| *xi = yi / r);
    }
    Ok(p)
}

fn check_symbols(model: &HiddenMarkovModel, z: &[usize]) -> Result<()> {
    match z.iter().find(|&&a| a >= model.alphabet_size()) {
        Some(&a) => Err(Error::InvalidParameter(format!("symbol {a} outside the alphabet"))),
        None => Ok(()),
    }
}

fn check_budget(model: &HiddenMarkovModel, n: usize) -> Result<()> {
    let a = model.alphabet_size() as u128;
    let mut leaves: u128 = 1;
    for _ in 0..=n {
        leaves = leaves.saturating_mul(a);
        if leaves > DEFAULT_BUDGET {
            return Err(Error::BudgetExceeded { leaves, budget: DEFAULT_BUDGET });
        }
    }
    Ok(())
}

/// `(1+t) ln(1+t) − t`, accurate for small `t`.
#[inline]
fn kl_kernel(t: f64) -> f64 {
    if t <= -1.0 {
        1.0
    } else if t.abs() < 1e-4 {
        t * t / 2.0 - t * t * t / 6.0 + t * t * t * t / 12.0
    } else {
        (1.0 + t) * t.ln_1p() - t
    }
}

/// One node of the joint tree: for each starting state `i`, the belief
/// `x_i` about the current state and the mass `m_i = π_i p(prefix | i)`.
#[derive(Clone)]
struct JointNode {
    beliefs: Vec<f64>,
    masses: Vec<f64>,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    upper: f64,
    lower: f64,
    gap: f64,
}

impl Sums {
    fn add(self, o: Sums) -> Sums {
        Sums { upper: self.upper + o.upper, lower: self.lower + o.lower, gap: self.gap + o.gap }
    }
}

struct Joint<'a> {
    model: &'a HiddenMarkovModel,
    b: usize,
    alphabet: usize,
}

impl Joint<'_> {
    /// Returns `x_i Δ` for every `i` (row-major) and `P[i][a] = r_a(x_i)`.
    fn predict(&self, node: &JointNode) -> (Vec<f64>, Vec<f64>) {
        let (b, alphabet) = (self.b, self.alphabet);
        let mut next = vec![0.0; b * b];
        let mut p = vec![0.0; b * alphabet];
        for i in 0..b {
            if node.masses[i] == 0.0 {
                continue;
            }
            let row = &mut next[i * b..(i + 1) * b];
            self.model.delta().left_mul(&node.beliefs[i * b..(i + 1) * b], row);
            for (j, &v) in row.iter().enumerate() {
                p[i * alphabet + self.model.phi().symbol(j)] += v;
            }
        }
        (next, p)
    }

    fn child(&self, node: &JointNode, next: &[f64], p: &[f64], a: usize) -> Option<JointNode> {
        let (b, alphabet) = (self.b, self.alphabet);
        let mut masses = vec![0.0; b];
        let mut beliefs = vec![0.0; b * b];
        let mut total = 0.0;
        for i in 0..b {
            let pa = p[i * alphabet + a];
            masses[i] = node.masses[i] * pa;
            total += masses[i];
            if pa > 0.0 && masses[i] > 0.0 {
                for &j in self.model.phi().states_of(a) {
                    beliefs[i * b + j] = next[i * b + j] / pa;
                }
            }
        }
        (total > ZERO_MASS).then_some(JointNode { beliefs, masses })
    }

    fn leaf(&self, node: &JointNode, p: &[f64]) -> Sums {
        let (b, alphabet) = (self.b, self.alphabet);
        let total: f64 = node.masses.iter().sum();
        let mut q = vec![0.0; alphabet];
        for i in 0..b {
            for a in 0..alphabet {
                q[a] += node.masses[i] * p[i * alphabet + a];
            }
        }
        q.iter_mut().for_each(|v| *v /= total);
        let mut s = Sums { upper: total * shannon_entropy(&q), ..Sums::default() };
        for i in 0..b {
            let m = node.masses[i];
            if m == 0.0 {
                continue;
            }
            let row = &p[i * alphabet..(i + 1) * alphabet];
            s.lower += m * row.iter().map(|&v| plogp(v)).sum::<f64>();
            let kl: f64 = (0..alphabet)
                .filter(|&a| q[a] > 0.0)
                .map(|a| q[a] * kl_kernel((row[a] - q[a]) / q[a]))
                .sum();
            s.gap += m * kl;
        }
        s
    }

    fn subtree(&self, node: &JointNode, depth: usize) -> Sums {
        let (next, p) = self.predict(node);
        if depth == 0 {
            return self.leaf(node, &p);
        }
        let mut acc = Sums::default();
        for a in 0..self.alphabet {
            if let Some(c) = self.child(node, &next, &p, a) {
                acc = acc.add(self.subtree(&c, depth - 1));
            }
        }
        acc
    }

    /// Nodes at depth `s`, in lexicographic word order.
    fn frontier(&self, root: JointNode, s: usize) -> Vec<JointNode> {
        let mut level = vec![root];
        for _ in 0..s {
            let mut out = Vec::with_capacity(level.len() * self.alphabet);
            for node in &level {
                let (next, p) = self.predict(node);
                out.extend((0..self.alphabet).filter_map(|a| self.child(node, &next, &p, a)));
            }
            level = out;
        }
        level
    }
}

fn split_depth(alphabet: usize, n: usize) -> usize {
    let mut s = 0;
    let mut count = 1usize;
    while s < n && count < MIN_SUBTREES {
        count = count.saturating_mul(alphabet.max(2));
        s += 1;
    }
    s
}

/// Upper bound, lower bound and their gap at depth `n`.
pub fn sandwich(model: &HiddenMarkovModel, n: usize) -> Result<Bracket> {
    sandwich_with(model, n, Execution::default())
}

pub fn sandwich_with(model: &HiddenMarkovModel, n: usize, exec: Execution) -> Result<Bracket> {
    check_budget(model, n)?;
    let pi = model.stationary()?.probs;
    let b = model.num_states();
    let mut beliefs = vec![0.0; b * b];
    for i in 0..b {
        beliefs[i * b + i] = 1.0;
    }
    let joint = Joint { model, b, alphabet: model.alphabet_size() };
    let s = split_depth(joint.alphabet, n);
    let nodes = joint.frontier(JointNode { beliefs, masses: pi }, s);
    let parts = map_ordered(&nodes, exec, |node| joint.subtree(node, n - s));
    let sums = parts.into_iter().fold(Sums::default(), Sums::add);
    let gap = sums.gap.max(0.0);
    Ok(Bracket { n, upper: sums.upper, lower: sums.upper - gap, gap })
}

fn upper_subtree(model: &HiddenMarkovModel, x: &[f64], mass: f64, depth: usize) -> f64 {
    let b = model.num_states();
    let mut next = vec![0.0; b];
    model.delta().left_mul(x, &mut next);
    let mut r = vec![0.0; model.alphabet_size()];
    for (j, &v) in next.iter().enumerate() {
        r[model.phi().symbol(j)] += v;
    }
    if depth == 0 {
        return mass * shannon_entropy(&r);
    }
    let mut acc = 0.0;
    let mut child = vec![0.0; b];
    for (a, &ra) in r.iter().enumerate() {
        let m = mass * ra;
        if m <= ZERO_MASS {
            continue;
        }
        child.iter_mut().for_each(|v| *v = 0.0);
        for &j in model.phi().states_of(a) {
            child[j] = next[j] / ra;
        }
        acc += upper_subtree(model, &child, m, depth - 1);
    }
    acc
}

/// `H(Z_0 | Z_{-n}^{-1})`.
pub fn conditional_entropy_upper(model: &HiddenMarkovModel, n: usize) -> Result<f64> {
    conditional_entropy_upper_with(model, n, Execution::default())
}

pub fn conditional_entropy_upper_with(model: &HiddenMarkovModel, n: usize, exec: Execution) -> Result<f64> {
    check_budget(model, n)?;
    let pi = model.stationary()?.probs;
    let alphabet = model.alphabet_size();
    let s = split_depth(alphabet, n);
    // Prefix words of length s, each with its belief and mass.
    let mut level = vec![(pi, 1.0)];
    for _ in 0..s {
        let mut out = Vec::new();
        for (x, mass) in &level {
            let r = symbol_distribution(model, x);
            for (a, &ra) in r.iter().enumerate() {
                let m = mass * ra;
                if m > ZERO_MASS {
                    let mut y = vec![0.0; x.len()];
                    crate::simplex::masked_image(model, a, x, &mut y);
                    y.iter_mut().for_each(|v| *v /= ra);
                    out.push((y, m));
                }
            }
        }
        level = out;
    }
    let parts = map_ordered(&level, exec, |(x, m)| upper_subtree(model, x, *m, n - s));
    Ok(parts.into_iter().sum())
}

/// `H(Z_0 | Z_{-n}^{-1}, Y_{-n-1})`.
pub fn conditional_entropy_lower(model: &HiddenMarkovModel, n: usize) -> Result<f64> {
    Ok(sandwich(model, n)?.lower)
}

pub fn conditional_entropy_lower_with(model: &HiddenMarkovModel, n: usize, exec: Execution) -> Result<f64> {
    Ok(sandwich_with(model, n, exec)?.lower)
}

/// Brackets for `n = 0..=max_n`.
pub fn bracket_sequence(model: &HiddenMarkovModel, max_n: usize, exec: Execution) -> Result<Vec<Bracket>> {
    (0..=max_n).map(|n| sandwich_with(model, n, exec)).collect()
}

pub fn convergence_report(model: &HiddenMarkovModel, max_n: usize) -> Result<ConvergenceReport> {
    let brackets = bracket_sequence(model, max_n, Execution::default())?;
    let gaps: Vec<(usize, f64)> = brackets.iter().map(|b| (b.n, b.gap)).collect();
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .filter(|&&(n, g)| n >= 1 && g > 0.0)
        .map(|&(n, g)| (n as f64, g.ln()))
        .collect();
    let fitted_rate = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx).exp()
    } else {
        0.0
    };
    Ok(ConvergenceReport { gaps, fitted_rate })
}

/// Raises `n` until `upper(n) − lower(n) ≤ tol`, trying `n = 0..=budget_n`.
pub fn entropy_rate(model: &HiddenMarkovModel, tol: f64, budget_n: usize) -> Result<EntropyEstimate> {
    entropy_rate_with(model, tol, budget_n, Execution::default())
}

pub fn entropy_rate_with(model: &HiddenMarkovModel, tol: f64, budget_n: usize, exec: Execution) -> Result<EntropyEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let mut best = None;
    for n in 0..=budget_n {
        let br = match sandwich_with(model, n, exec) {
            Ok(br) => br,
            Err(Error::BudgetExceeded { .. }) if best.is_some() => break,
            Err(e) => return Err(e),
        };
        let est = EntropyEstimate {
            value: 0.5 * (br.upper + br.lower),
            lower: br.lower,
            upper: br.upper,
            depth_n: n,
            certificate: None,
        };
        if br.gap <= tol {
            let certificate = eventual_contraction_check(model, 4, DEFAULT_GRID_DENSITY).ok();
            return Ok(EntropyEstimate { certificate, ..est });
        }
        best = Some(est);
    }
    Err(Error::ToleranceNotReached { best: Box::new(best.expect("budget_n loop runs at least once")) })
}

/// Smallest positive one-step symbol probability over the limit-set
/// approximation and the stationary vector.
fn orbit_min_probability(model: &HiddenMarkovModel, depth: usize) -> Result<f64> {
    let mut points = vec![model.stationary()?.probs];
    if let Ok(l) = limit_set_approximation(model, depth) {
        points.extend(l.points.into_iter().map(|p| p.coords().to_vec()));
    }
    let p_min = points
        .iter()
        .flat_map(|x| symbol_distribution(model, x))
        .filter(|&p| p > 0.0)
        .fold(1.0, f64::min);
    Ok(p_min)
}

/// Bound on `|H_m − H_n|` for every `m > n`.
///
/// Beliefs started anywhere in the simplex are at most `√2` apart; along
/// any word they shrink by `ρ` every `d` steps and grow by at most
/// `max(1, G)` per leftover step, `G` being the single-map norm. The
/// integrand `−Σ r_a ln r_a` is Lipschitz with constant `A·√B·ln(1/p_min)`
/// on the orbit, so the tail is at most
/// `K·S_d·ρ^{⌊n/d⌋}/(1−ρ)` with `K = √(2B)·A·max(1, ln(1/p_min))` and
/// `S_d = Σ_{s<d} max(1, G)^s`.
pub fn geometric_tail_certificate(
    model: &HiddenMarkovModel,
    cert: Option<&ContractionCertificate>,
    n: usize,
) -> Result<f64> {
    let cert = cert.ok_or(Error::MissingCertificate)?;
    if !(cert.rho < 1.0) || cert.composition_depth == 0 {
        return Err(Error::InvalidParameter("certificate does not contract".into()));
    }
    let d = cert.composition_depth;
    let p_min = orbit_min_probability(model, 8)?;
    let b = model.num_states() as f64;
    let k = (2.0 * b).sqrt() * model.alphabet_size() as f64 * (1.0 / p_min).ln().max(1.0);
    let g = cert.single_step_norm.max(1.0);
    let s_d: f64 = (0..d).map(|s| g.powi(s as i32)).sum();
    let steps = (n / d) as i32;
    Ok(k * s_d * cert.rho.powi(steps) / (1.0 - cert.rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte Carlo average of `−Σ_a r_a(w) ln r_a(w)` over beliefs `w` drawn
/// after `path_length` steps. Sample `k` uses stream `k` of the ChaCha8
/// generator seeded with `seed`, so the result does not depend on the
/// execution policy.
pub fn blackwell_entropy_mc(model: &HiddenMarkovModel, samples: usize, path_length: usize, seed: u64) -> Result<MonteCarloEstimate> {
    blackwell_entropy_mc_with(model, samples, path_length, seed, Execution::default())
}

pub fn blackwell_entropy_mc_with(
    model: &HiddenMarkovModel,
    samples: usize,
    path_length: usize,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarloEstimate> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let start = model.stationary()?.probs;
    let values = map_range(samples, exec, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let w = sample_path_belief(model, path_length, &mut rng, &start);
        shannon_entropy(&symbol_distribution(model, &w))
    });
    // Shifted sums keep a constant integrand exact.
    let shift = values[0];
    let n = samples as f64;
    let mean_dev = values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = if samples > 1 {
        values.iter().map(|v| (v - shift - mean_dev).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate { estimate: shift + mean_dev, std_error: (var / n).sqrt(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{build_bsc, markov_entropy, validate};
    use approx::assert_abs_diff_eq;

    fn two_state() -> HiddenMarkovModel {
        validate(&[vec![0.7, 0.3], vec![0.4, 0.6]], &[0, 1]).unwrap()
    }

    #[test]
    fn block_probabilities() {
        let m = two_state();
        assert_eq!(block_probability(&m, &[]).unwrap(), 1.0);
        assert_abs_diff_eq!(block_probability(&m, &[1]).unwrap(), 3.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(block_probability(&m, &[0, 1]).unwrap(), 4.0 / 7.0 * 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(
            block_probability_by_prediction(&m, &[0, 1, 1, 0]).unwrap(),
            block_probability(&m, &[0, 1, 1, 0]).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn markov_saturation() {
        let m = two_state();
        let h = markov_entropy(m.delta()).unwrap();
        for n in 1..4 {
            assert_abs_diff_eq!(conditional_entropy_upper(&m, n).unwrap(), h, epsilon = 1e-13);
            assert_abs_diff_eq!(conditional_entropy_lower(&m, n).unwrap(), h, epsilon = 1e-13);
        }
        let est = entropy_rate(&m, 1e-9, 10).unwrap();
        assert_eq!(est.depth_n, 1);
        assert_abs_diff_eq!(est.value, h, epsilon = 1e-12);
    }

    #[test]
    fn constant_map_has_zero_entropy() {
        let m = validate(&[vec![0.7, 0.3], vec![0.4, 0.6]], &[0, 0]).unwrap();
        let br = sandwich(&m, 3).unwrap();
        assert_eq!((br.upper, br.lower), (0.0, 0.0));
        let mc = blackwell_entropy_mc(&m, 50, 5, 1).unwrap();
        assert_eq!((mc.estimate, mc.std_error), (0.0, 0.0));
    }

    #[test]
    fn bsc_reference_brackets() {
        let m = build_bsc(&[[0.7, 0.3], [0.4, 0.6]], 0.1).unwrap();
        let b0 = sandwich(&m, 0).unwrap();
        assert_abs_diff_eq!(b0.upper, 0.6866022772, epsilon = 1e-9);
        assert_abs_diff_eq!(b0.lower, 0.6578597017, epsilon = 1e-9);
        let up = conditional_entropy_upper(&m, 6).unwrap();
        let br = sandwich(&m, 6).unwrap();
        assert_abs_diff_eq!(up, br.upper, epsilon = 1e-14);
    }

    #[test]
    fn execution_policies_agree_bitwise() {
        let m = build_bsc(&[[0.7, 0.3], [0.4, 0.6]], 0.1).unwrap();
        for n in [0, 3, 10] {
            assert_eq!(sandwich_with(&m, n, Execution::Sequential).unwrap(), sandwich_with(&m, n, Execution::Parallel).unwrap());
            assert_eq!(
                conditional_entropy_upper_with(&m, n, Execution::Sequential).unwrap(),
                conditional_entropy_upper_with(&m, n, Execution::Parallel).unwrap()
            );
        }
        let a = blackwell_entropy_mc_with(&m, 500, 20, 9, Execution::Sequential).unwrap();
        let b = blackwell_entropy_mc_with(&m, 500, 20, 9, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_is_enforced() {
        let m = two_state();
        assert!(matches!(sandwich(&m, 26), Err(Error::BudgetExceeded { .. })));
        assert!(sandwich(&m, 2).is_ok());
    }

    #[test]
    fn tolerance_not_reached_carries_best() {
        let m = build_bsc(&[[0.7, 0.3], [0.4, 0.6]], 0.1).unwrap();
        match entropy_rate(&m, 1e-30, 2) {
            Err(Error::ToleranceNotReached { best }) => {
                assert_eq!(best.depth_n, 2);
                assert!(best.lower <= best.value && best.value <= best.upper);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tail_certificate_requires_certificate() {
        let m = two_state();
        assert!(matches!(geometric_tail_certificate(&m, None, 3), Err(Error::MissingCertificate)));
    }

    #[test]
    fn kl_kernel_branches_meet() {
        for t in [1e-4, -1e-4] {
            let series = t * t / 2.0 - t * t * t / 6.0 + t * t * t * t / 12.0;
            let exact = (1.0 + t) * f64::ln_1p(t) - t;
            assert!((series - exact).abs() < 1e-20);
        }
        assert_eq!(kl_kernel(-1.0), 1.0);
    }
}
