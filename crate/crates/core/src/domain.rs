//! Certified analyticity radius for a binary Markov source observed
//! through a binary symmetric channel with crossover `ε`.
//!
//! The belief `u_n = p(y_n = 0 | z_1^n)` evolves by `u ↦ g_z(u)` and the
//! next-symbol probabilities are the affine maps `r_0(u)`, `r_1(u)`. A
//! triple `(ρ, r, R)` satisfying the inequality system of
//! [`check_constraints`] makes both `g` maps `ρ`-contractions on the
//! complex `R`-neighbourhoods of 0 and 1 for every `|ε| < r`, which
//! certifies that the entropy rate is analytic on that disk.

use num_complex::Complex64;
use serde::Serialize;

use crate::entropy::entropy_rate;
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Execution};
use crate::hmm::build_bsc;

/// Number of bisection steps on `r`.
pub const BISECTION_STEPS: usize = 64;
/// Upper end of the searched radius interval.
pub const MAX_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BscFamily {
    pub pi: [[f64; 2]; 2],
    pub pi0: f64,
    pub pi1: f64,
}

impl BscFamily {
    /// Requires a row-stochastic `pi` with all entries strictly positive.
    pub fn new(pi: [[f64; 2]; 2]) -> Result<Self> {
        for (i, row) in pi.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::InvalidParameter(format!("pi[{i}][{j}] = {v} must be positive")));
                }
            }
            let s = row[0] + row[1];
            if (s - 1.0).abs() > crate::hmm::ROW_SUM_TOL {
                return Err(Error::NonStochastic { row: i, sum: s });
            }
        }
        let (p01, p10) = (pi[0][1], pi[1][0]);
        Ok(Self { pi, pi0: p10 / (p10 + p01), pi1: p01 / (p10 + p01) })
    }

    /// Parses `"p00,p01,p10,p11"`.
    pub fn parse(text: &str) -> Result<Self> {
        let vals: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidParameter(format!("bad transition list {text:?}: {e}")))?;
        if vals.len() != 4 {
            return Err(Error::InvalidParameter(format!("expected 4 transition probabilities, got {}", vals.len())));
        }
        Self::new([[vals[0], vals[1]], [vals[2], vals[3]]])
    }

    /// `π₀₀π₁₁ − π₀₁π₁₀`.
    pub fn det(&self) -> f64 {
        self.pi[0][0] * self.pi[1][1] - self.pi[0][1] * self.pi[1][0]
    }

    /// Unnormalized masses `(π₀₀u + π₁₀(1−u), π₀₁u + π₁₁(1−u))` of the next input.
    fn next_input(&self, u: Complex64) -> (Complex64, Complex64) {
        let p = &self.pi;
        let v = Complex64::new(1.0, 0.0) - u;
        (u * p[0][0] + v * p[1][0], u * p[0][1] + v * p[1][1])
    }

    /// `(1−ε, ε)` weights of the next input being 0 and 1 given output `symbol`.
    fn channel(eps: Complex64, symbol: usize) -> (Complex64, Complex64) {
        let one = Complex64::new(1.0, 0.0);
        if symbol == 0 {
            (one - eps, eps)
        } else {
            (eps, one - eps)
        }
    }
}

fn check_symbol(symbol: usize) -> Result<()> {
    if symbol > 1 {
        return Err(Error::InvalidParameter(format!("symbol {symbol} is not binary")));
    }
    Ok(())
}

/// `g_z(u)` for complex `ε` and `u`.
pub fn g_map_complex(family: &BscFamily, eps: Complex64, symbol: usize, u: Complex64) -> Result<Complex64> {
    check_symbol(symbol)?;
    let (a, b) = family.next_input(u);
    let (p, q) = BscFamily::channel(eps, symbol);
    let den = p * a + q * b;
    if den == Complex64::new(0.0, 0.0) {
        return Err(Error::SingularDenominator);
    }
    Ok(p * a / den)
}

pub fn g_map(family: &BscFamily, eps: f64, symbol: usize, u: f64) -> Result<f64> {
    Ok(g_map_complex(family, eps.into(), symbol, u.into())?.re)
}

/// `g_z'(u) = ε(1−ε)·det / den²`.
pub fn g_derivative_complex(family: &BscFamily, eps: Complex64, symbol: usize, u: Complex64) -> Result<Complex64> {
    check_symbol(symbol)?;
    let (a, b) = family.next_input(u);
    let (p, q) = BscFamily::channel(eps, symbol);
    let den = p * a + q * b;
    if den == Complex64::new(0.0, 0.0) {
        return Err(Error::SingularDenominator);
    }
    Ok(p * q * family.det() / (den * den))
}

pub fn g_derivative(family: &BscFamily, eps: f64, symbol: usize, u: f64) -> Result<f64> {
    Ok(g_derivative_complex(family, eps.into(), symbol, u.into())?.re)
}

/// `r_z(u) = p(z_n = z | u_{n-1} = u)`.
pub fn r_map_complex(family: &BscFamily, eps: Complex64, symbol: usize, u: Complex64) -> Result<Complex64> {
    check_symbol(symbol)?;
    let (a, b) = family.next_input(u);
    let (p, q) = BscFamily::channel(eps, symbol);
    Ok(p * a + q * b)
}

pub fn r_map(family: &BscFamily, eps: f64, symbol: usize, u: f64) -> Result<f64> {
    Ok(r_map_complex(family, eps.into(), symbol, u.into())?.re)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slack {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusCertificate {
    pub rho: f64,
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub slacks: Vec<Slack>,
    pub feasible: bool,
}

impl RadiusCertificate {
    pub fn min_slack(&self) -> f64 {
        self.slacks.iter().map(|s| s.value).fold(f64::INFINITY, f64::min)
    }
}

/// Margin of `0 < num/den < upper`, or `−∞` if `den ≤ 0`.
fn ratio_slack(num: f64, den: f64, upper: f64) -> f64 {
    if !(den > 0.0) {
        return f64::NEG_INFINITY;
    }
    let x = num / den;
    if x.is_nan() {
        return f64::NEG_INFINITY;
    }
    x.min(upper - x)
}

/// Evaluates the ten inequalities: four square-root derivative bounds,
/// four image bounds and two bounds on `|r_0| + |r_1|`. The certificate
/// is feasible iff every slack is strictly positive.
pub fn check_constraints(family: &BscFamily, rho: f64, r: f64, big_r: f64) -> RadiusCertificate {
    let [[p00, p01], [p10, p11]] = family.pi;
    let sr = rho.sqrt();
    let img = big_r * (1.0 - rho);

    let num_a = (r * ((-p00 * p11 + p10 * p11 + p10 * p01 - p10 * p11).abs() * r + (p00 * p11 + p10 * p01).abs())).sqrt();
    let num_b = (r * ((-p11 * p00 + p01 * p00 + p01 * p10 - p01 * p00).abs() * r + (p11 * p00 - p01 * p10).abs())).sqrt();
    let shift_a = ((p00 - p10 - p01 + p11).abs() * r + (p01 - p11).abs()) * big_r;
    let shift_b = ((p00 - p10 + p11 - p01).abs() * r + (p10 - p00).abs()) * big_r;

    let d1 = p11 - (p10 - p11).abs() * r - shift_a;
    let d2 = p01 - (p00 - p01).abs() * r - shift_a;
    let d3 = p00 - (p01 - p00).abs() * r - shift_b;
    let d4 = p10 - (p11 - p10).abs() * r - shift_b;

    let sum0 = ((p00 - p01 - p10 + p11).abs() * r + (p01 - p11).abs()) * big_r
        + (p10 - p11).abs() * r
        + p11
        + ((p01 - p00 + p10 - p11).abs() * r + (p00 - p10).abs()) * big_r
        + (p11 - p10).abs() * r
        + p10;
    let sum1 = ((p10 - p11 - p00 + p01).abs() * r + (p11 - p01).abs()) * big_r
        + (p00 - p01).abs() * r
        + p01
        + ((p11 - p10 + p00 - p01).abs() * r + (p10 - p00).abs()) * big_r
        + (p01 - p00).abs() * r
        + p00;

    let slacks = vec![
        Slack { name: "contraction_g1_near_0", value: ratio_slack(num_a, d1, sr) },
        Slack { name: "contraction_g1_near_1", value: ratio_slack(num_a, d2, sr) },
        Slack { name: "contraction_g0_near_1", value: ratio_slack(num_b, d3, sr) },
        Slack { name: "contraction_g0_near_0", value: ratio_slack(num_b, d4, sr) },
        Slack { name: "image_g1_at_1", value: ratio_slack(r * p00, p01 - (p00 - p01).abs() * r, img) },
        Slack { name: "image_g1_at_0", value: ratio_slack(r * p10, p11 - (p10 - p11).abs() * r, img) },
        Slack { name: "image_g0_at_0", value: ratio_slack(r * p11, p10 - (p11 - p10).abs() * r, img) },
        Slack { name: "image_g0_at_1", value: ratio_slack(r * p01, p00 - (p01 - p00).abs() * r, img) },
        Slack { name: "probability_sum_near_0", value: 1.0 / rho - sum0 },
        Slack { name: "probability_sum_near_1", value: 1.0 / rho - sum1 },
    ];
    let feasible = slacks.iter().all(|s| s.value > 0.0);
    RadiusCertificate { rho, r, big_r, slacks, feasible }
}

/// Largest feasible `r ∈ (0, 0.5]` for fixed `(ρ, R)`, by bisection.
pub fn max_radius(family: &BscFamily, rho: f64, big_r: f64) -> Option<RadiusCertificate> {
    if !(rho > 0.0 && rho < 1.0 && big_r > 0.0) {
        return None;
    }
    let feasible = |r: f64| check_constraints(family, rho, r, big_r).feasible;
    if feasible(MAX_RADIUS) {
        return Some(check_constraints(family, rho, MAX_RADIUS, big_r));
    }
    let mut lo = MAX_RADIUS * 0.5f64.powi(BISECTION_STEPS as i32);
    if !feasible(lo) {
        return None;
    }
    let mut hi = MAX_RADIUS;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(check_constraints(family, rho, lo, big_r))
}

pub fn default_rho_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

pub fn default_r_grid() -> Vec<f64> {
    (0..=12).map(|k| 10f64.powf(-4.0 + 0.25 * k as f64)).collect()
}

/// Best certificate over the grid: largest `r`, ties going to the
/// smallest `ρ` and then the smallest `R`.
pub fn radius_search(family: &BscFamily, rho_grid: &[f64], big_r_grid: &[f64]) -> Result<RadiusCertificate> {
    radius_search_with(family, rho_grid, big_r_grid, Execution::default())
}

pub fn radius_search_with(
    family: &BscFamily,
    rho_grid: &[f64],
    big_r_grid: &[f64],
    exec: Execution,
) -> Result<RadiusCertificate> {
    if rho_grid.is_empty() || big_r_grid.is_empty() {
        return Err(Error::InvalidParameter("search grids must be nonempty".into()));
    }
    let cells: Vec<(f64, f64)> = rho_grid.iter().flat_map(|&p| big_r_grid.iter().map(move |&q| (p, q))).collect();
    let found = map_ordered(&cells, exec, |&(rho, big_r)| max_radius(family, rho, big_r));
    found
        .into_iter()
        .flatten()
        .reduce(|best, c| {
            let better = c.r > best.r
                || (c.r == best.r && (c.rho < best.rho || (c.rho == best.rho && c.big_r < best.big_r)));
            if better {
                c
            } else {
                best
            }
        })
        .ok_or(Error::NoFeasiblePoint)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorReport {
    /// `H^{(k)}(0)/k!` for `k = 0..=order`.
    pub coefficients: Vec<f64>,
    /// `|c_k(h) − c_k(h/2)|`.
    pub errors: Vec<f64>,
    pub step: f64,
}

/// Coefficients of the interpolating polynomial through `(i·h, values[i])`,
/// lowest degree first.
fn forward_fit(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let vander = nalgebra::DMatrix::from_fn(n, n, |i, k| ((i as f64) * h).powi(k as i32));
    let rhs = nalgebra::DVector::from_column_slice(values);
    vander
        .lu()
        .solve(&rhs)
        .map(|c| c.iter().copied().collect())
        .unwrap_or_else(|| vec![f64::NAN; n])
}

/// One-sided finite-difference Taylor coefficients of the entropy rate in
/// `ε` at `ε = 0`, from a polynomial of degree `order + 2` through
/// equally spaced samples. The step is `max(tol^{1/(order+1)}, 1e-3)`,
/// capped so that the stencil stays inside `[0, 0.5]`. These are
/// approximations; `errors` compares against the same fit with half
/// the step.
pub fn taylor_coefficients(family: &BscFamily, order: usize, tol: f64) -> Result<TaylorReport> {
    if order > 4 {
        return Err(Error::InvalidParameter(format!("order {order} exceeds 4")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let points = order + 3;
    let h = tol.powf(1.0 / (order as f64 + 1.0)).max(1e-3).min(MAX_RADIUS / (points - 1) as f64);
    let inner = (tol * h.powi(order as i32)).max(1e-14);
    let eval = |eps: f64| -> Result<f64> {
        let model = build_bsc(&family.pi, eps)?;
        Ok(entropy_rate(&model, inner, 22)?.value)
    };
    let fit = |step: f64| -> Result<Vec<f64>> {
        let values: Vec<f64> = (0..points).map(|i| eval(i as f64 * step)).collect::<Result<_>>()?;
        Ok(forward_fit(&values, step))
    };
    let coarse = fit(h)?;
    let fine = fit(h / 2.0)?;
    Ok(TaylorReport {
        coefficients: coarse[..=order].to_vec(),
        errors: (0..=order).map(|k| (coarse[k] - fine[k]).abs()).collect(),
        step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::markov_entropy;
    use crate::simplex::{belief_update, SimplexPoint};
    use approx::assert_abs_diff_eq;

    fn fam() -> BscFamily {
        BscFamily::new([[0.7, 0.3], [0.4, 0.6]]).unwrap()
    }

    #[test]
    fn g_and_r_values() {
        let f = fam();
        assert_abs_diff_eq!(g_map(&f, 0.1, 0, 0.5).unwrap(), 0.495 / 0.54, epsilon = 1e-15);
        assert_abs_diff_eq!(r_map(&f, 0.1, 0, 0.5).unwrap(), 0.54, epsilon = 1e-15);
        assert_abs_diff_eq!(g_map(&f, 0.0, 0, 0.3).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r_map(&f, 0.0, 0, 1.0).unwrap(), 0.7, epsilon = 1e-15);
        for u in [0.0, 0.2, 0.9] {
            assert_abs_diff_eq!(g_map(&f, 0.5, 0, u).unwrap(), g_map(&f, 0.5, 1, u).unwrap(), epsilon = 1e-15);
            assert_abs_diff_eq!(r_map(&f, 0.5, 0, u).unwrap(), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn g_matches_four_state_model() {
        let f = fam();
        let m = build_bsc(&f.pi, 0.1).unwrap();
        let u = 0.37;
        let w = SimplexPoint::new(vec![u * 0.9, u * 0.1, (1.0 - u) * 0.9, (1.0 - u) * 0.1]).unwrap();
        for z in 0..2 {
            let x = belief_update(&m, z, &w).unwrap();
            assert_abs_diff_eq!(x.coords()[0] + x.coords()[1], g_map(&f, 0.1, z, u).unwrap(), epsilon = 1e-14);
        }
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let f = fam();
        let (eps, u, h) = (Complex64::new(0.05, 0.02), Complex64::new(0.03, -0.01), 1e-6);
        for z in 0..2 {
            let d = g_derivative_complex(&f, eps, z, u).unwrap();
            let fd = (g_map_complex(&f, eps, z, u + h).unwrap() - g_map_complex(&f, eps, z, u - h).unwrap()) / (2.0 * h);
            assert!((d - fd).norm() < 1e-8);
        }
    }

    #[test]
    fn r_zero_gives_zero_slacks() {
        let c = check_constraints(&fam(), 0.6, 0.0, 0.05);
        assert!(!c.feasible);
        assert_eq!(c.slacks.len(), 10);
        for s in &c.slacks[..8] {
            assert_eq!(s.value, 0.0, "{}", s.name);
        }
    }

    #[test]
    fn search_behaviour() {
        let f = fam();
        let best = radius_search(&f, &default_rho_grid(), &default_r_grid()).unwrap();
        assert!(best.feasible && best.r > 0.0);
        let small = radius_search(&f, &[0.5], &[0.01]).unwrap();
        assert!(small.r <= best.r);
        // Any ρ < 1 and R > 0 admit some tiny radius; the image bounds keep it below R(1−ρ).
        let tiny = radius_search(&f, &[0.999], &[1e-9]).unwrap();
        assert!(tiny.r > 0.0 && tiny.r < 1e-9 * (1.0 - 0.999));
        assert!(matches!(radius_search(&f, &[0.5], &[10.0]), Err(Error::NoFeasiblePoint)));
        let seq = radius_search_with(&f, &default_rho_grid(), &default_r_grid(), Execution::Sequential).unwrap();
        assert_eq!(seq, best);
    }

    #[test]
    fn taylor_order_zero_is_noiseless_entropy() {
        let f = fam();
        let t = taylor_coefficients(&f, 0, 1e-6).unwrap();
        let d = crate::hmm::StochasticMatrix::new(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        assert_abs_diff_eq!(t.coefficients[0], markov_entropy(&d).unwrap(), epsilon = 1e-9);
    }
}
