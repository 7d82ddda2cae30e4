//! Checkable sufficient conditions for analyticity of the entropy rate.
//!
//! [`check_theorem_1_1`] is purely combinatorial on the zero pattern of
//! `Δ`. [`check_theorem_6_1`] works on a finite-depth approximation of the
//! limit set of the belief iteration.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hmm::HiddenMarkovModel;
use crate::simplex::{contraction_at_points, limit_set_approximation, symbol_probability, SimplexPoint};

/// Column-positivity conditions on `Δ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnPatternReport {
    /// Every symbol owns at least one strictly positive column.
    pub cond1: bool,
    /// Every column is all zero or strictly positive.
    pub cond2: bool,
    #[serde(skip)]
    pub positive_columns: Vec<usize>,
    #[serde(skip)]
    pub mixed_columns: Vec<usize>,
}

impl ColumnPatternReport {
    pub fn holds(&self) -> bool {
        self.cond1 && self.cond2
    }
}

/// Zeros are exact: an entry counts as positive iff it is `> 0.0`.
pub fn check_theorem_1_1(model: &HiddenMarkovModel) -> ColumnPatternReport {
    let delta = model.delta();
    let n = delta.size();
    let mut positive_columns = Vec::new();
    let mut mixed_columns = Vec::new();
    for j in 0..n {
        let positives = (0..n).filter(|&i| delta.get(i, j) > 0.0).count();
        if positives == n {
            positive_columns.push(j);
        } else if positives > 0 {
            mixed_columns.push(j);
        }
    }
    let cond1 = (0..model.alphabet_size())
        .all(|a| model.phi().states_of(a).iter().any(|j| positive_columns.contains(j)));
    ColumnPatternReport { cond1, cond2: mixed_columns.is_empty(), positive_columns, mixed_columns }
}

/// Contraction on the limit points lying in one face `W_b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceContraction {
    pub symbol: usize,
    pub points: usize,
    /// Smallest composition depth with every derivative norm below 1.
    pub depth: Option<usize>,
    /// Largest derivative norm at that depth, or at the deepest depth tried.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSetReport {
    /// 1 is a simple eigenvalue of `Δ`.
    pub cond1: bool,
    /// `r_a(w) > 0` for every symbol and every approximate limit point.
    pub cond2: bool,
    /// Eventual contraction at the limit points of every face.
    pub cond3: bool,
    pub min_symbol_probability: f64,
    pub limit_depth: usize,
    pub limit_points: usize,
    pub faces: Vec<FaceContraction>,
}

impl LimitSetReport {
    pub fn holds(&self) -> bool {
        self.cond1 && self.cond2 && self.cond3
    }
}

pub fn check_theorem_6_1(model: &HiddenMarkovModel, limit_depth: usize, max_depth: usize) -> Result<LimitSetReport> {
    check_theorem_6_1_with(model, limit_depth, max_depth, Execution::default())
}

pub fn check_theorem_6_1_with(
    model: &HiddenMarkovModel,
    limit_depth: usize,
    max_depth: usize,
    exec: Execution,
) -> Result<LimitSetReport> {
    if limit_depth == 0 || max_depth == 0 {
        return Err(Error::InvalidParameter("limit_depth and max_depth must be at least 1".into()));
    }
    let cond1 = match model.stationary() {
        Ok(_) => true,
        Err(Error::NonSimpleUnitEigenvalue { .. }) => false,
        Err(e) => return Err(e),
    };
    if !cond1 {
        return Ok(LimitSetReport {
            cond1,
            cond2: false,
            cond3: false,
            min_symbol_probability: 0.0,
            limit_depth,
            limit_points: 0,
            faces: Vec::new(),
        });
    }
    let limit = limit_set_approximation(model, limit_depth)?;

    let mut min_r = f64::INFINITY;
    for w in &limit.points {
        for a in 0..model.alphabet_size() {
            min_r = min_r.min(symbol_probability(model, a, w));
        }
    }

    let mut faces = Vec::new();
    for b in 0..model.alphabet_size() {
        let face = model.phi().states_of(b);
        let points: Vec<SimplexPoint> =
            limit.points.iter().filter(|w| w.support().iter().all(|i| face.contains(i))).cloned().collect();
        let mut result = FaceContraction { symbol: b, points: points.len(), depth: None, rho: f64::NAN };
        if points.is_empty() {
            result.depth = Some(1);
            result.rho = 0.0;
        } else {
            for n in 1..=max_depth {
                let (norm, _) = contraction_at_points(model, &points, n, exec);
                result.rho = norm;
                if norm < 1.0 {
                    result.depth = Some(n);
                    break;
                }
            }
        }
        faces.push(result);
    }

    Ok(LimitSetReport {
        cond1,
        cond2: min_r > 0.0,
        cond3: faces.iter().all(|f| f.depth.is_some()),
        min_symbol_probability: min_r,
        limit_depth,
        limit_points: limit.points.len(),
        faces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{build_bsc, build_example_7_1, validate, Example71Params};

    const PI: [[f64; 2]; 2] = [[0.7, 0.3], [0.4, 0.6]];

    #[test]
    fn bsc_at_zero_noise_satisfies_column_pattern() {
        let m = build_bsc(&PI, 0.0).unwrap();
        let r = check_theorem_1_1(&m);
        assert!(r.cond1 && r.cond2);
        assert_eq!(r.positive_columns, vec![0, 2]);
    }

    #[test]
    fn mixed_column_breaks_cond2() {
        let m = validate(&[vec![0.4, 0.5, 0.1], vec![0.2, 0.3, 0.5], vec![0.4, 0.0, 0.6]], &[0, 0, 1]).unwrap();
        let r = check_theorem_1_1(&m);
        assert!(r.cond1);
        assert!(!r.cond2);
        assert_eq!(r.mixed_columns, vec![1]);
    }

    #[test]
    fn positive_delta_satisfies_both() {
        let m = build_bsc(&PI, 0.1).unwrap();
        assert!(check_theorem_1_1(&m).holds());
        let json = serde_json::to_string(&check_theorem_1_1(&m)).unwrap();
        assert_eq!(json, r#"{"cond1":true,"cond2":true}"#);
    }

    #[test]
    fn perturbed_run_family_is_positive() {
        let p = Example71Params { a: 0.6, b: 0.4, c: 0.5, d: 0.3, e: 0.3, f: 0.4, g: 0.2, h: 0.3, eps: 0.01 };
        let m = build_example_7_1(&p).unwrap();
        assert!(check_theorem_1_1(&m).holds());
    }

    #[test]
    fn limit_set_conditions_hold_for_noisy_bsc() {
        let m = build_bsc(&PI, 0.1).unwrap();
        let r = check_theorem_6_1(&m, 6, 4).unwrap();
        assert!(r.holds(), "{r:?}");
        assert_eq!(r.faces.len(), 2);
    }

    #[test]
    fn reducible_chain_fails_cond1() {
        let m = validate(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]).unwrap();
        let r = check_theorem_6_1(&m, 4, 2).unwrap();
        assert!(!r.cond1 && !r.holds());
    }
}
