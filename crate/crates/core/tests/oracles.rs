//! Values frozen from independent high-precision computations: block
//! entropies enumerated in 50-digit arithmetic for the noisy binary
//! source, and closed forms for the small chains.

use approx::assert_abs_diff_eq;
use hmm_analytic::entropy::{sandwich, entropy_rate};
use hmm_analytic::unambiguous::{decompose, series_entropy};
use hmm_analytic::{build_bsc, build_example_7_2, markov_entropy, validate, Example72Params};

const PI: [[f64; 2]; 2] = [[0.7, 0.3], [0.4, 0.6]];

/// `(n, upper, lower, gap)` for the source `PI` behind crossover 0.1.
const BSC_BRACKETS: [(usize, f64, f64, f64); 10] = [
    (0, 0.68660227721941978492, 0.65785970172872613381, 0.028742575490694),
    (1, 0.66838360007153841596, 0.66800158571859738429, 0.00038201435294103),
    (2, 0.66814433980034535645, 0.6681388046850648657, 5.5351152804908e-6),
    (3, 0.6681408749306298037, 0.66814079467150042958, 8.0259129374115e-8),
    (4, 0.66814082464010886555, 0.66814082348250271909, 1.1576061464565e-9),
    (10, 0.66814082390446611236, 0.66814082390446611235, 1.0549234856442e-20),
    (11, 0.66814082390446611236, 0.66814082390446611236, 1.5244844498115e-22),
    (12, 0.66814082390446611236, 0.66814082390446611236, 2.2030453458951e-24),
    (13, 0.66814082390446611236, 0.66814082390446611236, 3.1836438852706e-26),
    (14, 0.66814082390446611236, 0.66814082390446611236, 4.6007146452513e-28),
];

#[test]
fn bsc_brackets_match_enumeration() {
    let model = build_bsc(&PI, 0.1).unwrap();
    for &(n, upper, lower, gap) in &BSC_BRACKETS {
        let b = sandwich(&model, n).unwrap();
        assert_abs_diff_eq!(b.upper, upper, epsilon = 1e-13);
        assert_abs_diff_eq!(b.lower, lower, epsilon = 1e-13);
        // The kernel arguments are O(√gap) differences of O(1) floats.
        let rel = 1e-12 + f64::EPSILON / gap.sqrt();
        assert!((b.gap - gap).abs() <= rel * gap, "n = {n}: gap {} vs {gap}", b.gap);
    }
}

#[test]
fn bsc_entropy_rate() {
    let model = build_bsc(&PI, 0.1).unwrap();
    let est = entropy_rate(&model, 1e-13, 20).unwrap();
    assert_abs_diff_eq!(est.value, 0.66814082390446611236, epsilon = 1e-13);
    assert!(est.lower <= est.upper);
}

#[test]
fn two_state_markov_entropy() {
    let m = validate(&[vec![0.7, 0.3], vec![0.4, 0.6]], &[0, 1]).unwrap();
    let h = markov_entropy(m.delta()).unwrap();
    let exact = 4.0 / 7.0 * -(0.7f64 * 0.7f64.ln() + 0.3 * 0.3f64.ln())
        + 3.0 / 7.0 * -(0.4f64 * 0.4f64.ln() + 0.6 * 0.6f64.ln());
    assert_abs_diff_eq!(h, exact, epsilon = 1e-15);
    assert_abs_diff_eq!(h, 0.6374988870, epsilon = 1e-10);
}

#[test]
fn triangular_block_series_value() {
    let model = build_example_7_2(&Example72Params { e: 0.2, a: 0.5, b: 0.3, f: 0.6, c: 0.4, g: 0.7, d: 0.3, eps: 0.05 })
        .unwrap();
    let est = series_entropy(&decompose(&model).unwrap(), 1e-10).unwrap();
    let oracle = 0.5973729278053502;
    assert!(est.lower - 1e-12 <= oracle && oracle <= est.upper + 1e-12, "{est:?}");
    assert_abs_diff_eq!(est.value, oracle, epsilon = 1e-10);
}
