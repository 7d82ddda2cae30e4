//! Entropy rates of hidden Markov chains with certified brackets.
//!
//! A hidden Markov chain here is a function `Z = Φ(Y)` of a stationary
//! finite Markov chain `Y`. The crate computes:
//!
//! * exact finite-depth conditional entropies and monotone upper/lower
//!   brackets on the entropy rate ([`entropy`]),
//! * the belief dynamics on the probability simplex, Hilbert-metric
//!   contraction and eventual-contraction certificates ([`simplex`]),
//! * the closed-form run-length series for chains with an unambiguous
//!   symbol and its analyticity conditions ([`unambiguous`]),
//! * certified analyticity radii for a Markov source behind a binary
//!   symmetric channel ([`domain`]).
//!
//! All entropies are in nats.

pub mod conditions;
pub mod domain;
pub mod entropy;
pub mod error;
pub mod exec;
pub mod hmm;
pub mod model_file;
pub mod report;
pub mod simplex;
pub mod unambiguous;

pub use error::{Error, Result};
pub use exec::Execution;
pub use hmm::{
    build_bsc, build_example_7_1, build_example_7_2, markov_entropy, spectral_report,
    stationary_distribution, symbol_matrices, validate, Example71Params, Example72Params,
    HiddenMarkovModel, SpectralReport, StationaryDistribution, StochasticMatrix, SymbolMap,
};
pub use entropy::{EntropyEstimate, ConvergenceReport};
pub use simplex::{ContractionCertificate, LimitSetApprox, Metric, SimplexPoint};
pub use unambiguous::{AnalyticityVerdict, SeriesTerm, UnambiguousDecomposition};
pub use domain::{BscFamily, RadiusCertificate};
pub use conditions::{ColumnPatternReport, LimitSetReport};
