//! Generation, faithfulness checking and iterative refinement of natural-language
//! explanations of SHAP tables by cooperating model agents.

pub mod coherence;
pub mod critic;
pub mod ensemble;
pub mod evaluator;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod prompt;
pub mod simlab;

pub use metrics::Scalar;

/// Exact batch accuracy as a ratio of correct (instance, feature) pairs.
pub type Accuracy = num_rational::Ratio<u64>;
/// Per-round metrics at double precision, as written to `metrics.csv`.
pub type RoundMetrics = metrics::RoundMetrics<f64>;
pub type RoundMetricsF32 = metrics::RoundMetrics<f32>;
pub type InstabilityStats = metrics::InstabilityStats<f64>;
