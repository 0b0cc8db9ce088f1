//! Batch faithfulness metrics: rank/sign/value accuracy, overall accuracy,
//! unfaithful counts, round progressions and extraction-instability statistics.
//!
//! Accuracies are counted exactly as integer ratios; derived quantities are
//! generic over the floating-point scalar.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{FaithfulnessReport, Field};

pub trait Scalar: Float + FromPrimitive + Display + Debug + Default + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("reports built with different n: expected {expected}, found {found}")]
    MixedN { expected: usize, found: usize },
    #[error("malformed metrics file: {0}")]
    Malformed(String),
}

/// Fraction of (instance, feature) pairs without an error flag on `field`.
///
/// Unstated values carry no value flag, so they count as correct; features the
/// narrative omits are flagged on rank and sign.
pub fn accuracy(
    reports: &[&FaithfulnessReport],
    field: Field,
    n: usize,
) -> Result<Ratio<u64>, MetricsError> {
    if reports.is_empty() || n == 0 {
        return Err(MetricsError::EmptyBatch);
    }
    let mut correct = 0u64;
    for r in reports {
        if r.n != n || r.checks.len() != n {
            return Err(MetricsError::MixedN {
                expected: n,
                found: r.n,
            });
        }
        correct += r.checks.iter().filter(|c| !c.error(field)).count() as u64;
    }
    Ok(Ratio::new(correct, (reports.len() * n) as u64))
}

pub fn to_scalar<T: Scalar>(r: Ratio<u64>) -> T {
    let num = T::from_u64(*r.numer()).expect("u64 fits a float");
    let den = T::from_u64(*r.denom()).expect("u64 fits a float");
    num / den
}

pub fn overall<T: Scalar>(ra: T, sa: T, va: T) -> T {
    (ra + sa + va) / T::from_u8(3).expect("3 fits")
}

/// Three-decimal rendering used in every printed table.
pub fn render3<T: Scalar>(v: T) -> String {
    format!("{v:.3}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics<T: Scalar> {
    pub round_index: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub n: usize,
    #[serde(rename = "RA")]
    pub ra: T,
    #[serde(rename = "SA")]
    pub sa: T,
    #[serde(rename = "VA")]
    pub va: T,
    pub overall: T,
    pub unfaithful_count: usize,
}

impl<T: Scalar> RoundMetrics<T> {
    pub fn from_reports(
        round_index: usize,
        reports: &[&FaithfulnessReport],
        n: usize,
    ) -> Result<Self, MetricsError> {
        let ra = to_scalar(accuracy(reports, Field::Rank, n)?);
        let sa = to_scalar(accuracy(reports, Field::Sign, n)?);
        let va = to_scalar(accuracy(reports, Field::Value, n)?);
        Ok(RoundMetrics {
            round_index,
            m: reports.len(),
            n,
            ra,
            sa,
            va,
            overall: overall(ra, sa, va),
            unfaithful_count: reports.iter().filter(|r| !r.is_faithful()).count(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstabilityStats<T: Scalar> {
    pub mean: T,
    pub min: T,
    pub max: T,
    pub std_dev: T,
}

/// Spread of one accuracy across repeated runs (population standard deviation).
pub fn instability_stats<T: Scalar>(values: &[T]) -> Result<InstabilityStats<T>, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let count = T::from_usize(values.len()).expect("length fits");
    let mean = values.iter().fold(T::zero(), |a, &v| a + v) / count;
    let var = values.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / count;
    let min = values.iter().copied().fold(T::infinity(), T::min);
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(InstabilityStats {
        mean,
        min,
        max,
        std_dev: var.sqrt(),
    })
}

pub const ARROW: &str = "→";

/// Per-metric round progressions, e.g. RA "0.905→0.960→0.960".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressionTable {
    pub ra: String,
    pub sa: String,
    pub va: String,
    pub overall_final: String,
    pub unfaithful: String,
}

impl ProgressionTable {
    pub fn rows(&self) -> [(&'static str, &str); 5] {
        [
            ("RA", &self.ra),
            ("SA", &self.sa),
            ("VA", &self.va),
            ("Overall", &self.overall_final),
            ("Unfaithful", &self.unfaithful),
        ]
    }

    pub fn to_text(&self) -> String {
        self.rows()
            .iter()
            .map(|(k, v)| format!("{k:<10} {v}\n"))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "progression"]).expect("in-memory write");
        for (k, v) in self.rows() {
            w.write_record([k, v]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

pub fn progression_table<T: Scalar>(rounds: &[RoundMetrics<T>]) -> Result<ProgressionTable, MetricsError> {
    let last = rounds.last().ok_or(MetricsError::EmptyBatch)?;
    let join = |f: &dyn Fn(&RoundMetrics<T>) -> String| {
        rounds.iter().map(f).collect::<Vec<_>>().join(ARROW)
    };
    Ok(ProgressionTable {
        ra: join(&|r| render3(r.ra)),
        sa: join(&|r| render3(r.sa)),
        va: join(&|r| render3(r.va)),
        overall_final: render3(last.overall),
        unfaithful: join(&|r| r.unfaithful_count.to_string()),
    })
}

/// `metrics.csv`: one row per round, full precision.
pub fn write_metrics_csv<T: Scalar + Serialize>(rounds: &[RoundMetrics<T>]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["round", "RA", "SA", "VA", "overall", "unfaithful_count", "M", "n"])
        .expect("in-memory write");
    for r in rounds {
        w.serialize((r.round_index, r.ra, r.sa, r.va, r.overall, r.unfaithful_count, r.m, r.n))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<RoundMetrics<f64>>, MetricsError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| MetricsError::Malformed(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["round", "RA", "SA", "VA", "overall", "unfaithful_count", "M", "n"] {
        return Err(MetricsError::Malformed(format!("unexpected header {headers:?}")));
    }
    reader
        .deserialize::<(usize, f64, f64, f64, f64, usize, usize, usize)>()
        .map(|row| {
            let (round_index, ra, sa, va, overall, unfaithful_count, m, n) =
                row.map_err(|e| MetricsError::Malformed(e.to_string()))?;
            Ok(RoundMetrics {
                round_index,
                m,
                n,
                ra,
                sa,
                va,
                overall,
                unfaithful_count,
            })
        })
        .collect()
}
