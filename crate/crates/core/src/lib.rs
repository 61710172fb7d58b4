//! Attribution analytics for tool-use training runs.
//!
//! The crate ingests per-sample checkpoint evaluation records (one record per
//! model, benchmark, checkpoint, sample and protocol) and derives:
//!
//! * drift curves and the tool-induced gap ([`measure`]),
//! * the four-term gain/harm decomposition of that gap ([`explain`]),
//! * mass / policy / quality factors and failure-cohort curves ([`diagnose`]),
//! * cross-benchmark aggregation, smoothing and bootstrap intervals ([`aggregate`]),
//! * synthetic record sets with closed-form expectations ([`synth`]),
//! * report bundles for the command-line front end ([`report`]).
//!
//! Numeric code is generic over [`Scalar`]. [`f64`] is the working type; the
//! exact [`Rational`] instantiation is used wherever an identity has to hold
//! without rounding.

pub mod aggregate;
pub mod diagnose;
mod error;
pub mod explain;
pub mod measure;
pub mod records;
pub mod report;
mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::{ratio, FloatScalar, Scalar};

/// Exact rational scalar.
pub type Rational = num_rational::Ratio<i128>;

pub type DriftSeriesF64 = measure::DriftSeries<f64>;
pub type AreaSummaryF64 = measure::AreaSummary<f64>;
pub type SchemaGapF64 = measure::SchemaGap<f64>;
pub type TermBreakdownF64 = explain::TermBreakdown<f64>;
pub type FactorTripleF64 = diagnose::FactorTriple<f64>;
pub type CohortQualityF64 = diagnose::CohortQuality<f64>;

pub type ExactDriftSeries = measure::DriftSeries<Rational>;
pub type ExactAreaSummary = measure::AreaSummary<Rational>;
pub type ExactTermBreakdown = explain::TermBreakdown<Rational>;
pub type ExactFactorTriple = diagnose::FactorTriple<Rational>;

/// Version string recorded in report manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
