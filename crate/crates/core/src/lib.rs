//! Psychometric validation pipeline for multidimensional Likert scales.
//!
//! The crate covers the full path from raw crowdsourced survey exports to
//! measurement-invariance verdicts:
//!
//! * [`scale`]: instrument definitions, including the built-in 18-item,
//!   six-factor crowdworker motivation scale.
//! * [`ingest`]: response-file parsing, attention/test-item spam filtering,
//!   group splitting and sample moments (including the fourth-order moment
//!   matrix used by robust statistics).
//! * [`descriptives`]: composite means, composite correlations and
//!   Cronbach's alpha with Feldt confidence intervals.
//! * [`efa`]: principal-axis factoring, varimax/promax rotation and iterative
//!   item-pool reduction.
//! * [`sem`]: confirmatory factor models, ML estimation with analytic
//!   gradients, Satorra-Bentler scaling, robust standard errors and fit indices.
//! * [`invariance`]: multigroup CFA and the configural/metric/scalar ladder.
//! * [`simulate`]: seeded data generation from explicit model parameters.
//! * [`report`] and [`pipeline`]: the machine-readable master report, rendered
//!   tables, and end-to-end orchestration.

pub mod descriptives;
pub mod efa;
pub mod error;
pub mod ingest;
pub mod invariance;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod scale;
pub mod sem;
pub mod simulate;

pub use error::{Error, Result};
