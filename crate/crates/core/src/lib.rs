//! Click models for ranked lists and carousel interfaces.
//!
//! * [`models`]: closed-form click probabilities (CM, TCM, CCM).
//! * [`layout`]: optimal lists and the carousel ordering heuristic.
//! * [`simulate`]: Monte-Carlo sessions and the exhaustive-enumeration oracle.
//! * [`fitting`]: grid-search fits of parametric click surfaces.
//! * [`dataio`]: MovieLens ingestion, genre topics, splits and user groups.
//! * [`recsys`]: matrix factorization, softmax attractions and baselines.
//! * [`surrogate`]: a synthetic dataset shaped like MovieLens small.
//! * [`experiments`]: end-to-end pipelines and reports.
//! * [`gridio`]: CSV formats for layouts and click grids.

pub mod error;
pub mod models;
pub mod simulate;
pub mod fitting;
pub mod dataio;
pub mod recsys;
pub mod layout;
pub mod surrogate;
pub mod experiments;
pub mod gridio;

pub use error::{Error, Result};
