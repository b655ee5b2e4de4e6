//! Keyphrase evaluation toolkit: reference-based, reference-free and
//! utility metrics over keyphrase predictions, plus meta-evaluation against
//! human judgments.

pub mod corpus;
pub mod diversity;
pub mod embedding;
pub mod error;
pub mod meta_eval;
pub mod pipeline;
pub mod quality;
pub mod ref_metrics;
pub mod report;
pub mod sidecar;
pub mod stem;
pub mod utility;

pub use error::{Error, Result};
