//! Synthetic navigation data tooling.
//!
//! The crate covers the whole pipeline from a simulated capture session to
//! dataset construction and evaluation:
//!
//! * [`geometry`]: poses, the linear/angular pose distances, path densification
//!   and perturbation.
//! * [`depth_codec`]: inverse-logarithmic depth codes, 16-bit millimeter maps and
//!   depth/point-cloud conversion.
//! * [`capture`]: length-prefixed JSON frame server, raw-persisting client and the
//!   offline post-processor.
//! * [`sequence_store`]: on-disk sequences, trajectories and frame statistics.
//! * [`vpr_builder`]: pose-based place selection, frame association, dataset
//!   export and triplet sampling.
//! * [`evaluation`]: cosine retrieval, triplet loss and Horn-aligned ATE.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capture;
pub mod depth_codec;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod sequence_store;
pub mod vpr_builder;

pub use error::{Error, Result};
