//! End-to-end scene graph generation as bipartite graph construction.
//!
//! The pipeline detects a set of entity nodes with a DETR-style decoder,
//! generates entity-aware predicate nodes with a structural decoder, links
//! the two node sets with a graph assembling step, and is trained with
//! Hungarian set matching. Two generator variants are provided: a base
//! variant whose entity indicators attend to entity features with a
//! predefined correspondence function, and a spatial-aware variant that
//! pools image features under anchor boxes and learns the correspondence
//! end to end.
//!
//! Everything runs on a small tape-based autodiff engine over `f64`
//! matrices (see [`tensor`]), which keeps analytic gradients checkable
//! against finite differences. A deterministic synthetic-scenes generator
//! ([`data`]) provides a desk-scale corpus with closed-form ground truth.

pub mod assembler;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod predicate;
pub mod tensor;

pub use error::{Error, Result};
