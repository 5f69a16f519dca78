//! Dialogue policy refinement without a user simulator.
//!
//! The crate covers the whole pipeline: a synthetic persuasion corpus and
//! profile builder ([`dialogue`]), a trainable linear-softmax response
//! policy ([`policy`]), repetition and inconsistency detectors
//! ([`detectors`]), the clipped policy-gradient refinement loop with a KL
//! anchor to the baseline ([`trainer`]), and test-time filtering plus
//! imitation-based response selection ([`selection`]).

pub mod detectors;
pub mod dialogue;
pub mod policy;
pub mod selection;
pub mod trainer;
pub mod config;
pub mod error;

pub use error::{Error, Result};
