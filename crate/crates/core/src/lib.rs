//! Formula dataset synthesis engine and image-based evaluation toolkit.
//!
//! The library covers the full path from a Markdown corpus to a rendered,
//! augmented, manifest-backed formula dataset, plus the evaluation suite
//! (EPMR, EP@N, failure rate, command-level ExpRate) used to score
//! recognition output against references.
//!
//! Pipeline stages, in build order:
//!
//! 1. [`extract`] — pull unit formulas out of Markdown documents
//! 2. [`enhance`] — concatenate, substitute, inject text, generate shorts
//! 3. [`curate`] — edit-distance dedup and geometry filters
//! 4. [`render`] — LaTeX to grayscale PNG through a pluggable backend
//! 5. [`augment`] — paper texture, ink and paper degradation
//! 6. [`dataset`] — orchestration, manifests, statistics, stratification
//!
//! [`latex`] supplies the token model everything above shares, and
//! [`metrics`] the evaluation suite.

pub mod augment;
pub mod config;
pub mod curate;
pub mod dataset;
pub mod enhance;
pub mod extract;
pub mod image;
pub mod latex;
pub mod metrics;
pub mod render;
pub mod seed;
