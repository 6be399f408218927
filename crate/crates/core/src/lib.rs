//! Field extraction from form-like documents without field-level labels.
//!
//! A rule engine mines noisy word-level pseudo-labels from OCR output, a small
//! token classifier with several branches is trained on them with
//! progressive label refinement, and extraction quality is measured with
//! exact-match macro F1.

pub mod bootstrap;
pub mod doc;
pub mod error;
pub mod eval;
pub mod grouping;
pub mod io;
pub mod labels;
pub mod model;
pub mod pipeline;
pub mod ple;
pub mod schema;
pub mod seed;
pub mod similarity;
pub mod synth;
pub mod typer;

pub use doc::{reading_order, BBox, Document, Phrase, Word};
pub use error::{Error, Result};
pub use labels::{Annotation, DocLabels, LabelSet, Provenance, ValueRecord};
pub use schema::{FieldDef, FieldSchema};
