//! Object-hallucination tooling for image-caption text.
//!
//! - [`corpus`]: caption/annotation ingestion, tokenization, object mentions.
//! - [`chair`]: CHAIR_I / CHAIR_S against ground-truth objects.
//! - [`factors`]: co-occurrence, uncertainty and position scores, their
//!   distributions and ratio statistics.
//! - [`masker`]: `[IDK]` placeholder masking for revisor training and inference.
//! - [`revisor`]: prompt construction and the external revisor backend protocol.
//! - [`theory`]: closed-form and Monte Carlo checks of the Gaussian mean-classifier model.

pub mod chair;
pub mod corpus;
pub mod factors;
pub mod masker;
pub mod revisor;
pub mod theory;
