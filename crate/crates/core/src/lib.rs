//! Phrase-based statistical machine translation toolkit.
//!
//! The crate covers the full training and decoding pipeline: corpus
//! preparation, n-gram language modeling, IBM Model 1/2 word alignment with
//! symmetrization, phrase extraction and scoring, lexicalized reordering,
//! stack-based beam decoding, minimum-error-rate weight tuning, and BLEU
//! evaluation, plus a file-based model store orchestrated by
//! [`pipeline::run_pipeline`].

pub mod align;
pub mod bintable;
pub mod bleu;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod lm;
pub mod model;
pub mod phrase;
pub mod pipeline;
pub mod reorder;
pub mod tuner;

pub use error::{Error, Result};
