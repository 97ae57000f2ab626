//! Decoder-only transformer language model for free-text note classification.
//!
//! The crate covers the whole pipeline: a synthetic/ingested note corpus with
//! ICD-10 derived trauma labels, a byte-level BPE tokenizer, a small
//! reverse-mode autodiff engine, a GPT-2 shaped model, self-supervised
//! pre-training and marker-token fine-tuning, question-answering style
//! classification, metrics, and an experiment harness that compares training
//! from scratch against pre-train-then-fine-tune across a grid of label counts.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod real;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
pub use real::{FloatMode, Real};
