//! Multi-view ensemble classification of genetic mutations from text evidence.
//!
//! A sample is a `<gene, mutation, document>` triplet with one of nine class
//! labels. The library builds three feature views per sample — the original
//! document, the sentences across the whole collection that mention the
//! sample's gene or mutation (the entity text view), and the entity name
//! strings themselves — then trains gradient-boosted tree classifiers on
//! concatenated view features and blends the per-model probability outputs
//! with log-loss-optimal ensemble weights.
//!
//! The pieces compose bottom-up:
//!
//! - [`corpus`]: parsing of variant/text files, sample joining, CV splits
//! - [`textproc`]: tokenization, sentence segmentation, stemming, PoS
//!   filtering, dictionaries
//! - [`entity`]: Aho-Corasick multi-pattern matching and global entity-text
//!   extraction
//! - [`features`]: sparse feature generators and view concatenation
//! - [`dimred`]: truncated SVD, NMF, and LDA reducers
//! - [`embed`]: skip-gram word vectors and PV-DBOW document vectors
//! - [`gbdt`]: second-order gradient boosting with softmax cross-entropy
//! - [`ensemble`]: grid-search and simplex log-loss-minimizing model blending
//! - [`eval`]: log-loss metrics and the cross-validation harness
//! - [`pipeline`]: configuration, artifact caching, and the end-to-end runs
//!   behind the CLI
//! - [`synth`]: the deterministic synthetic corpus used by the test gates

pub mod corpus;
pub mod dimred;
pub mod embed;
pub mod ensemble;
pub mod entity;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod pipeline;
pub mod synth;
pub mod textproc;
pub mod views;

pub use error::{Error, Result};
