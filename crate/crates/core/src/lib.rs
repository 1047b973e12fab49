//! Balanced visual question answering dataset synthesis for fashion catalogs.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`taxonomy`]: the category, attribute and value registry with synonym,
//!    hierarchy and location relations, plus grammatical agreement rules;
//! 2. [`ingest`]: raw catalog records normalized into canonical items;
//! 3. [`template`]: question templates rendered under agreement rules and
//!    diversified into variants;
//! 4. [`balancer`]: inverted value indexes, synonym merging, complement
//!    negatives and balanced yes/no emission;
//! 5. [`dataset`]: splits, tiered binary quotas, vocabulary, statistics,
//!    sharded output and subsampling.
//!
//! [`metrics`] scores predictions against a generated bundle.

pub mod error;
pub mod keyed;
pub mod taxonomy;
pub mod ingest;
pub mod template;
pub mod balancer;
pub mod dataset;
pub mod output;
pub mod metrics;

pub use error::{Error, Result};

/// Registry, normalization rules and template library shipped with the crate.
pub mod builtin {
    pub const TAXONOMY: &str = include_str!("../data/taxonomy.json");
    pub const RULES: &str = include_str!("../data/rules.json");
    pub const TEMPLATES: &str = include_str!("../data/templates.json");
}
