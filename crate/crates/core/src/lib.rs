//! Detection of personal-information (PI) leaks in mobile HTTP traffic.
//!
//! The unit of detection is the `<app, key>` pair: a key observed in the
//! HTTP requests of one app. For every pair the crate computes statistical
//! occurrence features, both local (how the key's values behave inside the
//! app) and global (how the key, its domains and its values are reused by
//! other apps). A random forest trained on a small rule-labeled dataset then
//! classifies pairs, and the positive pairs form a blacklist that flags leaks
//! in new traffic by plain string matching.
//!
//! Pipeline:
//!
//! ```text
//! ingest -> aggregate (build + prune) -> features -> labeling -> detector -> blacklist
//! ```
//!
//! `synthgen` produces seeded corpora with planted PI and ground truth, and
//! `cli` wires every stage behind file-based subcommands.

pub mod aggregate;
pub mod blacklist;
pub mod cli;
pub mod detector;
pub mod error;
pub mod features;
pub mod ingest;
pub mod labeling;
pub mod report;
pub mod synthgen;

pub use aggregate::{build_table, prune, DefaultValues, PairKey, PairTable, PruneReport};
pub use blacklist::{build_blacklist, match_stream, Blacklist, LeakEvent, LeakSummary};
pub use detector::{evaluate, predict, split, train, EvalReport, ForestModel, Prediction, PredictedLabel};
pub use error::{Error, Result};
pub use features::{feature_matrix, value_entropy, FeatureVector, FEATURE_NAMES};
pub use ingest::{parse_http_request, parse_jsonl_corpus, KvPair, KvSource, TrafficRecord};
pub use labeling::{apply_rules, assemble_dataset, propagate, Label, LabeledSample, RuleSet};
pub use synthgen::{generate, GroundTruth, SynthConfig};

/// Version tag written into every persisted JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
