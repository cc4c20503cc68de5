//! Core library for the polygnosis pipeline: Polymarket anomaly ingestion,
//! LLM agent orchestration (clustering, keywords, analysis), GDELT media
//! signal derivation, a deterministic alignment validator, and the
//! evaluation harness that scores everything against trader annotations.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`ingest`] — anomaly triggers, the alert journal, deterministic replay
//! * [`gateway`] — chat-completion backends, prompt templates, JSON
//!   extraction, token/cost ledger
//! * [`cluster`] — the clustering agent (themes, summaries, keywords)
//! * [`reflect`] — bounded reflection loops over cluster sets
//! * [`gdelt`] — GDELT Events/GKG fetching, filtering, signal derivation
//! * [`analysis`] — per-cluster and global insight generation
//! * [`validator`] — deterministic alignment rubric pass
//! * [`eval`] — clustering metrics, accuracy, consistency, experiment runner
//! * [`pipeline`] — run configuration, stage orchestration, artifacts, diffs
//!
//! Shared value types live in [`model`] and [`time`].

pub mod analysis;
pub mod cluster;
pub mod eval;
pub mod gateway;
pub mod gdelt;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod reflect;
pub mod time;
pub mod validator;

pub use model::{
    Alert, AlertKind, Alignment, Cluster, ClusterMember, ClusterSet, GroundTruthLabel,
    InsightRecord, KeywordBundle, LabelField, MediaDirection, MemberDirection, OutcomeSide,
    PolyDirection, WhaleProfile, WhaleQuality,
};
pub use time::{DayWindow, TimeWindow, UtcTimestamp};
