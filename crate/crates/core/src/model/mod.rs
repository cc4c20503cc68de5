//! Shared domain types: alerts, clusters, keyword bundles, insight records,
//! and ground-truth labels.
//!
//! All types are immutable value objects with canonical JSON forms. Field
//! names match the agent return schemas exactly, so a journal or artifact
//! line can be diffed byte-for-byte across runs.

pub mod labels;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{TimeWindow, UtcTimestamp};
pub use labels::{
    parse_field_label, parse_label, Alignment, LabelField, MediaDirection, MemberDirection,
    PolyDirection, UnknownLabel, WhaleQuality,
};

/// Catch-all cluster ids the clustering prompt forbids.
pub const BANNED_CLUSTER_IDS: &[&str] =
    &["other", "misc", "mixed", "general", "politics", "market"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("price {0} outside [0, 1]")]
    PriceOutOfRange(f64),
    #[error("whale_buy alert {0} has no whale_usd")]
    MissingWhaleUsd(String),
    #[error("negative whale_usd {1} on alert {0}")]
    NegativeWhaleUsd(String, f64),
    #[error("win_rate {0} outside [0, 1]")]
    WinRateOutOfRange(f64),
    #[error("cluster id {0:?} is not snake_case ([a-z0-9_]+)")]
    BadClusterId(String),
    #[error("cluster id {0:?} is a banned catch-all")]
    BannedClusterId(String),
    #[error("duplicate cluster id {0:?}")]
    DuplicateClusterId(String),
    #[error("cluster {0:?} is empty")]
    EmptyCluster(String),
    #[error("alert index {index} assigned to both {first:?} and {second:?}")]
    DuplicateAssignment {
        index: usize,
        first: String,
        second: String,
    },
    #[error("alert index {index} out of range (alert count {count})")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("alert indices {0:?} unassigned")]
    UnassignedIndices(Vec<usize>),
    #[error("importance_score {0} outside 1..=10")]
    ImportanceOutOfRange(i64),
    #[error(transparent)]
    Label(#[from] UnknownLabel),
}

/// Side of the binary market an alert concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSide {
    Yes,
    No,
}

impl OutcomeSide {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeSide::Yes => "yes",
            OutcomeSide::No => "no",
        }
    }
}

/// Which anomaly rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    PriceShock,
    WhaleBuy,
}

/// Historical profile of a large-capital trader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhaleProfile {
    pub name: String,
    /// Historical win rate in [0, 1].
    pub win_rate: f64,
    /// Lifetime closed PnL in USD (signed).
    pub pnl: f64,
    pub trades: u64,
    pub position_usd: f64,
}

impl WhaleProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.win_rate) {
            return Err(ModelError::WinRateOutOfRange(self.win_rate));
        }
        Ok(())
    }
}

/// One Polymarket anomaly event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub market_title: String,
    pub outcome_side: OutcomeSide,
    pub alert_kind: AlertKind,
    /// Current implied probability in [0, 1].
    pub price: f64,
    /// Signed probability change that fired the rule.
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whale_usd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whale_profile: Option<WhaleProfile>,
    pub observed_at: UtcTimestamp,
}

impl Alert {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.price) {
            return Err(ModelError::PriceOutOfRange(self.price));
        }
        match (self.alert_kind, self.whale_usd) {
            (AlertKind::WhaleBuy, None) => {
                return Err(ModelError::MissingWhaleUsd(self.alert_id.clone()))
            }
            (_, Some(usd)) if usd < 0.0 => {
                return Err(ModelError::NegativeWhaleUsd(self.alert_id.clone(), usd))
            }
            _ => {}
        }
        if let Some(profile) = &self.whale_profile {
            profile.validate()?;
        }
        Ok(())
    }

    /// Canonical one-line JSON used by the journal and all artifacts.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("alert serializes")
    }
}

/// Membership of one alert in a cluster, with the direction its whale bet
/// signals for the theme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub index: usize,
    pub direction: MemberDirection,
}

/// GDELT query inputs extracted for one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordBundle {
    /// Uppercase token lists of length 1 or 2 for the events table.
    pub actor_pairs: Vec<Vec<String>>,
    /// Proper-noun strings for GKG person/org/theme matching.
    pub gkg_keywords: Vec<String>,
}

impl KeywordBundle {
    pub const MAX_ACTOR_PAIRS: usize = 5;
    pub const MAX_GKG_KEYWORDS: usize = 6;

    /// Enforces the bundle shape on raw agent output: uppercases tokens,
    /// drops tokens longer than two words (logged), drops emptied pairs,
    /// and truncates to the 5-pair / 6-keyword caps.
    pub fn normalized(raw_pairs: Vec<Vec<String>>, raw_keywords: Vec<String>) -> Self {
        let mut actor_pairs = Vec::new();
        for pair in raw_pairs {
            let mut cleaned: Vec<String> = Vec::new();
            for token in pair {
                let token = token.trim().to_uppercase();
                if token.is_empty() {
                    continue;
                }
                if token.split_whitespace().count() > 2 {
                    log::warn!("dropping overlong actor token {token:?}");
                    continue;
                }
                cleaned.push(token.split_whitespace().collect::<Vec<_>>().join(" "));
            }
            cleaned.truncate(2);
            if !cleaned.is_empty() {
                actor_pairs.push(cleaned);
            }
            if actor_pairs.len() == Self::MAX_ACTOR_PAIRS {
                break;
            }
        }
        let mut gkg_keywords: Vec<String> = raw_keywords
            .into_iter()
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty())
            .collect();
        gkg_keywords.truncate(Self::MAX_GKG_KEYWORDS);
        KeywordBundle {
            actor_pairs,
            gkg_keywords,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.actor_pairs.is_empty() && self.gkg_keywords.is_empty()
    }
}

/// A themed group of alerts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    pub theme: String,
    pub members: Vec<ClusterMember>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<KeywordBundle>,
}

impl Cluster {
    pub fn member_indices(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.index).collect()
    }

    /// Net direction score: intensifying count minus easing count.
    pub fn direction_score(&self) -> i64 {
        self.members.iter().fold(0, |acc, m| match m.direction {
            MemberDirection::Intensifying => acc + 1,
            MemberDirection::Easing => acc - 1,
        })
    }
}

/// `true` iff `id` is lowercase snake_case and not a banned catch-all.
pub fn is_valid_cluster_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !BANNED_CLUSTER_IDS.contains(&id)
}

/// A partition of an alert batch into themed clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub source_window: TimeWindow,
}

impl ClusterSet {
    /// Checks the partition property over `0..alert_count` plus all id rules.
    pub fn validate(&self, alert_count: usize) -> Result<(), ModelError> {
        let mut seen_ids: BTreeSet<&str> = BTreeSet::new();
        let mut owner: Vec<Option<&str>> = vec![None; alert_count];
        for cluster in &self.clusters {
            if !is_valid_cluster_id(&cluster.cluster_id) {
                if BANNED_CLUSTER_IDS.contains(&cluster.cluster_id.as_str()) {
                    return Err(ModelError::BannedClusterId(cluster.cluster_id.clone()));
                }
                return Err(ModelError::BadClusterId(cluster.cluster_id.clone()));
            }
            if !seen_ids.insert(&cluster.cluster_id) {
                return Err(ModelError::DuplicateClusterId(cluster.cluster_id.clone()));
            }
            if cluster.members.is_empty() {
                return Err(ModelError::EmptyCluster(cluster.cluster_id.clone()));
            }
            for member in &cluster.members {
                if member.index >= alert_count {
                    return Err(ModelError::IndexOutOfRange {
                        index: member.index,
                        count: alert_count,
                    });
                }
                match owner[member.index] {
                    Some(first) => {
                        return Err(ModelError::DuplicateAssignment {
                            index: member.index,
                            first: first.to_string(),
                            second: cluster.cluster_id.clone(),
                        })
                    }
                    None => owner[member.index] = Some(&cluster.cluster_id),
                }
            }
        }
        let unassigned: Vec<usize> = owner
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_none())
            .map(|(i, _)| i)
            .collect();
        if !unassigned.is_empty() {
            return Err(ModelError::UnassignedIndices(unassigned));
        }
        Ok(())
    }

    pub fn cluster(&self, id: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.cluster_id == id)
    }

    pub fn alert_count(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    /// Flat `index -> cluster position` labeling for metric computation.
    /// Requires a valid partition.
    pub fn labeling(&self, alert_count: usize) -> Result<Vec<usize>, ModelError> {
        self.validate(alert_count)?;
        let mut labels = vec![0usize; alert_count];
        for (pos, cluster) in self.clusters.iter().enumerate() {
            for member in &cluster.members {
                labels[member.index] = pos;
            }
        }
        Ok(labels)
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Structured output of the analysis stage for one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightRecord {
    pub cluster_id: String,
    pub poly_direction: PolyDirection,
    pub poly_comment: String,
    pub whale_quality: WhaleQuality,
    pub media_direction: MediaDirection,
    pub media_comment: String,
    pub poly_media_alignment: Alignment,
    pub alignment_comment: String,
    pub importance_score: i64,
    pub importance_reason: String,
    /// Set when the agent never produced a usable record for this cluster
    /// and a sentinel was written instead.
    #[serde(default, skip_serializing_if = "is_false")]
    pub incomplete: bool,
}

impl InsightRecord {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(1..=10).contains(&self.importance_score) {
            return Err(ModelError::ImportanceOutOfRange(self.importance_score));
        }
        Ok(())
    }

    pub fn field_label(&self, field: LabelField) -> &'static str {
        match field {
            LabelField::PolyDirection => self.poly_direction.as_str(),
            LabelField::WhaleQuality => self.whale_quality.as_str(),
            LabelField::MediaDirection => self.media_direction.as_str(),
            LabelField::PolyMediaAlignment => self.poly_media_alignment.as_str(),
        }
    }

    /// Sentinel for clusters whose analysis never completed.
    pub fn incomplete_sentinel(cluster_id: &str, reason: &str) -> Self {
        InsightRecord {
            cluster_id: cluster_id.to_string(),
            poly_direction: PolyDirection::Mixed,
            poly_comment: format!("analysis incomplete: {reason}"),
            whale_quality: WhaleQuality::NoWhaleData,
            media_direction: MediaDirection::NoCoverage,
            media_comment: format!("analysis incomplete: {reason}"),
            poly_media_alignment: Alignment::MarketLeadsMedia,
            alignment_comment: format!("analysis incomplete: {reason}"),
            importance_score: 1,
            importance_reason: "incomplete analysis placeholder".to_string(),
            incomplete: true,
        }
    }
}

/// One annotator's labels for a cluster in a day window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub cluster_id: String,
    pub poly_direction: PolyDirection,
    pub whale_quality: WhaleQuality,
    pub media_direction: MediaDirection,
    pub poly_media_alignment: Alignment,
    pub annotator_id: String,
    pub day_window: String,
}

impl GroundTruthLabel {
    pub fn field_label(&self, field: LabelField) -> &'static str {
        match field {
            LabelField::PolyDirection => self.poly_direction.as_str(),
            LabelField::WhaleQuality => self.whale_quality.as_str(),
            LabelField::MediaDirection => self.media_direction.as_str(),
            LabelField::PolyMediaAlignment => self.poly_media_alignment.as_str(),
        }
    }
}
