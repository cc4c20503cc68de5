//! Clustering agent: turns an alert batch into a themed [`ClusterSet`],
//! writes one-sentence cluster summaries, and extracts GDELT keyword
//! bundles.
//!
//! The model response is never trusted to be a partition. Normalization
//! runs in a fixed order: slugify malformed ids, drop invalid directions
//! and out-of-range indices, keep the first assignment of a duplicated
//! index, one corrective re-request if banned catch-all ids appear, then
//! disband still-banned clusters and give every unassigned alert a
//! singleton cluster named from its market title.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{ExpectedShape, Gateway, GatewayError, TemplateId};
use crate::model::{
    is_valid_cluster_id, Alert, AlertKind, Cluster, ClusterMember, ClusterSet, KeywordBundle,
    MemberDirection, OutcomeSide, BANNED_CLUSTER_IDS,
};
use crate::time::TimeWindow;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// What normalization had to do to reach a valid partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    /// Alert indices that fell back to singleton clusters.
    pub singleton_fallbacks: Vec<usize>,
    pub duplicate_drops: u32,
    pub out_of_range_drops: u32,
    pub invalid_direction_drops: u32,
    pub slugified_ids: u32,
    /// Whether the one corrective re-request for banned ids was spent.
    pub banned_retry: bool,
    /// Banned clusters disbanded after the re-request (members went to
    /// singleton fallback).
    pub disbanded_banned: Vec<String>,
}

impl ClusterDiagnostics {
    pub fn is_clean(&self) -> bool {
        *self == ClusterDiagnostics::default()
    }
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub set: ClusterSet,
    pub diagnostics: ClusterDiagnostics,
}

const CLUSTER_SCHEMA_HINT: &str = r#"[{"cluster_id": "snake_case_id", "theme": "text", "alerts": [{"index": 0, "direction": "intensifying | easing"}]}]"#;
const KEYWORD_SCHEMA_HINT: &str =
    r#"{"actor_pairs": [["ACTOR_A", "ACTOR_B"]], "gkg_keywords": ["Name1", "Name2", "Name3"]}"#;

#[derive(Debug, Clone, Deserialize)]
struct RawCluster {
    cluster_id: String,
    #[serde(default)]
    theme: Option<String>,
    #[serde(default)]
    alerts: Vec<RawMember>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawMember {
    index: Value,
    #[serde(default)]
    direction: Option<String>,
}

/// Numbered alert list as the clustering prompt expects it.
pub fn render_numbered_alerts(alerts: &[Alert]) -> String {
    alerts
        .iter()
        .enumerate()
        .map(|(i, a)| {
            format!(
                "{i}. {} — outcome side: {}",
                a.market_title,
                a.outcome_side.as_str()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One detailed line per member alert for summary/keyword/analysis prompts.
pub fn render_alert_detail(alert: &Alert) -> String {
    let mut line = format!(
        "[{}] {} (side: {}, price: {}, delta: {})",
        match alert.alert_kind {
            AlertKind::PriceShock => "price_shock",
            AlertKind::WhaleBuy => "whale_buy",
        },
        alert.market_title,
        alert.outcome_side.as_str(),
        alert.price,
        alert.delta,
    );
    if let Some(usd) = alert.whale_usd {
        line.push_str(&format!(" whale_usd: {usd}"));
    }
    if let Some(p) = &alert.whale_profile {
        line.push_str(&format!(
            " trader: {} (win_rate: {}, pnl: {}, trades: {}, position_usd: {})",
            p.name, p.win_rate, p.pnl, p.trades, p.position_usd
        ));
    }
    line
}

pub(crate) fn render_member_details(cluster: &Cluster, alerts: &[Alert]) -> String {
    cluster
        .members
        .iter()
        .filter_map(|m| alerts.get(m.index))
        .map(|a| format!("- {}", render_alert_detail(a)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Lowercase snake_case slug from the first `max_words` words of a title.
pub fn slugify_title(title: &str, max_words: usize) -> String {
    let cleaned: String = title
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect();
    let slug = cleaned
        .split_whitespace()
        .take(max_words)
        .collect::<Vec<_>>()
        .join("_");
    if slug.is_empty() {
        "alert".to_string()
    } else {
        slug
    }
}

/// Picks the first of `base`, `base_2`, `base_3`, ... that is valid and
/// unused.
pub(crate) fn unique_cluster_id(base: &str, taken: &[String]) -> String {
    let base = if is_valid_cluster_id(base) {
        base.to_string()
    } else {
        format!("{base}_theme")
    };
    if !taken.iter().any(|t| t == &base) && is_valid_cluster_id(&base) {
        return base;
    }
    for n in 2u32.. {
        let candidate = format!("{base}_{n}");
        if !taken.iter().any(|t| t == &candidate) && is_valid_cluster_id(&candidate) {
            return candidate;
        }
    }
    unreachable!("suffix search always terminates")
}

/// Direction heuristic for alerts the model never labeled: a bet on "yes"
/// reads as the event occurring (intensifying), "no" as easing.
fn fallback_direction(alert: &Alert) -> MemberDirection {
    match alert.outcome_side {
        OutcomeSide::Yes => MemberDirection::Intensifying,
        OutcomeSide::No => MemberDirection::Easing,
    }
}

/// Clusters an alert batch. Empty input returns an empty set without any
/// model call; otherwise the result always satisfies the partition
/// property over `0..alerts.len()`.
pub fn cluster_alerts(
    alerts: &[Alert],
    window: TimeWindow,
    gateway: &Gateway,
) -> Result<ClusterOutcome, ClusterError> {
    let mut diagnostics = ClusterDiagnostics::default();
    if alerts.is_empty() {
        return Ok(ClusterOutcome {
            set: ClusterSet {
                clusters: Vec::new(),
                source_window: window,
            },
            diagnostics,
        });
    }
    let bindings = [("ALERT_LIST", render_numbered_alerts(alerts))];
    let first = gateway.complete_typed::<Vec<RawCluster>>(
        TemplateId::ClusteringSystem,
        &bindings,
        None,
        ExpectedShape::Array,
        CLUSTER_SCHEMA_HINT,
    )?;
    let mut normalized = normalize_response(first.value, alerts.len(), &mut diagnostics);

    let banned: Vec<String> = normalized
        .iter()
        .filter(|c| BANNED_CLUSTER_IDS.contains(&c.cluster_id.as_str()))
        .map(|c| c.cluster_id.clone())
        .collect();
    if !banned.is_empty() {
        let note = format!(
            "Your previous response used banned catch-all cluster ids: {}. \
             Re-cluster ALL alerts with specific, meaningful snake_case themes; \
             do not use any banned id.",
            banned.join(", ")
        );
        match gateway.complete_typed::<Vec<RawCluster>>(
            TemplateId::ClusteringSystem,
            &bindings,
            Some(&note),
            ExpectedShape::Array,
            CLUSTER_SCHEMA_HINT,
        ) {
            Ok(retry) => {
                diagnostics = ClusterDiagnostics::default();
                normalized = normalize_response(retry.value, alerts.len(), &mut diagnostics);
            }
            Err(e) => {
                log::warn!("banned-id re-request failed ({e}); repairing the first response");
            }
        }
        diagnostics.banned_retry = true;
    }

    // Disband any still-banned cluster; its members join the singleton pool.
    let mut kept: Vec<Cluster> = Vec::new();
    for cluster in normalized {
        if BANNED_CLUSTER_IDS.contains(&cluster.cluster_id.as_str()) {
            diagnostics
                .disbanded_banned
                .push(cluster.cluster_id.clone());
        } else {
            kept.push(cluster);
        }
    }

    // Singleton fallback for everything unassigned.
    let mut assigned = vec![false; alerts.len()];
    for cluster in &kept {
        for member in &cluster.members {
            assigned[member.index] = true;
        }
    }
    let unassigned: Vec<usize> = (0..alerts.len()).filter(|i| !assigned[*i]).collect();
    if !unassigned.is_empty() {
        log::warn!("incomplete assignment; singleton fallback for indices {unassigned:?}");
    }
    for index in unassigned {
        let alert = &alerts[index];
        let taken: Vec<String> = kept.iter().map(|c| c.cluster_id.clone()).collect();
        let cluster_id = unique_cluster_id(&slugify_title(&alert.market_title, 5), &taken);
        diagnostics.singleton_fallbacks.push(index);
        kept.push(Cluster {
            cluster_id,
            theme: alert.market_title.clone(),
            members: vec![ClusterMember {
                index,
                direction: fallback_direction(alert),
            }],
            summary: None,
            keywords: None,
        });
    }

    let set = ClusterSet {
        clusters: kept,
        source_window: window,
    };
    debug_assert!(
        set.validate(alerts.len()).is_ok(),
        "normalization must yield a partition"
    );
    Ok(ClusterOutcome { set, diagnostics })
}

/// Converts the raw response into well-formed clusters: valid ids, parsed
/// directions, in-range indices, first-wins duplicates. Banned ids survive
/// this step (the caller decides on the re-request).
fn normalize_response(
    raw: Vec<RawCluster>,
    alert_count: usize,
    diagnostics: &mut ClusterDiagnostics,
) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut seen = vec![false; alert_count];
    for raw_cluster in raw {
        let mut cluster_id = raw_cluster.cluster_id.trim().to_string();
        if !is_valid_cluster_id(&cluster_id) && !BANNED_CLUSTER_IDS.contains(&cluster_id.as_str()) {
            let slug = slugify_title(&cluster_id, 8);
            log::warn!("slugifying malformed cluster id {cluster_id:?} -> {slug:?}");
            diagnostics.slugified_ids += 1;
            cluster_id = slug;
        }
        let taken: Vec<String> = clusters.iter().map(|c| c.cluster_id.clone()).collect();
        if taken.contains(&cluster_id) {
            cluster_id = unique_cluster_id(&cluster_id, &taken);
        }
        let theme = raw_cluster
            .theme
            .filter(|t| !t.trim().is_empty())
            .unwrap_or_else(|| cluster_id.replace('_', " "));
        let mut members = Vec::new();
        for raw_member in raw_cluster.alerts {
            let Some(index) = raw_member.index.as_u64().map(|i| i as usize) else {
                diagnostics.out_of_range_drops += 1;
                continue;
            };
            if index >= alert_count {
                diagnostics.out_of_range_drops += 1;
                continue;
            }
            if seen[index] {
                diagnostics.duplicate_drops += 1;
                continue;
            }
            let direction = match raw_member.direction.as_deref().map(MemberDirection::parse) {
                Some(Ok(direction)) => direction,
                _ => {
                    // unlabeled/unparseable direction: leave for singleton fallback
                    diagnostics.invalid_direction_drops += 1;
                    continue;
                }
            };
            seen[index] = true;
            members.push(ClusterMember { index, direction });
        }
        if !members.is_empty() {
            clusters.push(Cluster {
                cluster_id,
                theme,
                members,
                summary: None,
                keywords: None,
            });
        }
    }
    clusters
}

/// One-sentence professional summary for a cluster. Model failure is
/// non-fatal: the deterministic fallback `"<theme>: signal <direction>"`
/// takes over.
pub fn summarize_cluster(cluster: &Cluster, alerts: &[Alert], gateway: &Gateway) -> String {
    let bindings = [
        ("THEME", cluster.theme.clone()),
        ("SCORE", cluster.direction_score().to_string()),
        ("ALERT_LIST", render_member_details(cluster, alerts)),
    ];
    match gateway.complete_text(TemplateId::SummarySystem, &bindings, None) {
        Ok(done) => {
            let sentence = normalize_sentence(&done.value);
            if sentence.is_empty() {
                fallback_summary(cluster)
            } else {
                sentence
            }
        }
        Err(e) => {
            log::warn!(
                "summary call failed for {} ({e}); using fallback",
                cluster.cluster_id
            );
            fallback_summary(cluster)
        }
    }
}

fn fallback_summary(cluster: &Cluster) -> String {
    let direction = match cluster.direction_score() {
        s if s > 0 => "intensifying",
        s if s < 0 => "easing",
        _ => "stable",
    };
    format!("{}: signal {direction}", cluster.theme)
}

/// Trims, removes fence lines, strips one surrounding quote pair, and
/// collapses whitespace — the prompt demands bare plain text.
fn normalize_sentence(raw: &str) -> String {
    let mut text = raw
        .lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join(" ")
        .trim()
        .to_string();
    for quote in ['"', '\''] {
        if text.len() >= 2 && text.starts_with(quote) && text.ends_with(quote) {
            text = text[1..text.len() - 1].trim().to_string();
        }
    }
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// GDELT keyword extraction for one cluster. Extraction failures propagate
/// (the pipeline cannot query GDELT without a bundle).
pub fn extract_keywords(
    cluster: &Cluster,
    alerts: &[Alert],
    gateway: &Gateway,
) -> Result<KeywordBundle, ClusterError> {
    #[derive(Deserialize)]
    struct RawKeywords {
        #[serde(default)]
        actor_pairs: Vec<Vec<String>>,
        #[serde(default)]
        gkg_keywords: Vec<String>,
    }
    let bindings = [
        ("THEME", cluster.theme.clone()),
        ("ALERT_LIST", render_member_details(cluster, alerts)),
    ];
    let done = gateway.complete_typed::<RawKeywords>(
        TemplateId::KeywordSystem,
        &bindings,
        None,
        ExpectedShape::Object,
        KEYWORD_SCHEMA_HINT,
    )?;
    let bundle = KeywordBundle::normalized(done.value.actor_pairs, done.value.gkg_keywords);
    if bundle.is_empty() {
        log::warn!(
            "keyword bundle for {} is empty after normalization",
            cluster.cluster_id
        );
    }
    Ok(bundle)
}
