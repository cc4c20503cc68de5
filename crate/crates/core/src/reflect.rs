//! Reflection harness for the clustering stage: an auditor model reviews
//! the cluster set and proposes merge/split/rename actions, the harness
//! applies them, bounded at a fixed number of cycles (three in every
//! supported configuration).
//!
//! Tool-calling mode feeds the auditor date-bounded search results; when
//! the search handle fails, the iteration degrades to internal mode rather
//! than stalling the loop.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cluster::{self, unique_cluster_id};
use crate::gateway::{ExpectedShape, Gateway, GatewayError, TemplateId};
use crate::model::{is_valid_cluster_id, Alert, Cluster, ClusterSet};
use crate::time::{TimeWindow, UtcTimestamp};

pub const REFLECTION_MAX_ITERATIONS: u32 = 3;
const SEARCH_HITS_PER_QUERY: usize = 5;
const VERDICT_SCHEMA_HINT: &str = r#"{"satisfied": true, "actions": [{"type": "merge | split | rename", "clusters": ["a", "b"], "cluster": "c", "new_id": "...", "new_theme": "...", "reason": "..."}], "comments": "..."}"#;

#[derive(Debug, Error)]
pub enum ReflectError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApplyError {
    #[error("unknown cluster id {0:?}")]
    UnknownClusterId(String),
    #[error("merge requires at least two existing clusters")]
    MergeTooSmall,
    #[error("invalid new_id {0:?}")]
    InvalidNewId(String),
    #[error("rename changes nothing")]
    EmptyRename,
    #[error("scoped re-cluster failed: {0}")]
    SplitFailed(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("search unavailable: {0}")]
pub struct SearchUnavailable(pub String);

/// Date-bounded news search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    pub published_at: UtcTimestamp,
    pub url: String,
}

/// Provider-agnostic search handle. The `not_after` bound is mandatory —
/// implementations must never return hits published after it.
pub trait SearchProvider: Send + Sync {
    fn search(
        &self,
        query: &str,
        not_after: UtcTimestamp,
    ) -> Result<Vec<SearchHit>, SearchUnavailable>;
}

/// Auditor-proposed structural fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReflectionAction {
    Merge {
        clusters: Vec<String>,
        #[serde(default)]
        new_theme: Option<String>,
        #[serde(default)]
        reason: String,
    },
    Split {
        cluster: String,
        #[serde(default)]
        reason: String,
    },
    Rename {
        cluster: String,
        #[serde(default)]
        new_id: Option<String>,
        #[serde(default)]
        new_theme: Option<String>,
        #[serde(default)]
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionMode {
    Internal,
    ToolCalling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionDisposition {
    Applied,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLogEntry {
    pub iteration: u32,
    pub action: Value,
    pub disposition: ActionDisposition,
    pub note: String,
}

/// What the loop did: how many audit cycles ran, whether the auditor ended
/// satisfied, and the per-action dispositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    pub iterations_used: u32,
    pub satisfied: bool,
    pub action_log: Vec<ActionLogEntry>,
    /// Searches issued per iteration (zeros in internal mode).
    pub searches_per_iteration: Vec<u32>,
}

/// Inputs the loop needs besides the cluster set.
pub struct ReflectContext<'a> {
    pub alerts: &'a [Alert],
    pub window: TimeWindow,
    pub as_of: UtcTimestamp,
    pub max_iterations: u32,
}

#[derive(Debug, Deserialize)]
struct RawVerdict {
    #[serde(default)]
    satisfied: bool,
    #[serde(default)]
    actions: Vec<Value>,
    #[serde(default)]
    #[allow(dead_code)]
    comments: String,
}

fn render_cluster_report(set: &ClusterSet, alerts: &[Alert]) -> String {
    let mut out = String::new();
    for cluster in &set.clusters {
        out.push_str(&format!(
            "cluster_id: {} | theme: {} | members: {}\n",
            cluster.cluster_id,
            cluster.theme,
            cluster.members.len()
        ));
        for member in &cluster.members {
            if let Some(alert) = alerts.get(member.index) {
                out.push_str(&format!(
                    "  {}. [{}] {}\n",
                    member.index, member.direction, alert.market_title
                ));
            }
        }
        match &cluster.keywords {
            Some(bundle) => {
                let pairs: Vec<String> = bundle
                    .actor_pairs
                    .iter()
                    .map(|p| format!("[{}]", p.join(", ")))
                    .collect();
                out.push_str(&format!(
                    "  keywords: actor_pairs={} gkg={}\n",
                    pairs.join(" "),
                    bundle.gkg_keywords.join(", ")
                ));
            }
            None => out.push_str("  keywords: (none)\n"),
        }
    }
    out
}

/// Ensures keyword bundles exist for the listed clusters (or all bundles
/// missing when `only` is `None`). Extraction failures leave the bundle
/// empty; the audit still runs.
fn refresh_keywords(
    set: &mut ClusterSet,
    alerts: &[Alert],
    gateway: &Gateway,
    only: Option<&[String]>,
) {
    let targets: Vec<usize> = set
        .clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| match only {
            Some(ids) => ids.contains(&c.cluster_id),
            None => c.keywords.is_none(),
        })
        .map(|(i, _)| i)
        .collect();
    for i in targets {
        let cluster = set.clusters[i].clone();
        match cluster::extract_keywords(&cluster, alerts, gateway) {
            Ok(bundle) => set.clusters[i].keywords = Some(bundle),
            Err(e) => {
                log::warn!(
                    "keyword refresh failed for {} ({e}); auditing without",
                    cluster.cluster_id
                );
                set.clusters[i].keywords = None;
            }
        }
    }
}

fn gather_search_results(
    set: &ClusterSet,
    ctx: &ReflectContext<'_>,
    search: &dyn SearchProvider,
) -> Result<(String, u32), SearchUnavailable> {
    let mut lines = Vec::new();
    let mut queries = 0u32;
    for cluster in &set.clusters {
        let hits = search.search(&cluster.theme, ctx.as_of)?;
        queries += 1;
        let bounded = hits
            .iter()
            .filter(|h| h.published_at >= ctx.window.start && h.published_at <= ctx.as_of)
            .take(SEARCH_HITS_PER_QUERY);
        for hit in bounded {
            lines.push(format!(
                "- [{}] {} — {} ({})",
                cluster.cluster_id, hit.title, hit.snippet, hit.published_at
            ));
        }
    }
    Ok((lines.join("\n"), queries))
}

/// Runs the bounded audit/apply loop and returns the refined set plus an
/// outcome log. `search` is consulted only in tool-calling mode.
pub fn reflect_loop(
    set: ClusterSet,
    ctx: &ReflectContext<'_>,
    gateway: &Gateway,
    mode: ReflectionMode,
    search: Option<&dyn SearchProvider>,
) -> Result<(ClusterSet, ReflectionOutcome), ReflectError> {
    let mut set = set;
    let mut outcome = ReflectionOutcome {
        iterations_used: 0,
        satisfied: false,
        action_log: Vec::new(),
        searches_per_iteration: Vec::new(),
    };
    let max_iterations = ctx.max_iterations.min(REFLECTION_MAX_ITERATIONS);
    // the auditor judges keyword overlap, so bundles must exist up front
    refresh_keywords(&mut set, ctx.alerts, gateway, None);

    for iteration in 1..=max_iterations {
        outcome.iterations_used = iteration;
        let mut searches = 0u32;
        let addon = match (mode, search) {
            (ReflectionMode::ToolCalling, Some(provider)) => {
                match gather_search_results(&set, ctx, provider) {
                    Ok((results, queries)) => {
                        searches = queries;
                        Some(format!(
                            "{}\nRecent news search results (filtered to the evaluation window):\n{}",
                            TemplateId::ReflectionSearchAddon.body(),
                            if results.is_empty() { "(no results)" } else { &results }
                        ))
                    }
                    Err(e) => {
                        log::warn!("iteration {iteration}: {e}; degrading to internal reflection");
                        None
                    }
                }
            }
            (ReflectionMode::ToolCalling, None) => {
                log::warn!("tool-calling mode without a search handle; running internal");
                None
            }
            (ReflectionMode::Internal, _) => None,
        };
        outcome.searches_per_iteration.push(searches);

        let bindings = [
            ("WINDOW", format!("{}", ctx.window)),
            ("CLUSTER_REPORT", render_cluster_report(&set, ctx.alerts)),
        ];
        let verdict = match gateway.complete_typed::<RawVerdict>(
            TemplateId::ReflectionBase,
            &bindings,
            addon.as_deref(),
            ExpectedShape::Object,
            VERDICT_SCHEMA_HINT,
        ) {
            Ok(done) => done.value,
            Err(e) if e.is_extraction() => {
                // malformed verdict: the iteration is spent, the set stands
                log::warn!("iteration {iteration}: malformed auditor verdict ({e}); skipping");
                continue;
            }
            Err(e) => {
                log::warn!("iteration {iteration}: auditor call failed ({e}); stopping loop");
                break;
            }
        };

        if verdict.satisfied {
            if !verdict.actions.is_empty() {
                log::warn!("auditor satisfied but returned actions; ignoring them");
            }
            outcome.satisfied = true;
            break;
        }

        let mut changed_ids: Vec<String> = Vec::new();
        for raw_action in verdict.actions {
            let action: ReflectionAction = match serde_json::from_value(raw_action.clone()) {
                Ok(action) => action,
                Err(e) => {
                    outcome.action_log.push(ActionLogEntry {
                        iteration,
                        action: raw_action,
                        disposition: ActionDisposition::Rejected,
                        note: format!("malformed action: {e}"),
                    });
                    continue;
                }
            };
            match apply_action(&set, &action, ctx.alerts, gateway) {
                Ok(applied) => {
                    changed_ids.extend(applied.changed_ids);
                    set = applied.set;
                    outcome.action_log.push(ActionLogEntry {
                        iteration,
                        action: raw_action,
                        disposition: ActionDisposition::Applied,
                        note: String::new(),
                    });
                }
                Err(e) => {
                    outcome.action_log.push(ActionLogEntry {
                        iteration,
                        action: raw_action,
                        disposition: ActionDisposition::Rejected,
                        note: e.to_string(),
                    });
                }
            }
        }
        if !changed_ids.is_empty() {
            refresh_keywords(&mut set, ctx.alerts, gateway, Some(&changed_ids));
        }
    }

    assert!(
        outcome.iterations_used <= REFLECTION_MAX_ITERATIONS,
        "reflection exceeded its hard bound"
    );
    debug_assert!(set.validate(ctx.alerts.len()).is_ok());
    Ok((set, outcome))
}

/// Result of applying one action: the new set plus the ids whose keyword
/// bundles must be recomputed before the next audit.
#[derive(Debug)]
pub struct AppliedAction {
    pub set: ClusterSet,
    pub changed_ids: Vec<String>,
}

/// Applies one auditor action against `set`, leaving it untouched on error.
pub fn apply_action(
    set: &ClusterSet,
    action: &ReflectionAction,
    alerts: &[Alert],
    gateway: &Gateway,
) -> Result<AppliedAction, ApplyError> {
    match action {
        ReflectionAction::Merge {
            clusters,
            new_theme,
            ..
        } => {
            if clusters.len() < 2 {
                return Err(ApplyError::MergeTooSmall);
            }
            for id in clusters {
                if set.cluster(id).is_none() {
                    return Err(ApplyError::UnknownClusterId(id.clone()));
                }
            }
            let anchor = clusters[0].clone();
            let anchor_theme = set.cluster(&anchor).expect("checked").theme.clone();
            let position = set
                .clusters
                .iter()
                .position(|c| c.cluster_id == anchor)
                .expect("checked");
            let mut merged_members = Vec::new();
            let mut rest = Vec::new();
            for cluster in &set.clusters {
                if clusters.contains(&cluster.cluster_id) {
                    merged_members.extend(cluster.members.iter().copied());
                } else {
                    rest.push(cluster.clone());
                }
            }
            let merged = Cluster {
                cluster_id: anchor.clone(),
                theme: new_theme.clone().unwrap_or(anchor_theme),
                members: merged_members,
                summary: None,
                keywords: None,
            };
            let insert_at = position.min(rest.len());
            rest.insert(insert_at, merged);
            Ok(AppliedAction {
                set: ClusterSet {
                    clusters: rest,
                    source_window: set.source_window,
                },
                changed_ids: vec![anchor],
            })
        }
        ReflectionAction::Rename {
            cluster,
            new_id,
            new_theme,
            ..
        } => {
            if set.cluster(cluster).is_none() {
                return Err(ApplyError::UnknownClusterId(cluster.clone()));
            }
            if new_id.is_none() && new_theme.is_none() {
                return Err(ApplyError::EmptyRename);
            }
            if let Some(id) = new_id {
                let taken = set
                    .clusters
                    .iter()
                    .any(|c| &c.cluster_id == id && &c.cluster_id != cluster);
                if !is_valid_cluster_id(id) || taken {
                    return Err(ApplyError::InvalidNewId(id.clone()));
                }
            }
            let mut clusters = set.clusters.clone();
            let mut changed = Vec::new();
            for c in &mut clusters {
                if &c.cluster_id != cluster {
                    continue;
                }
                if let Some(id) = new_id {
                    c.cluster_id = id.clone();
                }
                if let Some(theme) = new_theme {
                    c.theme = theme.clone();
                    c.summary = None;
                    c.keywords = None;
                    changed.push(c.cluster_id.clone());
                }
            }
            Ok(AppliedAction {
                set: ClusterSet {
                    clusters,
                    source_window: set.source_window,
                },
                changed_ids: changed,
            })
        }
        ReflectionAction::Split { cluster, .. } => {
            let Some(target) = set.cluster(cluster) else {
                return Err(ApplyError::UnknownClusterId(cluster.clone()));
            };
            // the auditor returns no member assignments for splits, so the
            // members are re-clustered by a scoped call over just them
            let original_indices: Vec<usize> = target.member_indices();
            let sub_alerts: Vec<Alert> = original_indices
                .iter()
                .filter_map(|i| alerts.get(*i).cloned())
                .collect();
            if sub_alerts.len() != original_indices.len() {
                return Err(ApplyError::SplitFailed("member index out of range".into()));
            }
            let outcome = cluster::cluster_alerts(&sub_alerts, set.source_window, gateway)
                .map_err(|e| ApplyError::SplitFailed(e.to_string()))?;
            let position = set
                .clusters
                .iter()
                .position(|c| &c.cluster_id == cluster)
                .expect("checked");
            let mut clusters: Vec<Cluster> = set
                .clusters
                .iter()
                .filter(|c| &c.cluster_id != cluster)
                .cloned()
                .collect();
            let mut taken: Vec<String> = clusters.iter().map(|c| c.cluster_id.clone()).collect();
            let mut changed = Vec::new();
            let start_at = position.min(clusters.len());
            for (offset, mut piece) in outcome.set.clusters.into_iter().enumerate() {
                for member in &mut piece.members {
                    member.index = original_indices[member.index];
                }
                piece.cluster_id = unique_cluster_id(&piece.cluster_id, &taken);
                taken.push(piece.cluster_id.clone());
                changed.push(piece.cluster_id.clone());
                clusters.insert((start_at + offset).min(clusters.len()), piece);
            }
            Ok(AppliedAction {
                set: ClusterSet {
                    clusters,
                    source_window: set.source_window,
                },
                changed_ids: changed,
            })
        }
    }
}

/// Fixture-backed search provider: hits optionally keyed by a substring of
/// the query, always clipped to the `not_after` bound.
pub struct FixtureSearch {
    items: Vec<FixtureSearchItem>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureSearchItem {
    #[serde(default)]
    pub query_contains: Option<String>,
    #[serde(flatten)]
    pub hit: SearchHit,
}

impl FixtureSearch {
    pub fn load(path: &std::path::Path) -> Result<Self, SearchUnavailable> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SearchUnavailable(format!("{}: {e}", path.display())))?;
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: FixtureSearchItem = serde_json::from_str(line).map_err(|e| {
                SearchUnavailable(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            items.push(item);
        }
        Ok(FixtureSearch { items })
    }

    pub fn from_items(items: Vec<FixtureSearchItem>) -> Self {
        FixtureSearch { items }
    }
}

impl SearchProvider for FixtureSearch {
    fn search(
        &self,
        query: &str,
        not_after: UtcTimestamp,
    ) -> Result<Vec<SearchHit>, SearchUnavailable> {
        let query_lower = query.to_lowercase();
        Ok(self
            .items
            .iter()
            .filter(|item| match &item.query_contains {
                Some(needle) => query_lower.contains(&needle.to_lowercase()),
                None => true,
            })
            .map(|item| item.hit.clone())
            .filter(|hit| hit.published_at <= not_after)
            .collect())
    }
}

/// Thin adapter for a live search endpoint returning
/// `{"results": [{title, snippet, published_at, url}]}`.
pub struct HttpSearch {
    pub base_url: String,
    http: reqwest::blocking::Client,
}

impl HttpSearch {
    pub fn new(base_url: String) -> Self {
        HttpSearch {
            base_url,
            http: reqwest::blocking::Client::new(),
        }
    }
}

impl SearchProvider for HttpSearch {
    fn search(
        &self,
        query: &str,
        not_after: UtcTimestamp,
    ) -> Result<Vec<SearchHit>, SearchUnavailable> {
        #[derive(Deserialize)]
        struct Results {
            #[serde(default)]
            results: Vec<SearchHit>,
        }
        let response = self
            .http
            .get(&self.base_url)
            .query(&[("q", query), ("not_after", &not_after.to_string())])
            .send()
            .map_err(|e| SearchUnavailable(e.to_string()))?;
        let parsed: Results = response
            .json()
            .map_err(|e| SearchUnavailable(e.to_string()))?;
        Ok(parsed
            .results
            .into_iter()
            .filter(|h| h.published_at <= not_after)
            .collect())
    }
}
