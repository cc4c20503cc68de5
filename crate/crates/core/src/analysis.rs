//! Analysis agent: produces one [`InsightRecord`] per cluster under four
//! harness tracks — one global batched call, per-cluster isolation (D&C),
//! D&C with an explicit chain-of-thought plus an extraction pass, and D&C +
//! CoT with a single batched risk-manager audit whose suggested label
//! corrections are applied at most once per record.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cluster::render_alert_detail;
use crate::gateway::{extract_trailing_object, ExpectedShape, Gateway, GatewayError, TemplateId};
use crate::gdelt::GdeltSignals;
use crate::model::{
    parse_field_label, Alert, Alignment, Cluster, InsightRecord, LabelField, MediaDirection,
    PolyDirection, WhaleQuality,
};

/// One audit application per record, enforced with a counter assertion.
pub const ANALYSIS_REFLECTION_MAX: u32 = 1;
/// The risk-manager audit reviews five analyses per call.
pub const REFLECTION_BATCH_SIZE: usize = 5;

const INSIGHT_SCHEMA_HINT: &str = r#"{"poly_direction": "intensifying | easing | mixed", "poly_comment": "...", "whale_quality": "top_trader | high_winrate | large_capital | mixed_quality | no_whale_data", "media_direction": "intensifying | easing | mixed | no_coverage", "media_comment": "...", "poly_media_alignment": "consensus | divergence | market_leads_media | media_leads_market", "alignment_comment": "...", "importance_score": 5, "importance_reason": "..."}"#;
const GLOBAL_SCHEMA_HINT: &str = r#"{"clusters": [{"cluster_id": "...", "poly_direction": "...", "poly_comment": "...", "whale_quality": "...", "media_direction": "...", "media_comment": "...", "poly_media_alignment": "...", "alignment_comment": "...", "importance_score": 5, "importance_reason": "..."}]}"#;
const VERDICT_SCHEMA_HINT: &str = r#"{"flagged_clusters": [{"cluster_id": "...", "feedback": "...", "suggested_changes": {"poly_direction": null, "whale_quality": null, "media_direction": null, "poly_media_alignment": null}}], "overall_comment": "..."}"#;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no bundles to analyze")]
    Empty,
}

/// Reasoning harness configuration for the analysis stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisTrack {
    Global,
    Dnc,
    DncCot,
    DncCotReflect,
}

impl AnalysisTrack {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnalysisTrack::Global => "global",
            AnalysisTrack::Dnc => "dnc",
            AnalysisTrack::DncCot => "dnc_cot",
            AnalysisTrack::DncCotReflect => "dnc_cot_reflect",
        }
    }

    pub fn uses_cot(&self) -> bool {
        matches!(self, AnalysisTrack::DncCot | AnalysisTrack::DncCotReflect)
    }
}

/// Everything the agent sees for one cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisInputBundle {
    pub cluster: Cluster,
    /// Member alerts (with whale profiles when present).
    pub alerts: Vec<Alert>,
    pub signals: GdeltSignals,
}

/// One flagged cluster in the audit verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCluster {
    pub cluster_id: String,
    #[serde(default)]
    pub feedback: String,
    /// Field name → corrected value (`None` = field is fine).
    #[serde(default)]
    pub suggested_changes: BTreeMap<String, Option<String>>,
}

/// Risk-manager audit result over a batch (batches merged when several
/// audit calls ran).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub flagged: Vec<FlaggedCluster>,
    pub overall_comment: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CotTranscript {
    pub cluster_id: String,
    pub text: String,
}

/// Full output of the analysis stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub records: Vec<InsightRecord>,
    pub cot_transcripts: Vec<CotTranscript>,
    pub verdict: Option<ReflectionVerdict>,
    /// Cluster ids whose record is an incomplete sentinel.
    pub incomplete: Vec<String>,
    /// Audit corrections actually written into records.
    pub corrections_applied: u32,
}

#[derive(Debug, Deserialize)]
struct RawInsight {
    poly_direction: PolyDirection,
    #[serde(default)]
    poly_comment: String,
    whale_quality: WhaleQuality,
    media_direction: MediaDirection,
    #[serde(default)]
    media_comment: String,
    poly_media_alignment: Alignment,
    #[serde(default)]
    alignment_comment: String,
    #[serde(default)]
    importance_score: Option<i64>,
    #[serde(default)]
    importance_reason: Option<String>,
}

impl RawInsight {
    fn into_record(self, cluster_id: &str) -> InsightRecord {
        let score = match self.importance_score {
            Some(s) if (1..=10).contains(&s) => s,
            Some(s) => {
                log::warn!("clamping importance_score {s} for {cluster_id}");
                s.clamp(1, 10)
            }
            None => {
                log::warn!("importance_score missing for {cluster_id}; defaulting to 5");
                5
            }
        };
        InsightRecord {
            cluster_id: cluster_id.to_string(),
            poly_direction: self.poly_direction,
            poly_comment: self.poly_comment,
            whale_quality: self.whale_quality,
            media_direction: self.media_direction,
            media_comment: self.media_comment,
            poly_media_alignment: self.poly_media_alignment,
            alignment_comment: self.alignment_comment,
            importance_score: score,
            importance_reason: self.importance_reason.unwrap_or_default(),
            incomplete: false,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "n/a".to_string(),
    }
}

/// Deterministic per-cluster data block for the isolated-analysis prompt.
pub fn render_cluster_data(bundle: &AnalysisInputBundle) -> String {
    let mut out = String::new();
    out.push_str(&format!("cluster_id: {}\n", bundle.cluster.cluster_id));
    out.push_str(&format!("theme: {}\n", bundle.cluster.theme));
    if let Some(summary) = &bundle.cluster.summary {
        out.push_str(&format!("summary: {summary}\n"));
    }
    out.push_str("alerts:\n");
    for alert in &bundle.alerts {
        out.push_str(&format!("- {}\n", render_alert_detail(alert)));
    }
    let s = &bundle.signals;
    out.push_str("GDELT Events (matched):\n");
    out.push_str(&format!("  mentions_24h: {}\n", s.mentions_24h));
    out.push_str(&format!("  total_mentions_30d: {}\n", s.total_mentions_30d));
    out.push_str(&format!(
        "  trend_24h_vs_3d: {}\n",
        fmt_opt(s.trend_24h_vs_3d)
    ));
    out.push_str(&format!(
        "  tone_24h_vs_3d: {}\n",
        fmt_opt(s.tone_24h_vs_3d)
    ));
    out.push_str("GDELT GKG (matched):\n");
    out.push_str(&format!("  gkg_articles_24h: {}\n", s.gkg_articles_24h));
    out.push_str(&format!(
        "  gkg_volume_trend: {}\n",
        fmt_opt(s.gkg_volume_trend)
    ));
    out.push_str(&format!("  gkg_avg_tone: {}\n", fmt_opt(s.gkg_avg_tone)));
    out.push_str(&format!("as_of: {}\n", s.as_of));
    out
}

/// Compressed brief for the global track: top five alerts by |delta| (ties
/// by whale size, then index) plus a one-line signal summary.
pub fn render_global_brief(bundle: &AnalysisInputBundle) -> String {
    let mut ranked: Vec<(usize, &Alert)> = bundle.alerts.iter().enumerate().collect();
    ranked.sort_by(|(ia, a), (ib, b)| {
        b.delta
            .abs()
            .partial_cmp(&a.delta.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                b.whale_usd
                    .unwrap_or(0.0)
                    .partial_cmp(&a.whale_usd.unwrap_or(0.0))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| ia.cmp(ib))
    });
    let mut out = String::new();
    out.push_str(&format!(
        "cluster_id: {} | theme: {}\n",
        bundle.cluster.cluster_id, bundle.cluster.theme
    ));
    if let Some(summary) = &bundle.cluster.summary {
        out.push_str(&format!("summary: {summary}\n"));
    }
    out.push_str("top alerts:\n");
    for (_, alert) in ranked.into_iter().take(5) {
        out.push_str(&format!("- {}\n", render_alert_detail(alert)));
    }
    let s = &bundle.signals;
    out.push_str(&format!(
        "signals: mentions_24h={} total_30d={} trend={} tone_delta={} gkg_24h={} gkg_trend={} gkg_tone={}\n",
        s.mentions_24h,
        s.total_mentions_30d,
        fmt_opt(s.trend_24h_vs_3d),
        fmt_opt(s.tone_24h_vs_3d),
        s.gkg_articles_24h,
        fmt_opt(s.gkg_volume_trend),
        fmt_opt(s.gkg_avg_tone),
    ));
    out
}

/// Isolated analysis of one cluster. With `with_cot` the two-call protocol
/// runs: a free-form reasoning pass, then an extraction call; if extraction
/// fails the trailing JSON object of the reasoning text is the last resort.
pub fn analyze_cluster(
    bundle: &AnalysisInputBundle,
    gateway: &Gateway,
    with_cot: bool,
) -> Result<(InsightRecord, Option<String>), AnalysisError> {
    let id = bundle.cluster.cluster_id.clone();
    let data = [("CLUSTER_DATA", render_cluster_data(bundle))];
    if !with_cot {
        let done = gateway.complete_typed::<RawInsight>(
            TemplateId::AnalysisSystem,
            &data,
            None,
            ExpectedShape::Object,
            INSIGHT_SCHEMA_HINT,
        )?;
        return Ok((done.value.into_record(&id), None));
    }

    let cot = gateway.complete_text(
        TemplateId::AnalysisSystem,
        &data,
        Some(TemplateId::CotWrapper.body()),
    )?;
    let cot_text = cot.value;
    let extract = gateway.complete_typed::<RawInsight>(
        TemplateId::CotExtract,
        &[("COT_TEXT", cot_text.clone())],
        None,
        ExpectedShape::Object,
        INSIGHT_SCHEMA_HINT,
    );
    let record = match extract {
        // the dedicated extraction pass outranks whatever the transcript ends with
        Ok(done) => done.value.into_record(&id),
        Err(e) if e.is_extraction() => {
            log::warn!("extract call failed for {id} ({e}); scanning transcript for trailing JSON");
            match extract_trailing_object(&cot_text)
                .and_then(|v| serde_json::from_value::<RawInsight>(v).ok())
            {
                Some(raw) => raw.into_record(&id),
                None => {
                    log::warn!("no salvageable JSON in transcript for {id}; recording incomplete");
                    InsightRecord::incomplete_sentinel(&id, "cot extraction failed")
                }
            }
        }
        Err(e) => return Err(e.into()),
    };
    Ok((record, Some(cot_text)))
}

#[derive(Debug, Deserialize)]
struct RawGlobalResponse {
    #[serde(default)]
    clusters: Vec<Value>,
}

fn parse_global_items(items: Vec<Value>, known_ids: &[String]) -> BTreeMap<String, InsightRecord> {
    let mut records = BTreeMap::new();
    for item in items {
        let Some(id) = item
            .get("cluster_id")
            .and_then(Value::as_str)
            .map(str::to_string)
        else {
            log::warn!("global response item without cluster_id; skipping");
            continue;
        };
        if !known_ids.contains(&id) {
            log::warn!("global response invented cluster_id {id:?}; ignoring");
            continue;
        }
        match serde_json::from_value::<RawInsight>(item) {
            Ok(raw) => {
                records.insert(id.clone(), raw.into_record(&id));
            }
            Err(e) => log::warn!("global item for {id} failed to parse ({e}); treated as missing"),
        }
    }
    records
}

/// Global-context track: one call carrying compressed briefs for every
/// cluster; clusters the response omits are re-requested once as a subset,
/// then filled with incomplete sentinels.
pub fn analyze_global(
    bundles: &[AnalysisInputBundle],
    gateway: &Gateway,
) -> Result<AnalysisOutcome, AnalysisError> {
    if bundles.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let ids: Vec<String> = bundles
        .iter()
        .map(|b| b.cluster.cluster_id.clone())
        .collect();
    let as_of = bundles[0].signals.as_of;
    let briefs: Vec<String> = bundles.iter().map(render_global_brief).collect();
    let done = gateway.complete_typed::<RawGlobalResponse>(
        TemplateId::GlobalSystem,
        &[
            ("AS_OF", as_of.to_string()),
            ("CLUSTER_BRIEFS", briefs.join("\n")),
        ],
        None,
        ExpectedShape::Object,
        GLOBAL_SCHEMA_HINT,
    )?;
    let mut records = parse_global_items(done.value.clusters, &ids);

    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !records.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        log::warn!("global response missed {missing:?}; re-requesting the subset once");
        let subset: Vec<String> = bundles
            .iter()
            .filter(|b| missing.contains(&b.cluster.cluster_id))
            .map(render_global_brief)
            .collect();
        let note = format!(
            "Your previous response omitted these cluster_ids: {}. \
             Return the JSON object again for ONLY these clusters.",
            missing.join(", ")
        );
        match gateway.complete_typed::<RawGlobalResponse>(
            TemplateId::GlobalSystem,
            &[
                ("AS_OF", as_of.to_string()),
                ("CLUSTER_BRIEFS", subset.join("\n")),
            ],
            Some(&note),
            ExpectedShape::Object,
            GLOBAL_SCHEMA_HINT,
        ) {
            Ok(retry) => records.extend(parse_global_items(retry.value.clusters, &missing)),
            Err(e) => log::warn!("subset re-request failed ({e}); sentinels will fill the gap"),
        }
    }

    let mut incomplete = Vec::new();
    let ordered: Vec<InsightRecord> = ids
        .iter()
        .map(|id| {
            records.remove(id).unwrap_or_else(|| {
                incomplete.push(id.clone());
                InsightRecord::incomplete_sentinel(id, "missing from global response")
            })
        })
        .collect();
    Ok(AnalysisOutcome {
        records: ordered,
        cot_transcripts: Vec::new(),
        verdict: None,
        incomplete,
        corrections_applied: 0,
    })
}

#[derive(Debug, Deserialize)]
struct RawFlag {
    cluster_id: String,
    #[serde(default)]
    feedback: String,
    #[serde(default)]
    suggested_changes: BTreeMap<String, Option<String>>,
}

fn render_batch(batch: &[(InsightRecord, String)]) -> String {
    let mut out = String::new();
    for (record, cot) in batch {
        out.push_str(&format!("=== cluster {} ===\n", record.cluster_id));
        out.push_str("chain of thought:\n");
        out.push_str(cot);
        out.push_str("\nstructured classification:\n");
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Single risk-manager audit over CoT records, batched five per call.
/// Out-of-vocabulary suggestions are dropped field-wise; a malformed
/// verdict leaves its whole batch unchanged (fail-safe toward the
/// unreflected output). Every record passes through exactly one audit.
pub fn reflect_batch(
    records_with_cot: &[(InsightRecord, String)],
    gateway: &Gateway,
) -> Result<(Vec<InsightRecord>, ReflectionVerdict, u32), AnalysisError> {
    let mut corrected: Vec<InsightRecord> = Vec::with_capacity(records_with_cot.len());
    let mut merged = ReflectionVerdict::default();
    let mut corrections = 0u32;
    let mut applications_per_record: BTreeMap<String, u32> = BTreeMap::new();
    let mut comments: Vec<String> = Vec::new();

    for batch in records_with_cot.chunks(REFLECTION_BATCH_SIZE) {
        let bindings = [("BATCH", render_batch(batch))];
        let mut batch_records: Vec<InsightRecord> = batch.iter().map(|(r, _)| r.clone()).collect();
        let verdict_value = match gateway.complete_json(
            TemplateId::AnalysisReflection,
            &bindings,
            None,
            ExpectedShape::Object,
            VERDICT_SCHEMA_HINT,
        ) {
            Ok(done) => Some(done.value),
            Err(e) if e.is_extraction() => {
                log::warn!("malformed audit verdict ({e}); batch passes through unreflected");
                None
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(value) = verdict_value {
            let flags: Vec<RawFlag> = value
                .get("flagged_clusters")
                .and_then(Value::as_array)
                .map(|items| {
                    items
                        .iter()
                        .filter_map(|item| serde_json::from_value::<RawFlag>(item.clone()).ok())
                        .collect()
                })
                .unwrap_or_default();
            // some responses key the comment per batch ("overall_comment_batch_1")
            if let Some(comment) = value.as_object().and_then(|map| {
                map.iter()
                    .find(|(k, _)| k.starts_with("overall_comment"))
                    .and_then(|(_, v)| v.as_str())
            }) {
                comments.push(comment.to_string());
            }
            for flag in flags {
                let Some(record) = batch_records
                    .iter_mut()
                    .find(|r| r.cluster_id == flag.cluster_id)
                else {
                    log::warn!(
                        "audit flagged unknown cluster {:?}; skipping",
                        flag.cluster_id
                    );
                    continue;
                };
                let counter = applications_per_record
                    .entry(flag.cluster_id.clone())
                    .or_insert(0);
                *counter += 1;
                assert!(
                    *counter <= ANALYSIS_REFLECTION_MAX,
                    "analysis reflection applied more than once to {}",
                    flag.cluster_id
                );
                for (field_name, suggestion) in &flag.suggested_changes {
                    let Some(value) = suggestion else { continue };
                    let Ok(field) = LabelField::parse_name(field_name) else {
                        log::warn!("audit suggested unknown field {field_name:?}; dropped");
                        continue;
                    };
                    match parse_field_label(field, value) {
                        Ok(canonical) => {
                            apply_field(record, field, canonical);
                            corrections += 1;
                        }
                        Err(e) => log::warn!("audit suggestion dropped ({e})"),
                    }
                }
                merged.flagged.push(FlaggedCluster {
                    cluster_id: flag.cluster_id,
                    feedback: flag.feedback,
                    suggested_changes: flag.suggested_changes,
                });
            }
        }
        corrected.extend(batch_records);
    }
    merged.overall_comment = comments.join(" | ");
    Ok((corrected, merged, corrections))
}

fn apply_field(record: &mut InsightRecord, field: LabelField, canonical: &str) {
    match field {
        LabelField::PolyDirection => {
            record.poly_direction = PolyDirection::parse(canonical).expect("canonical")
        }
        LabelField::WhaleQuality => {
            record.whale_quality = WhaleQuality::parse(canonical).expect("canonical")
        }
        LabelField::MediaDirection => {
            record.media_direction = MediaDirection::parse(canonical).expect("canonical")
        }
        LabelField::PolyMediaAlignment => {
            record.poly_media_alignment = Alignment::parse(canonical).expect("canonical")
        }
    }
}

/// Runs the configured track over all bundles. D&C cluster calls may run
/// with bounded parallelism; record order always matches bundle order, and
/// scripted (deterministic) backends force sequential execution so trace
/// ordinals stay aligned.
pub fn analyze(
    bundles: &[AnalysisInputBundle],
    track: AnalysisTrack,
    gateway: &Gateway,
    max_in_flight: usize,
) -> Result<AnalysisOutcome, AnalysisError> {
    if bundles.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if track == AnalysisTrack::Global {
        return analyze_global(bundles, gateway);
    }
    let with_cot = track.uses_cot();
    let effective_in_flight = if gateway.is_deterministic() {
        1
    } else {
        max_in_flight.max(1)
    };

    type Slot = Option<(InsightRecord, Option<String>)>;
    let mut slots: Vec<Slot> = Vec::new();
    if effective_in_flight <= 1 {
        for bundle in bundles {
            slots.push(Some(analyze_one(bundle, gateway, with_cot)));
        }
    } else {
        let results: Mutex<Vec<Slot>> = Mutex::new((0..bundles.len()).map(|_| None).collect());
        let next = Mutex::new(0usize);
        std::thread::scope(|scope| {
            for _ in 0..effective_in_flight.min(bundles.len()) {
                scope.spawn(|| loop {
                    let index = {
                        let mut guard = next.lock().expect("index lock");
                        if *guard >= bundles.len() {
                            break;
                        }
                        let i = *guard;
                        *guard += 1;
                        i
                    };
                    let outcome = analyze_one(&bundles[index], gateway, with_cot);
                    results.lock().expect("results lock")[index] = Some(outcome);
                });
            }
        });
        slots = results.into_inner().expect("results lock");
    }

    let mut records = Vec::with_capacity(bundles.len());
    let mut cot_transcripts = Vec::new();
    let mut incomplete = Vec::new();
    for slot in slots {
        let (record, cot) = slot.expect("every bundle analyzed");
        if record.incomplete {
            incomplete.push(record.cluster_id.clone());
        }
        if let Some(text) = cot {
            cot_transcripts.push(CotTranscript {
                cluster_id: record.cluster_id.clone(),
                text,
            });
        }
        records.push(record);
    }

    let (records, verdict, corrections_applied) = if track == AnalysisTrack::DncCotReflect {
        let paired: Vec<(InsightRecord, String)> = records
            .iter()
            .cloned()
            .map(|record| {
                let cot = cot_transcripts
                    .iter()
                    .find(|t| t.cluster_id == record.cluster_id)
                    .map(|t| t.text.clone())
                    .unwrap_or_default();
                (record, cot)
            })
            .collect();
        let (corrected, verdict, corrections) = reflect_batch(&paired, gateway)?;
        (corrected, Some(verdict), corrections)
    } else {
        (records, None, 0)
    };

    debug_assert_eq!(
        records
            .iter()
            .map(|r| r.cluster_id.as_str())
            .collect::<Vec<_>>(),
        bundles
            .iter()
            .map(|b| b.cluster.cluster_id.as_str())
            .collect::<Vec<_>>(),
        "output records must cover exactly the input cluster ids, in order"
    );
    Ok(AnalysisOutcome {
        records,
        cot_transcripts,
        verdict,
        incomplete,
        corrections_applied,
    })
}

/// One isolated analysis; extraction-level failures degrade to a sentinel
/// so a single bad cluster cannot sink the run.
fn analyze_one(
    bundle: &AnalysisInputBundle,
    gateway: &Gateway,
    with_cot: bool,
) -> (InsightRecord, Option<String>) {
    match analyze_cluster(bundle, gateway, with_cot) {
        Ok(done) => done,
        Err(e) => {
            log::warn!(
                "analysis failed for {} ({e}); recording incomplete",
                bundle.cluster.cluster_id
            );
            (
                InsightRecord::incomplete_sentinel(&bundle.cluster.cluster_id, &e.to_string()),
                None,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{AgentModels, RateCard, ScriptedBackend, TraceEntry};
    use crate::model::{AlertKind, ClusterMember, MemberDirection, OutcomeSide, WhaleProfile};
    use crate::time::UtcTimestamp;
    use std::sync::Arc;

    fn gw(entries: Vec<TraceEntry>) -> Gateway {
        Gateway::new(
            Arc::new(ScriptedBackend::from_entries(entries).unwrap()),
            RateCard::default(),
            AgentModels::default(),
        )
    }

    fn entry(template: TemplateId, ordinal: u32, text: &str) -> TraceEntry {
        TraceEntry {
            template_id: template,
            ordinal,
            response_text: text.into(),
            input_tokens: 200,
            output_tokens: 80,
            wall_ms: 0,
        }
    }

    fn eth_bundle() -> AnalysisInputBundle {
        let as_of = UtcTimestamp::parse("2026-03-26T02:00:00Z").unwrap();
        AnalysisInputBundle {
            cluster: Cluster {
                cluster_id: "eth_price".into(),
                theme: "ETH price levels".into(),
                members: vec![ClusterMember {
                    index: 0,
                    direction: MemberDirection::Intensifying,
                }],
                summary: Some("A single large trader is defending ETH downside levels.".into()),
                keywords: None,
            },
            alerts: vec![Alert {
                alert_id: "wb-000001".into(),
                market_title: "Will ETH dip to $1800 by April?".into(),
                outcome_side: OutcomeSide::No,
                alert_kind: AlertKind::WhaleBuy,
                price: 0.18,
                delta: -0.02,
                whale_usd: Some(124_000.0),
                whale_profile: Some(WhaleProfile {
                    name: "0xc0ffee".into(),
                    win_rate: 0.13,
                    pnl: -89_000.0,
                    trades: 77,
                    position_usd: 124_000.0,
                }),
                observed_at: UtcTimestamp::parse("2026-03-25T09:00:00Z").unwrap(),
            }],
            signals: GdeltSignals {
                mentions_24h: 0,
                total_mentions_30d: 0,
                trend_24h_vs_3d: None,
                tone_24h_vs_3d: None,
                gkg_articles_24h: 44,
                gkg_volume_trend: Some(1.76),
                gkg_avg_tone: Some(-0.1486),
                as_of,
            },
        }
    }

    fn bundle_named(id: &str) -> AnalysisInputBundle {
        let mut bundle = eth_bundle();
        bundle.cluster.cluster_id = id.to_string();
        bundle
    }

    const ETH_DIVERGENCE: &str = r#"{
        "poly_direction": "intensifying",
        "poly_comment": "A single whale deployed over $124k betting that ETH will not dip, but their 13% win rate marks this as low-quality capital.",
        "whale_quality": "large_capital",
        "media_direction": "intensifying",
        "media_comment": "News volume accelerated (1.76x) with a negative tone shift.",
        "poly_media_alignment": "divergence",
        "alignment_comment": "Large low-quality trader leaning against an intensifying bearish narrative.",
        "importance_score": 9,
        "importance_reason": "High-impact topic with a clear divergence."
    }"#;

    #[test]
    fn dnc_direct_record() {
        let gateway = gw(vec![entry(TemplateId::AnalysisSystem, 0, ETH_DIVERGENCE)]);
        let (record, cot) = analyze_cluster(&eth_bundle(), &gateway, false).unwrap();
        assert!(cot.is_none());
        assert_eq!(record.cluster_id, "eth_price");
        assert_eq!(record.whale_quality, WhaleQuality::LargeCapital);
        assert_eq!(record.poly_media_alignment, Alignment::Divergence);
        assert_eq!(record.importance_score, 9);
    }

    #[test]
    fn no_whale_data_is_a_valid_label() {
        let response = ETH_DIVERGENCE.replace("large_capital", "no_whale_data");
        let gateway = gw(vec![entry(TemplateId::AnalysisSystem, 0, &response)]);
        let (record, _) = analyze_cluster(&eth_bundle(), &gateway, false).unwrap();
        assert_eq!(record.whale_quality, WhaleQuality::NoWhaleData);
    }

    #[test]
    fn cot_extraction_outranks_trailing_json() {
        let cot_text = format!(
            "STEP 1: capital is large but weak.\nSTEP 4: final answer\n{}",
            ETH_DIVERGENCE.replace("divergence", "consensus")
        );
        let extract_response = ETH_DIVERGENCE; // extraction pass disagrees with transcript
        let gateway = gw(vec![
            entry(TemplateId::AnalysisSystem, 0, &cot_text),
            entry(TemplateId::CotExtract, 0, extract_response),
        ]);
        let (record, cot) = analyze_cluster(&eth_bundle(), &gateway, true).unwrap();
        assert_eq!(record.poly_media_alignment, Alignment::Divergence);
        assert!(cot.unwrap().contains("STEP 1"));
    }

    #[test]
    fn cot_extract_failure_scans_transcript() {
        let cot_text = format!("reasoning...\n{ETH_DIVERGENCE}");
        let gateway = gw(vec![
            entry(TemplateId::AnalysisSystem, 0, &cot_text),
            entry(TemplateId::CotExtract, 0, "cannot extract"),
            entry(TemplateId::CotExtract, 1, "repair also fails"),
        ]);
        let (record, _) = analyze_cluster(&eth_bundle(), &gateway, true).unwrap();
        assert!(!record.incomplete);
        assert_eq!(record.poly_media_alignment, Alignment::Divergence);
    }

    #[test]
    fn cot_total_failure_is_incomplete_sentinel() {
        let gateway = gw(vec![
            entry(
                TemplateId::AnalysisSystem,
                0,
                "no json anywhere in this reasoning",
            ),
            entry(TemplateId::CotExtract, 0, "nope"),
            entry(TemplateId::CotExtract, 1, "still nope"),
        ]);
        let (record, _) = analyze_cluster(&eth_bundle(), &gateway, true).unwrap();
        assert!(record.incomplete);
        assert_eq!(record.cluster_id, "eth_price");
    }

    fn global_item(id: &str) -> String {
        format!(
            r#"{{"cluster_id": "{id}", "poly_direction": "intensifying", "poly_comment": "c",
                "whale_quality": "mixed_quality", "media_direction": "mixed", "media_comment": "c",
                "poly_media_alignment": "market_leads_media", "alignment_comment": "c",
                "importance_score": 5, "importance_reason": "r"}}"#
        )
    }

    #[test]
    fn global_covers_every_cluster_id() {
        let ids: Vec<String> = (0..17).map(|i| format!("cluster_{i:02}")).collect();
        let bundles: Vec<AnalysisInputBundle> = ids.iter().map(|id| bundle_named(id)).collect();
        let items: Vec<String> = ids.iter().map(|id| global_item(id)).collect();
        let response = format!("{{\"clusters\": [{}]}}", items.join(","));
        let gateway = gw(vec![entry(TemplateId::GlobalSystem, 0, &response)]);
        let outcome = analyze_global(&bundles, &gateway).unwrap();
        assert_eq!(outcome.records.len(), 17);
        let got: Vec<&str> = outcome
            .records
            .iter()
            .map(|r| r.cluster_id.as_str())
            .collect();
        let want: Vec<&str> = ids.iter().map(String::as_str).collect();
        assert_eq!(got, want);
        assert!(outcome.incomplete.is_empty());
    }

    #[test]
    fn global_missing_ids_re_requested_once() {
        let ids = ["iran_us_conflict", "btc_price", "crude_oil"];
        let bundles: Vec<AnalysisInputBundle> = ids.iter().map(|id| bundle_named(id)).collect();
        let first = format!("{{\"clusters\": [{}]}}", global_item("iran_us_conflict"));
        let second = format!(
            "{{\"clusters\": [{}, {}]}}",
            global_item("btc_price"),
            global_item("crude_oil")
        );
        let gateway = gw(vec![
            entry(TemplateId::GlobalSystem, 0, &first),
            entry(TemplateId::GlobalSystem, 1, &second),
        ]);
        let outcome = analyze_global(&bundles, &gateway).unwrap();
        assert!(outcome.incomplete.is_empty());
        assert_eq!(outcome.records.len(), 3);
        assert_eq!(gateway.ledger().len(), 2);
    }

    #[test]
    fn global_still_missing_becomes_sentinel() {
        let ids = ["iran_us_conflict", "btc_price"];
        let bundles: Vec<AnalysisInputBundle> = ids.iter().map(|id| bundle_named(id)).collect();
        let first = format!("{{\"clusters\": [{}]}}", global_item("iran_us_conflict"));
        let gateway = gw(vec![
            entry(TemplateId::GlobalSystem, 0, &first),
            entry(TemplateId::GlobalSystem, 1, &first), // retry repeats itself
        ]);
        let outcome = analyze_global(&bundles, &gateway).unwrap();
        assert_eq!(outcome.incomplete, vec!["btc_price".to_string()]);
        assert!(outcome.records[1].incomplete);
    }

    #[test]
    fn single_bundle_single_record() {
        let gateway = gw(vec![entry(
            TemplateId::GlobalSystem,
            0,
            &format!("{{\"clusters\": [{}]}}", global_item("eth_price")),
        )]);
        let outcome = analyze(&[eth_bundle()], AnalysisTrack::Global, &gateway, 1).unwrap();
        assert_eq!(outcome.records.len(), 1);
    }

    #[test]
    fn reflect_batch_applies_flagged_field() {
        let records: Vec<(InsightRecord, String)> = ["trump_china_visit", "btc_price"]
            .iter()
            .map(|id| {
                let gateway = gw(vec![entry(TemplateId::AnalysisSystem, 0, ETH_DIVERGENCE)]);
                let (mut r, _) = analyze_cluster(&bundle_named(id), &gateway, false).unwrap();
                r.media_direction = MediaDirection::Intensifying;
                (r, format!("cot for {id}"))
            })
            .collect();
        let verdict = r#"{
            "flagged_clusters": [{
                "cluster_id": "trump_china_visit",
                "feedback": "volume up but tone improving constitutes a mixed signal",
                "suggested_changes": {
                    "poly_direction": null,
                    "whale_quality": null,
                    "media_direction": "mixed",
                    "poly_media_alignment": null
                }
            }],
            "overall_comment_batch_1": "Out of 2 analyses reviewed, 1 is sound."
        }"#;
        let gateway = gw(vec![entry(TemplateId::AnalysisReflection, 0, verdict)]);
        let (corrected, merged, corrections) = reflect_batch(&records, &gateway).unwrap();
        assert_eq!(corrections, 1);
        assert_eq!(corrected[0].media_direction, MediaDirection::Mixed);
        // everything else untouched
        assert_eq!(corrected[0].poly_direction, records[0].0.poly_direction);
        assert_eq!(corrected[0].media_comment, records[0].0.media_comment);
        assert_eq!(corrected[1], records[1].0);
        assert!(merged.overall_comment.contains("1 is sound"));
    }

    #[test]
    fn reflect_batch_empty_flags_passthrough() {
        let gateway0 = gw(vec![entry(TemplateId::AnalysisSystem, 0, ETH_DIVERGENCE)]);
        let (record, _) = analyze_cluster(&eth_bundle(), &gateway0, false).unwrap();
        let records = vec![(record.clone(), "cot".to_string())];
        let verdict = r#"{"flagged_clusters": [], "overall_comment": "All analyses are sound."}"#;
        let gateway = gw(vec![entry(TemplateId::AnalysisReflection, 0, verdict)]);
        let (corrected, merged, corrections) = reflect_batch(&records, &gateway).unwrap();
        assert_eq!(corrected[0], record);
        assert_eq!(corrections, 0);
        assert_eq!(merged.overall_comment, "All analyses are sound.");
    }

    #[test]
    fn out_of_vocabulary_suggestion_dropped_others_applied() {
        let gateway0 = gw(vec![entry(TemplateId::AnalysisSystem, 0, ETH_DIVERGENCE)]);
        let (record, _) = analyze_cluster(&eth_bundle(), &gateway0, false).unwrap();
        let records = vec![(record.clone(), "cot".to_string())];
        let verdict = r#"{
            "flagged_clusters": [{
                "cluster_id": "eth_price",
                "feedback": "mixed read",
                "suggested_changes": {
                    "media_direction": "bullish",
                    "poly_direction": "easing"
                }
            }],
            "overall_comment": "one flag"
        }"#;
        let gateway = gw(vec![entry(TemplateId::AnalysisReflection, 0, verdict)]);
        let (corrected, _, corrections) = reflect_batch(&records, &gateway).unwrap();
        assert_eq!(corrections, 1);
        assert_eq!(corrected[0].media_direction, record.media_direction); // "bullish" dropped
        assert_eq!(corrected[0].poly_direction, PolyDirection::Easing);
    }

    #[test]
    fn malformed_verdict_leaves_batch_unchanged() {
        let gateway0 = gw(vec![entry(TemplateId::AnalysisSystem, 0, ETH_DIVERGENCE)]);
        let (record, _) = analyze_cluster(&eth_bundle(), &gateway0, false).unwrap();
        let records = vec![(record.clone(), "cot".to_string())];
        let gateway = gw(vec![
            entry(TemplateId::AnalysisReflection, 0, "I refuse"),
            entry(TemplateId::AnalysisReflection, 1, "still refusing"),
        ]);
        let (corrected, merged, corrections) = reflect_batch(&records, &gateway).unwrap();
        assert_eq!(corrected[0], record);
        assert_eq!(corrections, 0);
        assert!(merged.flagged.is_empty());
    }

    #[test]
    fn batches_of_five_make_two_calls_for_six() {
        let records: Vec<(InsightRecord, String)> = (0..6)
            .map(|i| {
                let gateway = gw(vec![entry(TemplateId::AnalysisSystem, 0, ETH_DIVERGENCE)]);
                let (r, _) =
                    analyze_cluster(&bundle_named(&format!("cluster_{i}")), &gateway, false)
                        .unwrap();
                (r, String::new())
            })
            .collect();
        let empty = r#"{"flagged_clusters": [], "overall_comment": "sound"}"#;
        let gateway = gw(vec![
            entry(TemplateId::AnalysisReflection, 0, empty),
            entry(TemplateId::AnalysisReflection, 1, empty),
        ]);
        let (corrected, _, _) = reflect_batch(&records, &gateway).unwrap();
        assert_eq!(corrected.len(), 6);
        assert_eq!(gateway.ledger().len(), 2);
    }

    #[test]
    fn dnc_isolation_under_permutation() {
        let a = bundle_named("alpha_theme");
        let b = bundle_named("beta_theme");
        let response_a = ETH_DIVERGENCE;
        let response_b = ETH_DIVERGENCE.replace("intensifying", "easing");

        let run = |bundles: &[AnalysisInputBundle], responses: &[&str]| {
            let entries: Vec<TraceEntry> = responses
                .iter()
                .enumerate()
                .map(|(i, r)| entry(TemplateId::AnalysisSystem, i as u32, r))
                .collect();
            let gateway = gw(entries);
            analyze(bundles, AnalysisTrack::Dnc, &gateway, 1)
                .unwrap()
                .records
        };

        let forward = run(&[a.clone(), b.clone()], &[response_a, &response_b]);
        let reversed = run(&[b, a], &[&response_b, response_a]);
        let alpha_forward = forward
            .iter()
            .find(|r| r.cluster_id == "alpha_theme")
            .unwrap();
        let alpha_reversed = reversed
            .iter()
            .find(|r| r.cluster_id == "alpha_theme")
            .unwrap();
        assert_eq!(alpha_forward, alpha_reversed);
        let beta_forward = forward
            .iter()
            .find(|r| r.cluster_id == "beta_theme")
            .unwrap();
        let beta_reversed = reversed
            .iter()
            .find(|r| r.cluster_id == "beta_theme")
            .unwrap();
        assert_eq!(beta_forward, beta_reversed);
    }

    #[test]
    fn output_ids_cover_input_ids_all_tracks() {
        let bundles = vec![bundle_named("one_theme"), bundle_named("two_theme")];
        let gateway = gw(vec![
            entry(TemplateId::AnalysisSystem, 0, ETH_DIVERGENCE),
            entry(TemplateId::AnalysisSystem, 1, ETH_DIVERGENCE),
        ]);
        let outcome = analyze(&bundles, AnalysisTrack::Dnc, &gateway, 1).unwrap();
        let ids: Vec<&str> = outcome
            .records
            .iter()
            .map(|r| r.cluster_id.as_str())
            .collect();
        assert_eq!(ids, vec!["one_theme", "two_theme"]);
    }
}
