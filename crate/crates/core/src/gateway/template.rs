//! Prompt templates for every agent call.
//!
//! Each template is a fixed body with named `<PLACEHOLDER>` slots; rendering
//! binds every slot or fails. Template ids double as the keys of scripted
//! trace files, so their serialized names are part of the wire format.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("placeholder <{0}> not bound for template {1}")]
    Unbound(String, String),
    #[error("unknown binding {0:?} for template {1}")]
    UnknownBinding(String, String),
}

/// Identifies one prompt template (and one stream in a scripted trace).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ClusteringSystem,
    SummarySystem,
    KeywordSystem,
    ReflectionBase,
    ReflectionSearchAddon,
    GlobalSystem,
    AnalysisSystem,
    CotWrapper,
    CotExtract,
    AnalysisReflection,
}

impl TemplateId {
    pub const ALL: &'static [TemplateId] = &[
        TemplateId::ClusteringSystem,
        TemplateId::SummarySystem,
        TemplateId::KeywordSystem,
        TemplateId::ReflectionBase,
        TemplateId::ReflectionSearchAddon,
        TemplateId::GlobalSystem,
        TemplateId::AnalysisSystem,
        TemplateId::CotWrapper,
        TemplateId::CotExtract,
        TemplateId::AnalysisReflection,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::ClusteringSystem => "clustering_system",
            TemplateId::SummarySystem => "summary_system",
            TemplateId::KeywordSystem => "keyword_system",
            TemplateId::ReflectionBase => "reflection_base",
            TemplateId::ReflectionSearchAddon => "reflection_search_addon",
            TemplateId::GlobalSystem => "global_system",
            TemplateId::AnalysisSystem => "analysis_system",
            TemplateId::CotWrapper => "cot_wrapper",
            TemplateId::CotExtract => "cot_extract",
            TemplateId::AnalysisReflection => "analysis_reflection",
        }
    }

    /// Agent role charged for calls made with this template.
    pub fn agent_id(&self) -> &'static str {
        match self {
            TemplateId::ClusteringSystem => "clustering",
            TemplateId::SummarySystem => "summary",
            TemplateId::KeywordSystem => "keywords",
            TemplateId::ReflectionBase | TemplateId::ReflectionSearchAddon => {
                "clustering_reflection"
            }
            TemplateId::GlobalSystem
            | TemplateId::AnalysisSystem
            | TemplateId::CotWrapper
            | TemplateId::CotExtract => "analysis",
            TemplateId::AnalysisReflection => "analysis_reflection",
        }
    }

    /// Placeholder names that must be bound when rendering.
    pub fn placeholders(&self) -> &'static [&'static str] {
        match self {
            TemplateId::ClusteringSystem => &["ALERT_LIST"],
            TemplateId::SummarySystem => &["THEME", "SCORE", "ALERT_LIST"],
            TemplateId::KeywordSystem => &["THEME", "ALERT_LIST"],
            TemplateId::ReflectionBase => &["WINDOW", "CLUSTER_REPORT"],
            TemplateId::ReflectionSearchAddon => &[],
            TemplateId::GlobalSystem => &["AS_OF", "CLUSTER_BRIEFS"],
            TemplateId::AnalysisSystem => &["CLUSTER_DATA"],
            TemplateId::CotWrapper => &[],
            TemplateId::CotExtract => &["COT_TEXT"],
            TemplateId::AnalysisReflection => &["BATCH"],
        }
    }

    pub fn body(&self) -> &'static str {
        match self {
            TemplateId::ClusteringSystem => CLUSTERING_SYSTEM,
            TemplateId::SummarySystem => SUMMARY_SYSTEM,
            TemplateId::KeywordSystem => KEYWORD_SYSTEM,
            TemplateId::ReflectionBase => REFLECTION_SYSTEM_BASE,
            TemplateId::ReflectionSearchAddon => REFLECTION_SEARCH_ADDON,
            TemplateId::GlobalSystem => GLOBAL_SYSTEM,
            TemplateId::AnalysisSystem => ANALYSIS_SYSTEM,
            TemplateId::CotWrapper => COT_WRAPPER,
            TemplateId::CotExtract => COT_EXTRACT,
            TemplateId::AnalysisReflection => ANALYSIS_REFLECTION,
        }
    }

    /// Binds every placeholder and returns the full prompt text.
    pub fn render(&self, bindings: &[(&str, String)]) -> Result<String, TemplateError> {
        let registered = self.placeholders();
        let mut out = self.body().to_string();
        for (key, value) in bindings {
            if !registered.contains(key) {
                return Err(TemplateError::UnknownBinding(
                    key.to_string(),
                    self.as_str().into(),
                ));
            }
            out = out.replace(&format!("<{key}>"), value);
        }
        for key in registered {
            if out.contains(&format!("<{key}>")) {
                return Err(TemplateError::Unbound(
                    key.to_string(),
                    self.as_str().into(),
                ));
            }
        }
        Ok(out)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const CLUSTERING_SYSTEM: &str = r#"You are a senior financial analyst specializing in prediction markets.
Given a numbered list of Polymarket alerts (market title +
outcome side), cluster them by underlying real-world event or theme.

Rules:
- Each cluster = ONE coherent real-world theme
- Alerts about the same event but with opposite outcomes (Yes/No) belong in
the SAME cluster
- A cluster may contain only 1 alert
- Do NOT create catch-all clusters like "other", "misc", "mixed", or
"general". Every cluster must have a specific, meaningful theme.
- If an alert does not clearly relate to any other alert, it MUST form its
own singleton cluster with a descriptive theme derived from its market
title.
- Group alerts that share the same underlying real-world event or crisis
into ONE cluster, even if they touch different aspects (e.g. military
action, negotiations, and economic consequences of the same
conflict all belong together).
- Each cluster_id must be a short descriptive snake_case label that captures
the specific topic.
- For each alert decide whether the whale's bet signals the theme
**intensifying** or **easing**:
  • Read the market title carefully to understand what outcome the whale is
betting on.
  • Determine what a "Yes" resolution of that market means in the real world
(escalation, occurrence,
    price rise, etc.) and what a "No" resolution means (de-escalation,
absence, price fall, etc.).
  • Combine the outcome side the whale bought with the real-world meaning to
decide direction.

Every alert index MUST appear in exactly one cluster.
Return ONLY a JSON array (no markdown fences, no explanation), one object
per cluster, shaped exactly like:
[
  {
    "cluster_id": "short_snake_case_id",
    "theme": "Human-readable theme label",
    "alerts": [
      {"index": 0, "direction": "intensifying"},
      {"index": 1, "direction": "easing"}
    ]
  }
]

Alerts:
<ALERT_LIST>
"#;

const SUMMARY_SYSTEM: &str = r#"You are a professional financial analyst writing for institutional
investors.
Given Polymarket prediction-market data for one theme, write
exactly ONE professional sentence in English summarizing the signal.

Requirements:
- Tone: institutional-grade, concise financial analyst voice
- State whether the theme is intensifying, easing, or roughly stable,
consistent with the provided score
- Name the key markets/contracts explicitly
- If some alerts point the other way, briefly note them as counter-signals
- One sentence only; aim for at most ~220 characters
- Return ONLY that sentence as plain text, no JSON, no markdown, no
surrounding quotes

Theme: <THEME>
Net direction score: <SCORE>
Alerts:
<ALERT_LIST>
"#;

const KEYWORD_SYSTEM: &str = r#"You are a news research analyst specializing in GDELT (Global Database of
Events, Language and Tone).

Given a cluster of Polymarket prediction-market alerts, produce TWO
structured outputs for GDELT queries.

-----------------------------
1. actor_pairs  — for the GDELT **events** table (Actor1Name / Actor2Name
columns).
-----------------------------
Each entry is a LIST OF UPPERCASE tokens: [actor_A, actor_B].
A matching event row must contain actor_A in one actor field AND actor_B in
the other.
This AND-logic makes matches precise — it excludes unrelated events that
only mention one side.

Rules for each token:
  • Single UPPERCASE word, or a standard 2-word country/entity name (e.g.
"UNITED STATES", "SAUDI ARABIA").
  • Use: country names, leader surnames, organization names, institutional
roles (MILITARY, GOVERNMENT).
  • Do NOT write phrases, descriptions, or topic summaries.
  • Each pair captures a specific bilateral relationship relevant to the
cluster theme.

Produce 2-5 pairs. If the topic has no clear bilateral actors (e.g. pure
financial instrument or
sports competition with no geopolitical actors), use a single-token list:
e.g. ["ASSET_NAME"] or ["LEAGUE_NAME"].

-----------------------------
2. gkg_keywords — for the GDELT **GKG** table (V2Persons, V2Organizations,
V2Themes).
-----------------------------
GKG stores entity names exactly as they appear in news articles.
V2Persons field format: "Full Name,offset;Other Name,offset" — match on the
NAME portion only.

Rules:
  • Short proper names only: person full names or surnames, organization
names, location names.
  • Do NOT write descriptive phrases, topic summaries, or event
descriptions.
  • Each entry should be a noun or proper noun that would appear verbatim in
a news article about this topic.
  • 3-6 entries.

Return ONLY a JSON object (no markdown, no explanation):
{
  "actor_pairs": [["ACTOR_A", "ACTOR_B"], ["ACTOR_C", "ACTOR_D"], ...],
  "gkg_keywords": ["Name1", "Name2", ...]
}

Cluster theme: <THEME>
Alerts:
<ALERT_LIST>
"#;

const REFLECTION_SYSTEM_BASE: &str = r#"You are a senior quality-assurance analyst reviewing prediction-market alert
clusters.
Your job is to find structural problems in the clustering and suggest
concrete fixes.

Perform these checks:

1. MERGE candidates
   - Clusters whose keywords or themes overlap heavily (same actors, same
event).
   - If you believe two cluster themes may be part of the same real-world
story, recommend merging.

2. SPLIT candidates
   - A cluster that mixes genuinely unrelated alerts (different events,
different regions,
     different asset classes) into one bucket.
   - Especially flag any cluster with a vague theme like "other", "misc",
"mixed", "general",
     "politics", or "market" — these are red flags.

3. RENAME candidates
   - cluster_id or theme that is too generic or misleading.
   - Suggest a more specific, descriptive label.

Return ONLY a JSON object (no markdown fences, no explanation outside the
JSON):
{
  "satisfied": true or false,
  "actions": [
    {"type": "merge", "clusters": ["cluster_a", "cluster_b"], "reason":
"..."},
    {"type": "split", "cluster": "cluster_c", "reason": "..."},
    {"type": "rename", "cluster": "cluster_d", "new_id": "...", "new_theme":
"...", "reason": "..."}
  ],
  "comments": "Brief overall assessment of clustering quality."
}

If the clustering looks good and no changes are needed, set "satisfied":
true and "actions": [].

Evaluation window: <WINDOW>

Current clustering:
<CLUSTER_REPORT>
"#;

const REFLECTION_SEARCH_ADDON: &str = r#"You have access to Google Search — use it to check whether seemingly
unrelated cluster themes
are actually part of the same real-world news story or event.
When searching, focus on news from the relevant time period specified in the
prompt.
"#;

const GLOBAL_SYSTEM: &str = r#"You are a senior quantitative trader reviewing a full daily Polymarket
intelligence brief.

You will receive compressed data for ALL active clusters simultaneously.
Your job is to analyse every cluster and produce a structured classification
for each one.

For each cluster, classify:
- poly_direction: intensifying | easing | mixed
- whale_quality: top_trader | high_winrate | large_capital | mixed_quality |
no_whale_data | speculative
- media_direction: intensifying | easing | mixed | no_coverage
- poly_media_alignment: consensus | divergence | market_leads_media |
media_leads_market

Also write 1-2 sentence comments for poly, media, and alignment, plus an
importance_score (1-10) and one-sentence reason.

Return a JSON object with a single key "clusters" containing an array.
Each array element must be shaped exactly like:
{
  "cluster_id": "...",
  "poly_direction": "...",
  "poly_comment": "...",
  "whale_quality": "...",
  "media_direction": "...",
  "media_comment": "...",
  "poly_media_alignment": "...",
  "alignment_comment": "...",
  "importance_score": 5,
  "importance_reason": "..."
}

You MUST include every cluster_id you receive. Do not skip any.

As-of: <AS_OF>

Cluster briefs:
<CLUSTER_BRIEFS>
"#;

const ANALYSIS_SYSTEM: &str = r#"You are a senior quantitative trader reviewing a Polymarket intelligence
brief.

You will receive data for one cluster of related prediction markets:
  A) Polymarket alert data: market titles, outcome sides, price levels,
price changes (Delta).
     For whale_buy clusters: trader profiles — name, win_rate, lifetime PnL,
trade count, USD position size.
  B) A one-sentence prior-stage summary of the cluster.
  C) GDELT media metrics from two sources:
       - Events table: geopolitical actor-pair events. Strong for
conflicts/diplomacy. Typically ZERO for crypto/finance — this is normal.
       - GKG (Global Knowledge Graph): news article volume and sentiment.
Works for ALL topics.

Your goal: classify three dimensions (Polymarket direction, Media direction,
alignment between them),
write a 1–2 sentence comment on each explaining the informational dynamics,
then rank importance from a senior trader's perspective.

===============================================
INPUT DATA REFERENCE
===============================================

Polymarket:
  price      = current implied probability (0–1)
  Delta          = price change
  direction  = "intensifying" (event more likely) or "easing" (less likely)
  whale_usd  = USD size of whale trade
  win_rate   = trader's historical win rate (0–1)
  pnl        = lifetime closed P&L in USD
  trades     = total trades in history

GDELT Events (geopolitical only; zero for crypto/finance):
  mentions_24h       = event records in last 24h
  total_mentions_30d = cumulative 30-day event records
  trend_24h_vs_3d    = today vs 3-day avg. >1 = accelerating
  tone_24h_vs_3d     = today tone minus 3-day avg. Negative = more hostile

GDELT GKG (all topics):
  gkg_articles_24h = news articles in last 24h
  gkg_volume_trend = today vs 3-day avg. >1 = accelerating
  gkg_avg_tone     = average article tone. Negative = hostile/bearish

importance_score — rank this topic from a senior trader's desk.
  High scores (8+) are reserved for topics where the underlying event
actually matters to markets.

  Scale:
    9–10 = Act now. High-impact event with clear edge (divergence or early
smart money).
    7–8  = Serious attention. High-impact topic with notable signal.
    5–6  = Monitor. Medium-impact or niche topic with interesting signal.
    3–4  = Low priority. Weak signals or niche topic without conviction.
    1–2  = Noise. No meaningful signal.

importance_reason — 1 sentence: name the topic's impact level and the
specific signal driving the score.

===============================================
Return ONLY a JSON object (no markdown fences):
{
  "poly_direction": "<intensifying | easing | mixed>",
  "poly_comment": "<1-2 sentences>",
  "whale_quality": "<top_trader | high_winrate | large_capital |
mixed_quality | no_whale_data>",
  "media_direction": "<intensifying | easing | mixed | no_coverage>",
  "media_comment": "<1-2 sentences>",
  "poly_media_alignment": "<consensus | divergence | market_leads_media |
media_leads_market>",
  "alignment_comment": "<1-2 sentences>",
  "importance_score": <integer 1-10>,
  "importance_reason": "<1 sentence>"
}

===============================================
CLUSTER DATA
===============================================
<CLUSTER_DATA>
"#;

const COT_WRAPPER: &str = r#"Before giving your final structured answer, think step-by-step through the
data.

STEP 1: Read through ALL the alerts carefully. Count how many are
intensifying vs easing.
         For whale clusters: note each trader's win_rate, PnL, and trade
count.
         Summarise: who are the strongest traders? What direction is capital
flowing?

STEP 2: Read the GDELT media data. Is coverage accelerating or declining?
         Compare Events (geopolitical) vs GKG (all topics). Note any
discrepancy.

STEP 3: Compare Polymarket signals with media signals. Are they telling the
same story?
         Who might know more — market participants or the press?

STEP 4: As a senior trader, how important is this topic? Consider:
         - What is the underlying event's real-world impact?
         - How clear is the signal? Is there edge or is it consensus?

Show your reasoning for each step, then provide the final JSON answer.

===================================================
IMPORTANT: After your step-by-step analysis, you MUST end with
a JSON object (no markdown fences) with exactly these fields:
{
  "poly_direction": "<intensifying | easing | mixed>",
  "poly_comment": "<1-2 sentences>",
  "whale_quality": "<top_trader | high_winrate | large_capital |
mixed_quality | no_whale_data>",
  "media_direction": "<intensifying | easing | mixed | no_coverage>",
  "media_comment": "<1-2 sentences>",
  "poly_media_alignment": "<consensus | divergence | market_leads_media |
media_leads_market>",
  "alignment_comment": "<1-2 sentences>"
}
"#;

const COT_EXTRACT: &str = r#"The following is a senior trader's chain-of-thought analysis of a Polymarket
cluster.

Extract ONLY the final structured classification from this analysis.
Return a JSON object with exactly these fields (no markdown fences):
{
  "poly_direction": "<intensifying | easing | mixed>",
  "poly_comment": "<1-2 sentences>",
  "whale_quality": "<top_trader | high_winrate | large_capital |
mixed_quality | no_whale_data>",
  "media_direction": "<intensifying | easing | mixed | no_coverage>",
  "media_comment": "<1-2 sentences>",
  "poly_media_alignment": "<consensus | divergence | market_leads_media |
media_leads_market>",
  "alignment_comment": "<1-2 sentences>",
  "importance_score": <integer 1-10>,
  "importance_reason": "<1 sentence>"
}

=== ANALYST CHAIN OF THOUGHT ===
<COT_TEXT>
"#;

const ANALYSIS_REFLECTION: &str = r#"You are a senior risk manager reviewing a batch of cluster analyses from a
junior analyst.
Each cluster has: chain-of-thought reasoning, and a structured
classification.

Review ALL clusters and flag ONLY the ones with issues. For each flagged
cluster, provide:
1. LOGICAL CONSISTENCY: Does the reasoning support the classifications?
2. DATA ACCURACY: Did the analyst correctly read the numbers (whale sizes,
PnL, win rates, article counts)?
3. CLASSIFICATION CORRECTNESS: Are the labels justified by the evidence?

Do NOT reveal any ground truth labels. Focus only on internal consistency
and correct data interpretation.

Return a JSON object with ONLY the flagged clusters (omit clusters that look
correct):
{
  "flagged_clusters": [
    {
      "cluster_id": "<the cluster_id>",
      "feedback": "<specific issues found>",
      "suggested_changes": {
        "poly_direction": "<corrected value or null if OK>",
        "whale_quality": "<corrected value or null if OK>",
        "media_direction": "<corrected value or null if OK>",
        "poly_media_alignment": "<corrected value or null if OK>"
      }
    }
  ],
  "overall_comment": "<brief summary: how many look correct, how many
flagged, general quality>"
}

If ALL analyses look correct, return: {"flagged_clusters": [],
"overall_comment": "All analyses are sound."}

=== ANALYSES UNDER REVIEW ===
<BATCH>
"#;
