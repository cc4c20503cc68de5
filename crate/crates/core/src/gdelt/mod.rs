//! GDELT v2 client: windowed fetching behind the temporal firewall,
//! keyword filtering for Events and GKG records, and media-signal
//! derivation for the analysis stage.

pub mod parse;
pub mod source;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::KeywordBundle;
use crate::time::{days, hours, TimeWindow, UtcTimestamp};

pub use parse::{build_event_row, build_gkg_row, EventRecord, GkgRecord, ParseStats};
pub use source::{
    DirSource, FetchError, HttpGdeltSource, RecordSource, SliceFile, DEFAULT_GDELT_BASE_URL,
};

#[derive(Debug, Error)]
pub enum GdeltError {
    #[error("temporal violation: window end {end} exceeds as_of {as_of}")]
    TemporalViolation {
        end: UtcTimestamp,
        as_of: UtcTimestamp,
    },
    #[error(transparent)]
    Fetch(#[from] FetchError),
}

/// Which GDELT table a request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdeltKind {
    Events,
    Gkg,
}

impl GdeltKind {
    pub fn dir_name(&self) -> &'static str {
        match self {
            GdeltKind::Events => "events",
            GdeltKind::Gkg => "gkg",
        }
    }

    pub fn url_infix(&self) -> &'static str {
        match self {
            GdeltKind::Events => "export",
            GdeltKind::Gkg => "gkg",
        }
    }
}

/// Records fetched for one window, with parse accounting.
#[derive(Debug, Clone)]
pub struct FetchedWindow<R> {
    pub records: Vec<R>,
    pub stats: ParseStats,
}

/// Per-cluster media metrics handed to the analysis agent.
///
/// `None` trend/tone fields mean the denominator window had zero records;
/// they render as "n/a" in prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdeltSignals {
    pub mentions_24h: u64,
    pub total_mentions_30d: u64,
    pub trend_24h_vs_3d: Option<f64>,
    pub tone_24h_vs_3d: Option<f64>,
    pub gkg_articles_24h: u64,
    pub gkg_volume_trend: Option<f64>,
    pub gkg_avg_tone: Option<f64>,
    pub as_of: UtcTimestamp,
}

/// The temporal firewall: every fetch must satisfy `window.end <= as_of`.
pub fn guard_window(window: &TimeWindow, as_of: UtcTimestamp) -> Result<(), GdeltError> {
    if window.end > as_of {
        return Err(GdeltError::TemporalViolation {
            end: window.end,
            as_of,
        });
    }
    Ok(())
}

/// Fetches and parses Events records for `window`, enforcing the firewall
/// and dropping rows whose timestamp falls outside the window.
pub fn fetch_events_window(
    source: &dyn RecordSource,
    window: &TimeWindow,
    as_of: UtcTimestamp,
) -> Result<FetchedWindow<EventRecord>, GdeltError> {
    guard_window(window, as_of)?;
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    for slice in source.fetch_window_raw(GdeltKind::Events, window)? {
        let (mut parsed, slice_stats) = parse::parse_events(&slice.content);
        stats.parsed += slice_stats.parsed;
        stats.skipped += slice_stats.skipped;
        parsed.retain(|r| window.contains(r.at));
        records.append(&mut parsed);
    }
    debug_assert!(records.iter().all(|r| r.at <= as_of));
    Ok(FetchedWindow { records, stats })
}

/// GKG twin of [`fetch_events_window`].
pub fn fetch_gkg_window(
    source: &dyn RecordSource,
    window: &TimeWindow,
    as_of: UtcTimestamp,
) -> Result<FetchedWindow<GkgRecord>, GdeltError> {
    guard_window(window, as_of)?;
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    for slice in source.fetch_window_raw(GdeltKind::Gkg, window)? {
        let (mut parsed, slice_stats) = parse::parse_gkg(&slice.content);
        stats.parsed += slice_stats.parsed;
        stats.skipped += slice_stats.skipped;
        parsed.retain(|r| window.contains(r.at));
        records.append(&mut parsed);
    }
    debug_assert!(records.iter().all(|r| r.at <= as_of));
    Ok(FetchedWindow { records, stats })
}

/// Does `record` match actor pair `[a, b]`? Two-token pairs require one
/// actor in each field (order-symmetric); single-token pairs match either
/// field. Containment is substring on the uppercased fields.
fn event_matches_pair(record: &EventRecord, pair: &[String]) -> bool {
    match pair {
        [only] => contains(&record.actor1, only) || contains(&record.actor2, only),
        [a, b] => {
            (contains(&record.actor1, a) && contains(&record.actor2, b))
                || (contains(&record.actor2, a) && contains(&record.actor1, b))
        }
        _ => false,
    }
}

fn contains(field: &str, token: &str) -> bool {
    !token.is_empty() && field.contains(token)
}

/// Events records matching any actor pair of the bundle.
pub fn filter_events<'a>(
    records: &'a [EventRecord],
    actor_pairs: &[Vec<String>],
) -> Vec<&'a EventRecord> {
    records
        .iter()
        .filter(|r| actor_pairs.iter().any(|pair| event_matches_pair(r, pair)))
        .collect()
}

/// GKG records matching any keyword: exact (case-insensitive) equality on a
/// person/organization name portion, or presence as a theme token.
pub fn filter_gkg<'a>(records: &'a [GkgRecord], gkg_keywords: &[String]) -> Vec<&'a GkgRecord> {
    records
        .iter()
        .filter(|r| gkg_keywords.iter().any(|k| gkg_matches_keyword(r, k)))
        .collect()
}

fn gkg_matches_keyword(record: &GkgRecord, keyword: &str) -> bool {
    let keyword = keyword.trim();
    if keyword.is_empty() {
        return false;
    }
    let name_hit = record
        .persons
        .iter()
        .chain(record.organizations.iter())
        .any(|name| name.eq_ignore_ascii_case(keyword));
    if name_hit {
        return true;
    }
    // theme token: "Donald Trump" -> DONALD_TRUMP vs theme "TAX_FNCACT_TRUMP" tokens
    let theme_form = keyword.to_uppercase().replace(' ', "_");
    record
        .themes
        .iter()
        .any(|theme| theme == &theme_form || theme.split('_').any(|token| token == theme_form))
}

/// Derives the media metrics from already-filtered record sets.
///
/// Boundary convention: the trailing day is `(as_of-24h, as_of]` and the
/// prior three days are `(as_of-4d, as_of-24h]`; trends divide the 24h
/// count by the prior-window count over 3.
pub fn derive_signals(
    events_30d: &[&EventRecord],
    gkg_4d: &[&GkgRecord],
    as_of: UtcTimestamp,
) -> GdeltSignals {
    let day_ago = as_of - hours(24);
    let four_days_ago = as_of - days(4);

    let events_24h: Vec<&&EventRecord> = events_30d
        .iter()
        .filter(|r| r.at > day_ago && r.at <= as_of)
        .collect();
    let events_prior: Vec<&&EventRecord> = events_30d
        .iter()
        .filter(|r| r.at > four_days_ago && r.at <= day_ago)
        .collect();

    let mentions_24h = events_24h.len() as u64;
    let trend_24h_vs_3d = ratio(mentions_24h, events_prior.len() as u64);
    let tone_24h_vs_3d = match (
        mean(events_24h.iter().map(|r| r.avg_tone)),
        mean(events_prior.iter().map(|r| r.avg_tone)),
    ) {
        (Some(now), Some(prior)) => Some(now - prior),
        _ => None,
    };

    let gkg_24h: Vec<&&GkgRecord> = gkg_4d
        .iter()
        .filter(|r| r.at > day_ago && r.at <= as_of)
        .collect();
    let gkg_prior: Vec<&&GkgRecord> = gkg_4d
        .iter()
        .filter(|r| r.at > four_days_ago && r.at <= day_ago)
        .collect();

    GdeltSignals {
        mentions_24h,
        total_mentions_30d: events_30d.len() as u64,
        trend_24h_vs_3d,
        tone_24h_vs_3d,
        gkg_articles_24h: gkg_24h.len() as u64,
        gkg_volume_trend: ratio(gkg_24h.len() as u64, gkg_prior.len() as u64),
        gkg_avg_tone: mean(gkg_24h.iter().map(|r| r.tone)),
        as_of,
    }
}

fn ratio(recent: u64, prior_total: u64) -> Option<f64> {
    if prior_total == 0 {
        None
    } else {
        Some(recent as f64 / (prior_total as f64 / 3.0))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0u64;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

/// Full per-cluster retrieval: 30-day Events window and 4-day GKG window
/// ending at `as_of`, filtered by the cluster's keyword bundle.
pub fn gather_signals(
    source: &dyn RecordSource,
    bundle: &KeywordBundle,
    as_of: UtcTimestamp,
) -> Result<GdeltSignals, GdeltError> {
    let events_window = TimeWindow {
        start: as_of - days(30),
        end: as_of,
    };
    let gkg_window = TimeWindow {
        start: as_of - days(4),
        end: as_of,
    };
    let events = fetch_events_window(source, &events_window, as_of)?;
    let gkg = fetch_gkg_window(source, &gkg_window, as_of)?;
    let matched_events = filter_events(&events.records, &bundle.actor_pairs);
    let matched_gkg = filter_gkg(&gkg.records, &bundle.gkg_keywords);
    Ok(derive_signals(&matched_events, &matched_gkg, as_of))
}
