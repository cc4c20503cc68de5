//! Tab-delimited GDELT v2 record parsing.
//!
//! Events export rows carry 61 columns; we read Actor1Name (6),
//! Actor2Name (16), NumMentions (31), AvgTone (34) and DATEADDED (59).
//! GKG rows carry 27 columns; we read DATE (1), enhanced themes (8),
//! enhanced persons (12), enhanced organizations (14) and tone (15).
//! Malformed rows are skipped and counted, never fatal.

use crate::time::UtcTimestamp;

pub const EVENT_MIN_COLUMNS: usize = 61;
pub const GKG_MIN_COLUMNS: usize = 16;

const EVENT_ACTOR1: usize = 6;
const EVENT_ACTOR2: usize = 16;
const EVENT_NUM_MENTIONS: usize = 31;
const EVENT_AVG_TONE: usize = 34;
const EVENT_DATE_ADDED: usize = 59;

const GKG_DATE: usize = 1;
const GKG_THEMES: usize = 8;
const GKG_PERSONS: usize = 12;
const GKG_ORGANIZATIONS: usize = 14;
const GKG_TONE: usize = 15;

/// One GDELT Events record (the fields this pipeline consumes).
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub actor1: String,
    pub actor2: String,
    pub mentions: u32,
    pub avg_tone: f64,
    pub at: UtcTimestamp,
}

/// One GKG record, with entity names reduced to their name portions.
#[derive(Debug, Clone, PartialEq)]
pub struct GkgRecord {
    pub persons: Vec<String>,
    pub organizations: Vec<String>,
    pub themes: Vec<String>,
    pub tone: f64,
    pub at: UtcTimestamp,
}

/// Outcome of parsing one slice of rows.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ParseStats {
    pub parsed: usize,
    pub skipped: usize,
}

pub fn parse_events(content: &str) -> (Vec<EventRecord>, ParseStats) {
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    for line in content.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_event_row(line) {
            Some(record) => {
                records.push(record);
                stats.parsed += 1;
            }
            None => stats.skipped += 1,
        }
    }
    (records, stats)
}

pub fn parse_gkg(content: &str) -> (Vec<GkgRecord>, ParseStats) {
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    for line in content.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_gkg_row(line) {
            Some(record) => {
                records.push(record);
                stats.parsed += 1;
            }
            None => stats.skipped += 1,
        }
    }
    (records, stats)
}

fn parse_event_row(line: &str) -> Option<EventRecord> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < EVENT_MIN_COLUMNS {
        return None;
    }
    let mentions: u32 = cols[EVENT_NUM_MENTIONS].parse().ok()?;
    let avg_tone: f64 = cols[EVENT_AVG_TONE].parse().ok()?;
    let at = UtcTimestamp::parse_compact(cols[EVENT_DATE_ADDED]).ok()?;
    Some(EventRecord {
        actor1: cols[EVENT_ACTOR1].trim().to_uppercase(),
        actor2: cols[EVENT_ACTOR2].trim().to_uppercase(),
        mentions,
        avg_tone,
        at,
    })
}

fn parse_gkg_row(line: &str) -> Option<GkgRecord> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < GKG_MIN_COLUMNS {
        return None;
    }
    let at = UtcTimestamp::parse_compact(cols[GKG_DATE]).ok()?;
    // V2Tone: "Tone,Positive,Negative,Polarity,ARD,SGRD,WordCount" — first field.
    let tone: f64 = cols[GKG_TONE].split(',').next()?.trim().parse().ok()?;
    Some(GkgRecord {
        persons: parse_name_offsets(cols[GKG_PERSONS]),
        organizations: parse_name_offsets(cols[GKG_ORGANIZATIONS]),
        themes: parse_name_offsets(cols[GKG_THEMES]),
        tone,
        at,
    })
}

/// `"Name,offset;Other Name,offset"` → `["Name", "Other Name"]`; entries
/// without an offset still yield their name portion.
fn parse_name_offsets(field: &str) -> Vec<String> {
    field
        .split(';')
        .filter_map(|entry| {
            let name = entry.split(',').next().unwrap_or("").trim();
            if name.is_empty() {
                None
            } else {
                Some(name.to_string())
            }
        })
        .collect()
}

#[cfg(test)]
pub(crate) fn event_row(actor1: &str, actor2: &str, mentions: u32, tone: f64, ts: &str) -> String {
    build_event_row(actor1, actor2, mentions, tone, ts)
}

/// Builds a 61-column events row with only the consumed fields populated.
pub fn build_event_row(actor1: &str, actor2: &str, mentions: u32, tone: f64, ts: &str) -> String {
    let mut cols = vec![String::new(); EVENT_MIN_COLUMNS];
    cols[0] = "1".into();
    cols[EVENT_ACTOR1] = actor1.into();
    cols[EVENT_ACTOR2] = actor2.into();
    cols[EVENT_NUM_MENTIONS] = mentions.to_string();
    cols[EVENT_AVG_TONE] = format!("{tone}");
    cols[EVENT_DATE_ADDED] = ts.into();
    cols.join("\t")
}

/// Builds a 27-column GKG row with only the consumed fields populated.
pub fn build_gkg_row(
    persons: &str,
    organizations: &str,
    themes: &str,
    tone: f64,
    ts: &str,
) -> String {
    let mut cols = vec![String::new(); 27];
    cols[0] = format!("{ts}-0");
    cols[GKG_DATE] = ts.into();
    cols[GKG_THEMES] = themes.into();
    cols[GKG_PERSONS] = persons.into();
    cols[GKG_ORGANIZATIONS] = organizations.into();
    cols[GKG_TONE] = format!("{tone},1.0,1.0,2.0,0,0,100");
    cols.join("\t")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_row_round_trip() {
        let row = event_row("UNITED STATES", "IRAN", 12, -4.25, "20260325131500");
        let (records, stats) = parse_events(&row);
        assert_eq!(stats.parsed, 1);
        let r = &records[0];
        assert_eq!(r.actor1, "UNITED STATES");
        assert_eq!(r.actor2, "IRAN");
        assert_eq!(r.mentions, 12);
        assert_eq!(r.avg_tone, -4.25);
        assert_eq!(r.at.to_compact(), "20260325131500");
    }

    #[test]
    fn malformed_rows_are_counted_not_fatal() {
        let good = event_row("IRAN", "ISRAEL", 3, 1.0, "20260325131500");
        let short = "too\tfew\tcolumns";
        let bad_ts = event_row("IRAN", "ISRAEL", 3, 1.0, "not-a-ts");
        let bad_num =
            event_row("IRAN", "ISRAEL", 3, 1.0, "20260325131500").replace("\t3\t", "\tx\t");
        let content = [good.as_str(), short, bad_ts.as_str(), bad_num.as_str()].join("\n");
        let (records, stats) = parse_events(&content);
        assert_eq!(records.len(), 1);
        assert_eq!(stats.skipped, 3);
    }

    #[test]
    fn thousand_row_slice_with_three_bad_rows() {
        let mut rows = Vec::new();
        for i in 0..997 {
            rows.push(event_row(
                "IRAN",
                "ISRAEL",
                1 + i % 9,
                -1.5,
                "20260325131500",
            ));
        }
        rows.push("short".to_string());
        rows.push(event_row("IRAN", "ISRAEL", 1, 1.0, "bad-timestamp"));
        rows.push(
            event_row("IRAN", "ISRAEL", 1, 1.0, "20260325131500").replacen(
                "\t1\t",
                "\tNaNope\t",
                1,
            ),
        );
        let (records, stats) = parse_events(&rows.join("\n"));
        assert_eq!(records.len(), 997);
        assert_eq!(stats.skipped, 3);
    }

    #[test]
    fn gkg_name_portions_only() {
        let row = build_gkg_row(
            "Benjamin Netanyahu,120;Donald Trump,300",
            "OPEC,50",
            "WB_621_NUCLEAR,88;EPU_CATS_MIGRATION,12",
            -2.5,
            "20260325120000",
        );
        let (records, stats) = parse_gkg(&row);
        assert_eq!(stats.parsed, 1);
        let r = &records[0];
        assert_eq!(r.persons, vec!["Benjamin Netanyahu", "Donald Trump"]);
        assert_eq!(r.organizations, vec!["OPEC"]);
        assert_eq!(r.themes, vec!["WB_621_NUCLEAR", "EPU_CATS_MIGRATION"]);
        assert_eq!(r.tone, -2.5);
    }

    #[test]
    fn gkg_empty_entity_fields() {
        let row = build_gkg_row("", "", "", 0.5, "20260325120000");
        let (records, _) = parse_gkg(&row);
        assert!(records[0].persons.is_empty());
        assert!(records[0].themes.is_empty());
    }
}
