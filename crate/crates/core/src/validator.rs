//! Deterministic alignment validator.
//!
//! Models drift toward "consensus" even when their own direction fields
//! oppose each other. This pass recomputes `poly_media_alignment` from the
//! committed `poly_direction` × `media_direction` pair alone — comments and
//! raw signals are never re-read — making that failure mode structurally
//! impossible.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Alignment, InsightRecord, MediaDirection, PolyDirection};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RubricError {
    #[error("rubric {path}: {message}")]
    Io { path: String, message: String },
    #[error("rubric line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("rubric duplicates row ({0}, {1})")]
    Duplicate(PolyDirection, MediaDirection),
    #[error("rubric missing row ({0}, {1}); the mapping must be total over all 12 combinations")]
    Missing(PolyDirection, MediaDirection),
    #[error("rubric has no version tag")]
    MissingVersion,
}

/// Total mapping `(poly_direction, media_direction) -> alignment`, loaded
/// from a 12-row table and validated for totality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRubric {
    pub version: String,
    rows: BTreeMap<(PolyDirection, MediaDirection), Alignment>,
}

pub const DEFAULT_RUBRIC_VERSION: &str = "default-v1";

impl AlignmentRubric {
    /// Built-in rubric:
    /// equal decisive directions → consensus; opposed decisive →
    /// divergence; media absent → market_leads_media; poly mixed with
    /// decisive media → media_leads_market; media mixed with decisive poly
    /// → market_leads_media; both mixed → consensus.
    pub fn default_rubric() -> Self {
        use Alignment::*;
        use MediaDirection as M;
        use PolyDirection as P;
        let rows = [
            ((P::Intensifying, M::Intensifying), Consensus),
            ((P::Intensifying, M::Easing), Divergence),
            ((P::Intensifying, M::Mixed), MarketLeadsMedia),
            ((P::Intensifying, M::NoCoverage), MarketLeadsMedia),
            ((P::Easing, M::Intensifying), Divergence),
            ((P::Easing, M::Easing), Consensus),
            ((P::Easing, M::Mixed), MarketLeadsMedia),
            ((P::Easing, M::NoCoverage), MarketLeadsMedia),
            ((P::Mixed, M::Intensifying), MediaLeadsMarket),
            ((P::Mixed, M::Easing), MediaLeadsMarket),
            ((P::Mixed, M::Mixed), Consensus),
            ((P::Mixed, M::NoCoverage), MarketLeadsMedia),
        ];
        AlignmentRubric {
            version: DEFAULT_RUBRIC_VERSION.to_string(),
            rows: rows.into_iter().collect(),
        }
    }

    /// Loads a rubric table:
    ///
    /// ```text
    /// version: custom-v2
    /// intensifying  easing  divergence
    /// ...11 more rows, whitespace separated...
    /// ```
    ///
    /// `#` lines are comments. The table must cover all 12 combinations
    /// exactly once.
    pub fn load(path: &Path) -> Result<Self, RubricError> {
        let text = std::fs::read_to_string(path).map_err(|e| RubricError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RubricError> {
        let mut version: Option<String> = None;
        let mut rows = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(tag) = line.strip_prefix("version:") {
                version = Some(tag.trim().to_string());
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(RubricError::Parse {
                    line: i + 1,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let poly = PolyDirection::parse(fields[0]).map_err(|e| RubricError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let media = MediaDirection::parse(fields[1]).map_err(|e| RubricError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let alignment = Alignment::parse(fields[2]).map_err(|e| RubricError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if rows.insert((poly, media), alignment).is_some() {
                return Err(RubricError::Duplicate(poly, media));
            }
        }
        let version = version.ok_or(RubricError::MissingVersion)?;
        let rubric = AlignmentRubric { version, rows };
        rubric.check_totality()?;
        Ok(rubric)
    }

    fn check_totality(&self) -> Result<(), RubricError> {
        for poly in PolyDirection::ALL {
            for media in MediaDirection::ALL {
                if !self.rows.contains_key(&(*poly, *media)) {
                    return Err(RubricError::Missing(*poly, *media));
                }
            }
        }
        Ok(())
    }

    /// Total by construction; never fails.
    pub fn alignment_for(&self, poly: PolyDirection, media: MediaDirection) -> Alignment {
        *self
            .rows
            .get(&(poly, media))
            .expect("rubric totality checked at construction")
    }

    /// Renders the table in the loadable text format.
    pub fn to_table(&self) -> String {
        let mut out = format!("version: {}\n", self.version);
        for ((poly, media), alignment) in &self.rows {
            out.push_str(&format!("{poly}\t{media}\t{alignment}\n"));
        }
        out
    }
}

impl fmt::Display for AlignmentRubric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Replaces the record's alignment with the rubric's verdict. Comments and
/// every other field pass through untouched; `changed` reports whether the
/// agent's label differed.
pub fn validate_alignment(
    record: &InsightRecord,
    rubric: &AlignmentRubric,
) -> (InsightRecord, bool) {
    let forced = rubric.alignment_for(record.poly_direction, record.media_direction);
    let changed = record.poly_media_alignment != forced;
    let mut validated = record.clone();
    validated.poly_media_alignment = forced;
    (validated, changed)
}

/// Validates a batch in order, returning the records plus the flip count.
pub fn validate_batch(
    records: &[InsightRecord],
    rubric: &AlignmentRubric,
) -> (Vec<InsightRecord>, u64) {
    let mut out = Vec::with_capacity(records.len());
    let mut flips = 0;
    for record in records {
        let (validated, changed) = validate_alignment(record, rubric);
        if changed {
            flips += 1;
        }
        out.push(validated);
    }
    (out, flips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WhaleQuality;

    fn record(poly: PolyDirection, media: MediaDirection, claimed: Alignment) -> InsightRecord {
        InsightRecord {
            cluster_id: "iran_us_conflict".into(),
            poly_direction: poly,
            poly_comment: "poly comment".into(),
            whale_quality: WhaleQuality::LargeCapital,
            media_direction: media,
            media_comment: "media comment".into(),
            poly_media_alignment: claimed,
            alignment_comment: "alignment comment".into(),
            importance_score: 7,
            importance_reason: "reason".into(),
            incomplete: false,
        }
    }

    #[test]
    fn opposed_directions_forced_to_divergence() {
        let rubric = AlignmentRubric::default_rubric();
        let r = record(
            PolyDirection::Intensifying,
            MediaDirection::Easing,
            Alignment::Consensus,
        );
        let (validated, changed) = validate_alignment(&r, &rubric);
        assert!(changed);
        assert_eq!(validated.poly_media_alignment, Alignment::Divergence);
        assert_eq!(validated.alignment_comment, r.alignment_comment);
        assert_eq!(validated.poly_comment, r.poly_comment);
    }

    #[test]
    fn agreeing_easing_pair_is_consensus_unchanged() {
        let rubric = AlignmentRubric::default_rubric();
        let r = record(
            PolyDirection::Easing,
            MediaDirection::Easing,
            Alignment::Consensus,
        );
        let (validated, changed) = validate_alignment(&r, &rubric);
        assert!(!changed);
        assert_eq!(validated.poly_media_alignment, Alignment::Consensus);
    }

    #[test]
    fn no_coverage_market_leads() {
        let rubric = AlignmentRubric::default_rubric();
        let r = record(
            PolyDirection::Intensifying,
            MediaDirection::NoCoverage,
            Alignment::Consensus,
        );
        let (validated, changed) = validate_alignment(&r, &rubric);
        assert!(changed);
        assert_eq!(validated.poly_media_alignment, Alignment::MarketLeadsMedia);
    }

    #[test]
    fn totality_and_idempotence_over_all_combinations() {
        let rubric = AlignmentRubric::default_rubric();
        for poly in PolyDirection::ALL {
            for media in MediaDirection::ALL {
                for claimed in Alignment::ALL {
                    let r = record(*poly, *media, *claimed);
                    let (once, _) = validate_alignment(&r, &rubric);
                    let (twice, changed_again) = validate_alignment(&once, &rubric);
                    assert_eq!(once, twice);
                    assert!(!changed_again);
                }
            }
        }
    }

    #[test]
    fn table_round_trip() {
        let rubric = AlignmentRubric::default_rubric();
        let parsed = AlignmentRubric::parse(&rubric.to_table()).unwrap();
        assert_eq!(parsed, rubric);
    }

    #[test]
    fn missing_row_rejected() {
        let rubric = AlignmentRubric::default_rubric();
        let table = rubric.to_table();
        let truncated: Vec<&str> = table.lines().take(12).collect();
        let err = AlignmentRubric::parse(&truncated.join("\n")).unwrap_err();
        assert!(matches!(err, RubricError::Missing(..)));
    }

    #[test]
    fn duplicate_row_rejected() {
        let rubric = AlignmentRubric::default_rubric();
        let mut table = rubric.to_table();
        table.push_str("intensifying\tintensifying\tdivergence\n");
        let err = AlignmentRubric::parse(&table).unwrap_err();
        assert!(matches!(err, RubricError::Duplicate(..)));
    }

    #[test]
    fn bad_label_rejected_with_line() {
        let err =
            AlignmentRubric::parse("version: x\nintensifying\tbullish\tconsensus\n").unwrap_err();
        assert!(matches!(err, RubricError::Parse { line: 2, .. }));
    }

    #[test]
    fn version_tag_required() {
        let rubric = AlignmentRubric::default_rubric();
        let table = rubric.to_table();
        let body: Vec<&str> = table
            .lines()
            .filter(|l| !l.starts_with("version:"))
            .collect();
        let err = AlignmentRubric::parse(&body.join("\n")).unwrap_err();
        assert_eq!(err, RubricError::MissingVersion);
    }
}
