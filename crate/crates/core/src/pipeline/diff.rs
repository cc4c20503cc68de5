//! Field-level comparison of two run directories, with break/fix counting
//! against ground truth when supplied.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GroundTruthLabel, InsightRecord, LabelField};

use super::{load_manifest, load_validated, PipelineError};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("runs are incompatible: {0}")]
    IncompatibleRuns(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub changed: u32,
    /// A was right, B is wrong (needs ground truth).
    pub breaks: u32,
    /// A was wrong, B is right (needs ground truth).
    pub fixes: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldChange {
    pub field: String,
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterDiff {
    pub cluster_id: String,
    pub changes: Vec<FieldChange>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffReport {
    pub window: String,
    pub track: String,
    pub shared_clusters: usize,
    pub per_field: BTreeMap<String, FieldDiff>,
    pub per_cluster: Vec<ClusterDiff>,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
}

impl DiffReport {
    pub fn total_changed(&self) -> u32 {
        self.per_field.values().map(|d| d.changed).sum()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "diff for window {} track {} ({} shared clusters)\n",
            self.window, self.track, self.shared_clusters
        ));
        for (field, diff) in &self.per_field {
            out.push_str(&format!(
                "  {field}: changed={} fixes={} breaks={}\n",
                diff.changed, diff.fixes, diff.breaks
            ));
        }
        for cluster in &self.per_cluster {
            out.push_str(&format!("  {}:\n", cluster.cluster_id));
            for change in &cluster.changes {
                match &change.gt {
                    Some(gt) => out.push_str(&format!(
                        "    {}: {} -> {} (gt {})\n",
                        change.field, change.a, change.b, gt
                    )),
                    None => out.push_str(&format!(
                        "    {}: {} -> {}\n",
                        change.field, change.a, change.b
                    )),
                }
            }
        }
        if !self.only_in_a.is_empty() {
            out.push_str(&format!("  only in A: {}\n", self.only_in_a.join(", ")));
        }
        if !self.only_in_b.is_empty() {
            out.push_str(&format!("  only in B: {}\n", self.only_in_b.join(", ")));
        }
        if self.total_changed() == 0 {
            out.push_str("  no field-level differences\n");
        }
        out
    }
}

/// Compares the validated records of two runs that share a track and
/// window.
pub fn diff_runs(
    run_a: &Path,
    run_b: &Path,
    gt: Option<&[GroundTruthLabel]>,
) -> Result<DiffReport, DiffError> {
    let manifest_a = load_manifest(run_a)?;
    let manifest_b = load_manifest(run_b)?;
    if manifest_a.window != manifest_b.window {
        return Err(DiffError::IncompatibleRuns(format!(
            "windows differ: {} vs {}",
            manifest_a.window, manifest_b.window
        )));
    }
    let track_a = format!(
        "{}_{}",
        manifest_a.clustering_track.as_str(),
        manifest_a.analysis_track.as_str()
    );
    let track_b = format!(
        "{}_{}",
        manifest_b.clustering_track.as_str(),
        manifest_b.analysis_track.as_str()
    );
    if track_a != track_b {
        return Err(DiffError::IncompatibleRuns(format!(
            "tracks differ: {track_a} vs {track_b}"
        )));
    }
    let records_a = load_validated(run_a)?;
    let records_b = load_validated(run_b)?;
    Ok(diff_records(
        &manifest_a.window,
        &track_a,
        &records_a,
        &records_b,
        gt,
    ))
}

/// Pure diff over two record sets (also used to compare pre/post-reflection
/// records within one run).
pub fn diff_records(
    window: &str,
    track: &str,
    records_a: &[InsightRecord],
    records_b: &[InsightRecord],
    gt: Option<&[GroundTruthLabel]>,
) -> DiffReport {
    let mut per_field: BTreeMap<String, FieldDiff> = LabelField::ALL
        .iter()
        .map(|f| (f.name().to_string(), FieldDiff::default()))
        .collect();
    let mut per_cluster = Vec::new();
    let mut shared = 0usize;
    let mut only_in_a = Vec::new();
    for a in records_a {
        let Some(b) = records_b.iter().find(|r| r.cluster_id == a.cluster_id) else {
            only_in_a.push(a.cluster_id.clone());
            continue;
        };
        shared += 1;
        let truth = gt.and_then(|labels| labels.iter().find(|l| l.cluster_id == a.cluster_id));
        let mut changes = Vec::new();
        for field in LabelField::ALL {
            let value_a = a.field_label(*field);
            let value_b = b.field_label(*field);
            if value_a == value_b {
                continue;
            }
            let diff = per_field.get_mut(field.name()).expect("field");
            diff.changed += 1;
            if let Some(truth) = truth {
                let gt_value = truth.field_label(*field);
                if value_a == gt_value && value_b != gt_value {
                    diff.breaks += 1;
                } else if value_a != gt_value && value_b == gt_value {
                    diff.fixes += 1;
                }
            }
            changes.push(FieldChange {
                field: field.name().to_string(),
                a: value_a.to_string(),
                b: value_b.to_string(),
                gt: truth.map(|t| t.field_label(*field).to_string()),
            });
        }
        if !changes.is_empty() {
            per_cluster.push(ClusterDiff {
                cluster_id: a.cluster_id.clone(),
                changes,
            });
        }
    }
    let only_in_b: Vec<String> = records_b
        .iter()
        .filter(|b| !records_a.iter().any(|a| a.cluster_id == b.cluster_id))
        .map(|b| b.cluster_id.clone())
        .collect();
    DiffReport {
        window: window.to_string(),
        track: track.to_string(),
        shared_clusters: shared,
        per_field,
        per_cluster,
        only_in_a,
        only_in_b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Alignment, MediaDirection, PolyDirection, WhaleQuality};

    fn record(id: &str, poly: PolyDirection, media: MediaDirection) -> InsightRecord {
        InsightRecord {
            cluster_id: id.into(),
            poly_direction: poly,
            poly_comment: String::new(),
            whale_quality: WhaleQuality::NoWhaleData,
            media_direction: media,
            media_comment: String::new(),
            poly_media_alignment: Alignment::Consensus,
            alignment_comment: String::new(),
            importance_score: 5,
            importance_reason: String::new(),
            incomplete: false,
        }
    }

    fn label(id: &str, poly: PolyDirection) -> GroundTruthLabel {
        GroundTruthLabel {
            cluster_id: id.into(),
            poly_direction: poly,
            whale_quality: WhaleQuality::NoWhaleData,
            media_direction: MediaDirection::Mixed,
            poly_media_alignment: Alignment::Consensus,
            annotator_id: "t1".into(),
            day_window: "2026-03-25".into(),
        }
    }

    #[test]
    fn identical_runs_zero_diffs() {
        let records = vec![record("a", PolyDirection::Easing, MediaDirection::Mixed)];
        let report = diff_records("2026-03-25", "direct_dnc", &records, &records, None);
        assert_eq!(report.total_changed(), 0);
        assert_eq!(report.shared_clusters, 1);
        assert!(report.render_text().contains("no field-level differences"));
    }

    #[test]
    fn break_and_fix_counting_against_gt() {
        // 6-cluster fixture: two flips, one break and one fix on poly_direction
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..4 {
            let id = format!("same_{i}");
            a.push(record(&id, PolyDirection::Mixed, MediaDirection::Mixed));
            b.push(record(&id, PolyDirection::Mixed, MediaDirection::Mixed));
        }
        // breaks: A correct (easing), B wrong (mixed)
        a.push(record(
            "broke",
            PolyDirection::Easing,
            MediaDirection::Mixed,
        ));
        b.push(record("broke", PolyDirection::Mixed, MediaDirection::Mixed));
        // fixes: A wrong (mixed), B correct (easing)
        a.push(record("fixed", PolyDirection::Mixed, MediaDirection::Mixed));
        b.push(record(
            "fixed",
            PolyDirection::Easing,
            MediaDirection::Mixed,
        ));
        let gt = vec![
            label("broke", PolyDirection::Easing),
            label("fixed", PolyDirection::Easing),
        ];
        let report = diff_records("2026-03-25", "direct_dnc_cot_reflect", &a, &b, Some(&gt));
        let poly = &report.per_field["poly_direction"];
        assert_eq!(poly.changed, 2);
        assert_eq!(poly.breaks, 1);
        assert_eq!(poly.fixes, 1);
        assert_eq!(report.per_cluster.len(), 2);
    }

    #[test]
    fn disjoint_ids_reported() {
        let a = vec![record(
            "only_a",
            PolyDirection::Mixed,
            MediaDirection::Mixed,
        )];
        let b = vec![record(
            "only_b",
            PolyDirection::Mixed,
            MediaDirection::Mixed,
        )];
        let report = diff_records("w", "t", &a, &b, None);
        assert_eq!(report.only_in_a, vec!["only_a".to_string()]);
        assert_eq!(report.only_in_b, vec!["only_b".to_string()]);
        assert_eq!(report.shared_clusters, 0);
    }
}
