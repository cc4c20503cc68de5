//! Ground-truth file formats.
//!
//! Two CSVs per day window inside the GT directory:
//! * `clustering_<window>.csv` — columns `alert_id,cluster_label`; the
//!   trader-assigned thematic category per alert.
//! * `labels_<window>.csv` — columns `window,cluster_id,poly_direction,
//!   whale_quality,media_direction,poly_media_alignment,annotator_id`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::cluster::slugify_title;
use crate::model::{
    Alert, Alignment, Cluster, ClusterMember, ClusterSet, GroundTruthLabel, MediaDirection,
    MemberDirection, OutcomeSide, PolyDirection, WhaleQuality,
};
use crate::time::DayWindow;

#[derive(Debug, Error)]
pub enum GtError {
    #[error("ground truth {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("ground truth {path} row {row}: {message}")]
    Row {
        path: String,
        row: usize,
        message: String,
    },
    #[error("ground truth file missing: {0}")]
    Missing(String),
}

pub fn clustering_path(gt_dir: &Path, window: &DayWindow) -> PathBuf {
    gt_dir.join(format!("clustering_{}.csv", window.id()))
}

pub fn labels_path(gt_dir: &Path, window: &DayWindow) -> PathBuf {
    gt_dir.join(format!("labels_{}.csv", window.id()))
}

/// One trader cluster assignment.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct GtClusterRow {
    pub alert_id: String,
    pub cluster_label: String,
}

pub fn load_gt_clustering(path: &Path) -> Result<Vec<GtClusterRow>, GtError> {
    if !path.exists() {
        return Err(GtError::Missing(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|source| GtError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, result) in reader.deserialize::<GtClusterRow>().enumerate() {
        let row = result.map_err(|e| GtError::Row {
            path: path.display().to_string(),
            row: i + 2,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct GtLabelRow {
    window: String,
    cluster_id: String,
    poly_direction: String,
    whale_quality: String,
    media_direction: String,
    poly_media_alignment: String,
    annotator_id: String,
}

pub fn load_gt_labels(path: &Path) -> Result<Vec<GroundTruthLabel>, GtError> {
    if !path.exists() {
        return Err(GtError::Missing(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|source| GtError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let mut labels = Vec::new();
    for (i, result) in reader.deserialize::<GtLabelRow>().enumerate() {
        let row_error = |message: String| GtError::Row {
            path: path.display().to_string(),
            row: i + 2,
            message,
        };
        let row = result.map_err(|e| row_error(e.to_string()))?;
        labels.push(GroundTruthLabel {
            cluster_id: row.cluster_id,
            poly_direction: PolyDirection::parse(&row.poly_direction)
                .map_err(|e| row_error(e.to_string()))?,
            whale_quality: WhaleQuality::parse(&row.whale_quality)
                .map_err(|e| row_error(e.to_string()))?,
            media_direction: MediaDirection::parse(&row.media_direction)
                .map_err(|e| row_error(e.to_string()))?,
            poly_media_alignment: Alignment::parse(&row.poly_media_alignment)
                .map_err(|e| row_error(e.to_string()))?,
            annotator_id: row.annotator_id,
            day_window: row.window,
        });
    }
    Ok(labels)
}

/// Positional truth labels (cluster index per alert) for scoring a
/// predicted set against the trader assignment. Alerts without a GT row
/// are an error — the index sets must coincide.
pub fn gt_labeling(alerts: &[Alert], rows: &[GtClusterRow]) -> Result<Vec<usize>, GtError> {
    let mut label_ids: Vec<&str> = Vec::new();
    let mut labels = Vec::with_capacity(alerts.len());
    for alert in alerts {
        let row = rows
            .iter()
            .find(|r| r.alert_id == alert.alert_id)
            .ok_or_else(|| {
                GtError::Missing(format!("no cluster label for alert {}", alert.alert_id))
            })?;
        let position = match label_ids
            .iter()
            .position(|l| *l == row.cluster_label.as_str())
        {
            Some(p) => p,
            None => {
                label_ids.push(row.cluster_label.as_str());
                label_ids.len() - 1
            }
        };
        labels.push(position);
    }
    Ok(labels)
}

/// Builds a [`ClusterSet`] from trader assignments, for runs that hold the
/// clustering stage constant. Member directions use the outcome-side
/// heuristic (yes → intensifying), since the assignment format carries
/// none.
pub fn clusterset_from_gt(
    alerts: &[Alert],
    rows: &[GtClusterRow],
    window: &DayWindow,
) -> Result<ClusterSet, GtError> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for (index, alert) in alerts.iter().enumerate() {
        let row = rows
            .iter()
            .find(|r| r.alert_id == alert.alert_id)
            .ok_or_else(|| {
                GtError::Missing(format!("no cluster label for alert {}", alert.alert_id))
            })?;
        let direction = match alert.outcome_side {
            OutcomeSide::Yes => MemberDirection::Intensifying,
            OutcomeSide::No => MemberDirection::Easing,
        };
        let member = ClusterMember { index, direction };
        match clusters.iter_mut().find(|c| c.theme == row.cluster_label) {
            Some(cluster) => cluster.members.push(member),
            None => clusters.push(Cluster {
                cluster_id: slugify_title(&row.cluster_label, 5),
                theme: row.cluster_label.clone(),
                members: vec![member],
                summary: None,
                keywords: None,
            }),
        }
    }
    Ok(ClusterSet {
        clusters,
        source_window: window.time_window(),
    })
}
