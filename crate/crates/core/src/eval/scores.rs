//! Partition-agreement metrics (ARI, NMI, homogeneity, completeness) and
//! per-field classification accuracy.
//!
//! All entropies are natural-log; NMI normalizes by the arithmetic mean of
//! the two label entropies. ARI uses the contingency-table form
//! `(Index - E[Index]) / (Max - E[Index])` with `Index = Σ C(n_ij, 2)`; a
//! vanishing denominator only occurs for identical trivial partitions and
//! scores 1.0.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GroundTruthLabel, InsightRecord, LabelField};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("label sets cover different index sets: truth {truth} vs predicted {predicted}")]
    IndexSetMismatch { truth: usize, predicted: usize },
    #[error("no cluster ids joined between records and ground truth")]
    EmptyJoin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub ari: f64,
    pub nmi: f64,
    pub homogeneity: f64,
    pub completeness: f64,
}

struct Contingency {
    cells: HashMap<(usize, usize), f64>,
    truth_sizes: HashMap<usize, f64>,
    predicted_sizes: HashMap<usize, f64>,
    n: f64,
}

fn contingency(truth: &[usize], predicted: &[usize]) -> Contingency {
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    let mut truth_sizes: HashMap<usize, f64> = HashMap::new();
    let mut predicted_sizes: HashMap<usize, f64> = HashMap::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        *cells.entry((t, p)).or_insert(0.0) += 1.0;
        *truth_sizes.entry(t).or_insert(0.0) += 1.0;
        *predicted_sizes.entry(p).or_insert(0.0) += 1.0;
    }
    Contingency {
        cells,
        truth_sizes,
        predicted_sizes,
        n: truth.len() as f64,
    }
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

fn entropy(sizes: &HashMap<usize, f64>, n: f64) -> f64 {
    sizes
        .values()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Scores `predicted` against `truth` over the same index set (labels are
/// positional: element i of both slices describes alert i).
pub fn clustering_scores(
    truth: &[usize],
    predicted: &[usize],
) -> Result<ClusteringScores, ScoreError> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(ScoreError::IndexSetMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let table = contingency(truth, predicted);
    Ok(ClusteringScores {
        ari: adjusted_rand_index(&table),
        nmi: normalized_mutual_information(&table),
        homogeneity: homogeneity(&table),
        completeness: completeness(&table),
    })
}

fn adjusted_rand_index(table: &Contingency) -> f64 {
    let index: f64 = table.cells.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = table.truth_sizes.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = table.predicted_sizes.values().map(|&c| comb2(c)).sum();
    let pairs = comb2(table.n);
    if pairs == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / pairs;
    let max_index = 0.5 * (sum_a + sum_b);
    let denominator = max_index - expected;
    if denominator.abs() < f64::EPSILON {
        // both partitions trivial in the same way, i.e. identical
        return 1.0;
    }
    (index - expected) / denominator
}

fn mutual_information(table: &Contingency) -> f64 {
    let n = table.n;
    table
        .cells
        .iter()
        .map(|(&(t, p), &c)| {
            let a = table.truth_sizes[&t];
            let b = table.predicted_sizes[&p];
            (c / n) * ((n * c) / (a * b)).ln()
        })
        .sum()
}

fn normalized_mutual_information(table: &Contingency) -> f64 {
    let h_truth = entropy(&table.truth_sizes, table.n);
    let h_predicted = entropy(&table.predicted_sizes, table.n);
    let mean = 0.5 * (h_truth + h_predicted);
    if mean < f64::EPSILON {
        // both single-cluster: identical trivial partitions
        return 1.0;
    }
    mutual_information(table) / mean
}

/// `H(C|K)`: entropy of truth classes within predicted clusters.
fn conditional_entropy_truth_given_predicted(table: &Contingency) -> f64 {
    let n = table.n;
    table
        .cells
        .iter()
        .map(|(&(_, p), &c)| {
            let cluster_size = table.predicted_sizes[&p];
            -(c / n) * (c / cluster_size).ln()
        })
        .sum()
}

fn conditional_entropy_predicted_given_truth(table: &Contingency) -> f64 {
    let n = table.n;
    table
        .cells
        .iter()
        .map(|(&(t, _), &c)| {
            let class_size = table.truth_sizes[&t];
            -(c / n) * (c / class_size).ln()
        })
        .sum()
}

fn homogeneity(table: &Contingency) -> f64 {
    let h_truth = entropy(&table.truth_sizes, table.n);
    if h_truth < f64::EPSILON {
        return 1.0;
    }
    1.0 - conditional_entropy_truth_given_predicted(table) / h_truth
}

fn completeness(table: &Contingency) -> f64 {
    let h_predicted = entropy(&table.predicted_sizes, table.n);
    if h_predicted < f64::EPSILON {
        return 1.0;
    }
    1.0 - conditional_entropy_predicted_given_truth(table) / h_predicted
}

/// Per-field exact-match accuracy plus the unweighted mean across the four
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_field: BTreeMap<String, f64>,
    pub overall: f64,
    pub joined: usize,
    pub unmatched_records: Vec<String>,
    pub unmatched_gt: Vec<String>,
}

/// The Table-style aggregation rule: overall = unweighted mean of the four
/// per-field accuracies.
pub fn overall_from_fields(per_field: &BTreeMap<String, f64>) -> f64 {
    if per_field.is_empty() {
        return 0.0;
    }
    per_field.values().sum::<f64>() / per_field.len() as f64
}

/// Joins records to ground truth on `cluster_id` (first annotation wins on
/// duplicates) and scores exact matches per categorical field.
pub fn classification_accuracy(
    records: &[InsightRecord],
    gt: &[GroundTruthLabel],
) -> Result<AccuracyReport, ScoreError> {
    let mut gt_by_id: BTreeMap<&str, &GroundTruthLabel> = BTreeMap::new();
    for label in gt {
        gt_by_id.entry(label.cluster_id.as_str()).or_insert(label);
    }
    let mut joined = 0usize;
    let mut matches: BTreeMap<&'static str, usize> =
        LabelField::ALL.iter().map(|f| (f.name(), 0usize)).collect();
    let mut unmatched_records = Vec::new();
    let mut seen_gt: Vec<&str> = Vec::new();
    for record in records {
        match gt_by_id.get(record.cluster_id.as_str()) {
            Some(label) => {
                joined += 1;
                seen_gt.push(record.cluster_id.as_str());
                for field in LabelField::ALL {
                    if record.field_label(*field) == label.field_label(*field) {
                        *matches.get_mut(field.name()).expect("field present") += 1;
                    }
                }
            }
            None => unmatched_records.push(record.cluster_id.clone()),
        }
    }
    if joined == 0 {
        return Err(ScoreError::EmptyJoin);
    }
    let unmatched_gt: Vec<String> = gt_by_id
        .keys()
        .filter(|id| !seen_gt.contains(*id))
        .map(|id| id.to_string())
        .collect();
    let per_field: BTreeMap<String, f64> = matches
        .into_iter()
        .map(|(name, hits)| (name.to_string(), hits as f64 / joined as f64))
        .collect();
    let overall = overall_from_fields(&per_field);
    Ok(AccuracyReport {
        per_field,
        overall,
        joined,
        unmatched_records,
        unmatched_gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Alignment, MediaDirection, PolyDirection, WhaleQuality};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn label_permutation_invariance() {
        let scores = clustering_scores(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap();
        assert!(close(scores.ari, 1.0));
        assert!(close(scores.nmi, 1.0));
        assert!(close(scores.homogeneity, 1.0));
        assert!(close(scores.completeness, 1.0));
    }

    #[test]
    fn over_split_pair() {
        // contingency: {0,0} vs {0,0}, {1,1} vs {1,2}
        let scores = clustering_scores(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!(close(scores.ari, 4.0 / 7.0), "ari = {}", scores.ari);
    }

    #[test]
    fn degenerate_single_cluster_prediction() {
        let scores = clustering_scores(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap();
        assert!(close(scores.homogeneity, 0.0));
        assert!(close(scores.completeness, 1.0));
    }

    #[test]
    fn identical_trivial_partitions_score_one() {
        let all_singletons = clustering_scores(&[0, 1, 2], &[2, 0, 1]).unwrap();
        assert!(close(all_singletons.ari, 1.0));
        let one_cluster = clustering_scores(&[0, 0, 0], &[5, 5, 5]).unwrap();
        assert!(close(one_cluster.ari, 1.0));
        assert!(close(one_cluster.nmi, 1.0));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            clustering_scores(&[0, 1], &[0, 1, 2]),
            Err(ScoreError::IndexSetMismatch { .. })
        ));
    }

    fn record(id: &str, poly: PolyDirection) -> InsightRecord {
        InsightRecord {
            cluster_id: id.into(),
            poly_direction: poly,
            poly_comment: String::new(),
            whale_quality: WhaleQuality::NoWhaleData,
            media_direction: MediaDirection::Mixed,
            media_comment: String::new(),
            poly_media_alignment: Alignment::Consensus,
            alignment_comment: String::new(),
            importance_score: 5,
            importance_reason: String::new(),
            incomplete: false,
        }
    }

    fn gt(id: &str, poly: PolyDirection) -> GroundTruthLabel {
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
    fn all_correct_is_all_ones() {
        let records = vec![
            record("a", PolyDirection::Easing),
            record("b", PolyDirection::Mixed),
        ];
        let labels = vec![
            gt("a", PolyDirection::Easing),
            gt("b", PolyDirection::Mixed),
        ];
        let report = classification_accuracy(&records, &labels).unwrap();
        assert!(report.per_field.values().all(|&v| close(v, 1.0)));
        assert!(close(report.overall, 1.0));
    }

    #[test]
    fn partial_mismatch_and_unmatched_ids() {
        let records = vec![
            record("a", PolyDirection::Easing),
            record("b", PolyDirection::Easing),
            record("ghost", PolyDirection::Mixed),
        ];
        let labels = vec![
            gt("a", PolyDirection::Easing),
            gt("b", PolyDirection::Mixed),
            gt("unseen", PolyDirection::Mixed),
        ];
        let report = classification_accuracy(&records, &labels).unwrap();
        assert_eq!(report.joined, 2);
        assert!(close(report.per_field["poly_direction"], 0.5));
        assert!(close(report.per_field["whale_quality"], 1.0));
        assert_eq!(report.unmatched_records, vec!["ghost".to_string()]);
        assert_eq!(report.unmatched_gt, vec!["unseen".to_string()]);
        // overall = mean of field accuracies
        assert!(close(report.overall, (0.5 + 1.0 + 1.0 + 1.0) / 4.0));
    }

    #[test]
    fn empty_join_is_an_error() {
        let records = vec![record("a", PolyDirection::Easing)];
        let labels = vec![gt("b", PolyDirection::Easing)];
        assert_eq!(
            classification_accuracy(&records, &labels).unwrap_err(),
            ScoreError::EmptyJoin
        );
    }

    #[test]
    fn aggregation_matches_reported_columns() {
        // the four reported per-field columns and their overall rows
        let columns: [([f64; 4], f64); 4] = [
            ([0.669, 0.366, 0.417, 0.335], 0.447),
            ([0.795, 0.826, 0.869, 0.708], 0.799),
            ([0.786, 0.823, 0.860, 0.710], 0.795),
            ([0.710, 0.682, 0.802, 0.606], 0.700),
        ];
        for (fields, overall) in columns {
            let map: BTreeMap<String, f64> = [
                "poly_direction",
                "whale_quality",
                "media_direction",
                "poly_media_alignment",
            ]
            .iter()
            .zip(fields)
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            let computed = overall_from_fields(&map);
            assert!(
                (computed - overall).abs() <= 5.0e-4 + 1e-9,
                "fields {fields:?} -> {computed}, want {overall}"
            );
        }
    }
}
