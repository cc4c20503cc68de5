//! Benchmarks for the paths that dominate evaluation time: clustering
//! metrics over random partitions, GDELT record parsing and filtering,
//! JSON extraction from noisy responses, and the validator batch pass.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polygnosis_core::eval::clustering_scores;
use polygnosis_core::gateway::{extract_payload, ExpectedShape};
use polygnosis_core::gdelt::{build_event_row, filter_events, parse::parse_events};
use polygnosis_core::model::{
    Alignment, InsightRecord, MediaDirection, PolyDirection, WhaleQuality,
};
use polygnosis_core::validator::{validate_batch, AlignmentRubric};

fn bench_clustering_scores(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200;
    let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..18)).collect();
    let predicted: Vec<usize> = (0..n).map(|_| rng.gen_range(0..22)).collect();
    c.bench_function("clustering_scores_200_alerts", |b| {
        b.iter(|| clustering_scores(black_box(&truth), black_box(&predicted)).unwrap())
    });
}

fn bench_gdelt(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let actors = [
        "UNITED STATES",
        "IRAN",
        "CHINA",
        "RUSSIA",
        "OPEC",
        "ISRAEL",
        "",
    ];
    let rows: Vec<String> = (0..5_000)
        .map(|_| {
            build_event_row(
                actors[rng.gen_range(0..actors.len())],
                actors[rng.gen_range(0..actors.len())],
                rng.gen_range(1..20),
                rng.gen_range(-8.0..4.0),
                "20260325120000",
            )
        })
        .collect();
    let content = rows.join("\n");
    c.bench_function("parse_events_5k_rows", |b| {
        b.iter(|| parse_events(black_box(&content)))
    });

    let (records, _) = parse_events(&content);
    let pairs = vec![
        vec!["UNITED STATES".to_string(), "IRAN".to_string()],
        vec!["OPEC".to_string()],
    ];
    c.bench_function("filter_events_5k_rows", |b| {
        b.iter(|| filter_events(black_box(&records), black_box(&pairs)).len())
    });
}

fn bench_extraction(c: &mut Criterion) {
    let noisy = format!(
        "Let me think this through step by step.\n{}\n```json\n{}\n```\ntrailing commentary",
        "filler sentence with braces in prose {not json} repeated. ".repeat(40),
        serde_json::json!({
            "poly_direction": "intensifying",
            "poly_comment": "c".repeat(200),
            "whale_quality": "large_capital",
            "media_direction": "mixed",
            "media_comment": "c".repeat(200),
            "poly_media_alignment": "divergence",
            "alignment_comment": "c".repeat(200),
            "importance_score": 7,
            "importance_reason": "r"
        })
    );
    c.bench_function("extract_payload_noisy_response", |b| {
        b.iter(|| extract_payload(black_box(&noisy), ExpectedShape::Object).unwrap())
    });
}

fn bench_validator(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<InsightRecord> = (0..1_000)
        .map(|i| InsightRecord {
            cluster_id: format!("cluster_{i}"),
            poly_direction: PolyDirection::ALL[rng.gen_range(0..3)],
            poly_comment: String::new(),
            whale_quality: WhaleQuality::ALL[rng.gen_range(0..6)],
            media_direction: MediaDirection::ALL[rng.gen_range(0..4)],
            media_comment: String::new(),
            poly_media_alignment: Alignment::ALL[rng.gen_range(0..4)],
            alignment_comment: String::new(),
            importance_score: rng.gen_range(1..=10),
            importance_reason: String::new(),
            incomplete: false,
        })
        .collect();
    let rubric = AlignmentRubric::default_rubric();
    c.bench_function("validate_batch_1k_records", |b| {
        b.iter(|| validate_batch(black_box(&records), black_box(&rubric)))
    });
}

criterion_group!(
    benches,
    bench_clustering_scores,
    bench_gdelt,
    bench_extraction,
    bench_validator
);
criterion_main!(benches);
