//! End-to-end pipeline runs over the bundled fixtures: full scripted
//! replay, stage-addressable reruns, experiment evaluation, and run diffs.

use std::path::{Path, PathBuf};

use polygnosis_core::eval::{run_experiment, ExperimentPlan, Track};
use polygnosis_core::gdelt::GdeltSignals;
use polygnosis_core::model::Alignment;
use polygnosis_core::pipeline::{
    self, diff_runs, load_clusters, load_insights, load_manifest, load_validated, RunConfig, Stage,
    StageStatus,
};
use polygnosis_core::time::DayWindow;

fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .unwrap()
}

fn demo_config(out_root: &Path) -> RunConfig {
    let root = fixtures_root();
    let mut config =
        RunConfig::load(&root.join("polygnosis.toml"), false).expect("demo config loads");
    config.paths.alerts = root.join("alerts/demo.jsonl");
    config.paths.gdelt = root.join("gdelt").display().to_string();
    config.paths.traces = root.join("traces");
    config.paths.gt = root.join("gt");
    config.paths.out = out_root.to_path_buf();
    config
}

fn window() -> DayWindow {
    DayWindow::parse("2026-03-25").unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn full_demo_replay_produces_all_stage_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run_0");
    let config = demo_config(tmp.path());
    let artifacts =
        pipeline::run_pipeline(&config, &window(), &run_dir, Stage::Validate, None).unwrap();
    let manifest = &artifacts.manifest;

    assert_eq!(manifest.stages.len(), 6);
    assert!(manifest
        .stages
        .iter()
        .all(|s| s.status == StageStatus::Completed));

    // windowed replay: 9 of the 10 journal alerts are in-window
    let alerts = pipeline::load_alerts(&run_dir).unwrap();
    assert_eq!(alerts.len(), 9);

    // reflection merged the two Iran clusters: 8 -> 7
    let clusters = load_clusters(&run_dir).unwrap();
    assert_eq!(clusters.clusters.len(), 7);
    let iran = clusters.cluster("us_iran_military_escalation").unwrap();
    assert_eq!(iran.members.len(), 3);
    assert!(clusters.cluster("us_iran_conflict").is_none());
    assert!(clusters
        .clusters
        .iter()
        .all(|c| c.summary.is_some() && c.keywords.is_some()));
    let reflection = manifest.reflection.as_ref().unwrap();
    assert_eq!(reflection.iterations_used, 2);
    assert!(reflection.satisfied);

    // analysis + audit: trump media flagged to mixed, then the validator
    // recomputes alignment from the committed fields
    let validated = load_validated(&run_dir).unwrap();
    assert_eq!(validated.len(), 7);
    let eth = validated
        .iter()
        .find(|r| r.cluster_id == "eth_price")
        .unwrap();
    assert_eq!(eth.poly_media_alignment, Alignment::Consensus); // was divergence
    let trump = validated
        .iter()
        .find(|r| r.cluster_id == "trump_china_visit")
        .unwrap();
    assert_eq!(trump.media_direction.as_str(), "mixed");
    assert_eq!(trump.poly_media_alignment, Alignment::MarketLeadsMedia);
    assert_eq!(manifest.validator_flips, 2);
    assert_eq!(manifest.corrections_applied, 1);
    assert!(manifest.analysis_incomplete.is_empty());

    // temporal firewall proof: no external call window exceeds its as_of
    assert!(!manifest.external_calls.is_empty());
    assert!(manifest
        .external_calls
        .iter()
        .all(|c| c.window_end <= c.as_of));

    // every scripted trace entry was consumed exactly once
    assert_eq!(manifest.ledger_totals.calls, 35);
    assert!(manifest.ledger_totals.cost_usd > 0.0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    pipeline::run_pipeline(&config, &window(), &dir_a, Stage::Validate, None).unwrap();
    pipeline::run_pipeline(&config, &window(), &dir_b, Stage::Validate, None).unwrap();
    for name in [
        "alerts.jsonl",
        "clusters.json",
        "keywords.json",
        "gdelt_signals.json",
        "insights.jsonl",
        "validated.jsonl",
        "ledger.jsonl",
        "manifest.json",
    ] {
        assert_eq!(
            read(&dir_a.join(name)),
            read(&dir_b.join(name)),
            "{name} differs"
        );
    }
}

#[test]
fn stage_rerun_from_persisted_artifacts_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());
    let run_dir = tmp.path().join("run");
    pipeline::run_pipeline(&config, &window(), &run_dir, Stage::Validate, None).unwrap();

    // re-run just the validate stage from the persisted insights
    let before = read(&run_dir.join("validated.jsonl"));
    let insights = load_insights(&run_dir).unwrap();
    let (revalidated, flips, _) = pipeline::stage_validate(&config, &run_dir, &insights).unwrap();
    assert_eq!(flips, 2);
    assert_eq!(revalidated.len(), 7);
    assert_eq!(read(&run_dir.join("validated.jsonl")), before);

    // re-derive gdelt signals from the persisted keyword bundles
    let before = read(&run_dir.join("gdelt_signals.json"));
    let bundles = pipeline::load_keywords(&run_dir).unwrap();
    let clusters = load_clusters(&run_dir).unwrap();
    let order: Vec<String> = clusters
        .clusters
        .iter()
        .map(|c| c.cluster_id.clone())
        .collect();
    let handles = pipeline::build_handles(&config, &window(), Stage::Validate, None).unwrap();
    pipeline::stage_gdelt(
        &run_dir,
        &bundles,
        &order,
        handles.gdelt.as_ref(),
        window().end(),
    )
    .unwrap();
    assert_eq!(read(&run_dir.join("gdelt_signals.json")), before);
}

#[test]
fn gdelt_signals_match_hand_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());
    let run_dir = tmp.path().join("run");
    pipeline::run_pipeline(&config, &window(), &run_dir, Stage::Validate, None).unwrap();
    let signals = pipeline::load_signals(&run_dir).unwrap();

    let iran: &GdeltSignals = &signals["us_iran_military_escalation"];
    assert_eq!(iran.total_mentions_30d, 11); // hand-counted events matches
    assert_eq!(iran.mentions_24h, 4);
    assert!((iran.trend_24h_vs_3d.unwrap() - 12.0 / 7.0).abs() < 1e-12);
    assert_eq!(iran.gkg_articles_24h, 6);
    assert!((iran.gkg_volume_trend.unwrap() - 3.0).abs() < 1e-12);
    assert!((iran.gkg_avg_tone.unwrap() - (-6.0)).abs() < 1e-12);

    let crude: &GdeltSignals = &signals["crude_oil"];
    assert_eq!(crude.total_mentions_30d, 3);
    assert!((crude.trend_24h_vs_3d.unwrap() - 1.5).abs() < 1e-12);

    // crypto clusters see zero geopolitical events, which is normal
    assert_eq!(signals["eth_price"].total_mentions_30d, 0);
    assert_eq!(signals["eth_price"].trend_24h_vs_3d, None);
    assert_eq!(signals["btc_price"].gkg_articles_24h, 3);
}

#[test]
fn evaluate_reasoning_track_scores_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());
    let plan = ExperimentPlan {
        track: Track::DncCotReflect,
        windows: vec![window()],
        runs_per_window: 2,
    };
    let out_a = tmp.path().join("eval_a");
    let out_b = tmp.path().join("eval_b");
    let outcome = run_experiment(&plan, &config, &out_a).unwrap();
    assert_eq!(outcome.runs.len(), 2);
    assert!(outcome.failures.is_empty());
    let analysis = outcome.runs[0].analysis.as_ref().unwrap();
    // hand-scored against the bundled labels: alignment misses on eth only
    assert!((analysis.per_field["poly_direction"] - 1.0).abs() < 1e-12);
    assert!((analysis.per_field["whale_quality"] - 1.0).abs() < 1e-12);
    assert!((analysis.per_field["media_direction"] - 1.0).abs() < 1e-12);
    assert!((analysis.per_field["poly_media_alignment"] - 6.0 / 7.0).abs() < 1e-12);
    assert!((analysis.overall - (3.0 + 6.0 / 7.0) / 4.0).abs() < 1e-12);
    // identical scripted runs embed identical comments
    assert!((outcome.runs[0].consistency.unwrap() - 1.0).abs() < 1e-6);

    // second evaluation of the same plan writes byte-identical outputs
    let tmp2 = tempfile::tempdir().unwrap();
    let mut config_b = demo_config(tmp2.path());
    config_b.paths.out = tmp2.path().to_path_buf();
    run_experiment(&plan, &config_b, &out_b).unwrap();
    assert_eq!(
        read(&out_a.join("summary.csv")),
        read(&out_b.join("summary.csv"))
    );
    assert_eq!(
        read(&out_a.join("runs.jsonl")),
        read(&out_b.join("runs.jsonl"))
    );
}

#[test]
fn evaluate_clustering_tracks() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());

    // direct: over-split Iran -> imperfect ARI
    let plan = ExperimentPlan {
        track: Track::Direct,
        windows: vec![window()],
        runs_per_window: 1,
    };
    let outcome = run_experiment(&plan, &config, &tmp.path().join("direct_out")).unwrap();
    let block = outcome.runs[0].clustering.as_ref().unwrap();
    assert_eq!(block.n_clusters, 8);
    assert!(block.ari < 1.0);
    assert!(block.homogeneity > 0.99); // splits hurt completeness, not homogeneity
    assert!(block.completeness < 1.0);
    let std_cell = &outcome.summary[0];
    assert_eq!(std_cell.metric, "ARI");
    assert!(std_cell.std.is_none(), "single run reports no std");

    // reflect: the merge restores the trader clustering exactly
    let plan = ExperimentPlan {
        track: Track::Reflect,
        windows: vec![window()],
        runs_per_window: 1,
    };
    let outcome = run_experiment(&plan, &config, &tmp.path().join("reflect_out")).unwrap();
    let block = outcome.runs[0].clustering.as_ref().unwrap();
    assert_eq!(block.n_clusters, 7);
    assert!((block.ari - 1.0).abs() < 1e-12);
    assert_eq!(outcome.runs[0].reflection_iterations, Some(2));
}

#[test]
fn evaluate_without_gt_fails_before_any_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = demo_config(tmp.path());
    config.paths.gt = tmp.path().join("missing_gt");
    let plan = ExperimentPlan {
        track: Track::DncCot,
        windows: vec![window()],
        runs_per_window: 1,
    };
    let err = run_experiment(&plan, &config, &tmp.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("missing_gt"), "{err}");
    // validation-first: nothing was written
    assert!(!tmp.path().join("out").join("runs.jsonl").exists());
    assert!(!config
        .paths
        .out
        .join(window().id())
        .join("dnc_cot")
        .exists());
}

#[test]
fn experiment_five_windows_ten_runs_each() {
    use polygnosis_core::model::{Alert, AlertKind, OutcomeSide};
    use polygnosis_core::time::UtcTimestamp;

    let tmp = tempfile::tempdir().unwrap();
    let fixture_dir = tmp.path().join("fixtures");
    std::fs::create_dir_all(fixture_dir.join("traces")).unwrap();
    std::fs::create_dir_all(fixture_dir.join("gt")).unwrap();

    // five consecutive day windows, four alerts each, two themes per day
    let mut journal = String::new();
    let mut windows = Vec::new();
    for day in 25..30 {
        let window = DayWindow::parse(&format!("2026-03-{day}")).unwrap();
        windows.push(window);
        let mut gt = String::from("alert_id,cluster_label\n");
        for i in 0..4 {
            let alert = Alert {
                alert_id: format!("d{day}a{i}"),
                market_title: format!("Window {day} market {i}?"),
                outcome_side: OutcomeSide::Yes,
                alert_kind: AlertKind::PriceShock,
                price: 0.5,
                delta: 0.06,
                whale_usd: None,
                whale_profile: None,
                observed_at: UtcTimestamp::parse(&format!("2026-03-{day}T{:02}:00:00Z", 4 + i))
                    .unwrap(),
            };
            journal.push_str(&alert.canonical_json());
            journal.push('\n');
            gt.push_str(&format!("d{day}a{i},Theme {}\n", i / 2));
        }
        std::fs::write(
            fixture_dir.join(format!("gt/clustering_{}.csv", window.id())),
            gt,
        )
        .unwrap();
        let response = serde_json::json!([
            {"cluster_id": format!("theme_zero_d{day}"), "theme": "Theme 0",
             "alerts": [{"index": 0, "direction": "intensifying"}, {"index": 1, "direction": "intensifying"}]},
            {"cluster_id": format!("theme_one_d{day}"), "theme": "Theme 1",
             "alerts": [{"index": 2, "direction": "easing"}, {"index": 3, "direction": "easing"}]},
        ]);
        let entry = serde_json::json!({
            "template_id": "clustering_system",
            "ordinal": 0,
            "response_text": response.to_string(),
            "input_tokens": 3000,
            "output_tokens": 410,
        });
        std::fs::write(
            fixture_dir.join(format!("traces/direct_{}.jsonl", window.id())),
            format!("{entry}\n"),
        )
        .unwrap();
    }
    std::fs::write(fixture_dir.join("journal.jsonl"), journal).unwrap();

    let mut config = demo_config(tmp.path());
    config.paths.alerts = fixture_dir.join("journal.jsonl");
    config.paths.traces = fixture_dir.join("traces");
    config.paths.gt = fixture_dir.join("gt");

    let plan = ExperimentPlan {
        track: Track::Direct,
        windows,
        runs_per_window: 10,
    };
    let outcome = run_experiment(&plan, &config, &tmp.path().join("eval")).unwrap();
    assert_eq!(outcome.runs.len(), 50, "5 windows x 10 runs");
    assert!(outcome.failures.is_empty());
    assert!(outcome
        .runs
        .iter()
        .all(|r| (r.clustering.as_ref().unwrap().ari - 1.0).abs() < 1e-12));
    let ari_row = &outcome.summary[0];
    assert_eq!(ari_row.metric, "ARI");
    assert_eq!(ari_row.mean, Some(1.0));
    assert_eq!(
        ari_row.std,
        Some(0.0),
        "identical scripted runs have zero std"
    );
    let lines = std::fs::read_to_string(tmp.path().join("eval/runs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 50);
}

#[test]
fn diff_identical_and_divergent_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_config(tmp.path());
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    pipeline::run_pipeline(&config, &window(), &dir_a, Stage::Validate, None).unwrap();
    pipeline::run_pipeline(&config, &window(), &dir_b, Stage::Validate, None).unwrap();
    let report = diff_runs(&dir_a, &dir_b, None).unwrap();
    assert_eq!(report.total_changed(), 0);

    // reflection effect within one run: pre-audit insights vs validated
    let insights = load_insights(&dir_a).unwrap();
    let validated = load_validated(&dir_a).unwrap();
    let labels = polygnosis_core::eval::gt::load_gt_labels(
        &fixtures_root().join("gt/labels_2026-03-25.csv"),
    )
    .unwrap();
    let report = pipeline::diff::diff_records(
        "2026-03-25",
        "reflect_dnc_cot_reflect",
        &insights,
        &validated,
        Some(&labels),
    );
    // validator fixed eth? no: eth GT says divergence, validator forces
    // consensus -> that flip is a break; trump alignment flip is a fix
    let alignment = &report.per_field["poly_media_alignment"];
    assert_eq!(alignment.changed, 2);
    assert_eq!(alignment.fixes, 1);
    assert_eq!(alignment.breaks, 1);

    // different windows are incompatible
    let manifest_path = dir_b.join("manifest.json");
    let mut manifest = load_manifest(&dir_b).unwrap();
    manifest.window = "2026-03-26".into();
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();
    assert!(matches!(
        diff_runs(&dir_a, &dir_b, None),
        Err(pipeline::DiffError::IncompatibleRuns(_))
    ));
}
