//! Stage orchestration and on-disk layout.
//!
//! A run owns one directory, `out/<window>/<track>/run_<k>/`, holding one
//! artifact per stage plus `ledger.jsonl` and `manifest.json`:
//!
//! ```text
//! alerts.jsonl          ingest/replay output (canonical alert lines)
//! clusters.json         cluster stage output (themes, members, summaries)
//! keywords.json         cluster_id -> keyword bundle
//! gdelt_signals.json    cluster_id -> derived media signals
//! insights.jsonl        analysis records, one per line
//! cot/<cluster_id>.txt  chain-of-thought transcripts (CoT tracks)
//! validated.jsonl       records after the alignment validator
//! ```
//!
//! Every stage reads only persisted upstream artifacts, so any stage can be
//! re-run from a partially complete directory and reproduces its output
//! bit-for-bit under a scripted backend.

pub mod config;
pub mod diff;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::{self, AnalysisInputBundle, AnalysisTrack};
use crate::cluster::{self};
use crate::eval::gt;
use crate::gateway::{
    AgentModels, Gateway, LedgerTotals, LiveBackend, LiveBackendConfig, RateCard, ScriptedBackend,
};
use crate::gdelt::{
    fetch_events_window, fetch_gkg_window, filter_events, filter_gkg, DirSource, GdeltSignals,
    HttpGdeltSource, RecordSource, DEFAULT_GDELT_BASE_URL,
};
use crate::ingest::replay_window;
use crate::model::{Alert, ClusterSet, InsightRecord, KeywordBundle};
use crate::reflect::{
    reflect_loop, FixtureSearch, HttpSearch, ReflectContext, ReflectionOutcome, SearchProvider,
};
use crate::time::{days, DayWindow, TimeWindow, UtcTimestamp};
use crate::validator::{validate_batch, AlignmentRubric};

pub use config::{
    BackendMode, ClusteringTrack, ConfigError, EmbeddingMode, PathsSection, RunConfig, SearchMode,
    ANALYSIS_REFLECTION_BOUND, CLUSTERING_REFLECTION_BOUND,
};
pub use diff::{diff_runs, DiffError, DiffReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("artifact {path}: {message}")]
    Artifact { path: String, message: String },
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Cluster,
    Keywords,
    Gdelt,
    Analyze,
    Validate,
}

impl Stage {
    pub const ALL: &'static [Stage] = &[
        Stage::Ingest,
        Stage::Cluster,
        Stage::Keywords,
        Stage::Gdelt,
        Stage::Analyze,
        Stage::Validate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Keywords => "keywords",
            Stage::Gdelt => "gdelt",
            Stage::Analyze => "analyze",
            Stage::Validate => "validate",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default)]
    pub detail: Value,
}

/// One externally bounded data request, proving the temporal firewall held.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalCall {
    pub kind: String,
    pub window_start: UtcTimestamp,
    pub window_end: UtcTimestamp,
    pub as_of: UtcTimestamp,
}

/// Deterministic run description written as `manifest.json`. Contains no
/// wall-clock timestamps, so scripted reruns are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub window: String,
    pub clustering_track: ClusteringTrack,
    pub analysis_track: AnalysisTrack,
    pub as_of: UtcTimestamp,
    pub temperature: Option<f64>,
    pub seed_note: String,
    pub rubric_version: String,
    pub stages: Vec<StageRecord>,
    pub external_calls: Vec<ExternalCall>,
    pub ledger_totals: LedgerTotals,
    pub reflection: Option<ReflectionOutcome>,
    pub analysis_incomplete: Vec<String>,
    pub corrections_applied: u32,
    pub validator_flips: u64,
    pub n_clusters: usize,
    pub config: Value,
}

pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Live handles the pipeline stages share.
pub struct PipelineHandles {
    pub gateway: Gateway,
    pub gdelt: Arc<dyn RecordSource>,
    pub search: Option<Arc<dyn SearchProvider>>,
}

fn artifact_error(path: &Path, message: impl std::fmt::Display) -> PipelineError {
    PipelineError::Artifact {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn stage_error(stage: Stage, message: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage,
        message: message.to_string(),
    }
}

/// Label identifying the call sequence a run will make: clustering-only
/// runs use the clustering track, ground-truth-cluster runs prefix `gt_`,
/// full runs use the track pair.
pub fn run_label(config: &RunConfig, until: Stage) -> String {
    if until <= Stage::Keywords {
        config.run.clustering_track.as_str().to_string()
    } else if config.run.use_gt_clusters {
        format!("gt_{}", config.run.analysis_track.as_str())
    } else {
        config.track_label()
    }
}

/// Resolves the scripted trace path for a run.
pub fn trace_path(config: &RunConfig, window: &DayWindow, until: Stage) -> PathBuf {
    config.paths.traces.join(format!(
        "{}_{}.jsonl",
        run_label(config, until),
        window.id()
    ))
}

/// Builds gateway/gdelt/search handles per the config. `trace_override`
/// replaces the conventional trace path in scripted mode.
pub fn build_handles(
    config: &RunConfig,
    window: &DayWindow,
    until: Stage,
    trace_override: Option<&Path>,
) -> Result<PipelineHandles, PipelineError> {
    let backend: Arc<dyn crate::gateway::ChatBackend> = match config.backend.mode {
        BackendMode::Scripted => {
            let path = trace_override
                .map(Path::to_path_buf)
                .unwrap_or_else(|| trace_path(config, window, until));
            Arc::new(ScriptedBackend::load(&path).map_err(|e| artifact_error(&path, e))?)
        }
        BackendMode::Live => Arc::new(
            LiveBackend::new(LiveBackendConfig {
                base_url: config.backend.base_url.clone(),
                api_key_env: config.backend.api_key_env.clone(),
                temperature: config.backend.temperature,
                timeout_secs: config.backend.timeout_secs,
            })
            .map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))?,
        ),
    };
    let gateway = Gateway::new(
        backend,
        RateCard {
            rates: config.rates.clone(),
        },
        AgentModels(config.models.0.clone()),
    );
    let gdelt: Arc<dyn RecordSource> = if config.paths.gdelt == "http" {
        Arc::new(HttpGdeltSource::new(
            DEFAULT_GDELT_BASE_URL.to_string(),
            &config.paths.cache,
        ))
    } else {
        Arc::new(DirSource::new(PathBuf::from(&config.paths.gdelt)))
    };
    let search: Option<Arc<dyn SearchProvider>> = match config.search.mode {
        SearchMode::Off => None,
        SearchMode::Fixture => Some(Arc::new(
            FixtureSearch::load(&config.search.fixture)
                .map_err(|e| artifact_error(&config.search.fixture, e))?,
        )),
        SearchMode::Live => Some(Arc::new(HttpSearch::new(config.search.base_url.clone()))),
    };
    Ok(PipelineHandles {
        gateway,
        gdelt,
        search,
    })
}

// ---- artifact io ----------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    fs::write(path, text.as_bytes()).map_err(|e| artifact_error(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| artifact_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| artifact_error(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("line serializes"));
        out.push('\n');
    }
    fs::write(path, out.as_bytes()).map_err(|e| artifact_error(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| artifact_error(path, e))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(line)
                .map_err(|e| artifact_error(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(items)
}

pub fn load_alerts(run_dir: &Path) -> Result<Vec<Alert>, PipelineError> {
    read_jsonl(&run_dir.join("alerts.jsonl"))
}

pub fn load_clusters(run_dir: &Path) -> Result<ClusterSet, PipelineError> {
    read_json(&run_dir.join("clusters.json"))
}

pub fn load_keywords(run_dir: &Path) -> Result<BTreeMap<String, KeywordBundle>, PipelineError> {
    read_json(&run_dir.join("keywords.json"))
}

pub fn load_signals(run_dir: &Path) -> Result<BTreeMap<String, GdeltSignals>, PipelineError> {
    read_json(&run_dir.join("gdelt_signals.json"))
}

pub fn load_insights(run_dir: &Path) -> Result<Vec<InsightRecord>, PipelineError> {
    read_jsonl(&run_dir.join("insights.jsonl"))
}

pub fn load_validated(run_dir: &Path) -> Result<Vec<InsightRecord>, PipelineError> {
    read_jsonl(&run_dir.join("validated.jsonl"))
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, PipelineError> {
    read_json(&run_dir.join("manifest.json"))
}

// ---- stages ---------------------------------------------------------------

/// Replays the configured alert journal into the run directory.
pub fn stage_ingest(
    config: &RunConfig,
    window: &DayWindow,
    run_dir: &Path,
) -> Result<Vec<Alert>, PipelineError> {
    let alerts =
        replay_window(&config.paths.alerts, window).map_err(|e| stage_error(Stage::Ingest, e))?;
    write_jsonl(&run_dir.join("alerts.jsonl"), &alerts)?;
    Ok(alerts)
}

/// Clusters the alert batch (or loads trader-assigned clusters), runs the
/// configured reflection track, and writes summaries when the run will
/// reach the analysis stage.
#[allow(clippy::too_many_arguments)]
pub fn stage_cluster(
    config: &RunConfig,
    window: &DayWindow,
    run_dir: &Path,
    alerts: &[Alert],
    handles: &PipelineHandles,
    as_of: UtcTimestamp,
    want_summaries: bool,
) -> Result<(ClusterSet, Option<ReflectionOutcome>, Value), PipelineError> {
    let err = |e: &dyn std::fmt::Display| stage_error(Stage::Cluster, e);
    let mut reflection = None;
    let mut detail = serde_json::json!({});
    let mut set = if config.run.use_gt_clusters {
        let rows = gt::load_gt_clustering(&gt::clustering_path(&config.paths.gt, window))
            .map_err(|e| err(&e))?;
        detail["source"] = Value::String("ground_truth".into());
        gt::clusterset_from_gt(alerts, &rows, window).map_err(|e| err(&e))?
    } else {
        let outcome = cluster::cluster_alerts(alerts, window.time_window(), &handles.gateway)
            .map_err(|e| err(&e))?;
        detail["source"] = Value::String("model".into());
        detail["diagnostics"] = serde_json::to_value(&outcome.diagnostics).expect("serializes");
        let mut set = outcome.set;
        if let Some(mode) = config.run.clustering_track.reflection_mode() {
            let ctx = ReflectContext {
                alerts,
                window: window.time_window(),
                as_of,
                max_iterations: config.limits.clustering_reflection_max,
            };
            let (refined, outcome) =
                reflect_loop(set, &ctx, &handles.gateway, mode, handles.search.as_deref())
                    .map_err(|e| err(&e))?;
            set = refined;
            reflection = Some(outcome);
        }
        set
    };
    if want_summaries {
        for i in 0..set.clusters.len() {
            let cluster = set.clusters[i].clone();
            set.clusters[i].summary = Some(cluster::summarize_cluster(
                &cluster,
                alerts,
                &handles.gateway,
            ));
        }
    }
    set.validate(alerts.len()).map_err(|e| err(&e))?;
    write_json(&run_dir.join("clusters.json"), &set)?;
    Ok((set, reflection, detail))
}

/// Fills in keyword bundles for clusters that lack one and persists the
/// full map.
pub fn stage_keywords(
    run_dir: &Path,
    set: &mut ClusterSet,
    alerts: &[Alert],
    gateway: &Gateway,
) -> Result<BTreeMap<String, KeywordBundle>, PipelineError> {
    let mut bundles = BTreeMap::new();
    for i in 0..set.clusters.len() {
        if set.clusters[i].keywords.is_none() {
            let cluster = set.clusters[i].clone();
            let bundle = cluster::extract_keywords(&cluster, alerts, gateway)
                .map_err(|e| stage_error(Stage::Keywords, e))?;
            set.clusters[i].keywords = Some(bundle);
        }
        bundles.insert(
            set.clusters[i].cluster_id.clone(),
            set.clusters[i].keywords.clone().expect("just filled"),
        );
    }
    write_json(&run_dir.join("keywords.json"), &bundles)?;
    // clusters.json reflects the final bundles for stage-addressable reruns
    write_json(&run_dir.join("clusters.json"), set)?;
    Ok(bundles)
}

/// Fetches the 30-day Events and 4-day GKG windows once, then filters and
/// derives per-cluster signals.
pub fn stage_gdelt(
    run_dir: &Path,
    bundles: &BTreeMap<String, KeywordBundle>,
    cluster_order: &[String],
    source: &dyn RecordSource,
    as_of: UtcTimestamp,
) -> Result<(BTreeMap<String, GdeltSignals>, Vec<ExternalCall>), PipelineError> {
    let err = |e: &dyn std::fmt::Display| stage_error(Stage::Gdelt, e);
    let events_window = TimeWindow {
        start: as_of - days(30),
        end: as_of,
    };
    let gkg_window = TimeWindow {
        start: as_of - days(4),
        end: as_of,
    };
    let calls = vec![
        ExternalCall {
            kind: "gdelt_events".into(),
            window_start: events_window.start,
            window_end: events_window.end,
            as_of,
        },
        ExternalCall {
            kind: "gdelt_gkg".into(),
            window_start: gkg_window.start,
            window_end: gkg_window.end,
            as_of,
        },
    ];
    let events = fetch_events_window(source, &events_window, as_of).map_err(|e| err(&e))?;
    let gkg = fetch_gkg_window(source, &gkg_window, as_of).map_err(|e| err(&e))?;
    let mut signals = BTreeMap::new();
    for cluster_id in cluster_order {
        let bundle = bundles
            .get(cluster_id)
            .ok_or_else(|| err(&format!("no keyword bundle for {cluster_id}")))?;
        let matched_events = filter_events(&events.records, &bundle.actor_pairs);
        let matched_gkg = filter_gkg(&gkg.records, &bundle.gkg_keywords);
        signals.insert(
            cluster_id.clone(),
            crate::gdelt::derive_signals(&matched_events, &matched_gkg, as_of),
        );
    }
    write_json(&run_dir.join("gdelt_signals.json"), &signals)?;
    Ok((signals, calls))
}

/// Runs the configured analysis track and persists records plus CoT
/// transcripts.
pub fn stage_analyze(
    config: &RunConfig,
    run_dir: &Path,
    set: &ClusterSet,
    alerts: &[Alert],
    signals: &BTreeMap<String, GdeltSignals>,
    gateway: &Gateway,
) -> Result<analysis::AnalysisOutcome, PipelineError> {
    let err = |e: &dyn std::fmt::Display| stage_error(Stage::Analyze, e);
    let mut input_bundles = Vec::new();
    for cluster in &set.clusters {
        let cluster_signals = signals
            .get(&cluster.cluster_id)
            .ok_or_else(|| err(&format!("no signals for {}", cluster.cluster_id)))?;
        input_bundles.push(AnalysisInputBundle {
            cluster: cluster.clone(),
            alerts: cluster
                .members
                .iter()
                .filter_map(|m| alerts.get(m.index).cloned())
                .collect(),
            signals: cluster_signals.clone(),
        });
    }
    let outcome = analysis::analyze(
        &input_bundles,
        config.run.analysis_track,
        gateway,
        config.run.max_in_flight,
    )
    .map_err(|e| err(&e))?;
    write_jsonl(&run_dir.join("insights.jsonl"), &outcome.records)?;
    if !outcome.cot_transcripts.is_empty() {
        let cot_dir = run_dir.join("cot");
        fs::create_dir_all(&cot_dir).map_err(|e| artifact_error(&cot_dir, e))?;
        for transcript in &outcome.cot_transcripts {
            let path = cot_dir.join(format!("{}.txt", transcript.cluster_id));
            fs::write(&path, transcript.text.as_bytes()).map_err(|e| artifact_error(&path, e))?;
        }
    }
    Ok(outcome)
}

/// Applies the alignment rubric and persists the validated records.
pub fn stage_validate(
    config: &RunConfig,
    run_dir: &Path,
    records: &[InsightRecord],
) -> Result<(Vec<InsightRecord>, u64, String), PipelineError> {
    let rubric = load_rubric(config)?;
    let (validated, flips) = validate_batch(records, &rubric);
    write_jsonl(&run_dir.join("validated.jsonl"), &validated)?;
    Ok((validated, flips, rubric.version))
}

pub fn load_rubric(config: &RunConfig) -> Result<AlignmentRubric, PipelineError> {
    if config.paths.rubric.as_os_str().is_empty() {
        Ok(AlignmentRubric::default_rubric())
    } else {
        AlignmentRubric::load(&config.paths.rubric)
            .map_err(|e| artifact_error(&config.paths.rubric, e))
    }
}

// ---- orchestrator ---------------------------------------------------------

/// Executes the pipeline through `until` (inclusive), persisting every
/// stage artifact and a deterministic manifest. Stage failures keep all
/// artifacts produced so far and record the failure in the manifest.
pub fn run_pipeline(
    config: &RunConfig,
    window: &DayWindow,
    run_dir: &Path,
    until: Stage,
    trace_override: Option<&Path>,
) -> Result<RunArtifacts, PipelineError> {
    config.validate(true).map_err(PipelineError::Config)?;
    fs::create_dir_all(run_dir).map_err(|e| artifact_error(run_dir, e))?;
    let as_of = config.run.as_of.unwrap_or_else(|| window.end());
    let handles = build_handles(config, window, until, trace_override)?;
    let rubric_version = load_rubric(config)?.version;

    let mut manifest = RunManifest {
        window: window.id(),
        clustering_track: config.run.clustering_track,
        analysis_track: config.run.analysis_track,
        as_of,
        temperature: config.backend.temperature,
        seed_note: config.run.seed_note.clone(),
        rubric_version,
        stages: Vec::new(),
        external_calls: Vec::new(),
        ledger_totals: LedgerTotals::default(),
        reflection: None,
        analysis_incomplete: Vec::new(),
        corrections_applied: 0,
        validator_flips: 0,
        n_clusters: 0,
        config: config.echo(),
    };

    let result = execute_stages(
        config,
        window,
        run_dir,
        until,
        &handles,
        as_of,
        &mut manifest,
    );
    manifest.ledger_totals = handles.gateway.ledger().totals();
    handles
        .gateway
        .ledger()
        .write_jsonl(&run_dir.join("ledger.jsonl"))
        .map_err(|e| artifact_error(&run_dir.join("ledger.jsonl"), e))?;
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    result.map(|()| RunArtifacts {
        run_dir: run_dir.to_path_buf(),
        manifest,
    })
}

#[allow(clippy::too_many_arguments)]
fn execute_stages(
    config: &RunConfig,
    window: &DayWindow,
    run_dir: &Path,
    until: Stage,
    handles: &PipelineHandles,
    as_of: UtcTimestamp,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let completed = |manifest: &mut RunManifest, stage: Stage, detail: Value| {
        manifest.stages.push(StageRecord {
            stage,
            status: StageStatus::Completed,
            detail,
        });
    };
    let fail = |manifest: &mut RunManifest, stage: Stage, e: PipelineError| {
        manifest.stages.push(StageRecord {
            stage,
            status: StageStatus::Failed,
            detail: Value::String(e.to_string()),
        });
        Err(e)
    };
    let skip_rest = |manifest: &mut RunManifest, from: Stage| {
        for stage in Stage::ALL.iter().filter(|s| **s > from) {
            manifest.stages.push(StageRecord {
                stage: *stage,
                status: StageStatus::Skipped,
                detail: Value::Null,
            });
        }
    };

    // ingest
    let alerts = match stage_ingest(config, window, run_dir) {
        Ok(alerts) => alerts,
        Err(e) => return fail(manifest, Stage::Ingest, e),
    };
    completed(
        manifest,
        Stage::Ingest,
        serde_json::json!({"alerts": alerts.len()}),
    );
    if until == Stage::Ingest {
        skip_rest(manifest, Stage::Ingest);
        return Ok(());
    }

    // cluster (+ reflection + summaries when analysis will run)
    let want_summaries = until >= Stage::Analyze;
    let (mut set, reflection, detail) = match stage_cluster(
        config,
        window,
        run_dir,
        &alerts,
        handles,
        as_of,
        want_summaries,
    ) {
        Ok(done) => done,
        Err(e) => return fail(manifest, Stage::Cluster, e),
    };
    manifest.reflection = reflection;
    manifest.n_clusters = set.clusters.len();
    completed(
        manifest,
        Stage::Cluster,
        serde_json::json!({"clusters": set.clusters.len(), "info": detail}),
    );
    if until == Stage::Cluster || set.clusters.is_empty() {
        skip_rest(manifest, Stage::Cluster);
        return Ok(());
    }

    // keywords
    let bundles = match stage_keywords(run_dir, &mut set, &alerts, &handles.gateway) {
        Ok(bundles) => bundles,
        Err(e) => return fail(manifest, Stage::Keywords, e),
    };
    completed(
        manifest,
        Stage::Keywords,
        serde_json::json!({"bundles": bundles.len()}),
    );
    if until == Stage::Keywords {
        skip_rest(manifest, Stage::Keywords);
        return Ok(());
    }

    // gdelt
    let cluster_order: Vec<String> = set.clusters.iter().map(|c| c.cluster_id.clone()).collect();
    let (signals, calls) = match stage_gdelt(
        run_dir,
        &bundles,
        &cluster_order,
        handles.gdelt.as_ref(),
        as_of,
    ) {
        Ok(done) => done,
        Err(e) => return fail(manifest, Stage::Gdelt, e),
    };
    manifest.external_calls.extend(calls);
    completed(
        manifest,
        Stage::Gdelt,
        serde_json::json!({"clusters": signals.len()}),
    );
    if until == Stage::Gdelt {
        skip_rest(manifest, Stage::Gdelt);
        return Ok(());
    }

    // analyze
    let outcome = match stage_analyze(config, run_dir, &set, &alerts, &signals, &handles.gateway) {
        Ok(outcome) => outcome,
        Err(e) => return fail(manifest, Stage::Analyze, e),
    };
    manifest.analysis_incomplete = outcome.incomplete.clone();
    manifest.corrections_applied = outcome.corrections_applied;
    completed(
        manifest,
        Stage::Analyze,
        serde_json::json!({
            "records": outcome.records.len(),
            "incomplete": outcome.incomplete.len(),
            "corrections": outcome.corrections_applied,
        }),
    );
    if until == Stage::Analyze {
        skip_rest(manifest, Stage::Analyze);
        return Ok(());
    }

    // validate
    let (validated, flips, rubric_version) = match stage_validate(config, run_dir, &outcome.records)
    {
        Ok(done) => done,
        Err(e) => return fail(manifest, Stage::Validate, e),
    };
    manifest.validator_flips = flips;
    manifest.rubric_version = rubric_version;
    completed(
        manifest,
        Stage::Validate,
        serde_json::json!({"records": validated.len(), "flips": flips}),
    );
    Ok(())
}
