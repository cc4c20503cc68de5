//! Declarative run configuration.
//!
//! One TOML file carries the full non-secret configuration; secrets enter
//! only through the env vars it names. The manifest embeds the config so a
//! run directory is self-describing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisTrack;
use crate::gateway::{AgentModels, ModelRates, RateCard};
use crate::ingest::TriggerConfig;
use crate::reflect::ReflectionMode;
use crate::time::UtcTimestamp;

/// Reflection bounds fixed by the supported experiment designs.
pub const CLUSTERING_REFLECTION_BOUND: u32 = 3;
pub const ANALYSIS_REFLECTION_BOUND: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config invalid: {0}")]
    Invalid(String),
    #[error(
        "reflection bounds ({clustering}, {analysis}) differ from the supported (3, 1); \
         pass --unsafe-bounds to override"
    )]
    UnsafeBounds { clustering: u32, analysis: u32 },
}

/// Harness used by the clustering stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringTrack {
    Direct,
    Reflect,
    ReflectTool,
}

impl ClusteringTrack {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClusteringTrack::Direct => "direct",
            ClusteringTrack::Reflect => "reflect",
            ClusteringTrack::ReflectTool => "reflect_tool",
        }
    }

    pub fn reflection_mode(&self) -> Option<ReflectionMode> {
        match self {
            ClusteringTrack::Direct => None,
            ClusteringTrack::Reflect => Some(ReflectionMode::Internal),
            ClusteringTrack::ReflectTool => Some(ReflectionMode::ToolCalling),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub clustering_track: ClusteringTrack,
    pub analysis_track: AnalysisTrack,
    /// Hard temporal bound; `None` means each window's end.
    pub as_of: Option<UtcTimestamp>,
    pub max_in_flight: usize,
    pub seed_note: String,
    /// Hold the clustering stage constant by loading trader-assigned
    /// clusters instead of calling the model.
    pub use_gt_clusters: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            clustering_track: ClusteringTrack::Direct,
            analysis_track: AnalysisTrack::Dnc,
            as_of: None,
            max_in_flight: 1,
            seed_note: String::new(),
            use_gt_clusters: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitsSection {
    pub clustering_reflection_max: u32,
    pub analysis_reflection_max: u32,
}

impl Default for LimitsSection {
    fn default() -> Self {
        LimitsSection {
            clustering_reflection_max: CLUSTERING_REFLECTION_BOUND,
            analysis_reflection_max: ANALYSIS_REFLECTION_BOUND,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Scripted,
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    pub mode: BackendMode,
    pub base_url: String,
    pub api_key_env: String,
    pub temperature: Option<f64>,
    pub timeout_secs: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            mode: BackendMode::Scripted,
            base_url: String::new(),
            api_key_env: "LLM_API_KEY".into(),
            temperature: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Off,
    Fixture,
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    pub mode: SearchMode,
    pub fixture: PathBuf,
    pub base_url: String,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            mode: SearchMode::Off,
            fixture: PathBuf::new(),
            base_url: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Stub,
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    pub mode: EmbeddingMode,
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            mode: EmbeddingMode::Stub,
            base_url: String::new(),
            model: String::new(),
            api_key_env: None,
        }
    }
}

/// Where a run finds its inputs and puts its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    /// Alert journal (JSONL) replayed in fixture mode.
    pub alerts: PathBuf,
    /// GDELT source: a fixture/cache directory, or "http" for the live feed.
    pub gdelt: String,
    /// Cache root for live GDELT downloads.
    pub cache: PathBuf,
    /// Directory of scripted trace files `<ctrack>_<atrack>_<window>.jsonl`.
    pub traces: PathBuf,
    /// Ground-truth directory (clustering_*.csv, labels_*.csv).
    pub gt: PathBuf,
    /// Run-directory root.
    pub out: PathBuf,
    /// Alignment rubric table; empty = built-in default rubric.
    pub rubric: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            alerts: PathBuf::from("fixtures/alerts/demo.jsonl"),
            gdelt: "fixtures/gdelt".into(),
            cache: PathBuf::from("cache"),
            traces: PathBuf::from("fixtures/traces"),
            gt: PathBuf::from("fixtures/gt"),
            out: PathBuf::from("out"),
            rubric: PathBuf::new(),
        }
    }
}

/// Live market connectivity (used only by `ingest --live`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PolymarketSection {
    pub ws_url: String,
    pub metadata_base_url: String,
    /// Trader-history endpoint; empty disables whale enrichment.
    pub profile_base_url: String,
    pub asset_ids: Vec<String>,
}

impl Default for PolymarketSection {
    fn default() -> Self {
        PolymarketSection {
            ws_url: "wss://ws-subscriptions-clob.polymarket.com/ws/market".into(),
            metadata_base_url: "https://gamma-api.polymarket.com".into(),
            profile_base_url: String::new(),
            asset_ids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub limits: LimitsSection,
    pub trigger: TriggerConfig,
    pub models: AgentModels,
    pub rates: BTreeMap<String, ModelRates>,
    pub paths: PathsSection,
    pub backend: BackendSection,
    pub search: SearchSection,
    pub embedding: EmbeddingSection,
    pub polymarket: PolymarketSection,
}

impl RunConfig {
    pub fn load(path: &Path, unsafe_bounds: bool) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate(unsafe_bounds)?;
        Ok(config)
    }

    pub fn validate(&self, unsafe_bounds: bool) -> Result<(), ConfigError> {
        self.trigger.validate().map_err(ConfigError::Invalid)?;
        let bounds_ok = self.limits.clustering_reflection_max == CLUSTERING_REFLECTION_BOUND
            && self.limits.analysis_reflection_max == ANALYSIS_REFLECTION_BOUND;
        if !bounds_ok && !unsafe_bounds {
            return Err(ConfigError::UnsafeBounds {
                clustering: self.limits.clustering_reflection_max,
                analysis: self.limits.analysis_reflection_max,
            });
        }
        if self.backend.mode == BackendMode::Live && self.backend.base_url.is_empty() {
            return Err(ConfigError::Invalid(
                "live backend requires base_url".into(),
            ));
        }
        Ok(())
    }

    pub fn rate_card(&self) -> RateCard {
        RateCard {
            rates: self.rates.clone(),
        }
    }

    /// Track pair label used in trace file names and run directories.
    pub fn track_label(&self) -> String {
        format!(
            "{}_{}",
            self.run.clustering_track.as_str(),
            self.run.analysis_track.as_str()
        )
    }

    /// Serialized config embedded in run manifests.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
