//! Record sources: a fixture directory for offline runs and the public
//! GDELT v2 15-minute export feed with a local TSV cache.
//!
//! Cache layout: `cache/gdelt/<kind>/<yyyymmddhhmmss>.tsv` — fixtures use
//! the identical layout, so a fixture directory is just a pre-warmed cache.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::time::{minutes, TimeWindow, UtcTimestamp};

use super::GdeltKind;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("gdelt fetch io {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("gdelt fetch http {url}: {message}")]
    Http { url: String, message: String },
    #[error("gdelt zip {url}: {message}")]
    Zip { url: String, message: String },
}

/// One fetched slice of rows.
#[derive(Debug, Clone)]
pub struct SliceFile {
    /// `yyyymmddhhmmss` slice identifier.
    pub slice_id: String,
    pub content: String,
}

/// Abstract source of raw GDELT slices for a time window.
pub trait RecordSource: Send + Sync {
    fn fetch_window_raw(
        &self,
        kind: GdeltKind,
        window: &TimeWindow,
    ) -> Result<Vec<SliceFile>, FetchError>;
}

/// Serves slices from `<root>/<events|gkg>/*.tsv`. Files whose stem parses
/// as a compact timestamp outside the window are skipped; row-level
/// filtering downstream enforces the exact bounds.
pub struct DirSource {
    root: PathBuf,
}

impl DirSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirSource { root: root.into() }
    }
}

impl RecordSource for DirSource {
    fn fetch_window_raw(
        &self,
        kind: GdeltKind,
        window: &TimeWindow,
    ) -> Result<Vec<SliceFile>, FetchError> {
        let dir = self.root.join(kind.dir_name());
        let mut slices = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(source) => {
                return Err(FetchError::Io {
                    path: dir.display().to_string(),
                    source,
                })
            }
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "tsv").unwrap_or(false))
            .collect();
        paths.sort();
        for path in paths {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            // keep files we cannot date; their rows are still window-filtered
            if let Ok(ts) = UtcTimestamp::parse_compact(stem) {
                let slack = minutes(15);
                if ts < window.start - slack || ts > window.end + slack {
                    continue;
                }
            }
            let content = fs::read_to_string(&path).map_err(|source| FetchError::Io {
                path: path.display().to_string(),
                source,
            })?;
            slices.push(SliceFile {
                slice_id: stem.to_string(),
                content,
            });
        }
        Ok(slices)
    }
}

/// Downloads zip-compressed 15-minute export files and caches the
/// decompressed TSV per slice. Cache writes are atomic (tmp + rename) so
/// concurrent fetches of different windows never interleave.
pub struct HttpGdeltSource {
    base_url: String,
    cache_root: PathBuf,
    http: reqwest::blocking::Client,
}

pub const DEFAULT_GDELT_BASE_URL: &str = "http://data.gdeltproject.org/gdeltv2";

impl HttpGdeltSource {
    pub fn new(base_url: String, cache_root: impl Into<PathBuf>) -> Self {
        HttpGdeltSource {
            base_url,
            cache_root: cache_root.into(),
            http: reqwest::blocking::Client::new(),
        }
    }

    fn slice_ids(window: &TimeWindow) -> Vec<String> {
        // slices land every 15 minutes; round the start down and walk up
        let mut ids = Vec::new();
        let start = window.start.unix() / 900 * 900;
        let mut t = start;
        while t <= window.end.unix() {
            ids.push(UtcTimestamp::from_unix(t).to_compact());
            t += 900;
        }
        ids
    }

    fn cache_path(&self, kind: GdeltKind, slice_id: &str) -> PathBuf {
        self.cache_root
            .join("gdelt")
            .join(kind.dir_name())
            .join(format!("{slice_id}.tsv"))
    }

    fn download_slice(&self, kind: GdeltKind, slice_id: &str) -> Result<String, FetchError> {
        let url = format!(
            "{}/{slice_id}.{}.CSV.zip",
            self.base_url.trim_end_matches('/'),
            kind.url_infix()
        );
        let response = self.http.get(&url).send().map_err(|e| FetchError::Http {
            url: url.clone(),
            message: e.to_string(),
        })?;
        if !response.status().is_success() {
            return Err(FetchError::Http {
                url: url.clone(),
                message: format!("status {}", response.status()),
            });
        }
        let bytes = response.bytes().map_err(|e| FetchError::Http {
            url: url.clone(),
            message: e.to_string(),
        })?;
        let cursor = std::io::Cursor::new(bytes.as_ref());
        let mut archive = zip::ZipArchive::new(cursor).map_err(|e| FetchError::Zip {
            url: url.clone(),
            message: e.to_string(),
        })?;
        let mut file = archive.by_index(0).map_err(|e| FetchError::Zip {
            url: url.clone(),
            message: e.to_string(),
        })?;
        let mut content = String::new();
        file.read_to_string(&mut content)
            .map_err(|e| FetchError::Zip {
                url,
                message: e.to_string(),
            })?;
        Ok(content)
    }

    fn slice(&self, kind: GdeltKind, slice_id: &str) -> Result<Option<SliceFile>, FetchError> {
        let cache_path = self.cache_path(kind, slice_id);
        if cache_path.exists() {
            let content = fs::read_to_string(&cache_path).map_err(|source| FetchError::Io {
                path: cache_path.display().to_string(),
                source,
            })?;
            return Ok(Some(SliceFile {
                slice_id: slice_id.to_string(),
                content,
            }));
        }
        let content = match self.download_slice(kind, slice_id) {
            Ok(content) => content,
            Err(FetchError::Http { message, url }) if message.contains("404") => {
                log::debug!("no slice at {url}; skipping");
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        write_atomic(&cache_path, &content)?;
        Ok(Some(SliceFile {
            slice_id: slice_id.to_string(),
            content,
        }))
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<(), FetchError> {
    let io_err = |source| FetchError::Io {
        path: path.display().to_string(),
        source,
    };
    let parent = path.parent().expect("cache path has parent");
    fs::create_dir_all(parent).map_err(io_err)?;
    let tmp = path.with_extension("tsv.tmp");
    fs::write(&tmp, content).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

impl RecordSource for HttpGdeltSource {
    fn fetch_window_raw(
        &self,
        kind: GdeltKind,
        window: &TimeWindow,
    ) -> Result<Vec<SliceFile>, FetchError> {
        let mut slices = Vec::new();
        for slice_id in Self::slice_ids(window) {
            if let Some(slice) = self.slice(kind, &slice_id)? {
                slices.push(slice);
            }
        }
        Ok(slices)
    }
}
