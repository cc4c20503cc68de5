//! Token and cost accounting for agent calls.
//!
//! Every backend call appends one entry — retries included, so the ledger
//! total is the true spend. Costs follow the per-million-token rate card:
//! `cost = (input·rate_in + output·rate_out) / 1e6`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("rate card {path}: {source}")]
    RateCardRead {
        path: String,
        source: std::io::Error,
    },
    #[error("rate card {path}: {message}")]
    RateCardParse { path: String, message: String },
    #[error("ledger io: {0}")]
    Io(#[from] std::io::Error),
}

/// One accounted backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageLedgerEntry {
    pub agent_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub wall_ms: u64,
    pub cost_usd: f64,
}

/// Per-million-token pricing for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelRates {
    pub input: f64,
    pub output: f64,
}

/// Exact cost in USD for a call under `rates`.
pub fn cost_of(input_tokens: u64, output_tokens: u64, rates: ModelRates) -> f64 {
    (input_tokens as f64 * rates.input + output_tokens as f64 * rates.output) / 1_000_000.0
}

/// Model name → per-million-token rates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCard {
    #[serde(default)]
    pub rates: BTreeMap<String, ModelRates>,
}

impl RateCard {
    pub fn load(path: &Path) -> Result<Self, LedgerError> {
        let text = fs::read_to_string(path).map_err(|source| LedgerError::RateCardRead {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| LedgerError::RateCardParse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Unpriced models cost zero (logged once per lookup).
    pub fn rates_for(&self, model: &str) -> ModelRates {
        match self.rates.get(model) {
            Some(r) => *r,
            None => {
                log::warn!("no rates configured for model {model:?}; costing 0");
                ModelRates {
                    input: 0.0,
                    output: 0.0,
                }
            }
        }
    }
}

/// Sum over ledger entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub wall_ms: u64,
    pub cost_usd: f64,
}

/// Append-only concurrent sink of [`UsageLedgerEntry`] values.
#[derive(Debug, Clone, Default)]
pub struct UsageLedger {
    entries: Arc<Mutex<Vec<UsageLedgerEntry>>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, entry: UsageLedgerEntry) {
        self.entries.lock().expect("ledger poisoned").push(entry);
    }

    pub fn entries(&self) -> Vec<UsageLedgerEntry> {
        self.entries.lock().expect("ledger poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("ledger poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn totals(&self) -> LedgerTotals {
        let entries = self.entries.lock().expect("ledger poisoned");
        let mut totals = LedgerTotals::default();
        for e in entries.iter() {
            totals.calls += 1;
            totals.input_tokens += e.input_tokens;
            totals.output_tokens += e.output_tokens;
            totals.wall_ms += e.wall_ms;
            totals.cost_usd += e.cost_usd;
        }
        totals.total_tokens = totals.input_tokens + totals.output_tokens;
        totals
    }

    /// Writes one canonical-JSON entry per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), LedgerError> {
        let entries = self.entries();
        let mut out = Vec::new();
        for entry in &entries {
            serde_json::to_writer(&mut out, entry).expect("entry serializes");
            out.push(b'\n');
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }
}
