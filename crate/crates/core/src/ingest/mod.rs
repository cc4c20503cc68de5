//! Trigger and collection: watches a market event stream, fires alerts on
//! anomaly rules, and journals them durably before acknowledgment.
//!
//! The two rules:
//! * price_shock — |price now − price at window start| ≥ threshold within
//!   the rolling window; firing resets the market's baseline so a sustained
//!   move emits one alert per crossing, not one per tick.
//! * whale_buy — a single trade at or above the USD threshold; enriched
//!   with the trader's profile when the profile source answers.

pub mod journal;
pub mod polymarket;

use std::collections::HashMap;
use std::collections::VecDeque;
use std::time::Duration as StdDuration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Alert, AlertKind, ModelError, OutcomeSide, WhaleProfile};
use crate::time::{minutes, UtcTimestamp};

pub use journal::{replay_fixture, replay_window, AlertJournal};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("journal {path} line {line}: {message}")]
    MalformedRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("journal io {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("stream disconnected and reconnect attempts exhausted: {0}")]
    ReconnectExhausted(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("stream disconnected: {0}")]
    Disconnected(String),
    #[error("stream protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("profile fetch failed for {trader}: {message}")]
pub struct ProfileFetchFailed {
    pub trader: String,
    pub message: String,
}

/// Anomaly rule thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    /// Absolute probability move that fires a price_shock.
    pub price_delta_threshold: f64,
    /// Trade size in USD that fires a whale_buy.
    pub whale_usd_threshold: f64,
    /// Rolling window (minutes) over which the delta is computed.
    pub window_minutes: i64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            price_delta_threshold: 0.05,
            whale_usd_threshold: 10_000.0,
            window_minutes: 15,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.price_delta_threshold <= 0.0 {
            return Err(format!(
                "price_delta_threshold {} must be > 0",
                self.price_delta_threshold
            ));
        }
        if self.whale_usd_threshold <= 0.0 {
            return Err(format!(
                "whale_usd_threshold {} must be > 0",
                self.whale_usd_threshold
            ));
        }
        if self.window_minutes <= 0 {
            return Err(format!(
                "window_minutes {} must be > 0",
                self.window_minutes
            ));
        }
        Ok(())
    }
}

/// One timestamped trade/price tick for a market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketEvent {
    pub market_id: String,
    pub market_title: String,
    pub outcome_side: OutcomeSide,
    pub price: f64,
    /// Trade notional in USD; absent for pure price ticks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trade_usd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trader_id: Option<String>,
    pub at: UtcTimestamp,
}

/// Source of market events: live WebSocket or a fixture file.
pub trait MarketStream {
    /// Next event; `Ok(None)` means the stream ended cleanly.
    fn next_event(&mut self) -> Result<Option<MarketEvent>, StreamError>;
    fn reconnect(&mut self) -> Result<(), StreamError>;
}

/// Whale trader-history lookup.
pub trait ProfileSource {
    fn fetch_profile(&self, trader_id: &str) -> Result<WhaleProfile, ProfileFetchFailed>;
}

/// Reconnect/backoff policy, separate from the anomaly thresholds.
#[derive(Debug, Clone, Copy)]
pub struct MonitorOptions {
    pub max_reconnect_attempts: u32,
    pub reconnect_base_delay: StdDuration,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        MonitorOptions {
            max_reconnect_attempts: 5,
            reconnect_base_delay: StdDuration::from_millis(250),
        }
    }
}

/// Counters from one monitor session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub events_seen: u64,
    pub alerts_emitted: u64,
    pub price_shocks: u64,
    pub whale_buys: u64,
    pub profile_failures: u64,
    pub reconnects: u64,
}

struct PriceHistory {
    ticks: VecDeque<(UtcTimestamp, f64)>,
}

impl PriceHistory {
    fn new() -> Self {
        PriceHistory {
            ticks: VecDeque::new(),
        }
    }

    /// Drops ticks older than the window, appends the new one, and returns
    /// the delta against the oldest retained tick.
    fn push(&mut self, at: UtcTimestamp, price: f64, window_minutes: i64) -> f64 {
        let cutoff = at - minutes(window_minutes);
        while let Some((ts, _)) = self.ticks.front() {
            if *ts < cutoff {
                self.ticks.pop_front();
            } else {
                break;
            }
        }
        let baseline = self.ticks.front().map(|(_, p)| *p).unwrap_or(price);
        self.ticks.push_back((at, price));
        price - baseline
    }

    fn reset_to(&mut self, at: UtcTimestamp, price: f64) {
        self.ticks.clear();
        self.ticks.push_back((at, price));
    }
}

/// Consumes `stream` until it ends, appending every fired alert to the
/// journal before moving on. Stream disconnects trigger bounded exponential
/// reconnects; profile-fetch failures degrade the alert rather than drop it.
pub fn monitor<S: MarketStream, P: ProfileSource>(
    stream: &mut S,
    profiles: &P,
    config: &TriggerConfig,
    journal: &mut AlertJournal,
    options: &MonitorOptions,
) -> Result<MonitorReport, IngestError> {
    config
        .validate()
        .map_err(|message| IngestError::MalformedRecord {
            path: "<config>".into(),
            line: 0,
            message,
        })?;
    let mut report = MonitorReport::default();
    let mut histories: HashMap<String, PriceHistory> = HashMap::new();
    let mut alert_seq: u64 = 0;
    loop {
        let event = match stream.next_event() {
            Ok(Some(event)) => event,
            Ok(None) => break,
            Err(StreamError::Disconnected(reason)) => {
                reconnect_with_backoff(stream, options, &reason, &mut report)?;
                continue;
            }
            Err(StreamError::Protocol(reason)) => {
                log::warn!("skipping undecodable stream message: {reason}");
                continue;
            }
        };
        report.events_seen += 1;
        for alert in evaluate_event(
            &event,
            config,
            profiles,
            &mut histories,
            &mut alert_seq,
            &mut report,
        ) {
            journal.append(&alert).map_err(|source| IngestError::Io {
                path: journal.path_display(),
                source,
            })?;
            report.alerts_emitted += 1;
        }
    }
    Ok(report)
}

fn reconnect_with_backoff<S: MarketStream>(
    stream: &mut S,
    options: &MonitorOptions,
    reason: &str,
    report: &mut MonitorReport,
) -> Result<(), IngestError> {
    let mut delay = options.reconnect_base_delay;
    for attempt in 1..=options.max_reconnect_attempts {
        log::warn!("stream disconnected ({reason}); reconnect attempt {attempt} in {delay:?}");
        std::thread::sleep(delay);
        match stream.reconnect() {
            Ok(()) => {
                report.reconnects += 1;
                return Ok(());
            }
            Err(e) => log::warn!("reconnect attempt {attempt} failed: {e}"),
        }
        delay = delay.saturating_mul(2);
    }
    Err(IngestError::ReconnectExhausted(reason.to_string()))
}

/// Applies both rules to one event. A tick can fire at most one price_shock
/// and one whale_buy (a huge trade that also moves price yields both).
fn evaluate_event<P: ProfileSource>(
    event: &MarketEvent,
    config: &TriggerConfig,
    profiles: &P,
    histories: &mut HashMap<String, PriceHistory>,
    alert_seq: &mut u64,
    report: &mut MonitorReport,
) -> Vec<Alert> {
    let mut alerts = Vec::new();
    let history = histories
        .entry(event.market_id.clone())
        .or_insert_with(PriceHistory::new);
    let delta = history.push(event.at, event.price, config.window_minutes);
    if delta.abs() >= config.price_delta_threshold {
        history.reset_to(event.at, event.price);
        *alert_seq += 1;
        report.price_shocks += 1;
        alerts.push(Alert {
            alert_id: format!("ps-{:06}", alert_seq),
            market_title: event.market_title.clone(),
            outcome_side: event.outcome_side,
            alert_kind: AlertKind::PriceShock,
            price: event.price,
            delta,
            whale_usd: None,
            whale_profile: None,
            observed_at: event.at,
        });
    }
    if let Some(trade_usd) = event.trade_usd {
        if trade_usd >= config.whale_usd_threshold {
            let whale_profile = match &event.trader_id {
                Some(trader) => match profiles.fetch_profile(trader) {
                    Ok(profile) => Some(profile),
                    Err(e) => {
                        report.profile_failures += 1;
                        log::warn!("emitting whale_buy without profile: {e}");
                        None
                    }
                },
                None => None,
            };
            *alert_seq += 1;
            report.whale_buys += 1;
            alerts.push(Alert {
                alert_id: format!("wb-{:06}", alert_seq),
                market_title: event.market_title.clone(),
                outcome_side: event.outcome_side,
                alert_kind: AlertKind::WhaleBuy,
                price: event.price,
                delta,
                whale_usd: Some(trade_usd),
                whale_profile,
                observed_at: event.at,
            });
        }
    }
    alerts
}
