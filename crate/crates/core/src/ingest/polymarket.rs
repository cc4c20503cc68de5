//! Live Polymarket connectivity: market-data WebSocket plus the REST
//! metadata endpoint, implementing [`MarketStream`] / [`ProfileSource`] so
//! fixtures substitute cleanly everywhere else.

use std::collections::HashMap;
use std::net::TcpStream;

use serde::Deserialize;
use serde_json::Value;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message, WebSocket};

use crate::model::{OutcomeSide, WhaleProfile};
use crate::time::UtcTimestamp;

use super::{MarketEvent, MarketStream, ProfileFetchFailed, ProfileSource, StreamError};

/// Connection settings for the public market-data feed.
#[derive(Debug, Clone)]
pub struct PolymarketWsConfig {
    /// e.g. `wss://ws-subscriptions-clob.polymarket.com/ws/market`
    pub ws_url: String,
    /// REST base for market metadata (token -> title/side resolution).
    pub metadata_base_url: String,
    /// CLOB token ids to subscribe to.
    pub asset_ids: Vec<String>,
}

/// Market metadata resolved once per asset id.
#[derive(Debug, Clone)]
struct AssetMeta {
    title: String,
    side: OutcomeSide,
}

pub struct PolymarketWsStream {
    config: PolymarketWsConfig,
    socket: Option<WebSocket<MaybeTlsStream<TcpStream>>>,
    meta: HashMap<String, AssetMeta>,
    http: reqwest::blocking::Client,
    pending: Vec<MarketEvent>,
}

impl PolymarketWsStream {
    pub fn new(config: PolymarketWsConfig) -> Self {
        PolymarketWsStream {
            config,
            socket: None,
            meta: HashMap::new(),
            http: reqwest::blocking::Client::new(),
            pending: Vec::new(),
        }
    }

    fn connect_and_subscribe(&mut self) -> Result<(), StreamError> {
        let (mut socket, _) =
            connect(&self.config.ws_url).map_err(|e| StreamError::Disconnected(e.to_string()))?;
        let subscribe = serde_json::json!({
            "type": "market",
            "assets_ids": self.config.asset_ids,
        });
        socket
            .send(Message::Text(subscribe.to_string()))
            .map_err(|e| StreamError::Disconnected(e.to_string()))?;
        self.socket = Some(socket);
        Ok(())
    }

    fn meta_for(&mut self, asset_id: &str) -> AssetMeta {
        if let Some(meta) = self.meta.get(asset_id) {
            return meta.clone();
        }
        let resolved = self.fetch_meta(asset_id).unwrap_or_else(|e| {
            log::warn!("metadata lookup failed for {asset_id}: {e}; using placeholder");
            AssetMeta {
                title: format!("market {asset_id}"),
                side: OutcomeSide::Yes,
            }
        });
        self.meta.insert(asset_id.to_string(), resolved.clone());
        resolved
    }

    fn fetch_meta(&self, asset_id: &str) -> Result<AssetMeta, String> {
        let url = format!(
            "{}/markets?clob_token_ids={asset_id}",
            self.config.metadata_base_url.trim_end_matches('/')
        );
        let body: Value = self
            .http
            .get(&url)
            .send()
            .map_err(|e| e.to_string())?
            .json()
            .map_err(|e| e.to_string())?;
        let market = body
            .as_array()
            .and_then(|a| a.first())
            .ok_or("empty metadata response")?;
        let title = market
            .get("question")
            .and_then(Value::as_str)
            .ok_or("metadata missing question")?
            .to_string();
        let token_ids: Vec<String> = market
            .get("clobTokenIds")
            .map(parse_string_list)
            .unwrap_or_default();
        let side = match token_ids.iter().position(|t| t == asset_id) {
            Some(1) => OutcomeSide::No,
            _ => OutcomeSide::Yes,
        };
        Ok(AssetMeta { title, side })
    }
}

/// Gamma encodes list fields either as JSON arrays or as stringified JSON.
fn parse_string_list(value: &Value) -> Vec<String> {
    match value {
        Value::Array(items) => items
            .iter()
            .filter_map(Value::as_str)
            .map(str::to_string)
            .collect(),
        Value::String(s) => serde_json::from_str::<Vec<String>>(s).unwrap_or_default(),
        _ => Vec::new(),
    }
}

/// Parses one market-channel payload into zero or more events. Payloads are
/// single objects or arrays of `{event_type, asset_id, price, size, timestamp}`
/// with numbers encoded as strings.
pub fn parse_ws_payload(text: &str) -> Result<Vec<RawWsEvent>, StreamError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| StreamError::Protocol(e.to_string()))?;
    let items: Vec<Value> = match value {
        Value::Array(items) => items,
        other => vec![other],
    };
    let mut events = Vec::new();
    for item in items {
        let Some(event_type) = item.get("event_type").and_then(Value::as_str) else {
            continue;
        };
        if event_type != "last_trade_price" && event_type != "price_change" {
            continue;
        }
        let event: RawWsEvent =
            serde_json::from_value(item).map_err(|e| StreamError::Protocol(e.to_string()))?;
        events.push(event);
    }
    Ok(events)
}

#[derive(Debug, Clone, Deserialize)]
pub struct RawWsEvent {
    pub event_type: String,
    pub asset_id: String,
    pub price: String,
    #[serde(default)]
    pub size: Option<String>,
    /// Milliseconds since epoch, stringified.
    pub timestamp: String,
}

impl RawWsEvent {
    fn price_f64(&self) -> Result<f64, StreamError> {
        self.price
            .parse()
            .map_err(|_| StreamError::Protocol(format!("price {:?}", self.price)))
    }

    fn at(&self) -> Result<UtcTimestamp, StreamError> {
        let ms: i64 = self
            .timestamp
            .parse()
            .map_err(|_| StreamError::Protocol(format!("timestamp {:?}", self.timestamp)))?;
        Ok(UtcTimestamp::from_unix(ms / 1000))
    }

    /// Trade notional in USD: shares * price (binary shares settle at $1).
    fn notional(&self, price: f64) -> Option<f64> {
        if self.event_type != "last_trade_price" {
            return None;
        }
        self.size
            .as_deref()
            .and_then(|s| s.parse::<f64>().ok())
            .map(|shares| shares * price)
    }
}

impl MarketStream for PolymarketWsStream {
    fn next_event(&mut self) -> Result<Option<MarketEvent>, StreamError> {
        loop {
            if let Some(event) = self.pending.pop() {
                return Ok(Some(event));
            }
            if self.socket.is_none() {
                self.connect_and_subscribe()?;
            }
            let message = {
                let socket = self.socket.as_mut().expect("socket just connected");
                socket.read().map_err(|e| {
                    self.socket = None;
                    StreamError::Disconnected(e.to_string())
                })?
            };
            let text = match message {
                Message::Text(text) => text,
                Message::Ping(_) | Message::Pong(_) => continue,
                Message::Close(_) => {
                    self.socket = None;
                    return Err(StreamError::Disconnected("server closed".into()));
                }
                _ => continue,
            };
            let raw_events = match parse_ws_payload(&text) {
                Ok(events) => events,
                Err(e) => {
                    log::warn!("skipping undecodable ws payload: {e}");
                    continue;
                }
            };
            for raw in raw_events.into_iter().rev() {
                let price = raw.price_f64()?;
                let at = raw.at()?;
                let meta = self.meta_for(&raw.asset_id);
                self.pending.push(MarketEvent {
                    market_id: raw.asset_id.clone(),
                    market_title: meta.title,
                    outcome_side: meta.side,
                    price,
                    trade_usd: raw.notional(price),
                    trader_id: None,
                    at,
                });
            }
        }
    }

    fn reconnect(&mut self) -> Result<(), StreamError> {
        self.socket = None;
        self.connect_and_subscribe()
    }
}

/// Trader-history lookup over a REST endpoint returning
/// `{name, win_rate, pnl, trades, position_usd}`.
pub struct RestProfileSource {
    pub base_url: String,
    http: reqwest::blocking::Client,
}

impl RestProfileSource {
    pub fn new(base_url: String) -> Self {
        RestProfileSource {
            base_url,
            http: reqwest::blocking::Client::new(),
        }
    }
}

impl ProfileSource for RestProfileSource {
    fn fetch_profile(&self, trader_id: &str) -> Result<WhaleProfile, ProfileFetchFailed> {
        let url = format!(
            "{}/profile/{trader_id}",
            self.base_url.trim_end_matches('/')
        );
        let fail = |message: String| ProfileFetchFailed {
            trader: trader_id.to_string(),
            message,
        };
        let profile: WhaleProfile = self
            .http
            .get(&url)
            .send()
            .map_err(|e| fail(e.to_string()))?
            .json()
            .map_err(|e| fail(e.to_string()))?;
        profile.validate().map_err(|e| fail(e.to_string()))?;
        Ok(profile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trade_payload_parses() {
        let text = r#"[{"event_type":"last_trade_price","asset_id":"0xabc","price":"0.62","size":"200000","timestamp":"1774328400000","side":"BUY"}]"#;
        let events = parse_ws_payload(text).unwrap();
        assert_eq!(events.len(), 1);
        let raw = &events[0];
        assert_eq!(raw.price_f64().unwrap(), 0.62);
        assert_eq!(raw.notional(0.62).unwrap(), 124_000.0);
        assert_eq!(raw.at().unwrap().to_string(), "2026-03-24T05:00:00Z");
    }

    #[test]
    fn non_market_payloads_are_skipped() {
        let events = parse_ws_payload(r#"{"event_type":"book","asset_id":"0xabc"}"#).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn garbage_is_a_protocol_error() {
        assert!(matches!(
            parse_ws_payload("not json"),
            Err(StreamError::Protocol(_))
        ));
    }

    #[test]
    fn string_list_both_encodings() {
        let a = serde_json::json!(["t1", "t2"]);
        let s = serde_json::json!("[\"t1\", \"t2\"]");
        assert_eq!(parse_string_list(&a), vec!["t1", "t2"]);
        assert_eq!(parse_string_list(&s), vec!["t1", "t2"]);
    }
}
