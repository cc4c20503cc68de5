//! Uniform chat-completion layer: template rendering, backend dispatch,
//! JSON extraction with one repair round-trip, and usage accounting.

pub mod backend;
pub mod extract;
pub mod ledger;
pub mod template;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

pub use backend::{
    BackendError, BackendReply, CallSpec, ChatBackend, LiveBackend, LiveBackendConfig,
    ScriptedBackend, TraceEntry,
};
pub use extract::{extract_payload, extract_trailing_object, ExpectedShape, ExtractError};
pub use ledger::{cost_of, LedgerTotals, ModelRates, RateCard, UsageLedger, UsageLedgerEntry};
pub use template::{TemplateError, TemplateId};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("extraction failed for {template} after repair retry: {first}; retry: {second}")]
    ExtractionFailed {
        template: TemplateId,
        first: String,
        second: String,
    },
}

impl GatewayError {
    /// True when the failure is a missing/invalid payload rather than
    /// transport trouble.
    pub fn is_extraction(&self) -> bool {
        matches!(self, GatewayError::ExtractionFailed { .. })
    }
}

/// Result of one logical completion (repair calls folded in).
#[derive(Debug, Clone)]
pub struct Completion<T> {
    pub raw: String,
    pub value: T,
    /// Ledger entries this completion appended (1, or 2 after a repair).
    pub entries: Vec<UsageLedgerEntry>,
}

/// Maps agent roles to model names for pricing and live dispatch.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentModels(pub BTreeMap<String, String>);

impl AgentModels {
    pub fn model_for(&self, agent_id: &str) -> String {
        self.0
            .get(agent_id)
            .cloned()
            .or_else(|| self.0.get("default").cloned())
            .unwrap_or_else(|| "default".to_string())
    }
}

/// Shared handle the agents use for every model call.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    ledger: UsageLedger,
    rate_card: RateCard,
    models: AgentModels,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, rate_card: RateCard, models: AgentModels) -> Self {
        Gateway {
            backend,
            ledger: UsageLedger::new(),
            rate_card,
            models,
        }
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn is_deterministic(&self) -> bool {
        self.backend.is_deterministic()
    }

    /// Renders `template`, appends `addon` when given, runs the backend once
    /// and accounts the call.
    fn invoke(
        &self,
        template: TemplateId,
        prompt: String,
    ) -> Result<(String, UsageLedgerEntry), GatewayError> {
        let agent_id = template.agent_id().to_string();
        let model = self.models.model_for(&agent_id);
        let call = CallSpec {
            template,
            agent_id: agent_id.clone(),
            model: model.clone(),
            prompt,
        };
        let reply = self.backend.complete(&call)?;
        let rates = self.rate_card.rates_for(&model);
        let entry = UsageLedgerEntry {
            agent_id,
            input_tokens: reply.input_tokens,
            output_tokens: reply.output_tokens,
            wall_ms: reply.wall_ms,
            cost_usd: cost_of(reply.input_tokens, reply.output_tokens, rates),
        };
        self.ledger.append(entry.clone());
        Ok((reply.text, entry))
    }

    fn render(
        template: TemplateId,
        bindings: &[(&str, String)],
        addon: Option<&str>,
    ) -> Result<String, GatewayError> {
        let mut prompt = template.render(bindings)?;
        if let Some(extra) = addon {
            prompt.push_str("\n\n");
            prompt.push_str(extra);
        }
        Ok(prompt)
    }

    /// Plain-text completion: no JSON extraction, no repair.
    pub fn complete_text(
        &self,
        template: TemplateId,
        bindings: &[(&str, String)],
        addon: Option<&str>,
    ) -> Result<Completion<String>, GatewayError> {
        let prompt = Self::render(template, bindings, addon)?;
        let (raw, entry) = self.invoke(template, prompt)?;
        let value = raw.trim().to_string();
        Ok(Completion {
            raw,
            value,
            entries: vec![entry],
        })
    }

    /// JSON completion with schema validation and one repair round-trip.
    ///
    /// The repair call re-sends the original prompt with the malformed
    /// response and `schema_hint` appended; it consumes the next trace
    /// ordinal in scripted mode and appends its own ledger entry.
    pub fn complete_typed<T: DeserializeOwned>(
        &self,
        template: TemplateId,
        bindings: &[(&str, String)],
        addon: Option<&str>,
        shape: ExpectedShape,
        schema_hint: &str,
    ) -> Result<Completion<T>, GatewayError> {
        let prompt = Self::render(template, bindings, addon)?;
        let (raw, entry) = self.invoke(template, prompt.clone())?;
        let first_err = match decode::<T>(&raw, shape) {
            Ok(value) => {
                return Ok(Completion {
                    raw,
                    value,
                    entries: vec![entry],
                })
            }
            Err(e) => e,
        };
        log::warn!("{template}: response failed to decode ({first_err}); attempting repair");
        let repair_prompt = format!(
            "{prompt}\n\n--- REPAIR REQUEST ---\n\
             Your previous response could not be parsed:\n{raw}\n\n\
             Return ONLY valid JSON matching this schema, nothing else:\n{schema_hint}"
        );
        let (raw2, entry2) = self.invoke(template, repair_prompt)?;
        match decode::<T>(&raw2, shape) {
            Ok(value) => Ok(Completion {
                raw: raw2,
                value,
                entries: vec![entry, entry2],
            }),
            Err(second_err) => Err(GatewayError::ExtractionFailed {
                template,
                first: first_err,
                second: second_err,
            }),
        }
    }

    /// Untyped variant of [`Gateway::complete_typed`].
    pub fn complete_json(
        &self,
        template: TemplateId,
        bindings: &[(&str, String)],
        addon: Option<&str>,
        shape: ExpectedShape,
        schema_hint: &str,
    ) -> Result<Completion<Value>, GatewayError> {
        self.complete_typed::<Value>(template, bindings, addon, shape, schema_hint)
    }
}

fn decode<T: DeserializeOwned>(raw: &str, shape: ExpectedShape) -> Result<T, String> {
    let value = extract_payload(raw, shape).map_err(|e| e.to_string())?;
    serde_json::from_value(value).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    struct Toy {
        n: u32,
    }

    fn gateway_with(entries: Vec<TraceEntry>) -> Gateway {
        let backend = Arc::new(ScriptedBackend::from_entries(entries).unwrap());
        let mut rates = BTreeMap::new();
        rates.insert(
            "m".to_string(),
            ModelRates {
                input: 1.0,
                output: 2.0,
            },
        );
        let mut models = AgentModels::default();
        models.0.insert("default".into(), "m".into());
        Gateway::new(backend, RateCard { rates }, models)
    }

    fn entry(template: TemplateId, ordinal: u32, text: &str) -> TraceEntry {
        TraceEntry {
            template_id: template,
            ordinal,
            response_text: text.into(),
            input_tokens: 1_000,
            output_tokens: 500,
            wall_ms: 0,
        }
    }

    #[test]
    fn typed_completion_with_fences() {
        let gw = gateway_with(vec![entry(
            TemplateId::CotExtract,
            0,
            "```json\n{\"n\": 7}\n```",
        )]);
        let done: Completion<Toy> = gw
            .complete_typed(
                TemplateId::CotExtract,
                &[("COT_TEXT", "irrelevant".into())],
                None,
                ExpectedShape::Object,
                "{\"n\": <int>}",
            )
            .unwrap();
        assert_eq!(done.value, Toy { n: 7 });
        assert_eq!(done.entries.len(), 1);
        assert_eq!(gw.ledger().len(), 1);
    }

    #[test]
    fn repair_retry_consumes_second_entry_and_both_are_accounted() {
        let gw = gateway_with(vec![
            entry(TemplateId::CotExtract, 0, "I cannot help"),
            entry(TemplateId::CotExtract, 1, "{\"n\": 3}"),
        ]);
        let done: Completion<Toy> = gw
            .complete_typed(
                TemplateId::CotExtract,
                &[("COT_TEXT", "x".into())],
                None,
                ExpectedShape::Object,
                "{\"n\": <int>}",
            )
            .unwrap();
        assert_eq!(done.value, Toy { n: 3 });
        assert_eq!(done.entries.len(), 2);
        // retries append entries; nothing is lost
        let totals = gw.ledger().totals();
        assert_eq!(totals.calls, 2);
        assert_eq!(totals.input_tokens, 2_000);
        // (1000*1.0 + 500*2.0)/1e6 per call, two calls
        assert!((totals.cost_usd - 0.004).abs() < 1e-12);
    }

    #[test]
    fn extraction_failed_after_failed_repair() {
        let gw = gateway_with(vec![
            entry(TemplateId::CotExtract, 0, "no json here"),
            entry(TemplateId::CotExtract, 1, "still no json"),
        ]);
        let err = gw
            .complete_typed::<Toy>(
                TemplateId::CotExtract,
                &[("COT_TEXT", "x".into())],
                None,
                ExpectedShape::Object,
                "{}",
            )
            .unwrap_err();
        assert!(err.is_extraction());
        assert_eq!(gw.ledger().len(), 2);
    }

    #[test]
    fn schema_drift_triggers_repair() {
        // valid JSON but wrong schema -> repair entry must be consumed
        let gw = gateway_with(vec![
            entry(TemplateId::CotExtract, 0, "{\"wrong\": true}"),
            entry(TemplateId::CotExtract, 1, "{\"n\": 9}"),
        ]);
        let done: Completion<Toy> = gw
            .complete_typed(
                TemplateId::CotExtract,
                &[("COT_TEXT", "x".into())],
                None,
                ExpectedShape::Object,
                "{\"n\": <int>}",
            )
            .unwrap();
        assert_eq!(done.value, Toy { n: 9 });
    }

    #[test]
    fn scripted_determinism_same_trace_same_ledger() {
        let run = || {
            let gw = gateway_with(vec![entry(TemplateId::SummarySystem, 0, "one sentence.")]);
            let done = gw
                .complete_text(
                    TemplateId::SummarySystem,
                    &[
                        ("THEME", "Iran".into()),
                        ("SCORE", "2".into()),
                        ("ALERT_LIST", "0. x".into()),
                    ],
                    None,
                )
                .unwrap();
            (done.value, gw.ledger().totals())
        };
        assert_eq!(run(), run());
    }
}
