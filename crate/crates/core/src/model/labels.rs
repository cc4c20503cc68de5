//! Closed label vocabularies shared by the agents, the validator, and the
//! evaluation harness.
//!
//! Labels are stored lowercase snake_case; parsing is case-insensitive and
//! trims whitespace. Anything outside a vocabulary is an [`UnknownLabel`]
//! error — that is the schema-drift tripwire for agent responses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown label {raw:?} for field {field}")]
pub struct UnknownLabel {
    pub field: String,
    pub raw: String,
}

macro_rules! vocab {
    ($(#[$meta:meta])* $name:ident, $field:expr, { $($variant:ident => $text:expr),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        // hand-written so deserialization is case-insensitive like the parser
        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(deserializer)?;
                Self::parse(&raw).map_err(serde::de::Error::custom)
            }
        }

        impl $name {
            pub const FIELD: &'static str = $field;
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Case-insensitive, whitespace-trimming parse.
            pub fn parse(raw: &str) -> Result<Self, UnknownLabel> {
                let norm = raw.trim().to_ascii_lowercase();
                match norm.as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(UnknownLabel { field: $field.to_string(), raw: raw.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownLabel;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::parse(s)
            }
        }
    };
}

vocab!(
    /// Which way a single alert's whale bet points within its cluster.
    MemberDirection, "direction", {
        Intensifying => "intensifying",
        Easing => "easing",
    }
);

vocab!(
    /// Net Polymarket direction for a cluster.
    PolyDirection, "poly_direction", {
        Intensifying => "intensifying",
        Easing => "easing",
        Mixed => "mixed",
    }
);

vocab!(
    /// Quality tier of the whale capital behind a cluster's alerts.
    ///
    /// `speculative` appears in the batched-analysis schema but not in the
    /// per-cluster one; it is accepted on parse for every track so ground
    /// truth using it still joins cleanly.
    WhaleQuality, "whale_quality", {
        TopTrader => "top_trader",
        HighWinrate => "high_winrate",
        LargeCapital => "large_capital",
        MixedQuality => "mixed_quality",
        NoWhaleData => "no_whale_data",
        Speculative => "speculative",
    }
);

vocab!(
    /// Net media-narrative direction for a cluster.
    MediaDirection, "media_direction", {
        Intensifying => "intensifying",
        Easing => "easing",
        Mixed => "mixed",
        NoCoverage => "no_coverage",
    }
);

vocab!(
    /// Relationship between the market signal and the media narrative.
    Alignment, "poly_media_alignment", {
        Consensus => "consensus",
        Divergence => "divergence",
        MarketLeadsMedia => "market_leads_media",
        MediaLeadsMarket => "media_leads_market",
    }
);

/// The four categorical dimensions scored against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelField {
    PolyDirection,
    WhaleQuality,
    MediaDirection,
    PolyMediaAlignment,
}

impl LabelField {
    pub const ALL: &'static [LabelField] = &[
        LabelField::PolyDirection,
        LabelField::WhaleQuality,
        LabelField::MediaDirection,
        LabelField::PolyMediaAlignment,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LabelField::PolyDirection => "poly_direction",
            LabelField::WhaleQuality => "whale_quality",
            LabelField::MediaDirection => "media_direction",
            LabelField::PolyMediaAlignment => "poly_media_alignment",
        }
    }

    pub fn parse_name(name: &str) -> Result<Self, UnknownLabel> {
        match name.trim() {
            "poly_direction" => Ok(LabelField::PolyDirection),
            "whale_quality" => Ok(LabelField::WhaleQuality),
            "media_direction" => Ok(LabelField::MediaDirection),
            "poly_media_alignment" => Ok(LabelField::PolyMediaAlignment),
            other => Err(UnknownLabel {
                field: "field_name".to_string(),
                raw: other.to_string(),
            }),
        }
    }

    /// All canonical labels for this field.
    pub fn vocabulary(&self) -> Vec<&'static str> {
        match self {
            LabelField::PolyDirection => PolyDirection::ALL.iter().map(|v| v.as_str()).collect(),
            LabelField::WhaleQuality => WhaleQuality::ALL.iter().map(|v| v.as_str()).collect(),
            LabelField::MediaDirection => MediaDirection::ALL.iter().map(|v| v.as_str()).collect(),
            LabelField::PolyMediaAlignment => Alignment::ALL.iter().map(|v| v.as_str()).collect(),
        }
    }
}

/// Parses `raw` against the closed vocabulary of `field`, returning the
/// canonical lowercase label.
pub fn parse_label(field_name: &str, raw: &str) -> Result<&'static str, UnknownLabel> {
    let field = LabelField::parse_name(field_name)?;
    parse_field_label(field, raw)
}

/// Typed-field variant of [`parse_label`].
pub fn parse_field_label(field: LabelField, raw: &str) -> Result<&'static str, UnknownLabel> {
    match field {
        LabelField::PolyDirection => PolyDirection::parse(raw).map(|v| v.as_str()),
        LabelField::WhaleQuality => WhaleQuality::parse(raw).map(|v| v.as_str()),
        LabelField::MediaDirection => MediaDirection::parse(raw).map(|v| v.as_str()),
        LabelField::PolyMediaAlignment => Alignment::parse(raw).map(|v| v.as_str()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_normalization() {
        assert_eq!(
            parse_label("poly_direction", "Intensifying").unwrap(),
            "intensifying"
        );
        assert_eq!(
            parse_label("poly_direction", "  EASING ").unwrap(),
            "easing"
        );
    }

    #[test]
    fn canonical_alignment_label() {
        assert_eq!(
            parse_label("poly_media_alignment", "market_leads_media").unwrap(),
            "market_leads_media"
        );
    }

    #[test]
    fn out_of_vocabulary_rejected() {
        let err = parse_label("media_direction", "bullish").unwrap_err();
        assert_eq!(err.field, "media_direction");
        assert_eq!(err.raw, "bullish");
    }

    #[test]
    fn speculative_accepted() {
        assert_eq!(
            parse_label("whale_quality", "Speculative").unwrap(),
            "speculative"
        );
    }

    #[test]
    fn unknown_field_name() {
        assert!(parse_label("sentiment", "positive").is_err());
    }

    #[test]
    fn round_trip_every_vocabulary_member() {
        for field in LabelField::ALL {
            for label in field.vocabulary() {
                // serialize(parse(x)) == canonical form
                assert_eq!(parse_field_label(*field, label).unwrap(), label);
                // parser also accepts shouty variants
                assert_eq!(
                    parse_field_label(*field, &label.to_ascii_uppercase()).unwrap(),
                    label
                );
            }
        }
    }

    #[test]
    fn serde_uses_snake_case_strings() {
        let v = serde_json::to_string(&Alignment::MarketLeadsMedia).unwrap();
        assert_eq!(v, "\"market_leads_media\"");
        let back: Alignment = serde_json::from_str("\"divergence\"").unwrap();
        assert_eq!(back, Alignment::Divergence);
    }
}
