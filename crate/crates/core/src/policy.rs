//! Response policy: (emotion, arousal) to response mode via an ordered
//! first-match rule table.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::emotion::ArousalLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseMode {
    Empathy,
    Soothing,
    Play,
    Amplify,
}

impl ResponseMode {
    pub const ALL: [ResponseMode; 4] =
        [ResponseMode::Empathy, ResponseMode::Soothing, ResponseMode::Play, ResponseMode::Amplify];

    pub fn name(self) -> &'static str {
        match self {
            ResponseMode::Empathy => "empathy",
            ResponseMode::Soothing => "soothing",
            ResponseMode::Play => "play",
            ResponseMode::Amplify => "amplify",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        ResponseMode::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for ResponseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArousalMatch {
    Low,
    High,
    Any,
}

impl ArousalMatch {
    pub fn matches(self, level: ArousalLevel) -> bool {
        match self {
            ArousalMatch::Any => true,
            ArousalMatch::Low => level == ArousalLevel::Low,
            ArousalMatch::High => level == ArousalLevel::High,
        }
    }
}

pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    /// Category label, or `*` for any.
    pub emotion: String,
    pub arousal: ArousalMatch,
    pub mode: ResponseMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub rules: Vec<PolicyRule>,
    pub default_mode: ResponseMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyError {
    SchemaError { line: usize, column: usize, message: String },
    UnknownMode(String),
    DuplicateRule { emotion: String, arousal: ArousalMatch },
}

impl PolicyError {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicyError::SchemaError { .. } => "SchemaError",
            PolicyError::UnknownMode(_) => "UnknownMode",
            PolicyError::DuplicateRule { .. } => "DuplicateRule",
        }
    }
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyError::SchemaError { line, column, message } => {
                write!(f, "policy document line {line} column {column}: {message}")
            }
            PolicyError::UnknownMode(m) => write!(f, "unknown response mode {m:?}"),
            PolicyError::DuplicateRule { emotion, arousal } => {
                write!(f, "more than one rule for ({emotion}, {arousal:?})")
            }
        }
    }
}

impl core::error::Error for PolicyError {}

fn rule(emotion: &str, arousal: ArousalMatch, mode: ResponseMode) -> PolicyRule {
    PolicyRule { emotion: emotion.to_string(), arousal, mode }
}

impl Default for PolicyTable {
    fn default() -> Self {
        use ArousalMatch::*;
        use ResponseMode::*;
        PolicyTable {
            rules: alloc::vec![
                rule("sad", Low, Empathy),
                rule("sad", High, Soothing),
                rule("angry", Any, Soothing),
                rule("neutral", Any, Play),
                rule("happy", Low, Play),
                rule("happy", High, Amplify),
            ],
            default_mode: Soothing,
        }
    }
}

impl PolicyTable {
    /// First matching rule's mode, else the default.
    pub fn decide(&self, emotion: &str, arousal: ArousalLevel) -> ResponseMode {
        self.rules
            .iter()
            .find(|r| (r.emotion == WILDCARD || r.emotion == emotion) && r.arousal.matches(arousal))
            .map_or(self.default_mode, |r| r.mode)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (i, r) in self.rules.iter().enumerate() {
            if self.rules[..i].iter().any(|p| p.emotion == r.emotion && p.arousal == r.arousal) {
                return Err(PolicyError::DuplicateRule { emotion: r.emotion.clone(), arousal: r.arousal });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    emotion: String,
    arousal: ArousalMatch,
    mode: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    rules: Vec<RawRule>,
    default_mode: String,
}

fn mode(name: &str) -> Result<ResponseMode, PolicyError> {
    ResponseMode::parse(name).ok_or_else(|| PolicyError::UnknownMode(name.to_string()))
}

pub fn load_policy(document: &str) -> Result<PolicyTable, PolicyError> {
    let raw: RawTable = serde_json::from_str(document).map_err(|e| PolicyError::SchemaError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let rules = raw
        .rules
        .into_iter()
        .map(|r| Ok(PolicyRule { emotion: r.emotion, arousal: r.arousal, mode: mode(&r.mode)? }))
        .collect::<Result<Vec<_>, PolicyError>>()?;
    let table = PolicyTable { rules, default_mode: mode(&raw.default_mode)? };
    table.validate()?;
    Ok(table)
}
