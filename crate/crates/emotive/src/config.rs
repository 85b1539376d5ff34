//! Config documents: the four single-purpose schemas plus a bundle that
//! groups them with pipeline settings.

use std::fmt;
use std::path::Path;

use emotive_core::content::{load_content_config, ContentConfig, ContentError};
use emotive_core::pipeline::PipelineConfig;
use emotive_core::policy::{load_policy, PolicyError, PolicyTable};
use emotive_core::safety::{load_rules, load_templates, RuleSet, SafetyError, TemplateRegistry};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentKind {
    Policy,
    Rules,
    Content,
    Templates,
    Bundle,
}

impl DocumentKind {
    pub fn name(self) -> &'static str {
        match self {
            DocumentKind::Policy => "policy",
            DocumentKind::Rules => "rules",
            DocumentKind::Content => "content",
            DocumentKind::Templates => "templates",
            DocumentKind::Bundle => "bundle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Policy, Self::Rules, Self::Content, Self::Templates, Self::Bundle].into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io { path: String, message: String },
    Schema(String),
    UnknownDocument,
    Policy(PolicyError),
    Safety(SafetyError),
    Content(ContentError),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "ConfigUnreadable",
            ConfigError::Schema(_) => "SchemaError",
            ConfigError::UnknownDocument => "UnknownDocument",
            ConfigError::Policy(e) => e.kind(),
            ConfigError::Safety(e) => e.kind(),
            ConfigError::Content(e) => e.kind(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, message } => write!(f, "{path}: {message}"),
            ConfigError::Schema(m) => write!(f, "{m}"),
            ConfigError::UnknownDocument => {
                write!(f, "not a policy, rules, content, templates or bundle document")
            }
            ConfigError::Policy(e) => write!(f, "{e}"),
            ConfigError::Safety(e) => write!(f, "{e}"),
            ConfigError::Content(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<PolicyError> for ConfigError {
    fn from(e: PolicyError) -> Self {
        ConfigError::Policy(e)
    }
}

impl From<SafetyError> for ConfigError {
    fn from(e: SafetyError) -> Self {
        ConfigError::Safety(e)
    }
}

impl From<ContentError> for ConfigError {
    fn from(e: ContentError) -> Self {
        ConfigError::Content(e)
    }
}

const BUNDLE_KEYS: [&str; 5] = ["policy", "rules", "content", "templates", "pipeline"];

/// Guesses the schema from the top-level keys.
pub fn detect_kind(document: &str) -> Result<DocumentKind, ConfigError> {
    let value: Value = serde_json::from_str(document).map_err(|e| ConfigError::Schema(e.to_string()))?;
    let obj = value.as_object().ok_or(ConfigError::UnknownDocument)?;
    let has = |k: &str| obj.contains_key(k);
    let kind = if has("default_mode") {
        DocumentKind::Policy
    } else if has("blocklist") || has("profile_defaults") {
        DocumentKind::Rules
    } else if has("templates") && obj.len() == 1 && obj["templates"].is_array() {
        DocumentKind::Templates
    } else if has("empathy") || has("soothing") || has("play") || has("amplify") {
        DocumentKind::Content
    } else if !obj.is_empty() && obj.keys().all(|k| BUNDLE_KEYS.contains(&k.as_str())) {
        DocumentKind::Bundle
    } else {
        return Err(ConfigError::UnknownDocument);
    };
    Ok(kind)
}

/// Everything the pipeline needs besides the recognizer.
#[derive(Debug, Clone, Default)]
pub struct ConfigBundle {
    pub policy: PolicyTable,
    pub rules: RuleSet,
    pub content: ContentConfig,
    pub templates: TemplateRegistry,
    pub pipeline: PipelineConfig,
}

fn section(obj: &Map<String, Value>, key: &str) -> Option<String> {
    obj.get(key).map(|v| v.to_string())
}

impl ConfigBundle {
    /// Parses a bundle; absent sections keep their shipped defaults.
    pub fn from_json(document: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(document).map_err(|e| ConfigError::Schema(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| ConfigError::Schema("bundle must be a JSON object".into()))?;
        if let Some(k) = obj.keys().find(|k| !BUNDLE_KEYS.contains(&k.as_str())) {
            return Err(ConfigError::Schema(format!("unknown bundle section `{k}`")));
        }
        let mut b = ConfigBundle::default();
        if let Some(s) = section(obj, "policy") {
            b.policy = load_policy(&s)?;
        }
        if let Some(s) = section(obj, "rules") {
            b.rules = load_rules(&s)?;
        }
        if let Some(s) = section(obj, "content") {
            b.content = load_content_config(&s)?;
        }
        if let Some(s) = section(obj, "templates") {
            b.templates = load_templates(&s)?;
        }
        if let Some(v) = obj.get("pipeline") {
            b.pipeline = serde_json::from_value(v.clone()).map_err(|e| ConfigError::Schema(format!("pipeline: {e}")))?;
        }
        Ok(b)
    }

    pub fn to_json(&self) -> String {
        let parse = |s: String| serde_json::from_str::<Value>(&s).expect("own serialization");
        let v = serde_json::json!({
            "policy": parse(self.policy.to_json()),
            "rules": parse(self.rules.to_json()),
            "content": parse(self.content.to_json()),
            "templates": parse(self.templates.to_json()),
            "pipeline": serde_json::to_value(&self.pipeline).expect("plain struct"),
        });
        serde_json::to_string_pretty(&v).expect("value")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read_text(path)?)
    }
}

pub fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Loads a document of any kind and runs its full validation.
pub fn validate_document(document: &str) -> Result<DocumentKind, ConfigError> {
    let kind = detect_kind(document)?;
    match kind {
        DocumentKind::Policy => {
            load_policy(document)?;
        }
        DocumentKind::Rules => {
            load_rules(document)?;
        }
        DocumentKind::Content => {
            load_content_config(document)?;
        }
        DocumentKind::Templates => {
            load_templates(document)?;
        }
        DocumentKind::Bundle => {
            ConfigBundle::from_json(document)?;
        }
    }
    Ok(kind)
}

/// Shipped default document of the given kind.
pub fn export(kind: DocumentKind) -> String {
    let d = ConfigBundle::default();
    match kind {
        DocumentKind::Policy => d.policy.to_json(),
        DocumentKind::Rules => d.rules.to_json(),
        DocumentKind::Content => d.content.to_json(),
        DocumentKind::Templates => d.templates.to_json(),
        DocumentKind::Bundle => d.to_json(),
    }
}
