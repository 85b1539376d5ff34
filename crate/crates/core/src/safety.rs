//! Safety agent: every active rule is evaluated (no short-circuit) so the
//! full violation mask is available to the regeneration step.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::content::{ContentParameters, Param};
use crate::policy::ResponseMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleCategory {
    AgeAppropriateness,
    StimulationLevel,
    ProhibitedExpression,
}

impl RuleCategory {
    pub const ALL: [RuleCategory; 3] =
        [RuleCategory::AgeAppropriateness, RuleCategory::StimulationLevel, RuleCategory::ProhibitedExpression];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    UpperThreshold,
    LowerThreshold,
    Blocklist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Child,
    General,
    All,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Profile> {
        match s {
            "child" => Some(Profile::Child),
            "general" => Some(Profile::General),
            "all" => Some(Profile::All),
            _ => None,
        }
    }
}

/// What a rule inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Param(Param),
    /// Age rating of the selected template.
    TemplateRating,
    /// Word list of the selected template.
    TemplateWords,
}

impl Target {
    pub fn parse(s: &str) -> Option<Target> {
        match s {
            "template_rating" => Some(Target::TemplateRating),
            "template_words" => Some(Target::TemplateWords),
            _ => Param::parse(s).map(Target::Param),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Param(p) => p.name(),
            Target::TemplateRating => "template_rating",
            Target::TemplateWords => "template_words",
        }
    }

    /// Domain a threshold on this target must lie in.
    pub fn range(self) -> Option<(f64, f64)> {
        match self {
            Target::Param(p) => Some(p.range()),
            Target::TemplateRating => Some((0.0, MAX_AGE_RATING)),
            Target::TemplateWords => None,
        }
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

pub const MAX_AGE_RATING: f64 = 18.0;

/// Slack on threshold comparisons, absorbing the rounding of values that
/// round-trip through the generator's activations.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyRule {
    pub id: String,
    pub category: RuleCategory,
    pub kind: RuleKind,
    pub parameter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub profile: Profile,
}

impl SafetyRule {
    pub fn target(&self) -> Result<Target, SafetyError> {
        Target::parse(&self.parameter).ok_or_else(|| SafetyError::UnknownParameterField(self.parameter.clone()))
    }

    pub fn applies_to(&self, active: Profile) -> bool {
        self.profile == Profile::All || self.profile == active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Observed {
    Value(f64),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule_id: String,
    pub category: RuleCategory,
    pub kind: RuleKind,
    #[serde(rename = "parameter")]
    pub target: Target,
    pub observed: Observed,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationResult {
    pub passed: bool,
    pub violations: Vec<Violation>,
    /// One entry per rule of the rule set, in order; 1 where it failed.
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SafetyError {
    SchemaError { line: usize, column: usize, message: String },
    DuplicateRuleId(String),
    BoundOutOfRange { id: String, bound: f64 },
    UnknownParameterField(String),
    InvalidRule { id: String, reason: &'static str },
    ProfileInversion { parameter: String, child: f64, general: f64 },
    UnknownTemplate(String),
    DuplicateTemplate(String),
}

impl SafetyError {
    pub fn kind(&self) -> &'static str {
        match self {
            SafetyError::SchemaError { .. } => "SchemaError",
            SafetyError::DuplicateRuleId(_) => "DuplicateRuleId",
            SafetyError::BoundOutOfRange { .. } => "BoundOutOfRange",
            SafetyError::UnknownParameterField(_) => "UnknownParameterField",
            SafetyError::InvalidRule { .. } => "InvalidRule",
            SafetyError::ProfileInversion { .. } => "ProfileInversion",
            SafetyError::UnknownTemplate(_) => "UnknownTemplate",
            SafetyError::DuplicateTemplate(_) => "DuplicateTemplate",
        }
    }
}

impl fmt::Display for SafetyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetyError::SchemaError { line, column, message } => {
                write!(f, "safety document line {line} column {column}: {message}")
            }
            SafetyError::DuplicateRuleId(id) => write!(f, "rule id {id:?} appears more than once"),
            SafetyError::BoundOutOfRange { id, bound } => write!(f, "rule {id:?}: bound {bound} is outside the field's range"),
            SafetyError::UnknownParameterField(p) => write!(f, "unknown parameter field {p:?}"),
            SafetyError::InvalidRule { id, reason } => write!(f, "rule {id:?}: {reason}"),
            SafetyError::ProfileInversion { parameter, child, general } => write!(
                f,
                "child bound {child} on {parameter} is looser than the general bound {general}"
            ),
            SafetyError::UnknownTemplate(t) => write!(f, "template {t:?} is not registered"),
            SafetyError::DuplicateTemplate(t) => write!(f, "template {t:?} is registered more than once"),
        }
    }
}

impl core::error::Error for SafetyError {}

fn schema_error(e: serde_json::Error) -> SafetyError {
    SafetyError::SchemaError { line: e.line(), column: e.column(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub id: String,
    pub age_rating: f64,
    #[serde(default)]
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRegistry {
    pub templates: Vec<Template>,
}

fn template(id: &str, age_rating: f64, words: &[&str]) -> Template {
    Template { id: id.to_string(), age_rating, words: words.iter().map(|w| w.to_string()).collect() }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        TemplateRegistry {
            templates: alloc::vec![
                template("gentle_presence", 3.0, &["here", "with", "you", "okay"]),
                template("slow_breathing", 3.0, &["breathe", "slow", "calm", "rest"]),
                template("playful_rhythm", 5.0, &["bounce", "clap", "game", "fun"]),
                template("bright_celebration", 7.0, &["cheer", "great", "dance", "wow"]),
                template("teen_banter", 13.0, &["vibe", "epic", "whatever"]),
                template("rough_tease", 10.0, &["silly", "stupid", "joke"]),
            ],
        }
    }
}

impl TemplateRegistry {
    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        for (i, t) in self.templates.iter().enumerate() {
            if self.templates[..i].iter().any(|o| o.id == t.id) {
                return Err(SafetyError::DuplicateTemplate(t.id.clone()));
            }
            if !(0.0..=MAX_AGE_RATING).contains(&t.age_rating) {
                return Err(SafetyError::BoundOutOfRange { id: t.id.clone(), bound: t.age_rating });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("templates serialize")
    }
}

pub fn load_templates(document: &str) -> Result<TemplateRegistry, SafetyError> {
    let reg: TemplateRegistry = serde_json::from_str(document).map_err(schema_error)?;
    reg.validate()?;
    Ok(reg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    /// Profile whose rules are enforced (rules tagged `all` always are).
    pub profile_defaults: Profile,
    pub rules: Vec<SafetyRule>,
    #[serde(default)]
    pub blocklist: Vec<String>,
}

fn threshold(id: &str, category: RuleCategory, kind: RuleKind, parameter: &str, bound: f64, profile: Profile) -> SafetyRule {
    SafetyRule { id: id.to_string(), category, kind, parameter: parameter.to_string(), bound: Some(bound), profile }
}

impl Default for RuleSet {
    fn default() -> Self {
        use Profile::{All, Child, General};
        use RuleCategory::*;
        use RuleKind::*;
        RuleSet {
            profile_defaults: Child,
            rules: alloc::vec![
                threshold("stim.volume", StimulationLevel, UpperThreshold, "volume", 0.8, Child),
                threshold("stim.animation_speed", StimulationLevel, UpperThreshold, "animation_speed", 0.8, Child),
                threshold("stim.brightness", StimulationLevel, UpperThreshold, "brightness", 0.9, Child),
                threshold("stim.tempo", StimulationLevel, UpperThreshold, "tempo", 1.5, Child),
                threshold("age.sentiment", AgeAppropriateness, LowerThreshold, "sentiment", -0.5, Child),
                threshold("age.template_rating", AgeAppropriateness, UpperThreshold, "template_rating", 7.0, Child),
                threshold("stim.volume.general", StimulationLevel, UpperThreshold, "volume", 0.95, General),
                threshold("stim.animation_speed.general", StimulationLevel, UpperThreshold, "animation_speed", 0.9, General),
                threshold("stim.tempo.general", StimulationLevel, UpperThreshold, "tempo", 2.0, General),
                threshold("age.template_rating.general", AgeAppropriateness, UpperThreshold, "template_rating", 12.0, General),
                SafetyRule {
                    id: "prohibited.words".into(),
                    category: ProhibitedExpression,
                    kind: Blocklist,
                    parameter: "template_words".into(),
                    bound: None,
                    profile: All,
                },
            ],
            blocklist: ["stupid", "hate", "kill", "ugly", "dumb"].iter().map(|w| w.to_string()).collect(),
        }
    }
}

impl RuleSet {
    /// The shipped rules with every child stimulation bound tightened, so
    /// the louder modes' defaults fail and the repair path runs often.
    pub fn strict() -> Self {
        let mut rs = RuleSet::default();
        for r in rs.rules.iter_mut() {
            let tightened = match r.id.as_str() {
                "stim.volume" => 0.65,
                "stim.animation_speed" => 0.65,
                "stim.brightness" => 0.75,
                "stim.tempo" => 1.1,
                _ => continue,
            };
            r.bound = Some(tightened);
        }
        rs
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile_defaults = profile;
        self
    }

    pub fn active_profile(&self) -> Profile {
        self.profile_defaults
    }

    /// Evaluates every rule active for the profile.
    pub fn verify(&self, params: &ContentParameters, templates: &TemplateRegistry) -> Result<VerificationResult, SafetyError> {
        let template = match &params.template_id {
            Some(id) => Some(templates.get(id).ok_or_else(|| SafetyError::UnknownTemplate(id.clone()))?),
            None => None,
        };
        let mut violations = Vec::new();
        let mut mask = alloc::vec![0u8; self.rules.len()];
        for (i, rule) in self.rules.iter().enumerate() {
            if !rule.applies_to(self.profile_defaults) {
                continue;
            }
            let target = rule.target()?;
            let observed = match (rule.kind, target) {
                (RuleKind::Blocklist, Target::TemplateWords) => template.and_then(|t| {
                    t.words
                        .iter()
                        .find(|w| self.blocklist.iter().any(|b| b.eq_ignore_ascii_case(w)))
                        .map(|w| Observed::Word(w.clone()))
                }),
                (RuleKind::UpperThreshold | RuleKind::LowerThreshold, _) => {
                    let value = match target {
                        Target::Param(p) => Some(params.get(p)),
                        Target::TemplateRating => template.map(|t| t.age_rating),
                        Target::TemplateWords => None,
                    };
                    let bound = rule.bound.unwrap_or(f64::NAN);
                    value.filter(|&v| fails(rule.kind, v, bound)).map(Observed::Value)
                }
                _ => None,
            };
            if let Some(observed) = observed {
                mask[i] = 1;
                violations.push(Violation {
                    rule_id: rule.id.clone(),
                    category: rule.category,
                    kind: rule.kind,
                    target,
                    observed,
                    bound: rule.bound,
                });
            }
        }
        Ok(VerificationResult { passed: violations.is_empty(), violations, mask })
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        if self.profile_defaults == Profile::All {
            return Err(SafetyError::InvalidRule { id: "profile_defaults".into(), reason: "active profile must be child or general" });
        }
        for (i, rule) in self.rules.iter().enumerate() {
            if self.rules[..i].iter().any(|r| r.id == rule.id) {
                return Err(SafetyError::DuplicateRuleId(rule.id.clone()));
            }
            let target = rule.target()?;
            match (rule.kind, target) {
                (RuleKind::Blocklist, Target::TemplateWords) => {
                    if self.blocklist.is_empty() {
                        return Err(SafetyError::InvalidRule { id: rule.id.clone(), reason: "blocklist rule with an empty blocklist" });
                    }
                }
                (RuleKind::Blocklist, _) | (_, Target::TemplateWords) => {
                    return Err(SafetyError::InvalidRule {
                        id: rule.id.clone(),
                        reason: "blocklist rules must target template_words and thresholds a numeric field",
                    });
                }
                (_, t) => {
                    let bound = rule
                        .bound
                        .ok_or(SafetyError::InvalidRule { id: rule.id.clone(), reason: "threshold rule without a bound" })?;
                    let (lo, hi) = t.range().expect("numeric target");
                    if !(bound >= lo && bound <= hi) {
                        return Err(SafetyError::BoundOutOfRange { id: rule.id.clone(), bound });
                    }
                }
            }
        }
        self.check_profile_order()
    }

    /// A child bound must be at least as strict as any general bound of the
    /// same kind on the same field.
    fn check_profile_order(&self) -> Result<(), SafetyError> {
        for c in self.rules.iter().filter(|r| r.profile == Profile::Child) {
            for g in self.rules.iter().filter(|r| r.profile == Profile::General) {
                if c.parameter != g.parameter || c.kind != g.kind {
                    continue;
                }
                let (Some(cb), Some(gb)) = (c.bound, g.bound) else { continue };
                let looser = match c.kind {
                    RuleKind::UpperThreshold => cb > gb,
                    RuleKind::LowerThreshold => cb < gb,
                    RuleKind::Blocklist => false,
                };
                if looser {
                    return Err(SafetyError::ProfileInversion { parameter: c.parameter.clone(), child: cb, general: gb });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rules serialize")
    }
}

fn fails(kind: RuleKind, value: f64, bound: f64) -> bool {
    match kind {
        RuleKind::UpperThreshold => !(value <= bound + BOUND_TOLERANCE),
        RuleKind::LowerThreshold => !(value >= bound - BOUND_TOLERANCE),
        RuleKind::Blocklist => false,
    }
}

pub fn load_rules(document: &str) -> Result<RuleSet, SafetyError> {
    let rules: RuleSet = serde_json::from_str(document).map_err(schema_error)?;
    rules.validate()?;
    Ok(rules)
}

/// Modes whose configured defaults fail under `rules`.
pub fn failing_modes(
    rules: &RuleSet,
    templates: &TemplateRegistry,
    defaults: impl Fn(ResponseMode) -> ContentParameters,
) -> Result<Vec<ResponseMode>, SafetyError> {
    let mut out = Vec::new();
    for m in ResponseMode::ALL {
        if !rules.verify(&defaults(m), templates)?.passed {
            out.push(m);
        }
    }
    Ok(out)
}
