//! Topic → tier classification.
//!
//! Policy files are TOML:
//!
//! ```toml
//! default_tier = "bulk"
//!
//! [[rule]]
//! pattern = "/*/cmd_vel"
//! tier = "critical"
//! ```
//!
//! Patterns are shell globs where `*` stays within one path segment and
//! `**` spans segments. Rules are tried in order; the first match wins.

use glob::{MatchOptions, Pattern};
use serde::Deserialize;
use thiserror::Error;

use super::Tier;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid glob {pattern:?}: {source}")]
    Glob {
        pattern: String,
        source: glob::PatternError,
    },
    #[error("policy file: {0}")]
    Parse(#[from] toml::de::Error),
}

pub(crate) const MATCH: MatchOptions = MatchOptions {
    case_sensitive: true,
    require_literal_separator: true,
    require_literal_leading_dot: false,
};

pub(crate) fn compile(pattern: &str) -> Result<Pattern, PolicyError> {
    Pattern::new(pattern).map_err(|source| PolicyError::Glob {
        pattern: pattern.to_string(),
        source,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct RuleSpec {
    pub pattern: String,
    pub tier: Tier,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub default_tier: Tier,
    #[serde(default, rename = "rule")]
    pub rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone)]
pub struct PriorityPolicy {
    rules: Vec<(Pattern, Tier)>,
    default_tier: Tier,
}

impl Default for PriorityPolicy {
    fn default() -> Self {
        Self::uniform(Tier::Standard)
    }
}

impl PriorityPolicy {
    /// Every topic maps to `tier`.
    pub fn uniform(tier: Tier) -> Self {
        Self {
            rules: Vec::new(),
            default_tier: tier,
        }
    }

    pub fn new<'a>(
        rules: impl IntoIterator<Item = (&'a str, Tier)>,
        default_tier: Tier,
    ) -> Result<Self, PolicyError> {
        let rules = rules
            .into_iter()
            .map(|(p, t)| Ok((compile(p)?, t)))
            .collect::<Result<_, PolicyError>>()?;
        Ok(Self { rules, default_tier })
    }

    pub fn from_spec(spec: &PolicySpec) -> Result<Self, PolicyError> {
        Self::new(
            spec.rules.iter().map(|r| (r.pattern.as_str(), r.tier)),
            spec.default_tier,
        )
    }

    pub fn from_toml(text: &str) -> Result<Self, PolicyError> {
        let spec: PolicySpec = toml::from_str(text)?;
        Self::from_spec(&spec)
    }

    pub fn classify(&self, topic: &str) -> Tier {
        self.rules
            .iter()
            .find(|(p, _)| p.matches_with(topic, MATCH))
            .map(|(_, t)| *t)
            .unwrap_or(self.default_tier)
    }

    pub fn default_tier(&self) -> Tier {
        self.default_tier
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let p = PriorityPolicy::new(
            [
                ("/robot1/cmd_vel", Tier::Bulk),
                ("/*/cmd_vel", Tier::Critical),
                ("/**/points", Tier::Bulk),
            ],
            Tier::Standard,
        )
        .unwrap();
        assert_eq!(p.classify("/robot1/cmd_vel"), Tier::Bulk);
        assert_eq!(p.classify("/robot2/cmd_vel"), Tier::Critical);
        assert_eq!(p.classify("/a/b/cmd_vel"), Tier::Standard);
        assert_eq!(p.classify("/a/b/points"), Tier::Bulk);
        assert_eq!(p.classify("/status"), Tier::Standard);
    }

    #[test]
    fn parses_policy_file() {
        let text = r#"
            default_tier = "bulk"
            [[rule]]
            pattern = "/*/odom"
            tier = "critical"
            [[rule]]
            pattern = "/*/status"
            tier = "standard"
        "#;
        let p = PriorityPolicy::from_toml(text).unwrap();
        assert_eq!(p.classify("/r1/odom"), Tier::Critical);
        assert_eq!(p.classify("/r1/status"), Tier::Standard);
        assert_eq!(p.classify("/r1/points"), Tier::Bulk);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PriorityPolicy::new([("/[", Tier::Bulk)], Tier::Bulk).is_err());
        assert!(PriorityPolicy::from_toml("default_tier = \"urgent\"").is_err());
        assert!(PriorityPolicy::from_toml("default_tier = \"bulk\"\nextra = 1").is_err());
    }
}
