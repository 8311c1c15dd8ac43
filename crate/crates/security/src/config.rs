use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SecurityError};

/// Middleware components, in chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Mtls,
    RateLimit,
    Jwt,
    JwksCache,
    Rbac,
    InputValidation,
    Audit,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Mtls,
        Component::RateLimit,
        Component::Jwt,
        Component::JwksCache,
        Component::Rbac,
        Component::InputValidation,
        Component::Audit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Mtls => "mtls",
            Component::RateLimit => "rate_limit",
            Component::Jwt => "jwt",
            Component::JwksCache => "jwks_cache",
            Component::Rbac => "rbac",
            Component::InputValidation => "input_validation",
            Component::Audit => "audit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityChainConfig {
    enabled: BTreeSet<Component>,
}

impl SecurityChainConfig {
    /// Rejects `jwks_cache` without `jwt` and `rbac` without `jwt` (RBAC
    /// needs verified claims).
    pub fn new(enabled: impl IntoIterator<Item = Component>) -> Result<Self> {
        let enabled: BTreeSet<Component> = enabled.into_iter().collect();
        if enabled.contains(&Component::JwksCache) && !enabled.contains(&Component::Jwt) {
            return Err(SecurityError::Config("jwks_cache requires jwt".into()));
        }
        if enabled.contains(&Component::Rbac) && !enabled.contains(&Component::Jwt) {
            return Err(SecurityError::Config("rbac requires jwt".into()));
        }
        Ok(Self { enabled })
    }

    pub fn baseline() -> Self {
        Self::new([]).expect("valid preset")
    }

    pub fn mtls_only() -> Self {
        Self::new([Component::Mtls]).expect("valid preset")
    }

    pub fn jwt_only() -> Self {
        Self::new([Component::Jwt, Component::JwksCache]).expect("valid preset")
    }

    pub fn full_il4() -> Self {
        Self::new([
            Component::Mtls,
            Component::Jwt,
            Component::JwksCache,
            Component::Audit,
            Component::InputValidation,
        ])
        .expect("valid preset")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "baseline" => Some(Self::baseline()),
            "mtls_only" => Some(Self::mtls_only()),
            "jwt_only" => Some(Self::jwt_only()),
            "full_il4" => Some(Self::full_il4()),
            _ => None,
        }
    }

    /// Parses a preset name or a comma-separated component list.
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(p) = Self::preset(spec) {
            return Ok(p);
        }
        let mut set = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            set.push(
                Component::parse(part)
                    .ok_or_else(|| SecurityError::Config(format!("unknown component {part:?}")))?,
            );
        }
        Self::new(set)
    }

    pub fn with(mut self, c: Component) -> Result<Self> {
        self.enabled.insert(c);
        Self::new(self.enabled)
    }

    pub fn enabled(&self) -> &BTreeSet<Component> {
        &self.enabled
    }

    pub fn has(&self, c: Component) -> bool {
        self.enabled.contains(&c)
    }

    pub fn is_empty(&self) -> bool {
        self.enabled.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jwks_without_jwt_is_rejected() {
        assert!(SecurityChainConfig::new([Component::JwksCache]).is_err());
        assert!(SecurityChainConfig::parse("mtls,jwks_cache").is_err());
        assert!(SecurityChainConfig::parse("mtls,bogus").is_err());
    }

    #[test]
    fn presets() {
        assert!(SecurityChainConfig::baseline().is_empty());
        assert_eq!(SecurityChainConfig::full_il4().enabled().len(), 5);
        assert!(!SecurityChainConfig::full_il4().has(Component::RateLimit));
        assert_eq!(SecurityChainConfig::parse("jwt_only").unwrap(), SecurityChainConfig::jwt_only());
    }
}
