//! Deny-by-default role policy over endpoint paths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::jwt::Role;

/// Endpoint pattern: an exact path, or a prefix when it ends in `/*`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub pattern: String,
    /// Requests under this grant pass through the per-principal limiter.
    #[serde(default)]
    pub rate_limited: bool,
}

impl Grant {
    pub fn new(pattern: impl Into<String>, rate_limited: bool) -> Self {
        Self {
            pattern: pattern.into(),
            rate_limited,
        }
    }

    pub fn matches(&self, endpoint: &str) -> bool {
        match self.pattern.strip_suffix("/*") {
            Some(prefix) => endpoint.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('/')),
            None => self.pattern == endpoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Authorization {
    Allow { rate_limited: bool },
    Deny(String),
}

impl Authorization {
    pub fn is_allowed(&self) -> bool {
        matches!(self, Authorization::Allow { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolePolicy {
    grants: BTreeMap<Role, Vec<Grant>>,
}

impl Default for RolePolicy {
    /// Analysts infer, administrators infer and administer, automated
    /// services infer under rate limits.
    fn default() -> Self {
        let mut grants = BTreeMap::new();
        grants.insert(Role::HrAnalyst, vec![Grant::new("/infer", false)]);
        grants.insert(
            Role::SystemAdmin,
            vec![Grant::new("/infer", false), Grant::new("/admin/*", false)],
        );
        grants.insert(Role::AutomatedService, vec![Grant::new("/infer", true)]);
        Self { grants }
    }
}

impl RolePolicy {
    pub fn empty() -> Self {
        Self { grants: BTreeMap::new() }
    }

    pub fn grant(&mut self, role: Role, grant: Grant) {
        self.grants.entry(role).or_default().push(grant);
    }

    pub fn authorize(&self, role: &str, endpoint: &str) -> Authorization {
        let Some(role) = Role::parse(role) else {
            return Authorization::Deny(format!("unknown role {role:?}"));
        };
        match self
            .grants
            .get(&role)
            .and_then(|gs| gs.iter().find(|g| g.matches(endpoint)))
        {
            Some(g) => Authorization::Allow {
                rate_limited: g.rate_limited,
            },
            None => Authorization::Deny(format!("{role} may not access {endpoint}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_grant_needs_a_separator() {
        let g = Grant::new("/admin/*", false);
        assert!(g.matches("/admin/model-reload"));
        assert!(!g.matches("/admin"));
        assert!(!g.matches("/administrator/x"));
        assert!(!Grant::new("/infer", false).matches("/infer/x"));
    }

    #[test]
    fn empty_policy_denies() {
        assert!(!RolePolicy::empty().authorize("system_admin", "/infer").is_allowed());
    }
}
