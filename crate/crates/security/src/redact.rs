//! PII redaction over JSON values.
//!
//! Replacements never contain `@` or digits, and already-redacted values are
//! skipped, so redacting twice gives the same result as redacting once.

use regex::Regex;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

const MASK_PREFIX: &str = "[REDACTED";
const HASH_PREFIX: &str = "[HASH:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueClass {
    Email,
    Ssn,
    Phone,
}

impl ValueClass {
    pub fn name(self) -> &'static str {
        match self {
            ValueClass::Email => "email",
            ValueClass::Ssn => "ssn",
            ValueClass::Phone => "phone",
        }
    }

    fn pattern(self) -> &'static str {
        match self {
            ValueClass::Email => r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,}",
            ValueClass::Ssn => r"\d{3}-\d{2}-\d{4}",
            ValueClass::Phone => r"\(?\d{3}\)?[\-. ]?\d{3}[\-. ]?\d{4}",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Mask,
    Hash,
    Drop,
}

#[derive(Debug, Clone)]
pub enum Matcher {
    /// Matches object keys by regular expression.
    Field(Regex),
    /// Matches occurrences inside string values.
    Value(ValueClass, Regex),
}

#[derive(Debug, Clone)]
pub struct RedactionRule {
    pub matcher: Matcher,
    pub policy: Policy,
}

impl RedactionRule {
    pub fn field(pattern: &str, policy: Policy) -> Result<Self, regex::Error> {
        Ok(Self {
            matcher: Matcher::Field(Regex::new(pattern)?),
            policy,
        })
    }

    pub fn value(class: ValueClass, policy: Policy) -> Self {
        Self {
            matcher: Matcher::Value(class, Regex::new(class.pattern()).expect("builtin pattern compiles")),
            policy,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Redactor {
    rules: Vec<RedactionRule>,
    salt: Vec<u8>,
}

impl Redactor {
    pub fn new(rules: Vec<RedactionRule>, salt: impl Into<Vec<u8>>) -> Self {
        Self {
            rules,
            salt: salt.into(),
        }
    }

    /// Masks emails, SSN-like and phone-like values wherever they appear.
    pub fn standard() -> Self {
        Self::new(
            vec![
                RedactionRule::value(ValueClass::Email, Policy::Mask),
                RedactionRule::value(ValueClass::Ssn, Policy::Mask),
                RedactionRule::value(ValueClass::Phone, Policy::Mask),
            ],
            Vec::new(),
        )
    }

    pub fn rules(&self) -> &[RedactionRule] {
        &self.rules
    }

    pub fn redact(&self, value: &Value) -> Value {
        self.rules.iter().fold(value.clone(), |v, rule| self.apply(rule, v).unwrap_or(Value::Null))
    }

    pub fn redact_str(&self, text: &str) -> String {
        match self.redact(&Value::String(text.to_string())) {
            Value::String(s) => s,
            _ => String::new(),
        }
    }

    /// `None` means the value was dropped.
    fn apply(&self, rule: &RedactionRule, value: Value) -> Option<Value> {
        match value {
            Value::Object(map) => {
                let mut out = Map::new();
                for (k, v) in map {
                    if let Matcher::Field(re) = &rule.matcher {
                        if re.is_match(&k) {
                            match rule.policy {
                                Policy::Drop => {}
                                _ => {
                                    out.insert(k, self.replace_whole(rule.policy, "field", v));
                                }
                            }
                            continue;
                        }
                    }
                    if let Some(v) = self.apply(rule, v) {
                        out.insert(k, v);
                    }
                }
                Some(Value::Object(out))
            }
            Value::Array(items) => Some(Value::Array(
                items
                    .into_iter()
                    .map(|v| self.apply(rule, v).unwrap_or(Value::Null))
                    .collect(),
            )),
            Value::String(s) => match &rule.matcher {
                Matcher::Value(class, re) if re.is_match(&s) => match rule.policy {
                    Policy::Drop => None,
                    Policy::Mask => Some(Value::String(
                        re.replace_all(&s, format!("{MASK_PREFIX}:{}]", class.name()).as_str())
                            .into_owned(),
                    )),
                    Policy::Hash => Some(Value::String(
                        re.replace_all(&s, |c: &regex::Captures<'_>| self.digest(&c[0])).into_owned(),
                    )),
                },
                _ => Some(Value::String(s)),
            },
            other => Some(other),
        }
    }

    fn replace_whole(&self, policy: Policy, label: &str, value: Value) -> Value {
        if let Value::String(s) = &value {
            if s.starts_with(MASK_PREFIX) || s.starts_with(HASH_PREFIX) {
                return value;
            }
        }
        match policy {
            Policy::Mask => Value::String(format!("{MASK_PREFIX}:{label}]")),
            Policy::Hash => {
                let text = match &value {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                Value::String(self.digest(&text))
            }
            Policy::Drop => Value::Null,
        }
    }

    /// Salted digest spelled with the letters a..p so it can never match a
    /// numeric value class.
    fn digest(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(&self.salt);
        h.update(text.as_bytes());
        let letters: String = h.finalize()[..8]
            .iter()
            .flat_map(|b| [b >> 4, b & 0x0f])
            .map(|n| char::from(b'a' + n))
            .collect();
        format!("{HASH_PREFIX}{letters}]")
    }
}
