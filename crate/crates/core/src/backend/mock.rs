//! Deterministic scripted backend.
//!
//! A script is an ordered rule list. Each rule may constrain the item id,
//! require a literal substring and/or match a regex against the last user
//! message; the first rule whose constraints all hold answers. When a rule
//! has a pattern, `$1`-style references in its response expand to the
//! pattern's captures.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use crate::parsing::normalize_connective;
use crate::strategies::prompts;
use crate::taxonomy::{ConnectiveLookup, ConnectiveMapping, SenseId, SenseInventory};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response: String,
    #[serde(skip)]
    compiled: Option<Regex>,
}

impl MockRule {
    pub fn new(response: impl Into<String>) -> Self {
        MockRule {
            item: None,
            contains: None,
            pattern: None,
            response: response.into(),
            compiled: None,
        }
    }

    pub fn contains(mut self, literal: impl Into<String>) -> Self {
        self.contains = Some(literal.into());
        self
    }

    pub fn for_item(mut self, id: impl Into<String>) -> Self {
        self.item = Some(id.into());
        self
    }

    pub fn pattern(mut self, re: impl Into<String>) -> Result<Self, BackendError> {
        let re = re.into();
        self.compiled = Some(Regex::new(&re).map_err(|e| BackendError::Script(e.to_string()))?);
        self.pattern = Some(re);
        Ok(self)
    }

    /// Like [`MockRule::pattern`], reusing already compiled expressions.
    fn cached_pattern(mut self, re: String, cache: &mut HashMap<String, Regex>) -> Result<Self, BackendError> {
        let compiled = match cache.get(&re) {
            Some(r) => r.clone(),
            None => {
                let r = Regex::new(&re).map_err(|e| BackendError::Script(e.to_string()))?;
                cache.insert(re.clone(), r.clone());
                r
            }
        };
        self.compiled = Some(compiled);
        self.pattern = Some(re);
        Ok(self)
    }

    fn compile(&mut self) -> Result<(), BackendError> {
        if let Some(p) = &self.pattern {
            self.compiled = Some(Regex::new(p).map_err(|e| BackendError::Script(format!("{p:?}: {e}")))?);
        }
        Ok(())
    }

    fn answer(&self, request: &ChatRequest) -> Option<String> {
        if let Some(id) = &self.item {
            if request.item_id.as_deref() != Some(id.as_str()) {
                return None;
            }
        }
        let text = request.last_user_message();
        if let Some(lit) = &self.contains {
            if !text.contains(lit.as_str()) {
                return None;
            }
        }
        match &self.compiled {
            None => Some(self.response.clone()),
            Some(re) => {
                let caps = re.captures(text)?;
                let mut out = String::new();
                caps.expand(&self.response, &mut out);
                Some(out)
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    /// Error on no match even when a default is set.
    #[serde(default)]
    pub strict: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockScript {
            strict: true,
            default: None,
            rules,
        }
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.strict = false;
        self.default = Some(response.into());
        self
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let mut script: MockScript =
            serde_json::from_str(text).map_err(|e| BackendError::Script(e.to_string()))?;
        for r in &mut script.rules {
            r.compile()?;
        }
        Ok(script)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn respond(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if let Some(text) = self.rules.iter().find_map(|r| r.answer(request)) {
            return Ok(text);
        }
        match (&self.default, self.strict) {
            (Some(d), false) => Ok(d.clone()),
            _ => Err(BackendError::NoMatch),
        }
    }

    /// Script answering every strategy's prompts with the item's gold sense.
    ///
    /// Items are identified by the request's item id. The two-step free
    /// insertion answers with the first typical connective of the sense that
    /// maps to it unambiguously (or the first one if none does).
    pub fn gold_oracle<'a>(
        golds: impl IntoIterator<Item = (&'a str, &'a SenseId)>,
        inventory: &SenseInventory,
        mapping: &ConnectiveMapping,
    ) -> Result<Self, BackendError> {
        let mut rules = Vec::new();
        let mut regexes = HashMap::new();
        for (id, gold) in golds {
            let entry = inventory
                .get(gold)
                .map_err(|e| BackendError::Script(e.to_string()))?;

            rules.push(
                MockRule::new("$1")
                    .for_item(id)
                    .contains(prompts::MC_TASK)
                    .cached_pattern(format!(r"(?m)^(\d+)\. {},", regex::escape(&entry.display_name())), &mut regexes)?,
            );

            rules.push(
                MockRule::new("Yes\nConfidence: 10")
                    .for_item(id)
                    .contains(prompts::binary_question(entry)),
            );
            rules.push(
                MockRule::new("No\nConfidence: 10")
                    .for_item(id)
                    .contains(prompts::BINARY_QUESTION_PREFIX),
            );

            rules.push(
                MockRule::new(entry.positive_example_answer())
                    .for_item(id)
                    .contains(entry.verification_question.clone()),
            );
            for other in inventory.entries().iter().filter(|e| e.name != *gold) {
                rules.push(
                    MockRule::new(other.negative_answer().text.clone())
                        .for_item(id)
                        .contains(other.verification_question.clone()),
                );
            }

            let unambiguous = |dc: &&String| {
                let key = normalize_connective(dc).unwrap_or_default();
                matches!(mapping.senses_for_connective(&key),
                    ConnectiveLookup::Known(e) if e.candidates == [gold.clone()])
            };
            let insertion = entry
                .typical_dcs
                .iter()
                .find(unambiguous)
                .unwrap_or(&entry.typical_dcs[0]);
            rules.push(
                MockRule::new(insertion.clone())
                    .for_item(id)
                    .contains(prompts::INSERTION_TASK),
            );
            let mut resolving: Vec<String> = mapping
                .iter()
                .filter(|(_, e)| e.candidates == [gold.clone()])
                .map(|(k, _)| regex::escape(k))
                .collect();
            resolving.extend(entry.typical_dcs.iter().map(|d| regex::escape(d)));
            rules.push(
                MockRule::new("$1")
                    .for_item(id)
                    .contains(prompts::FORCED_CHOICE_TASK)
                    .cached_pattern(format!(r"(?mi)^(\d+)\. (?:{})$", resolving.join("|")), &mut regexes)?,
            );
        }
        Ok(MockScript::new(rules))
    }
}

/// Scripted backend; counts the requests it answers.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    /// Always answers `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(MockScript::new(vec![MockRule::new(response)]))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let content = self.script.respond(request)?;
        if content.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(ChatResponse {
            content,
            prompt_tokens: None,
            completion_tokens: None,
            from_cache: false,
            latency_ms: 0,
        })
    }
}
