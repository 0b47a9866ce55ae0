//! Prompting strategies and baselines.
//!
//! Each strategy is a fixed conversation over a backend. All prompts for one
//! item run sequentially and every exchange is recorded in the prediction's
//! transcript, so `prompt_count == transcript.len()` always holds.

pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, TokenCounter};
use crate::corpus::RelationItem;
use crate::parsing::{
    normalize_connective, parse_choice, parse_mc_answer, parse_verification_answer, parse_yes_no_confidence,
    ParsedAnswer,
};
use crate::taxonomy::{ConnectiveLookup, ConnectiveMapping, OptionList, Polarity, SenseId, SenseInventory, TaxonomyError};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("item {0:?} is missing an argument")]
    MissingArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Mc,
    TwoStep,
    PerClassBinary,
    PerClassVerification,
    BaselineRandom,
    BaselineConstant,
}

impl StrategyId {
    pub const ALL: [StrategyId; 6] = [
        StrategyId::Mc,
        StrategyId::TwoStep,
        StrategyId::PerClassBinary,
        StrategyId::PerClassVerification,
        StrategyId::BaselineRandom,
        StrategyId::BaselineConstant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Mc => "mc",
            StrategyId::TwoStep => "two_step",
            StrategyId::PerClassBinary => "per_class_binary",
            StrategyId::PerClassVerification => "per_class_verification",
            StrategyId::BaselineRandom => "baseline_random",
            StrategyId::BaselineConstant => "baseline_constant",
        }
    }

    pub fn is_per_class(self) -> bool {
        matches!(self, StrategyId::PerClassBinary | StrategyId::PerClassVerification)
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, StrategyId::BaselineRandom | StrategyId::BaselineConstant)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FallbackFlag {
    AllNegativeFallback,
    UnknownConnectiveFallback,
    ParseFallback,
}

/// One recorded request/response turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    /// The final user message of the request.
    pub prompt: String,
    pub response: String,
    pub cached: bool,
    /// Reported prompt tokens, or the estimate over the full request input.
    pub input_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub strategy: StrategyId,
    pub labels: Vec<SenseId>,
    /// Senses answered positively in the per-class step.
    #[serde(default)]
    pub candidates: Vec<SenseId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<BTreeMap<SenseId, u8>>,
    #[serde(default)]
    pub fallback_flags: BTreeSet<FallbackFlag>,
    pub prompt_count: usize,
    pub input_tokens: u64,
    #[serde(default)]
    pub transcript: Vec<Exchange>,
}

impl Prediction {
    fn empty(item_id: &str, strategy: StrategyId) -> Self {
        Prediction {
            item_id: item_id.to_string(),
            strategy,
            labels: Vec::new(),
            candidates: Vec::new(),
            confidences: None,
            fallback_flags: BTreeSet::new(),
            prompt_count: 0,
            input_tokens: 0,
            transcript: Vec::new(),
        }
    }

    fn flag(&mut self, f: FallbackFlag) {
        self.fallback_flags.insert(f);
    }

    pub fn has_flag(&self, f: FallbackFlag) -> bool {
        self.fallback_flags.contains(&f)
    }
}

/// Request parameters shared by every prompt of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
}

impl Default for RequestSettings {
    fn default() -> Self {
        RequestSettings {
            model_id: "gpt-4".to_string(),
            temperature: 0.0,
            max_output_tokens: None,
        }
    }
}

/// Which backend-driven strategy to run, and whether per-class answers are
/// merged by a final multiple-choice step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    MultiwayMc,
    TwoStep,
    PerClassBinary { aggregate: bool },
    PerClassVerification { aggregate: bool },
}

impl Strategy {
    pub fn id(self) -> StrategyId {
        match self {
            Strategy::MultiwayMc => StrategyId::Mc,
            Strategy::TwoStep => StrategyId::TwoStep,
            Strategy::PerClassBinary { .. } => StrategyId::PerClassBinary,
            Strategy::PerClassVerification { .. } => StrategyId::PerClassVerification,
        }
    }
}

/// Runs strategies for single items against one backend.
pub struct Annotator<'a> {
    pub inventory: &'a SenseInventory,
    pub mapping: &'a ConnectiveMapping,
    pub backend: &'a dyn ChatBackend,
    pub settings: RequestSettings,
    pub token_counter: &'a dyn TokenCounter,
}

/// Conversation state for one item.
struct Session<'s, 'a> {
    annotator: &'s Annotator<'a>,
    prediction: Prediction,
}

impl<'s, 'a> Session<'s, 'a> {
    /// Sends `history` followed by `prompt` and records the exchange.
    fn ask(&mut self, history: &[ChatMessage], prompt: String) -> Result<String, BackendError> {
        let a = self.annotator;
        let mut messages = Vec::with_capacity(history.len() + 2);
        messages.push(ChatMessage::system(a.inventory.system_prompt()));
        messages.extend_from_slice(history);
        messages.push(ChatMessage::user(prompt.clone()));
        let request = ChatRequest {
            model_id: a.settings.model_id.clone(),
            messages,
            temperature: a.settings.temperature,
            max_output_tokens: a.settings.max_output_tokens,
            item_id: Some(self.prediction.item_id.clone()),
        };
        let response = a.backend.complete(&request)?;
        let input_tokens = response
            .prompt_tokens
            .unwrap_or_else(|| a.token_counter.count(&request.messages));
        self.prediction.input_tokens += input_tokens;
        self.prediction.prompt_count += 1;
        self.prediction.transcript.push(Exchange {
            prompt,
            response: response.content.clone(),
            cached: response.from_cache,
            input_tokens,
        });
        Ok(response.content)
    }

    /// Multiple-choice step; returns the chosen sense or flags a parse failure.
    fn choose(&mut self, history: &[ChatMessage], item: &RelationItem, options: &OptionList) -> Result<Option<SenseId>, BackendError> {
        let answer = self.ask(history, prompts::mc_prompt(&item.arg1, &item.arg2, options))?;
        match parse_mc_answer(&answer, &options.options) {
            ParsedAnswer::Option { sense, .. } => Ok(Some(sense)),
            _ => {
                self.prediction.flag(FallbackFlag::ParseFallback);
                Ok(None)
            }
        }
    }
}

fn check_arguments(item: &RelationItem) -> Result<(), StrategyError> {
    if item.arg1.trim().is_empty() || item.arg2.trim().is_empty() {
        return Err(StrategyError::MissingArgument(item.id.clone()));
    }
    Ok(())
}

impl<'a> Annotator<'a> {
    fn session(&self, item: &RelationItem, strategy: StrategyId) -> Session<'_, 'a> {
        Session {
            annotator: self,
            prediction: Prediction::empty(&item.id, strategy),
        }
    }

    pub fn run(&self, item: &RelationItem, strategy: Strategy) -> Result<Prediction, StrategyError> {
        match strategy {
            Strategy::MultiwayMc => self.run_multiway_mc(item),
            Strategy::TwoStep => self.run_two_step(item),
            Strategy::PerClassBinary { aggregate } => self.run_per_class_binary(item, aggregate),
            Strategy::PerClassVerification { aggregate } => self.run_per_class_verification(item, aggregate),
        }
    }

    /// One prompt listing every sense of the inventory.
    pub fn run_multiway_mc(&self, item: &RelationItem) -> Result<Prediction, StrategyError> {
        check_arguments(item)?;
        let mut s = self.session(item, StrategyId::Mc);
        let options = self.inventory.full_options();
        if let Some(sense) = s.choose(&[], item, &options)? {
            s.prediction.labels.push(sense);
        }
        Ok(s.prediction)
    }

    /// Free connective insertion, then a forced choice when the connective
    /// is ambiguous or unknown.
    pub fn run_two_step(&self, item: &RelationItem) -> Result<Prediction, StrategyError> {
        check_arguments(item)?;
        let mut s = self.session(item, StrategyId::TwoStep);
        let first_prompt = prompts::insertion_prompt(&item.arg1, &item.arg2);
        let generated = s.ask(&[], first_prompt.clone())?;
        let history = [ChatMessage::user(first_prompt), ChatMessage::assistant(generated.clone())];

        let lookup = normalize_connective(&generated)
            .map(|c| self.mapping.senses_for_connective(&c))
            .unwrap_or(ConnectiveLookup::Unknown);

        // (forced-choice connectives, sense each one selects)
        let (choices, senses): (Vec<String>, Vec<SenseId>) = match lookup {
            ConnectiveLookup::Known(entry) if entry.candidates.len() == 1 => {
                s.prediction.labels.push(entry.candidates[0].clone());
                return Ok(s.prediction);
            }
            ConnectiveLookup::Known(entry) => (entry.disambiguation.clone(), entry.candidates.clone()),
            ConnectiveLookup::Unknown => {
                s.prediction.flag(FallbackFlag::UnknownConnectiveFallback);
                self.inventory
                    .entries()
                    .iter()
                    .flat_map(|e| e.typical_dcs.iter().map(move |dc| (dc.clone(), e.name.clone())))
                    .unzip()
            }
        };
        let answer = s.ask(&history, prompts::forced_choice_prompt(&choices))?;
        match parse_choice(&answer, &choices) {
            Some(i) => s.prediction.labels.push(senses[i].clone()),
            None => s.prediction.flag(FallbackFlag::ParseFallback),
        }
        Ok(s.prediction)
    }

    /// One yes/no prompt per sense; confidences are recorded only.
    pub fn run_per_class_binary(&self, item: &RelationItem, aggregate: bool) -> Result<Prediction, StrategyError> {
        check_arguments(item)?;
        let mut s = self.session(item, StrategyId::PerClassBinary);
        let mut history = Vec::with_capacity(2 * self.inventory.len());
        let mut candidates = Vec::new();
        let mut confidences = BTreeMap::new();
        for entry in self.inventory.entries() {
            let prompt = prompts::binary_prompt(entry, &item.arg1, &item.arg2);
            let answer = s.ask(&[], prompt.clone())?;
            match parse_yes_no_confidence(&answer) {
                ParsedAnswer::YesNo { flag, confidence } => {
                    if flag {
                        candidates.push(entry.name.clone());
                    }
                    if let Some(c) = confidence {
                        confidences.insert(entry.name.clone(), c);
                    }
                }
                _ => s.prediction.flag(FallbackFlag::ParseFallback),
            }
            history.push(ChatMessage::user(prompt));
            history.push(ChatMessage::assistant(answer));
        }
        s.prediction.confidences = Some(confidences);
        self.finish_per_class(s, item, candidates, &history, aggregate)
    }

    /// One verification question per sense; a sense is a candidate when
    /// the answer has positive polarity.
    pub fn run_per_class_verification(&self, item: &RelationItem, aggregate: bool) -> Result<Prediction, StrategyError> {
        check_arguments(item)?;
        let mut s = self.session(item, StrategyId::PerClassVerification);
        let mut history = Vec::with_capacity(2 * self.inventory.len());
        let mut candidates = Vec::new();
        for entry in self.inventory.entries() {
            let prompt = prompts::verification_prompt(entry, &item.arg1, &item.arg2);
            let answer = s.ask(&[], prompt.clone())?;
            match parse_verification_answer(&answer, &entry.answers) {
                ParsedAnswer::Verification { polarity, .. } => {
                    if polarity == Polarity::Positive {
                        candidates.push(entry.name.clone());
                    }
                }
                _ => s.prediction.flag(FallbackFlag::ParseFallback),
            }
            history.push(ChatMessage::user(prompt));
            history.push(ChatMessage::assistant(answer));
        }
        self.finish_per_class(s, item, candidates, &history, aggregate)
    }

    fn finish_per_class(
        &self,
        mut s: Session<'_, 'a>,
        item: &RelationItem,
        candidates: Vec<SenseId>,
        history: &[ChatMessage],
        aggregate: bool,
    ) -> Result<Prediction, StrategyError> {
        s.prediction.candidates = candidates.clone();
        if aggregate {
            if candidates.is_empty() {
                s.prediction.flag(FallbackFlag::AllNegativeFallback);
            }
            if let Some(sense) = aggregate_in_session(&mut s, item, &candidates, history)? {
                s.prediction.labels.push(sense);
            }
        } else {
            s.prediction.labels = candidates;
        }
        Ok(s.prediction)
    }

    /// Standalone multiple-choice aggregation over `candidates` with the
    /// given per-class exchanges as context. Empty candidates mean the
    /// full inventory.
    pub fn aggregate_candidates_mc(
        &self,
        item: &RelationItem,
        candidates: &[SenseId],
        history: &[ChatMessage],
    ) -> Result<(Option<SenseId>, Prediction), StrategyError> {
        check_arguments(item)?;
        let mut s = self.session(item, StrategyId::Mc);
        let chosen = aggregate_in_session(&mut s, item, candidates, history)?;
        Ok((chosen, s.prediction))
    }
}

fn aggregate_in_session(
    s: &mut Session<'_, '_>,
    item: &RelationItem,
    candidates: &[SenseId],
    history: &[ChatMessage],
) -> Result<Option<SenseId>, StrategyError> {
    let inventory = s.annotator.inventory;
    let options = if candidates.is_empty() {
        inventory.full_options()
    } else {
        inventory.options_block(&inventory.in_order(candidates.iter().cloned()))?
    };
    Ok(s.choose(history, item, &options)?)
}

/// Constant or seeded-random label emitters.
#[derive(Debug, Clone)]
pub enum Baseline {
    Random(Box<ChaCha8Rng>),
    Constant(SenseId),
}

impl Baseline {
    pub fn random(seed: u64) -> Self {
        Baseline::Random(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn constant(sense: SenseId) -> Self {
        Baseline::Constant(sense)
    }

    pub fn id(&self) -> StrategyId {
        match self {
            Baseline::Random(_) => StrategyId::BaselineRandom,
            Baseline::Constant(_) => StrategyId::BaselineConstant,
        }
    }

    /// Draws the next label. Random draws consume one value per call, so a
    /// fixed seed gives the same label sequence over the same item order.
    pub fn run(&mut self, item: &RelationItem, inventory: &SenseInventory) -> Result<Prediction, StrategyError> {
        let mut p = Prediction::empty(&item.id, self.id());
        let label = match self {
            Baseline::Random(rng) => {
                let senses = inventory.entries();
                senses[rng.random_range(0..senses.len())].name.clone()
            }
            Baseline::Constant(sense) => inventory.get(sense)?.name.clone(),
        };
        p.labels.push(label);
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ByteEstimate, MockBackend, MockRule, MockScript};
    use crate::corpus::CorpusTag;

    fn item() -> RelationItem {
        RelationItem {
            id: "i1".into(),
            arg1: "Capture the gaseous substance".into(),
            arg2: "And transport it to recycling center".into(),
            votes: None,
            gold_labels: Some(vec!["Cause".into()]),
            corpus_tag: CorpusTag::Fixture,
        }
    }

    struct Fixture {
        inv: SenseInventory,
        map: ConnectiveMapping,
    }

    impl Fixture {
        fn pdtb() -> Self {
            let inv = SenseInventory::pdtb3();
            let map = ConnectiveMapping::default_for(&inv);
            Fixture { inv, map }
        }

        fn annotator<'a>(&'a self, backend: &'a MockBackend) -> Annotator<'a> {
            Annotator {
                inventory: &self.inv,
                mapping: &self.map,
                backend,
                settings: RequestSettings::default(),
                token_counter: &ByteEstimate,
            }
        }
    }

    fn names(senses: &[SenseId]) -> Vec<&str> {
        senses.iter().map(SenseId::as_str).collect()
    }

    #[test]
    fn mc_single_prompt() {
        let f = Fixture::pdtb();
        let b = MockBackend::constant("Answer: 3");
        let p = f.annotator(&b).run_multiway_mc(&item()).unwrap();
        assert_eq!(names(&p.labels), ["Cause"]);
        assert_eq!(p.prompt_count, 1);
        assert_eq!(p.transcript.len(), 1);
        assert!(p.transcript[0].prompt.starts_with(prompts::MC_TASK));
        assert!(p.input_tokens > 0);
    }

    #[test]
    fn mc_parse_failure_is_flagged() {
        let f = Fixture::pdtb();
        let b = MockBackend::constant("42");
        let p = f.annotator(&b).run_multiway_mc(&item()).unwrap();
        assert!(p.labels.is_empty());
        assert!(p.has_flag(FallbackFlag::ParseFallback));
    }

    #[test]
    fn two_step_ambiguous_connective() {
        let f = Fixture::pdtb();
        let b = MockBackend::new(MockScript::new(vec![
            MockRule::new("however").contains(prompts::INSERTION_TASK),
            MockRule::new("in contrast").contains(prompts::FORCED_CHOICE_TASK),
        ]));
        let p = f.annotator(&b).run_two_step(&item()).unwrap();
        assert_eq!(names(&p.labels), ["Contrast"]);
        assert_eq!(p.prompt_count, 2);
        assert!(p.transcript[1].prompt.contains("1. in contrast\n2. despite this"));
    }

    #[test]
    fn two_step_continues_the_conversation() {
        let f = Fixture::pdtb();
        // the turn-2 rule only fires if the turn-1 answer is in context
        struct Inspect(MockBackend);
        impl ChatBackend for Inspect {
            fn complete(&self, r: &ChatRequest) -> Result<crate::backend::ChatResponse, BackendError> {
                if r.last_user_message().contains(prompts::FORCED_CHOICE_TASK) {
                    assert_eq!(r.messages.len(), 4);
                    assert_eq!(r.messages[2].content, "However,");
                }
                self.0.complete(r)
            }
        }
        let inner = MockBackend::new(MockScript::new(vec![
            MockRule::new("However,").contains(prompts::INSERTION_TASK),
            MockRule::new("2").contains(prompts::FORCED_CHOICE_TASK),
        ]));
        let backend = Inspect(inner);
        let a = Annotator {
            inventory: &f.inv,
            mapping: &f.map,
            backend: &backend,
            settings: RequestSettings::default(),
            token_counter: &ByteEstimate,
        };
        let p = a.run_two_step(&item()).unwrap();
        assert_eq!(names(&p.labels), ["Concession"]);
    }

    #[test]
    fn two_step_unambiguous_connective() {
        let f = Fixture::pdtb();
        let b = MockBackend::constant("For example");
        let p = f.annotator(&b).run_two_step(&item()).unwrap();
        assert_eq!(names(&p.labels), ["Instantiation"]);
        assert_eq!(p.prompt_count, 1);
        assert!(p.fallback_flags.is_empty());
    }

    #[test]
    fn two_step_unknown_connective_falls_back() {
        let f = Fixture::pdtb();
        let b = MockBackend::new(MockScript::new(vec![
            MockRule::new("zxqv").contains(prompts::INSERTION_TASK),
            MockRule::new("thereby").contains(prompts::FORCED_CHOICE_TASK),
        ]));
        let p = f.annotator(&b).run_two_step(&item()).unwrap();
        assert!(p.has_flag(FallbackFlag::UnknownConnectiveFallback));
        assert_eq!(names(&p.labels), ["Manner"]);
        assert_eq!(p.prompt_count, 2);
        let all_dcs: usize = f.inv.entries().iter().map(|e| e.typical_dcs.len()).sum();
        assert!(p.transcript[1].prompt.contains(&format!("{all_dcs}. rather")));
    }

    fn binary_yes_for(senses: &[&str], mc_answer: &str) -> MockBackend {
        let inv = SenseInventory::pdtb3();
        let mut rules: Vec<MockRule> = senses
            .iter()
            .map(|s| MockRule::new("Yes\nConfidence: 8").contains(prompts::binary_question(inv.get(&(*s).into()).unwrap())))
            .collect();
        rules.push(MockRule::new("No\nConfidence: 9").contains(prompts::BINARY_QUESTION_PREFIX));
        rules.push(MockRule::new(mc_answer).contains(prompts::MC_TASK));
        MockBackend::new(MockScript::new(rules))
    }

    #[test]
    fn binary_aggregated() {
        let f = Fixture::pdtb();
        let b = binary_yes_for(&["Cause", "Conjunction", "Synchronous"], "1");
        let p = f.annotator(&b).run_per_class_binary(&item(), true).unwrap();
        assert_eq!(names(&p.candidates), ["Synchronous", "Cause", "Conjunction"]);
        assert_eq!(names(&p.labels), ["Synchronous"]);
        assert_eq!(p.prompt_count, 15);
        let mc = &p.transcript[14].prompt;
        assert!(mc.contains(
            "Options:\n1. Temporal.Synchronous, at that time / while\n2. Contingency.Cause, consequently / therefore\n3. Expansion.Conjunction, in addition / also\n\nAnswer: ?"
        ));
        let conf = p.confidences.as_ref().unwrap();
        assert_eq!(conf.len(), 14);
        assert_eq!(conf[&SenseId::from("Cause")], 8);
        assert_eq!(conf[&SenseId::from("Manner")], 9);
    }

    #[test]
    fn aggregation_sees_per_class_context() {
        let f = Fixture::pdtb();
        struct Inspect(MockBackend);
        impl ChatBackend for Inspect {
            fn complete(&self, r: &ChatRequest) -> Result<crate::backend::ChatResponse, BackendError> {
                if r.last_user_message().starts_with(prompts::MC_TASK) {
                    assert_eq!(r.messages.len(), 1 + 2 * 14 + 1);
                } else {
                    assert_eq!(r.messages.len(), 2);
                }
                self.0.complete(r)
            }
        }
        let backend = Inspect(binary_yes_for(&["Cause"], "1"));
        let a = Annotator {
            inventory: &f.inv,
            mapping: &f.map,
            backend: &backend,
            settings: RequestSettings::default(),
            token_counter: &ByteEstimate,
        };
        let p = a.run_per_class_binary(&item(), true).unwrap();
        assert_eq!(names(&p.labels), ["Cause"]);
    }

    #[test]
    fn binary_all_negative_falls_back_to_full_list() {
        let f = Fixture::pdtb();
        let b = binary_yes_for(&[], "4");
        let p = f.annotator(&b).run_per_class_binary(&item(), true).unwrap();
        assert!(p.candidates.is_empty());
        assert!(p.has_flag(FallbackFlag::AllNegativeFallback));
        assert_eq!(names(&p.labels), ["Cause+Belief"]);
        assert!(p.transcript[14].prompt.contains("14. Expansion.Substitution, instead / rather"));
    }

    #[test]
    fn binary_multi_label_skips_mc() {
        let f = Fixture::pdtb();
        let b = binary_yes_for(&["Cause", "Conjunction", "Contrast", "Manner"], "1");
        let p = f.annotator(&b).run_per_class_binary(&item(), false).unwrap();
        assert_eq!(p.labels.len(), 4);
        assert_eq!(p.labels, p.candidates);
        assert_eq!(p.prompt_count, 14);
    }

    #[test]
    fn binary_unparseable_counts_as_no() {
        let f = Fixture::pdtb();
        let b = MockBackend::new(MockScript::new(vec![
            MockRule::new("Yes and no").contains(prompts::binary_question(f.inv.get(&"Cause".into()).unwrap())),
            MockRule::new("Yes").contains(prompts::binary_question(f.inv.get(&"Purpose".into()).unwrap())),
            MockRule::new("No").contains(prompts::BINARY_QUESTION_PREFIX),
            MockRule::new("1").contains(prompts::MC_TASK),
        ]));
        let p = f.annotator(&b).run_per_class_binary(&item(), true).unwrap();
        assert_eq!(names(&p.candidates), ["Purpose"]);
        assert!(p.has_flag(FallbackFlag::ParseFallback));
        assert_eq!(names(&p.labels), ["Purpose"]);
    }

    fn verification_backend(inv: &SenseInventory, answers: &[(&str, &str)], mc: &str) -> MockBackend {
        let mut rules: Vec<MockRule> = answers
            .iter()
            .map(|(s, a)| MockRule::new(*a).contains(inv.get(&(*s).into()).unwrap().verification_question.clone()))
            .collect();
        for e in inv.entries() {
            rules.push(MockRule::new(e.negative_answer().text.clone()).contains(e.verification_question.clone()));
        }
        rules.push(MockRule::new(mc).contains(prompts::MC_TASK));
        MockBackend::new(MockScript::new(rules))
    }

    #[test]
    fn verification_candidates_by_polarity() {
        let f = Fixture::pdtb();
        let b = verification_backend(&f.inv, &[("Asynchronous", "Arg1")], "1");
        let p = f.annotator(&b).run_per_class_verification(&item(), true).unwrap();
        assert_eq!(names(&p.candidates), ["Asynchronous"]);
        assert_eq!(names(&p.labels), ["Asynchronous"]);
        assert_eq!(p.prompt_count, 15);
        assert!(p.confidences.is_none());

        let b = verification_backend(&f.inv, &[("Synchronous", "partially")], "1");
        let p = f.annotator(&b).run_per_class_verification(&item(), false).unwrap();
        assert_eq!(names(&p.labels), ["Synchronous"]);
        assert_eq!(p.prompt_count, 14);
    }

    #[test]
    fn verification_all_none_mirrors_binary_fallback() {
        let f = Fixture::pdtb();
        let b = verification_backend(&f.inv, &[], "Contingency.Purpose");
        let p = f.annotator(&b).run_per_class_verification(&item(), true).unwrap();
        assert!(p.has_flag(FallbackFlag::AllNegativeFallback));
        assert_eq!(names(&p.labels), ["Purpose"]);
        assert!(p.transcript[14].prompt.contains("1. Temporal.Asynchronous"));
    }

    #[test]
    fn standalone_aggregation() {
        let f = Fixture::pdtb();
        let b = MockBackend::constant("1");
        let a = f.annotator(&b);
        let (chosen, p) = a.aggregate_candidates_mc(&item(), &["Purpose".into()], &[]).unwrap();
        assert_eq!(chosen, Some("Purpose".into()));
        assert!(p.transcript[0].prompt.contains("Options:\n1. Contingency.Purpose, in order to / such that\n\n"));

        let b = MockBackend::constant("14");
        let (chosen, _) = f.annotator(&b).aggregate_candidates_mc(&item(), &[], &[]).unwrap();
        assert_eq!(chosen, Some("Substitution".into()));
    }

    #[test]
    fn backend_errors_propagate() {
        let f = Fixture::pdtb();
        let b = MockBackend::new(MockScript::new(vec![]));
        assert!(matches!(
            f.annotator(&b).run_multiway_mc(&item()),
            Err(StrategyError::Backend(BackendError::NoMatch))
        ));
    }

    #[test]
    fn baselines() {
        let inv = SenseInventory::discogem7();
        let mut c = Baseline::constant("Conjunction".into());
        let p = c.run(&item(), &inv).unwrap();
        assert_eq!(names(&p.labels), ["Conjunction"]);
        assert_eq!((p.prompt_count, p.input_tokens), (0, 0));
        assert!(Baseline::constant("Manner".into()).run(&item(), &inv).is_err());

        let draw = |seed| {
            let mut r = Baseline::random(seed);
            (0..50).map(|_| r.run(&item(), &inv).unwrap().labels[0].clone()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn prediction_record_fields() {
        let f = Fixture::pdtb();
        let b = MockBackend::constant("3");
        let p = f.annotator(&b).run_multiway_mc(&item()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        for field in ["item_id", "strategy", "labels", "candidates", "fallback_flags", "prompt_count", "input_tokens", "transcript"] {
            assert!(v.get(field).is_some(), "{field}");
        }
        assert_eq!(v["strategy"], "mc");
        assert_eq!(v["transcript"][0]["cached"], false);
        let back: Prediction = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
