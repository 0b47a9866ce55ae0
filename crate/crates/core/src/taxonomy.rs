//! Sense hierarchy, prompt-pack loading and the connective lexicon.
//!
//! An inventory is an ordered list of Level-2 senses. The order is the
//! option order used in every rendered prompt, so two runs with the same
//! pack always number their options identically.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parsing::normalize_connective;

const DEFAULT_PACK: &str = include_str!("../data/pdtb3_pack.toml");
const DEFAULT_CONNECTIVES: &str = include_str!("../data/connectives.tsv");

pub const PDTB3_SENSES: [&str; 14] = [
    "Asynchronous",
    "Synchronous",
    "Cause",
    "Cause+Belief",
    "Condition",
    "Purpose",
    "Contrast",
    "Concession",
    "Conjunction",
    "Instantiation",
    "Equivalence",
    "Level-of-detail",
    "Manner",
    "Substitution",
];

pub const DISCOGEM7_SENSES: [&str; 7] = [
    "Concession",
    "Contrast",
    "Cause",
    "Conjunction",
    "Asynchronous",
    "Level-of-detail",
    "Instantiation",
];

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("prompt pack does not parse: {0}")]
    Pack(String),
    #[error("missing sense {0:?}")]
    MissingSense(String),
    #[error("duplicate sense {0:?}")]
    DuplicateSense(String),
    #[error("unknown sense {0:?}")]
    UnknownSense(String),
    #[error("unknown Level-1 class {0:?}")]
    UnknownLevel1(String),
    #[error("malformed verification answers for {sense:?}: {reason}")]
    MalformedAnswers { sense: String, reason: String },
    #[error("sense {0:?} has no typical connectives")]
    NoConnectives(String),
    #[error("option list is empty")]
    EmptyOptions,
    #[error("connective table line {line}: {reason}")]
    Mapping { line: usize, reason: String },
}

/// Top level of the sense hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level1Sense {
    Temporal,
    Contingency,
    Comparison,
    Expansion,
}

impl Level1Sense {
    pub const ALL: [Level1Sense; 4] = [
        Level1Sense::Temporal,
        Level1Sense::Contingency,
        Level1Sense::Comparison,
        Level1Sense::Expansion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Level1Sense::Temporal => "Temporal",
            Level1Sense::Contingency => "Contingency",
            Level1Sense::Comparison => "Comparison",
            Level1Sense::Expansion => "Expansion",
        }
    }
}

impl fmt::Display for Level1Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level1Sense {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level1Sense::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| TaxonomyError::UnknownLevel1(s.to_string()))
    }
}

/// Canonical, case-sensitive Level-2 sense identifier ("Cause", "Level-of-detail").
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SenseId(String);

impl SenseId {
    pub fn new(name: impl Into<String>) -> Self {
        SenseId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SenseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SenseId {
    fn from(s: &str) -> Self {
        SenseId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationAnswer {
    pub text: String,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsense: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentPair {
    pub arg1: String,
    pub arg2: String,
}

/// Everything the prompts need to know about one Level-2 sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseEntry {
    pub name: SenseId,
    pub parent: Level1Sense,
    pub typical_dcs: Vec<String>,
    pub description: String,
    pub positive_example: ArgumentPair,
    pub negative_example: ArgumentPair,
    pub verification_question: String,
    /// Answer displayed for the positive few-shot example; defaults to the
    /// first positive answer.
    #[serde(default)]
    pub verification_example_answer: Option<String>,
    pub answers: Vec<VerificationAnswer>,
}

impl SenseEntry {
    /// "Temporal.Asynchronous"
    pub fn display_name(&self) -> String {
        format!("{}.{}", self.parent, self.name)
    }

    pub fn negative_answer(&self) -> &VerificationAnswer {
        self.answers
            .iter()
            .find(|a| a.polarity == Polarity::Negative)
            .expect("validated inventory has one negative answer")
    }

    pub fn positive_example_answer(&self) -> &str {
        match &self.verification_example_answer {
            Some(a) => a,
            None => &self
                .answers
                .iter()
                .find(|a| a.polarity == Polarity::Positive)
                .expect("validated inventory has a positive answer")
                .text,
        }
    }
}

/// Which sense set a pack must provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Pdtb3,
    Discogem7,
}

impl Profile {
    pub fn senses(self) -> &'static [&'static str] {
        match self {
            Profile::Pdtb3 => &PDTB3_SENSES,
            Profile::Discogem7 => &DISCOGEM7_SENSES,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PackFile {
    system: Option<String>,
    #[serde(rename = "sense", default)]
    senses: Vec<SenseEntry>,
}

/// Immutable, ordered sense inventory with its prompt materials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SenseInventory {
    system_prompt: String,
    senses: Vec<SenseEntry>,
    #[serde(skip)]
    index: HashMap<SenseId, usize>,
}

impl SenseInventory {
    /// The shipped 14-sense PDTB 3.0 pack.
    pub fn pdtb3() -> Self {
        load_inventory(DEFAULT_PACK, Some(Profile::Pdtb3)).expect("default pack is valid")
    }

    /// The shipped pack restricted to the 7 DiscoGeM senses.
    pub fn discogem7() -> Self {
        load_inventory(DEFAULT_PACK, Some(Profile::Discogem7)).expect("default pack is valid")
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Pdtb3 => Self::pdtb3(),
            Profile::Discogem7 => Self::discogem7(),
        }
    }

    fn from_entries(system_prompt: String, senses: Vec<SenseEntry>) -> Result<Self, TaxonomyError> {
        let mut index = HashMap::with_capacity(senses.len());
        for (i, entry) in senses.iter().enumerate() {
            if index.insert(entry.name.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateSense(entry.name.to_string()));
            }
            validate_entry(entry)?;
        }
        Ok(SenseInventory {
            system_prompt,
            senses,
            index,
        })
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn len(&self) -> usize {
        self.senses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senses.is_empty()
    }

    pub fn entries(&self) -> &[SenseEntry] {
        &self.senses
    }

    pub fn sense_ids(&self) -> Vec<SenseId> {
        self.senses.iter().map(|e| e.name.clone()).collect()
    }

    pub fn contains(&self, sense: &SenseId) -> bool {
        self.index.contains_key(sense)
    }

    pub fn position(&self, sense: &SenseId) -> Option<usize> {
        self.index.get(sense).copied()
    }

    pub fn get(&self, sense: &SenseId) -> Result<&SenseEntry, TaxonomyError> {
        self.index
            .get(sense)
            .map(|&i| &self.senses[i])
            .ok_or_else(|| TaxonomyError::UnknownSense(sense.to_string()))
    }

    /// Looks a sense up by its identifier string.
    pub fn resolve(&self, name: &str) -> Result<SenseId, TaxonomyError> {
        let id = SenseId::new(name);
        if self.contains(&id) {
            Ok(id)
        } else {
            Err(TaxonomyError::UnknownSense(name.to_string()))
        }
    }

    pub fn level1_of(&self, sense: &SenseId) -> Result<Level1Sense, TaxonomyError> {
        self.get(sense).map(|e| e.parent)
    }

    /// Sorts and deduplicates senses into inventory order.
    pub fn in_order(&self, senses: impl IntoIterator<Item = SenseId>) -> Vec<SenseId> {
        let positions: BTreeSet<usize> = senses
            .into_iter()
            .filter_map(|s| self.position(&s))
            .collect();
        positions
            .into_iter()
            .map(|i| self.senses[i].name.clone())
            .collect()
    }

    /// Numbered options for the given senses, in the given order.
    pub fn options_block(&self, senses: &[SenseId]) -> Result<OptionList, TaxonomyError> {
        if senses.is_empty() {
            return Err(TaxonomyError::EmptyOptions);
        }
        let options = senses
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let entry = self.get(s)?;
                Ok(McOption {
                    number: i + 1,
                    sense: entry.name.clone(),
                    label: entry.display_name(),
                    dcs: entry.typical_dcs.clone(),
                })
            })
            .collect::<Result<Vec<_>, TaxonomyError>>()?;
        Ok(OptionList { options })
    }

    /// Options over the whole inventory.
    pub fn full_options(&self) -> OptionList {
        self.options_block(&self.sense_ids())
            .expect("validated inventory is non-empty")
    }
}

fn validate_entry(entry: &SenseEntry) -> Result<(), TaxonomyError> {
    if entry.typical_dcs.is_empty() || entry.typical_dcs.iter().any(|d| d.trim().is_empty()) {
        return Err(TaxonomyError::NoConnectives(entry.name.to_string()));
    }
    let malformed = |reason: &str| TaxonomyError::MalformedAnswers {
        sense: entry.name.to_string(),
        reason: reason.to_string(),
    };
    let negatives = entry
        .answers
        .iter()
        .filter(|a| a.polarity == Polarity::Negative)
        .count();
    if negatives != 1 {
        return Err(malformed("expected exactly one negative answer"));
    }
    if entry.answers.len() < 2 {
        return Err(malformed("expected at least one positive answer"));
    }
    let mut seen = BTreeSet::new();
    for a in &entry.answers {
        let key = a.text.trim().to_lowercase();
        if key.is_empty() {
            return Err(malformed("empty answer text"));
        }
        if !seen.insert(key) {
            return Err(malformed("duplicate answer text"));
        }
    }
    if let Some(shown) = &entry.verification_example_answer {
        let ok = entry
            .answers
            .iter()
            .any(|a| a.polarity == Polarity::Positive && &a.text == shown);
        if !ok {
            return Err(malformed("example answer is not a positive answer"));
        }
    }
    Ok(())
}

/// Parses a prompt pack. With a profile, exactly the profile's senses are
/// kept (in pack order) and every one of them must be present.
pub fn load_inventory(source: &str, profile: Option<Profile>) -> Result<SenseInventory, TaxonomyError> {
    let pack: PackFile = toml::from_str(source).map_err(|e| TaxonomyError::Pack(e.to_string()))?;
    let system = pack
        .system
        .unwrap_or_else(|| "You are a language expert.".to_string());

    let mut seen = BTreeSet::new();
    for e in &pack.senses {
        if !seen.insert(e.name.as_str().to_string()) {
            return Err(TaxonomyError::DuplicateSense(e.name.to_string()));
        }
    }

    let senses = match profile {
        None => pack.senses,
        Some(p) => {
            for required in p.senses() {
                if !seen.contains(*required) {
                    return Err(TaxonomyError::MissingSense(required.to_string()));
                }
            }
            pack.senses
                .into_iter()
                .filter(|e| p.senses().contains(&e.name.as_str()))
                .collect()
        }
    };
    if senses.is_empty() {
        return Err(TaxonomyError::EmptyOptions);
    }
    SenseInventory::from_entries(system, senses)
}

/// One numbered option in a multiple-choice prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McOption {
    pub number: usize,
    pub sense: SenseId,
    pub label: String,
    pub dcs: Vec<String>,
}

impl McOption {
    pub fn render(&self) -> String {
        format!("{}. {}, {}", self.number, self.label, self.dcs.join(" / "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptionList {
    pub options: Vec<McOption>,
}

impl OptionList {
    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn render(&self) -> String {
        self.options
            .iter()
            .map(McOption::render)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn senses(&self) -> Vec<SenseId> {
        self.options.iter().map(|o| o.sense.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConnectiveEntry {
    pub candidates: Vec<SenseId>,
    /// One forced-choice connective per candidate, empty when unambiguous.
    pub disambiguation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConnectiveLookup<'a> {
    Known(&'a ConnectiveEntry),
    Unknown,
}

/// Normalized connective -> candidate senses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConnectiveMapping {
    entries: std::collections::BTreeMap<String, ConnectiveEntry>,
}

impl ConnectiveMapping {
    /// Shipped table restricted to the inventory.
    pub fn default_for(inventory: &SenseInventory) -> Self {
        load_mapping(DEFAULT_CONNECTIVES, inventory).expect("default connective table is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ConnectiveEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Expects an already-normalized connective.
    pub fn senses_for_connective(&self, conn: &str) -> ConnectiveLookup<'_> {
        match self.entries.get(conn) {
            Some(e) => ConnectiveLookup::Known(e),
            None => ConnectiveLookup::Unknown,
        }
    }
}

/// Parses the tab-separated connective table against an inventory.
///
/// Senses outside the inventory are dropped from each row; a row left
/// with one candidate loses its forced choice, and a row left with none
/// is skipped.
pub fn load_mapping(source: &str, inventory: &SenseInventory) -> Result<ConnectiveMapping, TaxonomyError> {
    let mut entries = std::collections::BTreeMap::new();
    for (i, raw) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let err = |reason: String| TaxonomyError::Mapping {
            line: line_no,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(err(format!("expected 2 or 3 tab-separated columns, got {}", cols.len())));
        }
        let conn = normalize_connective(cols[0]).ok_or_else(|| err("empty connective".into()))?;
        let senses: Vec<&str> = split_list(cols[1]);
        let dcs: Vec<&str> = cols.get(2).map(|c| split_list(c)).unwrap_or_default();
        if senses.is_empty() {
            return Err(err("no senses".into()));
        }
        if senses.len() > 1 && dcs.len() != senses.len() {
            return Err(err(format!(
                "{} senses need {} disambiguation connectives, got {}",
                senses.len(),
                senses.len(),
                dcs.len()
            )));
        }
        if senses.len() == 1 && !dcs.is_empty() {
            return Err(err("unambiguous row must not list disambiguation connectives".into()));
        }

        let mut candidates = Vec::new();
        let mut disambiguation = Vec::new();
        for (k, s) in senses.iter().enumerate() {
            if !PDTB3_SENSES.contains(s) && inventory.resolve(s).is_err() {
                return Err(err(format!("unknown sense {s:?}")));
            }
            if let Ok(id) = inventory.resolve(s) {
                candidates.push(id);
                if let Some(dc) = dcs.get(k) {
                    disambiguation.push(dc.to_string());
                }
            }
        }
        if candidates.is_empty() {
            continue;
        }
        if candidates.len() == 1 {
            disambiguation.clear();
        }
        if candidates.iter().collect::<BTreeSet<_>>().len() != candidates.len() {
            return Err(err("duplicate sense in row".into()));
        }
        if entries
            .insert(conn.clone(), ConnectiveEntry { candidates, disambiguation })
            .is_some()
        {
            return Err(err(format!("duplicate connective {conn:?}")));
        }
    }
    let mapping = ConnectiveMapping { entries };
    validate_mapping(&mapping, inventory)?;
    Ok(mapping)
}

fn split_list(col: &str) -> Vec<&str> {
    col.split(';').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn validate_mapping(mapping: &ConnectiveMapping, inventory: &SenseInventory) -> Result<(), TaxonomyError> {
    let invalid = |reason: String| TaxonomyError::Mapping { line: 0, reason };
    for (conn, entry) in mapping.iter() {
        for (dc, sense) in entry.disambiguation.iter().zip(&entry.candidates) {
            let key = normalize_connective(dc).unwrap_or_default();
            match mapping.senses_for_connective(&key) {
                ConnectiveLookup::Known(e) if e.candidates.len() == 1 && &e.candidates[0] == sense => {}
                _ => {
                    return Err(invalid(format!(
                        "forced-choice connective {dc:?} of {conn:?} does not map to {sense} alone"
                    )))
                }
            }
        }
    }
    let reachable: BTreeSet<&SenseId> = mapping
        .entries
        .values()
        .flat_map(|e| e.candidates.iter())
        .collect();
    for entry in inventory.entries() {
        if !reachable.contains(&entry.name) {
            return Err(TaxonomyError::MissingSense(entry.name.to_string()));
        }
    }
    Ok(())
}
