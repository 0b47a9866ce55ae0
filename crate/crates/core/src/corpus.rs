//! Relation items, gold-label derivation from crowd votes, and the
//! evaluation-set filter.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::{SenseId, SenseInventory};

/// Reserved vote key for "sense undetermined"; never a prediction.
pub const DIFFERENTCON: &str = "differentcon";

/// Items may carry at most this many expert gold labels.
pub const MAX_GOLD_LABELS: usize = 4;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("vote table is empty")]
    EmptyVotes,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoteLabel {
    Sense(SenseId),
    DifferentCon,
}

impl VoteLabel {
    pub fn sense(&self) -> Option<&SenseId> {
        match self {
            VoteLabel::Sense(s) => Some(s),
            VoteLabel::DifferentCon => None,
        }
    }
}

impl fmt::Display for VoteLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteLabel::Sense(s) => write!(f, "{s}"),
            VoteLabel::DifferentCon => f.write_str(DIFFERENTCON),
        }
    }
}

/// Crowd vote counts for one item. Zero counts are not stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Votes(BTreeMap<VoteLabel, u32>);

impl Votes {
    pub fn new() -> Self {
        Votes::default()
    }

    pub fn add(&mut self, label: VoteLabel, count: u32) {
        if count > 0 {
            *self.0.entry(label).or_default() += count;
        }
    }

    pub fn get(&self, label: &VoteLabel) -> u32 {
        self.0.get(label).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoteLabel, u32)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }
}

impl<S: Into<SenseId>> FromIterator<(S, u32)> for Votes {
    fn from_iter<I: IntoIterator<Item = (S, u32)>>(iter: I) -> Self {
        let mut v = Votes::new();
        for (s, c) in iter {
            let id: SenseId = s.into();
            let label = if id.as_str() == DIFFERENTCON {
                VoteLabel::DifferentCon
            } else {
                VoteLabel::Sense(id)
            };
            v.add(label, c);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusTag {
    Pdtb3,
    Discogem,
    #[default]
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationItem {
    pub id: String,
    pub arg1: String,
    pub arg2: String,
    pub votes: Option<Votes>,
    pub gold_labels: Option<Vec<SenseId>>,
    pub corpus_tag: CorpusTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Jsonl,
    VoteCsv,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    arg1: String,
    arg2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    votes: Option<BTreeMap<String, u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corpus: Option<CorpusTag>,
}

fn resolve_label(inventory: &SenseInventory, label: &str, line: usize) -> Result<VoteLabel, CorpusError> {
    if label == DIFFERENTCON {
        return Ok(VoteLabel::DifferentCon);
    }
    inventory
        .resolve(label)
        .map(VoteLabel::Sense)
        .map_err(|_| CorpusError::UnknownLabel {
            line,
            label: label.to_string(),
        })
}

fn validate_item(item: &RelationItem, line: usize) -> Result<(), CorpusError> {
    let bad = |reason: &str| CorpusError::Malformed {
        line,
        reason: format!("item {:?}: {reason}", item.id),
    };
    if item.id.is_empty() {
        return Err(bad("empty id"));
    }
    match (&item.votes, &item.gold_labels) {
        (None, None) => return Err(bad("neither votes nor gold labels")),
        (Some(v), _) if v.total() == 0 => return Err(bad("votes sum to zero")),
        _ => {}
    }
    if let Some(g) = &item.gold_labels {
        if g.is_empty() || g.len() > MAX_GOLD_LABELS {
            return Err(bad("gold label set must hold 1 to 4 labels"));
        }
        let mut seen = g.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != g.len() {
            return Err(bad("duplicate gold label"));
        }
    }
    Ok(())
}

/// Parses canonical line-delimited records. Vote and gold labels must be
/// senses of `inventory` (or `differentcon` for votes).
pub fn parse_jsonl<R: Read>(reader: R, inventory: &SenseInventory) -> Result<Vec<RelationItem>, CorpusError> {
    let mut items = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let votes = match rec.votes {
            None => None,
            Some(map) => {
                let mut v = Votes::new();
                for (label, count) in map {
                    v.add(resolve_label(inventory, &label, line_no)?, count);
                }
                Some(v)
            }
        };
        let gold_labels = match rec.gold {
            None => None,
            Some(labels) => Some(
                labels
                    .iter()
                    .map(|l| {
                        inventory.resolve(l).map_err(|_| CorpusError::UnknownLabel {
                            line: line_no,
                            label: l.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let item = RelationItem {
            id: rec.id,
            arg1: rec.arg1,
            arg2: rec.arg2,
            votes,
            gold_labels,
            corpus_tag: rec.corpus.unwrap_or_default(),
        };
        validate_item(&item, line_no)?;
        items.push(item);
    }
    Ok(items)
}

/// Parses a vote matrix: `itemid, arg1, arg2, <one column per label>`.
pub fn parse_vote_csv<R: Read>(reader: R, inventory: &SenseInventory) -> Result<Vec<RelationItem>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let malformed = |line: usize, reason: String| CorpusError::Malformed { line, reason };
    let headers = rdr
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    let fixed = ["itemid", "arg1", "arg2"];
    if headers.len() < 4 || headers.iter().take(3).ne(fixed.iter().copied()) {
        return Err(malformed(1, "header must start with itemid,arg1,arg2 followed by label columns".into()));
    }
    let labels = headers
        .iter()
        .skip(3)
        .map(|h| resolve_label(inventory, h.trim(), 1))
        .collect::<Result<Vec<_>, _>>()?;

    let mut items = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line_no = i + 2;
        let row = row.map_err(|e| malformed(line_no, e.to_string()))?;
        let mut votes = Votes::new();
        for (label, cell) in labels.iter().zip(row.iter().skip(3)) {
            let cell = cell.trim();
            let count = if cell.is_empty() {
                0
            } else {
                cell.parse::<u32>()
                    .map_err(|_| malformed(line_no, format!("vote count {cell:?} is not a non-negative integer")))?
            };
            votes.add(label.clone(), count);
        }
        let item = RelationItem {
            id: row[0].to_string(),
            arg1: row[1].to_string(),
            arg2: row[2].to_string(),
            votes: Some(votes),
            gold_labels: None,
            corpus_tag: CorpusTag::Discogem,
        };
        validate_item(&item, line_no)?;
        items.push(item);
    }
    Ok(items)
}

pub fn load_corpus(path: &Path, format: CorpusFormat, inventory: &SenseInventory) -> Result<Vec<RelationItem>, CorpusError> {
    let file = std::fs::File::open(path)?;
    match format {
        CorpusFormat::Jsonl => parse_jsonl(file, inventory),
        CorpusFormat::VoteCsv => parse_vote_csv(file, inventory),
    }
}

/// Serializes items back to the canonical line format.
pub fn to_jsonl(items: &[RelationItem]) -> String {
    let mut out = String::new();
    for item in items {
        let rec = Record {
            id: item.id.clone(),
            arg1: item.arg1.clone(),
            arg2: item.arg2.clone(),
            votes: item
                .votes
                .as_ref()
                .map(|v| v.iter().map(|(l, c)| (l.to_string(), c)).collect()),
            gold: item
                .gold_labels
                .as_ref()
                .map(|g| g.iter().map(|s| s.to_string()).collect()),
            corpus: Some(item.corpus_tag),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Fraction of the item's votes a label needs to count as a gold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Threshold {
    pub numerator: u32,
    pub denominator: u32,
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold {
            numerator: 1,
            denominator: 5,
        }
    }
}

/// Votes never count below this floor, whatever the total.
pub const MIN_GOLD_VOTES: u32 = 2;

impl Threshold {
    /// `max(2, ceil(fraction * total))`
    pub fn min_votes(&self, total: u32) -> u32 {
        let scaled = u64::from(total) * u64::from(self.numerator);
        let need = scaled.div_ceil(u64::from(self.denominator.max(1)));
        (need as u32).max(MIN_GOLD_VOTES)
    }
}

/// Seed for one item, independent of item order in the file.
pub fn item_seed(seed: u64, item_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(item_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Most-voted label; ties are broken uniformly with a ChaCha8 stream
/// seeded from `seed`. The generator is only consulted on ties.
pub fn derive_single_majority(votes: &Votes, seed: u64) -> Result<(VoteLabel, bool), CorpusError> {
    let max = votes.iter().map(|(_, c)| c).max().ok_or(CorpusError::EmptyVotes)?;
    let tied: Vec<&VoteLabel> = votes.iter().filter(|(_, c)| *c == max).map(|(l, _)| l).collect();
    if tied.len() == 1 {
        return Ok((tied[0].clone(), false));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = rng.random_range(0..tied.len());
    Ok((tied[pick].clone(), true))
}

fn order_key(inventory: &SenseInventory, label: &SenseId) -> (usize, String) {
    (
        inventory.position(label).unwrap_or(usize::MAX),
        label.to_string(),
    )
}

/// Every sense reaching the vote threshold, by descending count then
/// inventory order; falls back to the single majority sense when none does.
/// `differentcon` is never part of the result.
pub fn derive_multiple_majority(
    votes: &Votes,
    inventory: &SenseInventory,
    threshold: Threshold,
    seed: u64,
) -> Result<Vec<SenseId>, CorpusError> {
    if votes.is_empty() {
        return Err(CorpusError::EmptyVotes);
    }
    let need = threshold.min_votes(votes.total());
    let mut passing: Vec<(&SenseId, u32)> = votes
        .iter()
        .filter(|(_, c)| *c >= need)
        .filter_map(|(l, c)| l.sense().map(|s| (s, c)))
        .collect();
    if passing.is_empty() {
        let (single, _) = derive_single_majority(votes, seed)?;
        return Ok(single.sense().cloned().into_iter().collect());
    }
    passing.sort_by(|(a, ca), (b, cb)| {
        cb.cmp(ca)
            .then_with(|| order_key(inventory, a).cmp(&order_key(inventory, b)))
    });
    Ok(passing.into_iter().map(|(s, _)| s.clone()).collect())
}

/// Single and multiple gold labels of one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldDerivation {
    /// `None` when the single majority is `differentcon`.
    pub single: Option<SenseId>,
    pub multiple: Vec<SenseId>,
    pub tie_broken: bool,
    pub threshold: Threshold,
}

/// Expert gold labels are used as-is; vote tables go through the majority
/// rules with a per-item seed.
pub fn derive_gold(
    item: &RelationItem,
    inventory: &SenseInventory,
    threshold: Threshold,
    seed: u64,
) -> Result<GoldDerivation, CorpusError> {
    if let Some(gold) = &item.gold_labels {
        return Ok(GoldDerivation {
            single: gold.first().cloned(),
            multiple: gold.clone(),
            tie_broken: false,
            threshold,
        });
    }
    let votes = item.votes.as_ref().ok_or(CorpusError::EmptyVotes)?;
    let s = item_seed(seed, &item.id);
    let (single, tie_broken) = derive_single_majority(votes, s)?;
    let multiple = derive_multiple_majority(votes, inventory, threshold, s)?;
    Ok(GoldDerivation {
        single: single.sense().cloned(),
        multiple,
        tie_broken,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_class_instances: usize,
    pub exclude_differentcon: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_class_instances: 10,
            exclude_differentcon: true,
        }
    }
}

/// Evaluation-set filter: drops `differentcon`-majority items and items
/// whose single-majority class has no more than `min_class_instances`
/// members in `items`.
pub fn filter_eval_items(
    items: &[RelationItem],
    inventory: &SenseInventory,
    policy: FilterPolicy,
    seed: u64,
) -> Result<Vec<RelationItem>, CorpusError> {
    let mut singles = Vec::with_capacity(items.len());
    for item in items {
        let g = derive_gold(item, inventory, Threshold::default(), seed)?;
        singles.push(g.single);
    }
    let mut counts: HashMap<&SenseId, usize> = HashMap::new();
    for s in singles.iter().flatten() {
        *counts.entry(s).or_default() += 1;
    }
    Ok(items
        .iter()
        .zip(&singles)
        .filter(|(_, single)| match single {
            None => !policy.exclude_differentcon,
            Some(s) => counts[s] > policy.min_class_instances,
        })
        .map(|(item, _)| item.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn votes(pairs: &[(&str, u32)]) -> Votes {
        pairs.iter().map(|(s, c)| (*s, *c)).collect()
    }

    fn inv() -> SenseInventory {
        SenseInventory::pdtb3()
    }

    fn names(senses: &[SenseId]) -> Vec<&str> {
        senses.iter().map(SenseId::as_str).collect()
    }

    #[test]
    fn jsonl_record_with_votes() {
        let src = r#"{"id":"d1","arg1":"A","arg2":"B","votes":{"Cause":6,"Conjunction":4}}"#;
        let items = parse_jsonl(src.as_bytes(), &inv()).unwrap();
        assert_eq!(items.len(), 1);
        let v = items[0].votes.as_ref().unwrap();
        assert_eq!(v.get(&VoteLabel::Sense("Cause".into())), 6);
        assert_eq!(v.total(), 10);
        assert_eq!(items[0].corpus_tag, CorpusTag::Fixture);
    }

    #[test]
    fn jsonl_rejects_missing_evidence() {
        let src = "{\"id\":\"ok\",\"arg1\":\"A\",\"arg2\":\"B\",\"gold\":[\"Cause\"]}\n{\"id\":\"d1\",\"arg1\":\"A\",\"arg2\":\"B\"}";
        match parse_jsonl(src.as_bytes(), &inv()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jsonl_rejects_unknown_label() {
        let src = r#"{"id":"d1","arg1":"A","arg2":"B","votes":{"Causal":6}}"#;
        assert!(matches!(
            parse_jsonl(src.as_bytes(), &inv()),
            Err(CorpusError::UnknownLabel { line: 1, .. })
        ));
        let too_many = r#"{"id":"d1","arg1":"A","arg2":"B","gold":["Cause","Contrast","Manner","Purpose","Condition"]}"#;
        assert!(parse_jsonl(too_many.as_bytes(), &inv()).is_err());
    }

    #[test]
    fn vote_csv_rows() {
        let src = "itemid,arg1,arg2,Cause,Conjunction,differentcon\nx1,A,B,6,3,1\nx2,\"A, more\",B,0,10,0\n";
        let items = parse_vote_csv(src.as_bytes(), &inv()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].votes.as_ref().unwrap().total(), 10);
        assert_eq!(items[1].arg1, "A, more");
        assert_eq!(items[1].corpus_tag, CorpusTag::Discogem);
        let bad = "itemid,arg1,arg2,Cause\nx1,A,B,two\n";
        assert!(matches!(
            parse_vote_csv(bad.as_bytes(), &inv()),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn single_majority_unique() {
        let v = votes(&[("Cause", 5), ("Conjunction", 3), ("Contrast", 2)]);
        let (l, tie) = derive_single_majority(&v, 99).unwrap();
        assert_eq!(l, VoteLabel::Sense("Cause".into()));
        assert!(!tie);
    }

    #[test]
    fn single_majority_tie_is_seeded() {
        let v = votes(&[("Cause", 5), ("Conjunction", 5)]);
        let (a, tie) = derive_single_majority(&v, 7).unwrap();
        assert!(tie);
        assert!(matches!(a.sense().map(SenseId::as_str), Some("Cause" | "Conjunction")));
        assert_eq!(derive_single_majority(&v, 7).unwrap().0, a);
        assert!(matches!(derive_single_majority(&Votes::new(), 1), Err(CorpusError::EmptyVotes)));
    }

    #[test]
    fn tie_break_is_uniform() {
        let v = votes(&[("Cause", 5), ("Conjunction", 5)]);
        let n = 10_000u64;
        let cause = (0..n)
            .filter(|&s| derive_single_majority(&v, s).unwrap().0 == VoteLabel::Sense("Cause".into()))
            .count();
        let freq = cause as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn multiple_majority_rules() {
        let inv = inv();
        let t = Threshold::default();
        let m = derive_multiple_majority(&votes(&[("Cause", 5), ("Conjunction", 3), ("Contrast", 2)]), &inv, t, 0).unwrap();
        assert_eq!(names(&m), ["Cause", "Conjunction", "Contrast"]);

        let v = votes(&[
            ("Cause", 2),
            ("Conjunction", 2),
            ("Contrast", 1),
            ("Concession", 1),
            ("Asynchronous", 1),
            ("Synchronous", 1),
            ("Manner", 1),
            ("Purpose", 1),
        ]);
        // equal counts fall back to inventory order
        assert_eq!(names(&derive_multiple_majority(&v, &inv, t, 0).unwrap()), ["Cause", "Conjunction"]);

        let flat = votes(&[
            ("Asynchronous", 1),
            ("Synchronous", 1),
            ("Cause", 1),
            ("Cause+Belief", 1),
            ("Condition", 1),
            ("Purpose", 1),
            ("Contrast", 1),
            ("Concession", 1),
            ("Conjunction", 1),
            ("Instantiation", 1),
        ]);
        for seed in 0..20 {
            let m = derive_multiple_majority(&flat, &inv, t, seed).unwrap();
            let (single, _) = derive_single_majority(&flat, seed).unwrap();
            assert_eq!(m.len(), 1);
            assert_eq!(Some(&m[0]), single.sense());
        }
    }

    #[test]
    fn threshold_scales_with_total() {
        let t = Threshold::default();
        assert_eq!(t.min_votes(10), 2);
        assert_eq!(t.min_votes(3), 2);
        assert_eq!(t.min_votes(11), 3);
        assert_eq!(t.min_votes(20), 4);
    }

    fn item(id: &str, v: &[(&str, u32)]) -> RelationItem {
        RelationItem {
            id: id.into(),
            arg1: "a".into(),
            arg2: "b".into(),
            votes: Some(votes(v)),
            gold_labels: None,
            corpus_tag: CorpusTag::Fixture,
        }
    }

    #[test]
    fn filter_drops_differentcon_and_small_classes() {
        let inv = inv();
        let mut items: Vec<_> = (0..11).map(|i| item(&format!("c{i}"), &[("Cause", 7), ("Conjunction", 3)])).collect();
        items.extend((0..10).map(|i| item(&format!("m{i}"), &[("Manner", 8), ("Cause", 2)])));
        items.push(item("dc", &[(DIFFERENTCON, 6), ("Cause", 4)]));

        let kept = filter_eval_items(&items, &inv, FilterPolicy::default(), 1).unwrap();
        assert_eq!(kept.len(), 11);
        assert!(kept.iter().all(|i| i.id.starts_with('c')));

        let policy = FilterPolicy {
            min_class_instances: 9,
            exclude_differentcon: true,
        };
        let kept = filter_eval_items(&items, &inv, policy, 1).unwrap();
        assert_eq!(kept.len(), 21);
    }

    #[test]
    fn gold_labels_pass_through() {
        let it = RelationItem {
            id: "p1".into(),
            arg1: "a".into(),
            arg2: "b".into(),
            votes: None,
            gold_labels: Some(vec!["Cause".into(), "Conjunction".into()]),
            corpus_tag: CorpusTag::Pdtb3,
        };
        let g = derive_gold(&it, &inv(), Threshold::default(), 0).unwrap();
        assert_eq!(g.single, Some("Cause".into()));
        assert_eq!(names(&g.multiple), ["Cause", "Conjunction"]);
    }

    #[test]
    fn jsonl_round_trip_is_stable() {
        let src = "{\"id\":\"d1\",\"arg1\":\"A\",\"arg2\":\"B\",\"votes\":{\"Cause\":6,\"differentcon\":4},\"corpus\":\"discogem\"}\n";
        let items = parse_jsonl(src.as_bytes(), &inv()).unwrap();
        let out = to_jsonl(&items);
        assert_eq!(parse_jsonl(out.as_bytes(), &inv()).unwrap(), items);
        assert_eq!(to_jsonl(&parse_jsonl(out.as_bytes(), &inv()).unwrap()), out);
    }
}
