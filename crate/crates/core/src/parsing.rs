//! Answer extraction from free-text completions.
//!
//! All parsers are pure. A parser never returns a sense or answer that was
//! not among the options it was given.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{McOption, Polarity, SenseId, VerificationAnswer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParsedAnswer {
    Option {
        index: usize,
        sense: SenseId,
    },
    YesNo {
        flag: bool,
        confidence: Option<u8>,
    },
    Verification {
        answer: String,
        polarity: Polarity,
        subsense: Option<String>,
    },
    Connective {
        text: String,
    },
    Unparseable {
        raw: String,
    },
}

impl ParsedAnswer {
    fn unparseable(raw: &str) -> Self {
        ParsedAnswer::Unparseable {
            raw: raw.to_string(),
        }
    }
}

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d+)\b").unwrap());
static CONFIDENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)confidence[^0-9]*?(\d+)").unwrap());
static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z]+").unwrap());
static DOUBLE_QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""([^"]+)"|“([^”]+)”|‘([^’]+)’"#).unwrap());
static SINGLE_QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[\s(:])'([^']+)'(?:$|[\s.,;:!?)])").unwrap());
static ANSWER_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(?:answer|connective)\s*:\s*").unwrap());

/// Byte offset of the first occurrence of `needle` in `haystack` that is not
/// glued to a neighbouring word character. Both sides must be lowercase.
fn find_phrase(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let glue = |c: char| c.is_alphanumeric() || c == '+' || c == '-' || c == '_';
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let before_ok = haystack[..start].chars().next_back().is_none_or(|c| !glue(c));
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !glue(c));
        if before_ok && after_ok {
            return Some(start);
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Picks the candidate mentioned earliest; `None` if none is mentioned.
fn earliest<'a, T>(hits: impl Iterator<Item = (usize, &'a T)>) -> Option<&'a T> {
    hits.min_by_key(|(pos, _)| *pos).map(|(_, t)| t)
}

/// Resolves a multiple-choice answer against the presented options.
///
/// Precedence: option number, full "Level1.Level2" label, bare Level-2
/// name, then a connective that belongs to exactly one option. Matching is
/// case-insensitive; within one rule the earliest mention wins.
pub fn parse_mc_answer(text: &str, options: &[McOption]) -> ParsedAnswer {
    let found = |opt: &McOption| ParsedAnswer::Option {
        index: opt.number,
        sense: opt.sense.clone(),
    };

    if let Some(cap) = INTEGER.captures(text) {
        if let Ok(n) = cap[1].parse::<usize>() {
            if let Some(opt) = options.iter().find(|o| o.number == n) {
                return found(opt);
            }
        }
    }

    let lower = text.to_lowercase();
    let by_label = earliest(
        options
            .iter()
            .filter_map(|o| find_phrase(&lower, &o.label.to_lowercase()).map(|p| (p, o))),
    );
    if let Some(opt) = by_label {
        return found(opt);
    }

    let by_name = earliest(
        options
            .iter()
            .filter_map(|o| find_phrase(&lower, &o.sense.as_str().to_lowercase()).map(|p| (p, o))),
    );
    if let Some(opt) = by_name {
        return found(opt);
    }

    let owners = |dc: &str| {
        options
            .iter()
            .filter(|o| o.dcs.iter().any(|d| d.eq_ignore_ascii_case(dc)))
            .count()
    };
    let lower = lower.as_str();
    let by_dc = earliest(options.iter().flat_map(|o| {
        o.dcs
            .iter()
            .filter(|d| owners(d) == 1)
            .filter_map(move |d| find_phrase(lower, &d.to_lowercase()).map(|p| (p, o)))
    }));
    if let Some(opt) = by_dc {
        return found(opt);
    }

    ParsedAnswer::unparseable(text)
}

/// Resolves a choice among plain text options (the two-step forced choice).
/// Returns the 0-based index of the chosen option.
pub fn parse_choice(text: &str, options: &[String]) -> Option<usize> {
    if let Some(cap) = INTEGER.captures(text) {
        if let Ok(n) = cap[1].parse::<usize>() {
            if (1..=options.len()).contains(&n) {
                return Some(n - 1);
            }
        }
    }
    let lower = text.to_lowercase();
    let indexed: Vec<(usize, String)> = options
        .iter()
        .map(|o| o.to_lowercase())
        .enumerate()
        .collect();
    earliest(
        indexed
            .iter()
            .filter_map(|(i, o)| find_phrase(&lower, o).map(|p| (p, i))),
    )
    .copied()
}

/// Yes/no answer plus an optional 1-10 confidence.
pub fn parse_yes_no_confidence(text: &str) -> ParsedAnswer {
    let mut yes = false;
    let mut no = false;
    for w in WORD.find_iter(text) {
        match w.as_str().to_lowercase().as_str() {
            "yes" => yes = true,
            "no" => no = true,
            _ => {}
        }
    }
    if yes == no {
        return ParsedAnswer::unparseable(text);
    }
    let confidence = CONFIDENCE
        .captures(text)
        .and_then(|c| c[1].parse::<u8>().ok())
        .filter(|c| (1..=10).contains(c));
    ParsedAnswer::YesNo {
        flag: yes,
        confidence,
    }
}

fn squash(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '+' || c == '-' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Matches a verification answer against the sense's answer set.
///
/// The normalized response must equal an answer, start with one, or
/// mention exactly one answer phrase.
pub fn parse_verification_answer(text: &str, answers: &[VerificationAnswer]) -> ParsedAnswer {
    let mut norm = squash(text);
    if let Some(rest) = norm.strip_prefix("answer ") {
        norm = rest.to_string();
    }
    let keyed: Vec<(String, &VerificationAnswer)> =
        answers.iter().map(|a| (squash(&a.text), a)).collect();
    let found = |a: &VerificationAnswer| ParsedAnswer::Verification {
        answer: a.text.clone(),
        polarity: a.polarity,
        subsense: a.subsense.clone(),
    };

    let mentioned: Vec<&(String, &VerificationAnswer)> =
        keyed.iter().filter(|(k, _)| find_phrase(&norm, k).is_some()).collect();

    // longest key first so "not overlapped" wins over a hypothetical "not";
    // a prefix only counts when no unrelated answer is mentioned as well
    let mut by_len: Vec<&(String, &VerificationAnswer)> = keyed.iter().collect();
    by_len.sort_by_key(|(k, _)| std::cmp::Reverse(k.len()));
    for (key, a) in &by_len {
        if norm == *key {
            return found(a);
        }
        let others = mentioned.iter().filter(|(k, _)| !key.contains(k.as_str())).count();
        if norm.starts_with(&format!("{key} ")) && others == 0 {
            return found(a);
        }
    }

    if let [(_, a)] = mentioned.as_slice() {
        return found(a);
    }
    ParsedAnswer::unparseable(text)
}

/// Canonical form of a generated connective, or `None` if nothing remains.
///
/// Keeps the first non-empty line; prefers a quoted phrase when one is
/// present; lowercases, strips terminal punctuation and quotes, and
/// collapses whitespace.
pub fn normalize_connective(text: &str) -> Option<String> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = ANSWER_PREFIX.replace(line, "");

    let quoted = DOUBLE_QUOTED
        .captures(&line)
        .and_then(|c| c.iter().skip(1).flatten().next().map(|m| m.as_str().to_string()))
        .or_else(|| SINGLE_QUOTED.captures(&line).map(|c| c[1].to_string()));
    let phrase = quoted.unwrap_or_else(|| line.to_string());

    const STRIP: &[char] = &[
        '.', ',', ';', ':', '!', '?', '"', '\'', '“', '”', '‘', '’', '(', ')', '*', '`',
    ];
    let cleaned = phrase
        .trim()
        .trim_matches(|c: char| STRIP.contains(&c) || c.is_whitespace())
        .to_lowercase();
    let collapsed = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    (!collapsed.is_empty()).then_some(collapsed)
}
