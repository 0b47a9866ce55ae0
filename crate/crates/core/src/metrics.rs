//! Evaluation metrics.
//!
//! Everything here works on [`ItemPair`]s: one predicted label set and one
//! gold label set per item. Per-class scores and confusion matrices expand
//! an item with `k` gold labels into `k` (prediction, gold) pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Display};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strategies::Prediction;
use crate::taxonomy::{Level1Sense, SenseId, SenseInventory, TaxonomyError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction for item {0:?} has no gold entry")]
    UnknownItem(String),
    #[error("no prediction for item {0:?}")]
    MissingPrediction(String),
    #[error("item {0:?} appears more than once")]
    DuplicateItem(String),
    #[error("item {0:?} has an empty gold set")]
    EmptyGold(String),
    #[error("item {item:?} has {count} predicted labels; single-label metric")]
    NotSingleLabel { item: String, count: usize },
    #[error("label {label:?} on item {item:?} is not on the evaluation axis")]
    UnknownLabel { item: String, label: String },
    #[error("no items to evaluate")]
    Empty,
    #[error("reports mix levels {0} and {1}")]
    MixedLevels(u8, u8),
    #[error("level must be 1 or 2, got {0}")]
    BadLevel(u8),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPair<L> {
    pub id: String,
    pub pred: BTreeSet<L>,
    pub gold: BTreeSet<L>,
}

impl<L: Ord> ItemPair<L> {
    pub fn new(id: impl Into<String>, pred: impl IntoIterator<Item = L>, gold: impl IntoIterator<Item = L>) -> Self {
        ItemPair {
            id: id.into(),
            pred: pred.into_iter().collect(),
            gold: gold.into_iter().collect(),
        }
    }

    /// The single predicted label, `None` when the prediction is empty.
    fn single(&self) -> Result<Option<&L>, MetricsError> {
        match self.pred.len() {
            0 => Ok(None),
            1 => Ok(self.pred.iter().next()),
            count => Err(MetricsError::NotSingleLabel {
                item: self.id.clone(),
                count,
            }),
        }
    }
}

/// Pairs predictions with gold sets by item id, in gold order.
pub fn align(predictions: &[Prediction], golds: &[(String, Vec<SenseId>)]) -> Result<Vec<ItemPair<SenseId>>, MetricsError> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.item_id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicateItem(p.item_id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(golds.len());
    for (id, gold) in golds {
        if !seen.insert(id.as_str()) {
            return Err(MetricsError::DuplicateItem(id.clone()));
        }
        let p = by_id.remove(id.as_str()).ok_or_else(|| MetricsError::MissingPrediction(id.clone()))?;
        out.push(ItemPair::new(id.clone(), p.labels.iter().cloned(), gold.iter().cloned()));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(MetricsError::UnknownItem(extra.to_string()));
    }
    Ok(out)
}

fn check_nonempty<L>(items: &[ItemPair<L>]) -> Result<(), MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty);
    }
    match items.iter().find(|i| i.gold.is_empty()) {
        Some(i) => Err(MetricsError::EmptyGold(i.id.clone())),
        None => Ok(()),
    }
}

/// Fraction of items whose single prediction is one of the gold labels.
/// Empty predictions count as wrong.
pub fn strict_accuracy<L: Ord>(items: &[ItemPair<L>]) -> Result<f64, MetricsError> {
    check_nonempty(items)?;
    let mut correct = 0usize;
    for item in items {
        if item.single()?.is_some_and(|p| item.gold.contains(p)) {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Fraction of items whose predicted set overlaps the gold set.
pub fn soft_match_accuracy<L: Ord>(items: &[ItemPair<L>]) -> Result<f64, MetricsError> {
    check_nonempty(items)?;
    let correct = items.iter().filter(|i| !i.pred.is_disjoint(&i.gold)).count();
    Ok(correct as f64 / items.len() as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Set F1 per item, averaged over items.
pub fn avg_per_item_f1<L: Ord>(items: &[ItemPair<L>]) -> Result<f64, MetricsError> {
    check_nonempty(items)?;
    let total: f64 = items
        .iter()
        .map(|i| {
            let overlap = i.pred.intersection(&i.gold).count();
            harmonic(ratio(overlap, i.pred.len()), ratio(overlap, i.gold.len()))
        })
        .sum();
    Ok(total / items.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Expanded pairs with this gold label.
    pub support: usize,
    #[serde(skip)]
    pub tp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrfTable {
    pub classes: Vec<ClassScore>,
    pub macro_f1: f64,
}

/// Axis position of a label or an error naming the item.
fn axis_index<L: Ord + Display>(index: &BTreeMap<&L, usize>, label: &L, item: &str) -> Result<usize, MetricsError> {
    index.get(label).copied().ok_or_else(|| MetricsError::UnknownLabel {
        item: item.to_string(),
        label: label.to_string(),
    })
}

/// Expanded (prediction, gold) pairs as axis indices.
fn expanded_pairs<L: Ord + Display>(items: &[ItemPair<L>], axis: &[L]) -> Result<Vec<(Option<usize>, usize)>, MetricsError> {
    check_nonempty(items)?;
    let index: BTreeMap<&L, usize> = axis.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut pairs = Vec::new();
    for item in items {
        let pred = item.single()?.map(|p| axis_index(&index, p, &item.id)).transpose()?;
        for g in &item.gold {
            pairs.push((pred, axis_index(&index, g, &item.id)?));
        }
    }
    Ok(pairs)
}

/// Per-class precision, recall and F1 over `axis`; macro F1 averages every
/// axis class, including those never predicted nor gold.
pub fn per_class_prf<L: Ord + Display>(items: &[ItemPair<L>], axis: &[L]) -> Result<PrfTable, MetricsError> {
    let pairs = expanded_pairs(items, axis)?;
    let n = axis.len();
    let (mut tp, mut predicted, mut gold) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    for &(p, g) in &pairs {
        gold[g] += 1;
        if let Some(p) = p {
            predicted[p] += 1;
            if p == g {
                tp[p] += 1;
            }
        }
    }
    let classes: Vec<ClassScore> = (0..n)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], gold[c]);
            ClassScore {
                label: axis[c].to_string(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: gold[c],
                tp: tp[c],
            }
        })
        .collect();
    let macro_f1 = if n == 0 {
        0.0
    } else {
        classes.iter().map(|c| c.f1).sum::<f64>() / n as f64
    };
    Ok(PrfTable { classes, macro_f1 })
}

/// Replaces every label by its Level-1 class; duplicates collapse.
pub fn map_to_level1(items: &[ItemPair<SenseId>], inventory: &SenseInventory) -> Result<Vec<ItemPair<Level1Sense>>, MetricsError> {
    let map = |set: &BTreeSet<SenseId>| -> Result<BTreeSet<Level1Sense>, MetricsError> {
        set.iter().map(|s| Ok(inventory.level1_of(s)?)).collect()
    };
    items
        .iter()
        .map(|i| {
            Ok(ItemPair {
                id: i.id.clone(),
                pred: map(&i.pred)?,
                gold: map(&i.gold)?,
            })
        })
        .collect()
}

/// Level-1 classes that have at least one sense in the inventory, in order.
pub fn level1_axis(inventory: &SenseInventory) -> Vec<Level1Sense> {
    let present: BTreeSet<Level1Sense> = inventory.entries().iter().map(|e| e.parent).collect();
    Level1Sense::ALL.into_iter().filter(|l| present.contains(l)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    ByPredicted,
    ByGold,
}

/// Counts are indexed `[predicted][gold]`. `values` rows are predicted
/// labels for `Raw` and `ByPredicted` and gold labels for `ByGold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub axis: Vec<String>,
    pub normalization: Normalization,
    pub counts: Vec<Vec<u64>>,
    /// Expanded pairs per gold label whose item had an empty prediction.
    pub unpredicted: Vec<u64>,
    pub values: Vec<Vec<f64>>,
    pub predicted_marginal: Vec<f64>,
    pub gold_marginal: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.axis.len()).map(|i| self.values[i][i]).collect()
    }

    pub fn total_pairs(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unpredicted.iter().sum::<u64>()
    }

    /// Comma-separated grid with a header row and column of labels.
    pub fn to_delimited(&self) -> String {
        let corner = match self.normalization {
            Normalization::ByGold => "gold\\predicted",
            _ => "predicted\\gold",
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once(corner.to_string()).chain(self.axis.iter().cloned());
        w.write_record(header).expect("in-memory write");
        for (label, row) in self.axis.iter().zip(&self.values) {
            let cells = row.iter().map(|v| match self.normalization {
                Normalization::Raw => format!("{v}"),
                _ => format!("{v:.4}"),
            });
            w.write_record(std::iter::once(label.clone()).chain(cells)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

pub fn confusion_matrix<L: Ord + Display>(
    items: &[ItemPair<L>],
    axis: &[L],
    normalization: Normalization,
) -> Result<ConfusionMatrix, MetricsError> {
    let pairs = expanded_pairs(items, axis)?;
    let n = axis.len();
    let mut counts = vec![vec![0u64; n]; n];
    let mut unpredicted = vec![0u64; n];
    for &(p, g) in &pairs {
        match p {
            Some(p) => counts[p][g] += 1,
            None => unpredicted[g] += 1,
        }
    }
    let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let gold_sums: Vec<u64> = (0..n).map(|g| (0..n).map(|p| counts[p][g]).sum::<u64>() + unpredicted[g]).collect();
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };

    let values = match normalization {
        Normalization::Raw => counts.iter().map(|r| r.iter().map(|&c| c as f64).collect()).collect(),
        Normalization::ByPredicted => (0..n).map(|p| (0..n).map(|g| div(counts[p][g], row_sums[p])).collect()).collect(),
        // the denominator includes unpredicted pairs so the diagonal is recall
        Normalization::ByGold => (0..n).map(|g| (0..n).map(|p| div(counts[p][g], gold_sums[g])).collect()).collect(),
    };
    let predicted_total: u64 = row_sums.iter().sum();
    let gold_total: u64 = gold_sums.iter().sum();
    Ok(ConfusionMatrix {
        axis: axis.iter().map(ToString::to_string).collect(),
        normalization,
        predicted_marginal: row_sums.iter().map(|&s| div(s, predicted_total)).collect(),
        gold_marginal: gold_sums.iter().map(|&s| div(s, gold_total)).collect(),
        counts,
        unpredicted,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostStats {
    pub avg_prompts: f64,
    pub avg_input_tokens: f64,
    pub avg_predicted_labels: f64,
}

/// Per-item averages. Input tokens are the ones recorded at annotation
/// time: endpoint usage when reported, otherwise the counter's estimate.
pub fn cost_stats(predictions: &[Prediction]) -> CostStats {
    if predictions.is_empty() {
        return CostStats::default();
    }
    let n = predictions.len() as f64;
    let sum = |f: fn(&Prediction) -> usize| predictions.iter().map(f).sum::<usize>() as f64 / n;
    CostStats {
        avg_prompts: sum(|p| p.prompt_count),
        avg_input_tokens: predictions.iter().map(|p| p.input_tokens).sum::<u64>() as f64 / n,
        avg_predicted_labels: sum(|p| p.labels.len()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Single,
    Multi,
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Single => "single",
            LabelMode::Multi => "multi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub by_predicted: ConfusionMatrix,
    pub by_gold: ConfusionMatrix,
}

/// Full evaluation of one prediction file. Strict accuracy, per-class
/// scores, macro F1 and confusion matrices need single-label predictions
/// and are absent otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    pub n_items: usize,
    pub level: u8,
    pub label_mode: LabelMode,
    pub strict_accuracy: Option<f64>,
    pub soft_match_accuracy: f64,
    pub per_class: Option<Vec<ClassScore>>,
    pub macro_f1: Option<f64>,
    pub avg_per_item_f1: f64,
    pub avg_predicted_labels: f64,
    pub avg_prompts: f64,
    pub avg_input_tokens: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionPair>,
}

fn score<L: Ord + Display>(items: &[ItemPair<L>], axis: &[L]) -> Result<PartialReport, MetricsError> {
    let single = items.iter().all(|i| i.pred.len() <= 1);
    let (strict, prf, confusion) = if single {
        let prf = per_class_prf(items, axis)?;
        let confusion = ConfusionPair {
            by_predicted: confusion_matrix(items, axis, Normalization::ByPredicted)?,
            by_gold: confusion_matrix(items, axis, Normalization::ByGold)?,
        };
        (Some(strict_accuracy(items)?), Some(prf), Some(confusion))
    } else {
        (None, None, None)
    };
    Ok(PartialReport {
        strict,
        soft: soft_match_accuracy(items)?,
        per_item: avg_per_item_f1(items)?,
        prf,
        confusion,
    })
}

struct PartialReport {
    strict: Option<f64>,
    soft: f64,
    per_item: f64,
    prf: Option<PrfTable>,
    confusion: Option<ConfusionPair>,
}

/// Scores `predictions` against already derived gold sets.
pub fn evaluate(
    predictions: &[Prediction],
    golds: &[(String, Vec<SenseId>)],
    inventory: &SenseInventory,
    level: u8,
    label_mode: LabelMode,
) -> Result<EvalReport, MetricsError> {
    let items = align(predictions, golds)?;
    let scored = match level {
        2 => score(&items, &inventory.sense_ids())?,
        1 => score(&map_to_level1(&items, inventory)?, &level1_axis(inventory))?,
        other => return Err(MetricsError::BadLevel(other)),
    };
    let strategies: BTreeSet<String> = predictions.iter().map(|p| p.strategy.to_string()).collect();
    let strategy = (strategies.len() == 1).then(|| strategies.into_iter().next().expect("one strategy"));
    let cost = cost_stats(predictions);
    Ok(EvalReport {
        strategy,
        n_items: items.len(),
        level,
        label_mode,
        strict_accuracy: scored.strict,
        soft_match_accuracy: scored.soft,
        macro_f1: scored.prf.as_ref().map(|t| t.macro_f1),
        per_class: scored.prf.map(|t| t.classes),
        avg_per_item_f1: scored.per_item,
        avg_predicted_labels: cost.avg_predicted_labels,
        avg_prompts: cost.avg_prompts,
        avg_input_tokens: cost.avg_input_tokens,
        confusion: scored.confusion,
    })
}

/// A fraction as a percentage rounded half-up to two decimals.
pub fn format_percent(fraction: f64) -> String {
    // the epsilon absorbs binary representation error on exact halves
    let hundredths = (fraction * 10_000.0 + 0.5 + 1e-7).floor();
    format!("{:.2}", hundredths / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Delimited,
}

fn opt_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), format_percent)
}

fn render_rows(header: &[&str], rows: &[Vec<String>], format: ReportFormat) -> String {
    match format {
        ReportFormat::Delimited => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header).expect("in-memory write");
            for r in rows {
                w.write_record(r).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
        ReportFormat::Table => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
            for r in rows {
                for (w, cell) in widths.iter_mut().zip(r) {
                    *w = (*w).max(cell.chars().count());
                }
            }
            let line = |cells: &mut dyn Iterator<Item = &str>| {
                let parts: Vec<String> = cells
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                    .collect();
                format!("| {} |\n", parts.join(" | "))
            };
            let rule = format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
            let mut out = line(&mut header.iter().copied());
            out.push_str(&rule);
            for r in rows {
                out.push_str(&line(&mut r.iter().map(String::as_str)));
            }
            out
        }
    }
}

/// Side-by-side comparison of reports at the same level.
pub fn render_comparison(reports: &[EvalReport], format: ReportFormat) -> Result<String, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    if let Some(r) = reports.iter().find(|r| r.level != first.level) {
        return Err(MetricsError::MixedLevels(first.level, r.level));
    }
    let acc = format!("L{} accuracy", first.level);
    let header = ["strategy", "mode", "prompts", "input tokens", "macro F1", &acc, "soft match", "per-item F1", "labels"];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.strategy.clone().unwrap_or_else(|| "-".into()),
                r.label_mode.to_string(),
                format!("{:.2}", r.avg_prompts),
                format!("{:.1}", r.avg_input_tokens),
                opt_percent(r.macro_f1),
                opt_percent(r.strict_accuracy),
                format_percent(r.soft_match_accuracy),
                format_percent(r.avg_per_item_f1),
                format!("{:.2}", r.avg_predicted_labels),
            ]
        })
        .collect();
    Ok(render_rows(&header, &rows, format))
}

pub fn render_per_class(report: &EvalReport, format: ReportFormat) -> Option<String> {
    let classes = report.per_class.as_ref()?;
    let rows: Vec<Vec<String>> = classes
        .iter()
        .map(|c| {
            vec![
                c.label.clone(),
                format_percent(c.precision),
                format_percent(c.recall),
                format_percent(c.f1),
                c.support.to_string(),
            ]
        })
        .collect();
    Some(render_rows(&["class", "precision", "recall", "F1", "support"], &rows, format))
}
