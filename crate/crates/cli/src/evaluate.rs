//! The `evaluate`, `report` and `cache` commands.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::warn;

use dr_annotate_core::backend::CacheDirSummary;
use dr_annotate_core::corpus::{derive_gold, load_corpus, CorpusFormat, Threshold};
use dr_annotate_core::metrics::{evaluate, render_comparison, render_per_class, EvalReport, LabelMode, ReportFormat};
use dr_annotate_core::strategies::Prediction;
use dr_annotate_core::taxonomy::SenseId;

use crate::config::InventoryProfile;

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub predictions: PathBuf,
    pub corpus: PathBuf,
    pub corpus_format: CorpusFormat,
    pub inventory_profile: InventoryProfile,
    pub level: u8,
    pub label_mode: LabelMode,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

/// Derives golds for the predicted items and scores them. Gold labels
/// outside the active inventory are dropped; items left without gold are
/// excluded from both sides.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let inventory = args.inventory_profile.load()?;
    let corpus = load_corpus(&args.corpus, args.corpus_format, &inventory)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let by_id: HashMap<&str, _> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let predictions = read_predictions(&args.predictions)?;

    let mut golds: Vec<(String, Vec<SenseId>)> = Vec::with_capacity(predictions.len());
    let mut kept = Vec::with_capacity(predictions.len());
    let mut excluded = 0usize;
    for p in &predictions {
        let item = by_id
            .get(p.item_id.as_str())
            .with_context(|| format!("prediction for {:?} has no corpus item", p.item_id))?;
        let g = derive_gold(item, &inventory, Threshold::default(), args.seed)?;
        let labels: Vec<SenseId> = match args.label_mode {
            LabelMode::Single => g.single.into_iter().collect(),
            LabelMode::Multi => g.multiple,
        };
        let labels: Vec<SenseId> = labels.into_iter().filter(|s| inventory.contains(s)).collect();
        if labels.is_empty() {
            excluded += 1;
            continue;
        }
        golds.push((p.item_id.clone(), labels));
        kept.push(p.clone());
    }
    if excluded > 0 {
        warn!("{excluded} items have no gold label in the active inventory and were excluded");
    }
    let report = evaluate(&kept, &golds, &inventory, args.level, args.label_mode)?;
    if let Some(out) = &args.output {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(out, text + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(report)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))
}

/// Comparison table, followed by per-class tables and confusion matrices
/// when `include_confusion` is set.
pub fn cmd_report(paths: &[PathBuf], format: ReportFormat, include_confusion: bool) -> Result<String> {
    if paths.is_empty() {
        bail!("no reports given");
    }
    let reports = paths.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    let mut out = render_comparison(&reports, format)?;
    if include_confusion {
        for (path, r) in paths.iter().zip(&reports) {
            let name = r.strategy.clone().unwrap_or_else(|| path.display().to_string());
            if let Some(table) = render_per_class(r, format) {
                out.push_str(&format!("\n# {name}: per-class scores\n{table}"));
            }
            match &r.confusion {
                Some(c) => {
                    out.push_str(&format!("\n# {name}: confusion normalized by predicted class\n{}", c.by_predicted.to_delimited()));
                    out.push_str(&format!("\n# {name}: confusion normalized by gold class\n{}", c.by_gold.to_delimited()));
                }
                None => out.push_str(&format!("\n# {name}: no confusion matrices (multi-label predictions)\n")),
            }
        }
    }
    Ok(out)
}

pub fn cmd_cache_inspect(dir: &Path) -> Result<CacheDirSummary> {
    Ok(CacheDirSummary::scan(dir)?)
}

pub fn cmd_cache_clear(dir: &Path) -> Result<usize> {
    Ok(CacheDirSummary::clear(dir)?)
}
