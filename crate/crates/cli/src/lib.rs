//! Command-line frontend: annotate a corpus, score predictions, compare
//! reports and manage the response cache.

pub mod annotate;
pub mod config;
pub mod evaluate;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use dr_annotate_core::corpus::CorpusFormat;
use dr_annotate_core::metrics::{format_percent, LabelMode, ReportFormat};
use dr_annotate_core::strategies::StrategyId;

pub use annotate::{cmd_annotate, AnnotateOutcome, RunManifest};
pub use config::{BackendSpec, InventoryProfile, PartialConfig, RunConfig};
pub use evaluate::{cmd_cache_clear, cmd_cache_inspect, cmd_evaluate, cmd_report, EvaluateArgs};

#[derive(Debug, Parser)]
#[command(name = "dr-annotate", version, about = "Annotate implicit discourse relations with chat models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Run a strategy over a corpus and write one prediction per item.
    Annotate(AnnotateFlags),
    /// Score a prediction file against golds derived from the corpus.
    Evaluate(EvaluateFlags),
    /// Render a comparison of evaluation reports.
    Report(ReportFlags),
    /// Inspect or clear a response cache directory.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    VoteCsv,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => CorpusFormat::Jsonl,
            FormatArg::VoteCsv => CorpusFormat::VoteCsv,
        }
    }
}

fn parse_strategy(s: &str) -> Result<StrategyId, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct AnnotateFlags {
    /// TOML file keyed by run-config field names; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub corpus_format: Option<FormatArg>,
    /// pdtb3_14, discogem_7 or custom:<pack.toml>
    #[arg(long)]
    pub profile: Option<String>,
    /// Connective table replacing the shipped one.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// mc, two_step, per_class_binary, per_class_verification, baseline_random, baseline_constant
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<StrategyId>,
    /// Keep every positive per-class answer instead of aggregating.
    #[arg(long)]
    pub multi_label: bool,
    /// live:<base_url>, mock:<script.json> or mock:oracle
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    /// Sense emitted by baseline_constant.
    #[arg(long)]
    pub constant_label: Option<String>,
    /// Classes with at most this many items are dropped.
    #[arg(long)]
    pub min_class_instances: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl AnnotateFlags {
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => PartialConfig::from_file(p)?,
            None => PartialConfig::default(),
        };
        let flags = PartialConfig {
            corpus_path: self.corpus.clone(),
            corpus_format: self.corpus_format.map(Into::into),
            inventory_profile: self.profile.clone(),
            mapping_path: self.mapping.clone(),
            strategy: self.strategy,
            multi_label: self.multi_label.then_some(true),
            backend: self.backend.clone(),
            model_id: self.model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            constant_label: self.constant_label.clone(),
            min_class_instances: self.min_class_instances,
            cache_dir: self.cache_dir.clone(),
            parallelism: self.parallelism,
            seed: self.seed,
            output: self.output.clone(),
            manifest: self.manifest.clone(),
        };
        RunConfig::resolve(file.overlay(flags))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Single,
    Multi,
}

#[derive(Debug, Args)]
pub struct EvaluateFlags {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub corpus_format: FormatArg,
    #[arg(long, default_value = "pdtb3_14")]
    pub profile: String,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub level: u8,
    #[arg(long, value_enum, default_value = "single")]
    pub mode: ModeArg,
    /// Seed for the majority tie-break; use the annotation seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RenderArg {
    Table,
    Delimited,
}

#[derive(Debug, Args)]
pub struct ReportFlags {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: RenderArg,
    /// Append per-class tables and both confusion matrices per report.
    #[arg(long)]
    pub confusion: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    Inspect {
        #[arg(long)]
        dir: PathBuf,
    },
    Clear {
        #[arg(long)]
        dir: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Annotate(flags) => {
            let config = flags.resolve()?;
            let outcome = cmd_annotate(&config)?;
            let m = &outcome.manifest;
            println!(
                "{} predictions written to {} ({} backend calls)",
                m.predictions_written,
                config.output.display(),
                m.backend_calls
            );
        }
        Command::Evaluate(flags) => {
            let args = EvaluateArgs {
                predictions: flags.predictions,
                corpus: flags.corpus,
                corpus_format: flags.corpus_format.into(),
                inventory_profile: flags.profile.parse().map_err(anyhow::Error::msg)?,
                level: flags.level,
                label_mode: match flags.mode {
                    ModeArg::Single => LabelMode::Single,
                    ModeArg::Multi => LabelMode::Multi,
                },
                seed: flags.seed,
                output: flags.output,
            };
            let r = cmd_evaluate(&args)?;
            let pct = |v: Option<f64>| v.map_or_else(|| "-".into(), format_percent);
            println!(
                "items {}  accuracy {}  soft match {}  macro F1 {}  per-item F1 {}",
                r.n_items,
                pct(r.strict_accuracy),
                format_percent(r.soft_match_accuracy),
                pct(r.macro_f1),
                format_percent(r.avg_per_item_f1)
            );
        }
        Command::Report(flags) => {
            let format = match flags.format {
                RenderArg::Table => ReportFormat::Table,
                RenderArg::Delimited => ReportFormat::Delimited,
            };
            let text = cmd_report(&flags.reports, format, flags.confusion)?;
            match flags.output {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Cache { action } => match action {
            CacheAction::Inspect { dir } => {
                let s = cmd_cache_inspect(&dir)?;
                println!("{} entries, {} corrupt, {} bytes", s.entries, s.corrupt, s.bytes);
            }
            CacheAction::Clear { dir } => {
                println!("removed {} entries", cmd_cache_clear(&dir)?);
            }
        },
    }
    Ok(())
}
