//! Run configuration: a TOML file keyed by field name, overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dr_annotate_core::corpus::{CorpusFormat, FilterPolicy};
use dr_annotate_core::strategies::{Strategy, StrategyId};
use dr_annotate_core::taxonomy::{load_inventory, load_mapping, ConnectiveMapping, Profile, SenseId, SenseInventory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InventoryProfile {
    Pdtb3,
    Discogem7,
    Custom(PathBuf),
}

impl InventoryProfile {
    pub fn load(&self) -> Result<SenseInventory> {
        Ok(match self {
            InventoryProfile::Pdtb3 => SenseInventory::for_profile(Profile::Pdtb3),
            InventoryProfile::Discogem7 => SenseInventory::for_profile(Profile::Discogem7),
            InventoryProfile::Custom(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading prompt pack {}", path.display()))?;
                load_inventory(&text, None).with_context(|| format!("loading prompt pack {}", path.display()))?
            }
        })
    }
}

impl FromStr for InventoryProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pdtb3_14" => Ok(InventoryProfile::Pdtb3),
            "discogem_7" => Ok(InventoryProfile::Discogem7),
            _ => match s.strip_prefix("custom:") {
                Some(p) if !p.is_empty() => Ok(InventoryProfile::Custom(p.into())),
                _ => Err(format!("unknown inventory profile {s:?} (pdtb3_14, discogem_7 or custom:<path>)")),
            },
        }
    }
}

impl fmt::Display for InventoryProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InventoryProfile::Pdtb3 => f.write_str("pdtb3_14"),
            InventoryProfile::Discogem7 => f.write_str("discogem_7"),
            InventoryProfile::Custom(p) => write!(f, "custom:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Live { base_url: String },
    MockScript(PathBuf),
    /// Answers every prompt with the item's derived gold label.
    MockOracle,
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(url) = s.strip_prefix("live:") {
            if url.is_empty() {
                return Err("live backend needs a base URL".into());
            }
            return Ok(BackendSpec::Live { base_url: url.into() });
        }
        match s.strip_prefix("mock:") {
            Some("oracle") => Ok(BackendSpec::MockOracle),
            Some(p) if !p.is_empty() => Ok(BackendSpec::MockScript(p.into())),
            _ => Err(format!("unknown backend {s:?} (live:<base_url>, mock:<script.json> or mock:oracle)")),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Live { base_url } => write!(f, "live:{base_url}"),
            BackendSpec::MockScript(p) => write!(f, "mock:{}", p.display()),
            BackendSpec::MockOracle => f.write_str("mock:oracle"),
        }
    }
}

/// Every field optional; the file and the flags both produce one of these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub corpus_path: Option<PathBuf>,
    pub corpus_format: Option<CorpusFormat>,
    pub inventory_profile: Option<String>,
    pub mapping_path: Option<PathBuf>,
    pub strategy: Option<StrategyId>,
    pub multi_label: Option<bool>,
    pub backend: Option<String>,
    pub model_id: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub constant_label: Option<String>,
    pub min_class_instances: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl PartialConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        macro_rules! pick {
            ($($f:ident),*) => { PartialConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            corpus_path, corpus_format, inventory_profile, mapping_path, strategy, multi_label, backend,
            model_id, temperature, max_output_tokens, constant_label, min_class_instances, cache_dir,
            parallelism, seed, output, manifest
        )
    }
}

pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub corpus_format: CorpusFormat,
    pub inventory_profile: InventoryProfile,
    pub mapping_path: Option<PathBuf>,
    pub strategy: StrategyId,
    pub multi_label: bool,
    /// `None` only for baselines, which never call a backend.
    pub backend: Option<BackendSpec>,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    pub constant_label: Option<SenseId>,
    pub filter: FilterPolicy,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub manifest: PathBuf,
}

/// Fields that change what a run produces. Parallelism, cache location and
/// output paths are excluded.
#[derive(Serialize)]
struct RunKey<'a> {
    corpus_path: &'a Path,
    corpus_format: CorpusFormat,
    inventory_profile: String,
    mapping_path: Option<&'a Path>,
    strategy: StrategyId,
    multi_label: bool,
    backend: Option<String>,
    model_id: &'a str,
    temperature: f64,
    max_output_tokens: Option<u32>,
    constant_label: Option<&'a SenseId>,
    filter: FilterPolicy,
    seed: u64,
}

impl RunConfig {
    pub fn resolve(p: PartialConfig) -> Result<Self> {
        let strategy = p.strategy.context("no strategy given")?;
        let multi_label = p.multi_label.unwrap_or(false);
        if multi_label && !strategy.is_per_class() {
            bail!("--multi-label is only valid for per-class strategies, not {strategy}");
        }
        let constant_label = p.constant_label.map(SenseId::new);
        if strategy == StrategyId::BaselineConstant && constant_label.is_none() {
            bail!("baseline_constant needs a constant label");
        }
        let backend: Option<BackendSpec> = match &p.backend {
            Some(b) => Some(b.parse().map_err(anyhow::Error::msg)?),
            None if strategy.is_baseline() => None,
            None => bail!("no backend given"),
        };
        let inventory_profile = match &p.inventory_profile {
            Some(s) => s.parse().map_err(anyhow::Error::msg)?,
            None => InventoryProfile::Pdtb3,
        };
        let parallelism = p.parallelism.unwrap_or(DEFAULT_PARALLELISM);
        if parallelism == 0 {
            bail!("parallelism must be positive");
        }
        let temperature = p.temperature.unwrap_or(0.0);
        if !(temperature.is_finite() && temperature >= 0.0) {
            bail!("temperature must be a non-negative number");
        }
        let output = p.output.context("no output path given")?;
        let manifest = p.manifest.unwrap_or_else(|| {
            let mut s = output.clone().into_os_string();
            s.push(".manifest.json");
            s.into()
        });
        let mut filter = FilterPolicy::default();
        if let Some(n) = p.min_class_instances {
            filter.min_class_instances = n;
        }
        Ok(RunConfig {
            corpus_path: p.corpus_path.context("no corpus path given")?,
            corpus_format: p.corpus_format.unwrap_or(CorpusFormat::Jsonl),
            inventory_profile,
            mapping_path: p.mapping_path,
            strategy,
            multi_label,
            backend,
            model_id: p.model_id.unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            temperature,
            max_output_tokens: p.max_output_tokens,
            constant_label,
            filter,
            cache_dir: p.cache_dir,
            parallelism,
            seed: p.seed.unwrap_or(0),
            output,
            manifest,
        })
    }

    /// The backend-driven strategy, `None` for baselines.
    pub fn prompting_strategy(&self) -> Option<Strategy> {
        let aggregate = !self.multi_label;
        match self.strategy {
            StrategyId::Mc => Some(Strategy::MultiwayMc),
            StrategyId::TwoStep => Some(Strategy::TwoStep),
            StrategyId::PerClassBinary => Some(Strategy::PerClassBinary { aggregate }),
            StrategyId::PerClassVerification => Some(Strategy::PerClassVerification { aggregate }),
            StrategyId::BaselineRandom | StrategyId::BaselineConstant => None,
        }
    }

    pub fn load_mapping(&self, inventory: &SenseInventory) -> Result<ConnectiveMapping> {
        match &self.mapping_path {
            None => Ok(ConnectiveMapping::default_for(inventory)),
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading connective table {}", path.display()))?;
                load_mapping(&text, inventory).with_context(|| format!("loading connective table {}", path.display()))
            }
        }
    }

    pub fn config_hash(&self) -> String {
        let key = RunKey {
            corpus_path: &self.corpus_path,
            corpus_format: self.corpus_format,
            inventory_profile: self.inventory_profile.to_string(),
            mapping_path: self.mapping_path.as_deref(),
            strategy: self.strategy,
            multi_label: self.multi_label,
            backend: self.backend.as_ref().map(ToString::to_string),
            model_id: &self.model_id,
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            constant_label: self.constant_label.as_ref(),
            filter: self.filter,
            seed: self.seed,
        };
        sha256_hex(&serde_json::to_vec(&key).expect("run key serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
