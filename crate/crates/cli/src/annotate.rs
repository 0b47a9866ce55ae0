//! The `annotate` command.

use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;

use dr_annotate_core::backend::{
    BackendError, ByteEstimate, CacheStats, CachedBackend, ChatBackend, ChatRequest, ChatResponse, LiveBackend,
    LiveConfig, MockBackend, MockScript,
};
use dr_annotate_core::corpus::{derive_gold, filter_eval_items, load_corpus, RelationItem, Threshold};
use dr_annotate_core::strategies::{Annotator, Baseline, Prediction, RequestSettings, StrategyId};
use dr_annotate_core::taxonomy::{ConnectiveMapping, SenseInventory};

use crate::config::{sha256_hex, BackendSpec, RunConfig};

/// Counts the requests that reach the wrapped backend.
struct Counting<B> {
    inner: B,
    calls: AtomicU64,
}

impl<B: ChatBackend> ChatBackend for Counting<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

enum Stack {
    Plain(Counting<Box<dyn ChatBackend>>),
    Cached(CachedBackend<Counting<Box<dyn ChatBackend>>>),
}

impl Stack {
    fn backend(&self) -> &dyn ChatBackend {
        match self {
            Stack::Plain(b) => b,
            Stack::Cached(b) => b,
        }
    }

    fn calls(&self) -> u64 {
        match self {
            Stack::Plain(b) => b.calls.load(Ordering::SeqCst),
            Stack::Cached(b) => b.inner().calls.load(Ordering::SeqCst),
        }
    }

    fn cache_stats(&self) -> Option<CacheStats> {
        match self {
            Stack::Plain(_) => None,
            Stack::Cached(b) => Some(b.stats()),
        }
    }
}

fn build_backend(
    config: &RunConfig,
    spec: &BackendSpec,
    items: &[RelationItem],
    inventory: &SenseInventory,
    mapping: &ConnectiveMapping,
) -> Result<Stack> {
    let inner: Box<dyn ChatBackend> = match spec {
        BackendSpec::Live { base_url } => {
            let mut live = LiveConfig::from_env(base_url.clone())?;
            live.max_in_flight = config.parallelism;
            Box::new(LiveBackend::new(live))
        }
        BackendSpec::MockScript(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading mock script {}", path.display()))?;
            Box::new(MockBackend::new(MockScript::from_json(&text)?))
        }
        BackendSpec::MockOracle => {
            let mut golds = Vec::with_capacity(items.len());
            for item in items {
                let g = derive_gold(item, inventory, Threshold::default(), config.seed)?;
                if let Some(single) = g.single.filter(|s| inventory.contains(s)) {
                    golds.push((item.id.clone(), single));
                }
            }
            let script = MockScript::gold_oracle(golds.iter().map(|(i, s)| (i.as_str(), s)), inventory, mapping)?;
            Box::new(MockBackend::new(script))
        }
    };
    let counting = Counting {
        inner,
        calls: AtomicU64::new(0),
    };
    Ok(match &config.cache_dir {
        Some(dir) => Stack::Cached(CachedBackend::new(counting, dir)?),
        None => Stack::Plain(counting),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CacheSummary {
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config_hash: String,
    pub inventory_hash: String,
    pub seed: u64,
    pub strategy: StrategyId,
    pub multi_label: bool,
    pub backend: Option<String>,
    pub model_id: String,
    pub corpus_items: usize,
    pub evaluated_items: usize,
    pub predictions_written: usize,
    pub backend_calls: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheSummary>,
    pub started_at: u64,
    pub wall_time_ms: u128,
}

pub struct AnnotateOutcome {
    pub manifest: RunManifest,
    pub predictions: Vec<Prediction>,
}

fn inventory_hash(inventory: &SenseInventory, mapping: &ConnectiveMapping) -> String {
    sha256_hex(&serde_json::to_vec(&(inventory, mapping)).expect("inventory serializes"))
}

/// Runs the strategy over `items`, stopping at the first hard failure.
/// Completed predictions are returned either way, in item order.
fn run_items(
    config: &RunConfig,
    items: &[RelationItem],
    inventory: &SenseInventory,
    mapping: &ConnectiveMapping,
    backend: Option<&dyn ChatBackend>,
) -> (Vec<Prediction>, Option<anyhow::Error>) {
    let (Some(strategy), Some(backend)) = (config.prompting_strategy(), backend) else {
        let mut baseline = match config.strategy {
            StrategyId::BaselineRandom => Baseline::random(config.seed),
            _ => Baseline::constant(config.constant_label.clone().expect("validated")),
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match baseline.run(item, inventory) {
                Ok(p) => out.push(p),
                Err(e) => return (out, Some(e.into())),
            }
        }
        return (out, None);
    };

    let annotator = Annotator {
        inventory,
        mapping,
        backend,
        settings: RequestSettings {
            model_id: config.model_id.clone(),
            temperature: config.temperature,
            max_output_tokens: config.max_output_tokens,
        },
        token_counter: &ByteEstimate,
    };
    let slots: Vec<Mutex<Option<Prediction>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<(usize, anyhow::Error)>> = Mutex::new(None);
    let workers = config.parallelism.min(items.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                while !abort.load(Ordering::SeqCst) {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(item) = items.get(i) else { break };
                    match annotator.run(item, strategy) {
                        Ok(p) => *slots[i].lock().expect("slot lock") = Some(p),
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            let mut f = failure.lock().expect("failure lock");
                            // keep the earliest failing item for a stable message
                            if f.as_ref().is_none_or(|(j, _)| i < *j) {
                                *f = Some((i, anyhow::Error::new(e).context(format!("item {:?}", item.id))));
                            }
                        }
                    }
                }
            });
        }
    });

    let predictions = slots
        .into_iter()
        .filter_map(|s| s.into_inner().expect("slot lock"))
        .collect();
    (predictions, failure.into_inner().expect("failure lock").map(|(_, e)| e))
}

fn write_jsonl(path: &std::path::Path, predictions: &[Prediction]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_annotate(config: &RunConfig) -> Result<AnnotateOutcome> {
    let started = Instant::now();
    let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let inventory = config.inventory_profile.load()?;
    let mapping = config.load_mapping(&inventory)?;
    let corpus = load_corpus(&config.corpus_path, config.corpus_format, &inventory)
        .with_context(|| format!("loading corpus {}", config.corpus_path.display()))?;
    let items = filter_eval_items(&corpus, &inventory, config.filter, config.seed)?;
    info!("{} of {} items pass the evaluation filter", items.len(), corpus.len());

    let stack = match (&config.backend, config.strategy.is_baseline()) {
        (Some(spec), false) => Some(build_backend(config, spec, &items, &inventory, &mapping)?),
        _ => None,
    };
    let (predictions, failure) = run_items(config, &items, &inventory, &mapping, stack.as_ref().map(Stack::backend));
    write_jsonl(&config.output, &predictions)?;

    let manifest = RunManifest {
        status: if failure.is_some() { "failed" } else { "complete" },
        error: failure.as_ref().map(|e| format!("{e:#}")),
        config_hash: config.config_hash(),
        inventory_hash: inventory_hash(&inventory, &mapping),
        seed: config.seed,
        strategy: config.strategy,
        multi_label: config.multi_label,
        backend: config.backend.as_ref().map(ToString::to_string),
        model_id: config.model_id.clone(),
        corpus_items: corpus.len(),
        evaluated_items: items.len(),
        predictions_written: predictions.len(),
        backend_calls: stack.as_ref().map_or(0, Stack::calls),
        cache: stack.as_ref().and_then(Stack::cache_stats).map(|s| CacheSummary {
            hits: s.hits,
            misses: s.misses,
            hit_rate: s.hit_rate(),
        }),
        started_at,
        wall_time_ms: started.elapsed().as_millis(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&config.manifest, text + "\n").with_context(|| format!("writing {}", config.manifest.display()))?;

    if let Some(e) = failure {
        warn!("run aborted; {} predictions preserved in {}", predictions.len(), config.output.display());
        return Err(e.context("annotation aborted"));
    }
    Ok(AnnotateOutcome { manifest, predictions })
}
