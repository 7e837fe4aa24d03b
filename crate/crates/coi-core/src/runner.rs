//! Experiment orchestration: support/eval split, method-by-model grid
//! execution with bounded parallelism, append-only resumable record files,
//! and report generation.
//!
//! Per-(method, model) results live under `<output_dir>/records/` as one
//! prediction record per line. A rerun loads the valid prefix of each file,
//! drops a torn final line, and computes only the missing windows, so an
//! interrupted run resumed under the mock backend reproduces the reports of
//! an uninterrupted run byte for byte.

use crate::assets::{builtin_assets, load_assets, AssetError, Assets};
use crate::backend::{
    CachedBackend, ChatBackend, HttpBackend, HttpBackendConfig, MockBackend, MockBackendConfig,
    ResponseCache, DEFAULT_REFUSAL_PHRASES,
};
use crate::chain::{build_chain, ensure_disjoint, run_chain, BuildOptions, ChainError, ChainRunParams, ChainSpec, MethodId};
use crate::config::{ConfigError, EndpointConfig, ExperimentConfig, ModelConfig};
use crate::extraction::PredictionRecord;
use crate::labels::PatientCode;
use crate::metrics::{format_report, reports_to_jsonl, score, EvalReport, MetricsError};
use crate::transcript::{parse_corpus, segment_windows, TranscriptError, Window, WindowId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Seek, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error(transparent)]
    Corpus(#[from] TranscriptError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<EvalReport>,
    pub run_dir: PathBuf,
    pub n_support_windows: usize,
    pub n_eval_windows: usize,
}

fn named_seed(domain: &[u8], seed: u64, extra: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(domain);
    hasher.update(seed.to_le_bytes());
    hasher.update(extra);
    hasher.finalize().into()
}

/// Session-level support/eval split: sessions are shuffled under the
/// "split" sub-seed and the first floor(n_sessions * fraction) contribute
/// their windows to support, the rest to eval. No session appears on both
/// sides. Window order within each side follows the input order.
pub fn split_support_eval(
    windows: &[Window],
    support_fraction: f64,
    seed: u64,
) -> (Vec<Window>, Vec<Window>) {
    let mut session_ids: Vec<&str> = windows
        .iter()
        .map(|w| w.session_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha20Rng::from_seed(named_seed(b"split", seed, b""));
    session_ids.shuffle(&mut rng);
    let n_support = (session_ids.len() as f64 * support_fraction).floor() as usize;
    if support_fraction > 0.0 && n_support == 0 {
        log::warn!(
            "support_fraction {support_fraction} yields 0 support sessions out of {}",
            session_ids.len()
        );
    }
    let support_sessions: BTreeSet<&str> = session_ids[..n_support].iter().copied().collect();
    let (support, eval) = windows
        .iter()
        .cloned()
        .partition(|w| support_sessions.contains(w.session_id.as_str()));
    (support, eval)
}

/// Explicit split from a file of window ids (`session_id#window_index` per
/// line). Listed windows form the support set; all windows of the listed
/// windows' sessions are withheld from eval.
fn split_from_file(
    windows: &[Window],
    path: &Path,
) -> Result<(Vec<Window>, Vec<Window>), RunnerError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut wanted: BTreeSet<&str> = BTreeSet::new();
    for line in text.lines() {
        let line = line.trim();
        if !line.is_empty() {
            wanted.insert(line);
        }
    }
    let known: BTreeSet<String> = windows.iter().map(|w| w.id().to_string()).collect();
    for id in &wanted {
        if !known.contains(*id) {
            return Err(RunnerError::Invalid(format!(
                "support list {} names unknown window {id}",
                path.display()
            )));
        }
    }
    let support: Vec<Window> = windows
        .iter()
        .filter(|w| wanted.contains(w.id().to_string().as_str()))
        .cloned()
        .collect();
    let support_sessions: BTreeSet<&str> =
        support.iter().map(|w| w.session_id.as_str()).collect();
    let eval: Vec<Window> = windows
        .iter()
        .filter(|w| !support_sessions.contains(w.session_id.as_str()))
        .cloned()
        .collect();
    Ok((support, eval))
}

/// Keep path components safe for filenames derived from model ids.
fn sanitize_component(raw: &str) -> String {
    raw.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn build_backend(
    model: &ModelConfig,
    global_seed: u64,
    extra_refusal_phrases: &[String],
    cache_dir: Option<&Path>,
    assets: &Assets,
) -> Result<Box<dyn ChatBackend>, RunnerError> {
    let inner: Box<dyn ChatBackend> = match &model.endpoint {
        EndpointConfig::Mock {
            epsilon,
            refusal_trigger,
        } => Box::new(MockBackend::new(
            assets.cues.mock_rules(),
            MockBackendConfig {
                epsilon: *epsilon,
                noise_seed: global_seed,
                refusal_trigger: refusal_trigger.clone(),
            },
        )),
        EndpointConfig::Http {
            base_url,
            api_key_env,
            timeout_secs,
            max_retries,
            initial_backoff_ms,
            requests_per_minute,
        } => {
            let mut phrases: Vec<String> = DEFAULT_REFUSAL_PHRASES
                .iter()
                .map(|p| p.to_string())
                .collect();
            phrases.extend(extra_refusal_phrases.iter().cloned());
            let backend = HttpBackend::new(HttpBackendConfig {
                base_url: base_url.clone(),
                api_key_env: api_key_env.clone(),
                timeout: std::time::Duration::from_secs(*timeout_secs),
                max_retries: *max_retries,
                initial_backoff: std::time::Duration::from_millis(*initial_backoff_ms),
                requests_per_minute: *requests_per_minute,
                refusal_phrases: phrases,
            })
            .map_err(|e| RunnerError::Invalid(format!("http backend: {e}")))?;
            Box::new(backend)
        }
    };
    match cache_dir {
        None => Ok(inner),
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(format!("{}.jsonl", sanitize_component(&model.model_id)));
            let cache = ResponseCache::open(&path)
                .map_err(|e| RunnerError::Invalid(format!("cache {}: {e}", path.display())))?;
            Ok(Box::new(CachedBackend::new(inner, cache)))
        }
    }
}

/// Read back the valid prefix of a record file, truncating a torn final
/// line so the file can be appended to safely.
fn load_completed_records(path: &Path) -> Result<Vec<PredictionRecord>, RunnerError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut file = std::fs::OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    for line in text.split_inclusive('\n') {
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<PredictionRecord>(line) {
            Ok(record) => {
                records.push(record);
                valid_len += line.len() as u64;
            }
            Err(_) => break,
        }
    }
    if valid_len < text.len() as u64 {
        file.set_len(valid_len).map_err(io_err(path))?;
        file.seek(std::io::SeekFrom::End(0)).map_err(io_err(path))?;
    }
    Ok(records)
}

struct CellPlan<'a> {
    method: MethodId,
    model: &'a ModelConfig,
    spec: ChainSpec,
    record_path: PathBuf,
}

/// The split shared by every grid cell.
struct EvalData<'a> {
    support: &'a [Window],
    eval: &'a [Window],
    golds: &'a BTreeMap<WindowId, PatientCode>,
}

fn run_cell(
    plan: &CellPlan,
    backend: &dyn ChatBackend,
    config: &ExperimentConfig,
    assets: &Assets,
    data: &EvalData,
    pool: &rayon::ThreadPool,
) -> Result<Vec<PredictionRecord>, RunnerError> {
    let mut records = load_completed_records(&plan.record_path)?;
    for record in &records {
        let stale = record.method_id != plan.method
            || record.model_id != plan.model.model_id
            || data.golds.get(&record.window_id) != Some(&record.gold);
        if stale {
            return Err(RunnerError::Invalid(format!(
                "record file {} does not match this configuration (window {}); \
                 use a fresh output directory",
                plan.record_path.display(),
                record.window_id
            )));
        }
    }
    let done: BTreeSet<&WindowId> = records.iter().map(|r| &r.window_id).collect();
    let pending: Vec<&Window> = data.eval.iter().filter(|w| !done.contains(&w.id())).collect();
    drop(done);

    let mut out = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(&plan.record_path)
        .map_err(io_err(&plan.record_path))?;
    let params = ChainRunParams {
        model_id: &plan.model.model_id,
        sampling: plan.model.sampling,
        misc_definitions: &assets.definitions,
    };
    // Batched so progress persists incrementally while keeping file order
    // deterministic (batch results are written in eval order).
    let batch_size = config.max_in_flight.max(1) * 8;
    for batch in pending.chunks(batch_size) {
        let results: Vec<Result<PredictionRecord, ChainError>> = pool.install(|| {
            batch
                .par_iter()
                .map(|window| {
                    let id_bytes = window.id().to_string();
                    let mut rng = ChaCha20Rng::from_seed(named_seed(
                        b"fewshot",
                        config.global_seed,
                        id_bytes.as_bytes(),
                    ));
                    let transcript =
                        run_chain(&plan.spec, window, &params, backend, data.support, &mut rng)?;
                    Ok(PredictionRecord::from_transcript(
                        transcript,
                        data.golds[&window.id()],
                        config.global_seed,
                        config.accept_code_names,
                    ))
                })
                .collect()
        });
        for result in results {
            let record = result?;
            let line = serde_json::to_string(&record)
                .map_err(|e| RunnerError::Invalid(format!("serialize record: {e}")))?;
            writeln!(out, "{line}").map_err(io_err(&plan.record_path))?;
            records.push(record);
        }
        out.flush().map_err(io_err(&plan.record_path))?;
    }
    Ok(records)
}

/// Execute the full method-by-model grid described by the config and write
/// records plus reports under its output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, RunnerError> {
    config.validate()?;
    let assets = match &config.asset_dir {
        Some(dir) => load_assets(dir)?,
        None => builtin_assets(),
    };

    let parsed = parse_corpus(&config.corpus)?;
    if parsed.rejected_count() > 0 {
        log::warn!("{} session(s) rejected during validation", parsed.rejected_count());
    }
    if parsed.sessions.is_empty() {
        return Err(RunnerError::Invalid(format!(
            "corpus {} contains no accepted sessions",
            config.corpus.display()
        )));
    }

    let mut windows = Vec::new();
    let mut skipped = 0usize;
    for session in &parsed.sessions {
        let set = segment_windows(session, config.window_size);
        skipped += set.skipped_groups;
        windows.extend(set.windows);
    }
    if skipped > 0 {
        log::warn!("{skipped} window group(s) had no gold-coded patient utterance");
    }

    let (support, eval) = match &config.support_path {
        Some(path) => split_from_file(&windows, path)?,
        None => split_support_eval(&windows, config.support_fraction, config.global_seed),
    };
    ensure_disjoint(&support, &eval)?;
    if eval.is_empty() {
        return Err(RunnerError::Invalid(
            "no eval windows remain after the support split".to_string(),
        ));
    }
    let golds: BTreeMap<WindowId, PatientCode> =
        eval.iter().map(|w| (w.id(), w.gold_label)).collect();
    let data = EvalData {
        support: &support,
        eval: &eval,
        golds: &golds,
    };

    let run_dir = config.output_dir.clone();
    let records_dir = run_dir.join("records");
    let reports_dir = run_dir.join("reports");
    std::fs::create_dir_all(&records_dir).map_err(io_err(&records_dir))?;
    std::fs::create_dir_all(&reports_dir).map_err(io_err(&reports_dir))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| RunnerError::Invalid(format!("thread pool: {e}")))?;

    let mut reports = Vec::new();
    for model in &config.models {
        let backend = build_backend(
            model,
            config.global_seed,
            &config.refusal_phrases,
            config.cache_dir.as_deref(),
            &assets,
        )?;
        for &method in &config.methods {
            let spec = build_chain(
                method,
                &assets.templates,
                &BuildOptions {
                    fewshot_n: config.fewshot_n,
                },
            )?;
            let plan = CellPlan {
                method,
                model,
                spec,
                record_path: records_dir.join(format!(
                    "{}__{}.jsonl",
                    method.as_str(),
                    sanitize_component(&model.model_id)
                )),
            };
            let records = run_cell(&plan, &backend, config, &assets, &data, &pool)?;
            reports.push(score(method, &model.model_id, &records, &golds)?);
        }
    }

    reports.sort_by(|a, b| {
        (a.method_id.as_str(), a.model_id.as_str()).cmp(&(b.method_id.as_str(), b.model_id.as_str()))
    });
    let jsonl = reports_to_jsonl(&reports);
    let jsonl_path = reports_dir.join("reports.jsonl");
    std::fs::write(&jsonl_path, jsonl).map_err(io_err(&jsonl_path))?;
    let summary = format!("{}\n", format_report(&reports));
    let summary_path = reports_dir.join("summary.txt");
    std::fs::write(&summary_path, summary).map_err(io_err(&summary_path))?;

    Ok(RunOutcome {
        reports,
        run_dir,
        n_support_windows: support.len(),
        n_eval_windows: eval.len(),
    })
}

/// Run the ablation suite (full chain plus the three stage removals)
/// regardless of the configured method list, under `<output_dir>/ablation`.
pub fn run_ablation(config: &ExperimentConfig) -> Result<RunOutcome, RunnerError> {
    let mut ablation = config.clone();
    ablation.methods = MethodId::ABLATION_SUITE.to_vec();
    ablation.output_dir = config.output_dir.join("ablation");
    run_experiment(&ablation)
}
