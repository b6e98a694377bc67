//! `ingest` and `train` execution.
//!
//! A training run populates its output directory with:
//!
//! - `dataset.json` — the ingested dataset cache;
//! - `checkpoints/<hash>.json` — best-epoch parameters per trial;
//! - `trials.jsonl` — one self-contained JSON record per completed trial,
//!   written in deterministic task order;
//! - `manifest.json` — config snapshot, artifact references, summaries.
//!
//! A trial's identity is the SHA-256 of its behavior-relevant config subset
//! plus seed and mode; reruns skip trials whose hash is already in the log,
//! so interrupted runs resume without duplicating work.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gnnlab_core::data::{write_dataset_cache, GraphDataset};
use gnnlab_core::error::{Error, Result};
use gnnlab_core::train::{
    hyperparameter_search, summarize, SearchOptions, SettingSummary, TrainConfig, TrainMode,
    TrialResult,
};

use crate::config::ExperimentConfig;

pub const MANIFEST_VERSION: u32 = 1;

/// One line of `trials.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_hash: String,
    /// Relative path of the trial's checkpoint file.
    pub checkpoint: String,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub wall_secs: f64,
    pub result: TrialResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub code_version: String,
    /// Unix timestamp of the last manifest write; excluded from
    /// determinism comparisons.
    pub written_unix: u64,
    pub config: ExperimentConfig,
    pub dataset_cache: String,
    pub trial_log: String,
    pub trial_hashes: Vec<String>,
    pub summaries: Vec<SettingSummary>,
}

/// Stable trial identity: SHA-256 over the canonical JSON of the
/// behavior-relevant config subset (serde_json maps are sorted).
pub fn trial_hash(config: &TrainConfig) -> String {
    let canonical = serde_json::to_string(&config.identity()).expect("identity serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn dataset_stats_lines(dataset: &GraphDataset) -> Vec<String> {
    let symmetric = dataset.is_symmetric();
    let edge_entries = dataset.mean_edge_entries();
    let avg_edges = if symmetric { edge_entries / 2.0 } else { edge_entries };
    vec![
        format!("dataset: {}", dataset.name),
        format!("graphs: {}", dataset.len()),
        format!("classes: {}", dataset.num_classes),
        format!("avg nodes: {:.2}", dataset.mean_node_count()),
        format!(
            "avg edges: {:.2} ({})",
            avg_edges,
            if symmetric {
                "undirected"
            } else {
                "directed"
            }
        ),
        format!("feature categories: {}", dataset.num_feature_categories),
    ]
}

/// Parse/build the dataset, print its statistics, write the cache file.
pub fn cmd_ingest(config_path: &Path, out_dir: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let dataset = config.dataset.build()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cache = out_dir.join("dataset.json");
    write_dataset_cache(&dataset, &cache)?;
    for line in dataset_stats_lines(&dataset) {
        println!("{line}");
    }
    println!("cache: {}", cache.display());
    Ok(())
}

/// Read existing trial records; every line must parse.
pub fn read_trial_log(path: &Path) -> Result<Vec<TrialRecord>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(line).map_err(|e| Error::Format {
            file: path.display().to_string(),
            line: i + 1,
            message: format!("unparseable trial record: {e}"),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub struct TrainOutcome {
    pub fresh_trials: usize,
    pub resumed_trials: usize,
    /// None when the run was interrupted by a trial budget.
    pub summaries: Option<Vec<SettingSummary>>,
}

/// Run the grid for the requested modes. Completed trials (matching
/// config+seed hash) are skipped; fresh results are appended to the trial
/// log and checkpointed as they complete, in deterministic task order.
pub fn cmd_train(
    config_path: &Path,
    out_dir: &Path,
    mode_filter: Option<TrainMode>,
    jobs: usize,
    max_trials: Option<usize>,
) -> Result<TrainOutcome> {
    let config = ExperimentConfig::load(config_path)?;
    let dataset = config.dataset.build()?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoints_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&checkpoints_dir).map_err(|e| Error::io(&checkpoints_dir, e))?;
    let cache_path = out_dir.join("dataset.json");
    write_dataset_cache(&dataset, &cache_path)?;

    // expand, then de-duplicate identical identities (e.g. collapsed axes)
    let expanded = config.expand_grid(mode_filter, &dataset)?;
    let mut grid: Vec<TrainConfig> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for c in expanded {
        let mut probe = c.clone();
        probe.seed = 0;
        let key = trial_hash(&probe);
        if seen.insert(key) {
            grid.push(c);
        }
    }

    let log_path = out_dir.join("trials.jsonl");
    let existing = read_trial_log(&log_path)?;
    let done: BTreeMap<String, TrialResult> = existing
        .iter()
        .map(|r| (r.trial_hash.clone(), r.result.clone()))
        .collect();
    let resumed = done.len();

    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let mut fresh = 0usize;
    let mut sink_error: Option<Error> = None;
    let summaries = hyperparameter_search(
        &dataset,
        &grid,
        &config.run.seeds,
        SearchOptions {
            jobs,
            max_fresh_trials: max_trials,
        },
        &|c: &TrainConfig| done.get(&trial_hash(c)).cloned(),
        &mut |config, result, checkpoint, wall_secs| {
            if sink_error.is_some() {
                return;
            }
            let hash = trial_hash(config);
            let ckpt_rel = format!("checkpoints/{hash}.json");
            let record = TrialRecord {
                trial_hash: hash,
                checkpoint: ckpt_rel.clone(),
                wall_secs,
                result: result.clone(),
            };
            let write = (|| -> Result<()> {
                checkpoint.save(&out_dir.join(&ckpt_rel))?;
                let line = serde_json::to_string(&record).map_err(|e| Error::Format {
                    file: log_path.display().to_string(),
                    line: 0,
                    message: e.to_string(),
                })?;
                writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
                log.flush().map_err(|e| Error::io(&log_path, e))
            })();
            if let Err(e) = write {
                sink_error = Some(e);
            }
            fresh += 1;
        },
    )?;
    if let Some(e) = sink_error {
        return Err(e);
    }

    if let Some(summaries) = &summaries {
        write_manifest(out_dir, &config, summaries)?;
    }
    Ok(TrainOutcome {
        fresh_trials: fresh,
        resumed_trials: resumed,
        summaries,
    })
}

/// Write the manifest after verifying every referenced artifact exists.
fn write_manifest(
    out_dir: &Path,
    config: &ExperimentConfig,
    summaries: &[SettingSummary],
) -> Result<()> {
    let log_path = out_dir.join("trials.jsonl");
    let records = read_trial_log(&log_path)?;
    let mut trial_hashes = Vec::with_capacity(records.len());
    for r in &records {
        let ckpt = out_dir.join(&r.checkpoint);
        if !ckpt.is_file() {
            return Err(Error::Domain(format!(
                "manifest integrity: checkpoint {} is missing",
                ckpt.display()
            )));
        }
        trial_hashes.push(r.trial_hash.clone());
    }
    for file in ["dataset.json", "trials.jsonl"] {
        if !out_dir.join(file).is_file() {
            return Err(Error::Domain(format!(
                "manifest integrity: {file} is missing"
            )));
        }
    }
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        code_version: format!("gnnlab {}", env!("CARGO_PKG_VERSION")),
        written_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: config.clone(),
        dataset_cache: "dataset.json".into(),
        trial_log: "trials.jsonl".into(),
        trial_hashes,
        summaries: summaries.to_vec(),
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_manifest(out_dir: &Path) -> Result<RunManifest> {
    let path = out_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Format {
            file: path.display().to_string(),
            line: 0,
            message: format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                manifest.format_version
            ),
        });
    }
    Ok(manifest)
}

/// Recompute summaries from the persisted per-trial records; bit-identical
/// to the manifest values because it runs the same bookkeeping.
pub fn summarize_records(
    records: &[TrialRecord],
    grid: &[TrainConfig],
) -> Vec<SettingSummary> {
    let pairs: Vec<(TrainConfig, TrialResult)> = records
        .iter()
        .map(|r| (r.result.config.clone(), r.result.clone()))
        .collect();
    summarize(&pairs, grid)
}

pub fn checkpoint_path(out_dir: &Path, record: &TrialRecord) -> PathBuf {
    out_dir.join(&record.checkpoint)
}
