//! Grid search with validation-based model selection.
//!
//! Trials — one per (config, seed) — are independent and run on a small
//! worker pool. Fresh results reach the sink strictly in task order
//! regardless of completion order, so persisted logs are reproducible for
//! any job count. Selection: per (mode, architecture), the config with the
//! highest mean validation accuracy over the seeds wins (first in grid
//! order on ties) and its test accuracies are summarized.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::mean_and_sample_std;
use crate::data::GraphDataset;
use crate::error::{Error, Result};
use crate::model::{Architecture, Checkpoint};

use super::{run_trial_with_checkpoint, TrainConfig, TrainMode, TrialResult};

/// Selection outcome for one (mode, architecture) group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettingSummary {
    pub mode: TrainMode,
    pub architecture: Architecture,
    /// Index into the searched grid of the winning config.
    pub best_config_index: usize,
    pub val_accuracy_mean: f64,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    pub intrinsic_dim_mean: Option<f64>,
    pub avg_abs_corr_mean: Option<f64>,
    /// Trials that backed the summary (seed count of the winning config).
    pub trials: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Worker threads for independent trials.
    pub jobs: usize,
    /// Stop launching new trials after this many fresh completions —
    /// simulates an interrupted run; resumed runs pick up the remainder.
    pub max_fresh_trials: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            jobs: 1,
            max_fresh_trials: None,
        }
    }
}

/// Receives every freshly computed trial: config, result, captured best
/// checkpoint, and the trial's wall-clock seconds.
pub type TrialSink<'a> = dyn FnMut(&TrainConfig, &TrialResult, &Checkpoint, f64) + 'a;

/// Run `grid x seeds` trials and summarize. `resume` may supply an already
/// persisted result for a trial (it is then not re-run but still counted in
/// the summaries); `sink` receives every fresh result in task order.
///
/// Returns `None` for the summaries when the run was cut short by
/// `max_fresh_trials` (a partial run has nothing meaningful to select
/// from); complete runs always return summaries.
pub fn hyperparameter_search(
    dataset: &GraphDataset,
    grid: &[TrainConfig],
    seeds: &[u64],
    options: SearchOptions,
    resume: &(dyn Fn(&TrainConfig) -> Option<TrialResult> + Sync),
    sink: &mut TrialSink,
) -> Result<Option<Vec<SettingSummary>>> {
    if grid.is_empty() {
        return Err(Error::Domain("hyperparameter grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Domain("no seeds given".into()));
    }
    for config in grid {
        config.validate()?;
    }

    // task list: configs stamped with each seed
    let mut tasks: Vec<TrainConfig> = Vec::with_capacity(grid.len() * seeds.len());
    for config in grid {
        for &seed in seeds {
            let mut c = config.clone();
            c.seed = seed;
            tasks.push(c);
        }
    }

    let mut results: Vec<Option<TrialResult>> = Vec::with_capacity(tasks.len());
    let mut pending: Vec<usize> = Vec::new();
    for (i, config) in tasks.iter().enumerate() {
        match resume(config) {
            Some(r) => results.push(Some(r)),
            None => {
                results.push(None);
                pending.push(i);
            }
        }
    }

    let budget = options.max_fresh_trials.unwrap_or(usize::MAX);
    let truncated = pending.len() > budget;
    pending.truncate(budget);

    type Done = (TrialResult, Checkpoint, f64);
    let run_one = |task: usize| -> Result<Done> {
        let started = Instant::now();
        let (result, ckpt) = run_trial_with_checkpoint(dataset, &tasks[task])?;
        Ok((result, ckpt, started.elapsed().as_secs_f64()))
    };

    if options.jobs <= 1 || pending.len() <= 1 {
        for &task in &pending {
            let (result, ckpt, wall) = run_one(task)?;
            sink(&tasks[task], &result, &ckpt, wall);
            results[task] = Some(result);
        }
    } else {
        let workers = options.jobs.min(pending.len());
        let cursor = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, Result<Done>)>();
        let fresh: BTreeMap<usize, Done> = std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let pending = &pending;
                let cursor = &cursor;
                let run_one = &run_one;
                scope.spawn(move || loop {
                    let at = cursor.fetch_add(1, Ordering::SeqCst);
                    if at >= pending.len() {
                        break;
                    }
                    let task = pending[at];
                    if tx.send((task, run_one(task))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut done = BTreeMap::new();
            let mut first_error: Option<(usize, Error)> = None;
            for (task, outcome) in rx {
                match outcome {
                    Ok(d) => {
                        done.insert(task, d);
                    }
                    Err(e) => {
                        if first_error.as_ref().map_or(true, |(t, _)| task < *t) {
                            first_error = Some((task, e));
                        }
                    }
                }
            }
            match first_error {
                Some((_, e)) => Err(e),
                None => Ok(done),
            }
        })?;
        // emit in task order so logs do not depend on completion order
        for (task, (result, ckpt, wall)) in fresh {
            sink(&tasks[task], &result, &ckpt, wall);
            results[task] = Some(result);
        }
    }

    if truncated {
        return Ok(None);
    }
    let records: Vec<(TrainConfig, TrialResult)> = tasks
        .into_iter()
        .zip(results)
        .map(|(config, r)| (config, r.expect("all tasks resolved")))
        .collect();
    Ok(Some(summarize(&records, grid)))
}

/// Group persisted trial records by (mode, architecture), pick the config
/// with the best mean validation accuracy, and summarize its test runs.
/// Pure bookkeeping over the records: re-running it on a persisted log
/// reproduces the original summary bit for bit.
pub fn summarize(records: &[(TrainConfig, TrialResult)], grid: &[TrainConfig]) -> Vec<SettingSummary> {
    // map each record to its grid config (identity modulo seed)
    let grid_index_of = |config: &TrainConfig| -> Option<usize> {
        grid.iter().position(|g| {
            let mut g = g.clone();
            g.seed = config.seed;
            g == *config
        })
    };

    let mut groups: BTreeMap<(usize, usize), BTreeMap<usize, Vec<&TrialResult>>> = BTreeMap::new();
    for (config, result) in records {
        let Some(ci) = grid_index_of(config) else {
            continue; // stale record from another grid
        };
        let mode_rank = TrainMode::ALL
            .iter()
            .position(|m| *m == config.mode)
            .unwrap();
        let arch_rank = Architecture::ALL
            .iter()
            .position(|a| *a == config.model.architecture)
            .unwrap();
        groups
            .entry((mode_rank, arch_rank))
            .or_default()
            .entry(ci)
            .or_default()
            .push(result);
    }

    let mut summaries = Vec::new();
    for ((mode_rank, arch_rank), configs) in groups {
        let mut best: Option<(usize, f64)> = None;
        for (&ci, results) in &configs {
            let vals: Vec<f64> = results.iter().map(|r| r.val_accuracy).collect();
            let (val_mean, _) = mean_and_sample_std(&vals);
            let better = match best {
                None => true,
                Some((_, cur)) => val_mean > cur,
            };
            if better {
                best = Some((ci, val_mean));
            }
        }
        let (best_ci, val_accuracy_mean) = best.expect("non-empty group");
        let results = &configs[&best_ci];
        let tests: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
        let (test_accuracy_mean, test_accuracy_std) = mean_and_sample_std(&tests);
        let mean_of = |xs: Vec<f64>| {
            if xs.is_empty() {
                None
            } else {
                Some(mean_and_sample_std(&xs).0)
            }
        };
        summaries.push(SettingSummary {
            mode: TrainMode::ALL[mode_rank],
            architecture: Architecture::ALL[arch_rank],
            best_config_index: best_ci,
            val_accuracy_mean,
            test_accuracy_mean,
            test_accuracy_std,
            intrinsic_dim_mean: mean_of(results.iter().filter_map(|r| r.intrinsic_dim).collect()),
            avg_abs_corr_mean: mean_of(results.iter().filter_map(|r| r.avg_abs_corr).collect()),
            trials: results.len(),
        });
    }
    summaries
}
