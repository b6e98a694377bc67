//! The experiment config file.
//!
//! A single versioned TOML document drives a whole run; no environment
//! variables are consulted, so a config plus a seed list reproduces a run
//! exactly. See README for the full schema.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gnnlab_core::data::{build_taxi_dataset, parse_trip_csv, parse_tudataset, GraphDataset};
use gnnlab_core::error::{Error, Result};
use gnnlab_core::model::{
    default_cluster_count, Architecture, ClassifierConfig, ModelConfig, PoolMode, ALLOWED_DIMS,
    ALLOWED_MARGINS,
};
use gnnlab_core::synthetic::clique_vs_path;
use gnnlab_core::train::{TrainConfig, TrainMode};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetSpec,
    pub run: RunSpec,
    pub grid: GridSpec,
}

/// Where the graphs come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// A TUDataset-format directory (`path`) with file prefix `name`.
    Tudataset { path: PathBuf, name: String },
    /// A trip CSV (`path`) with `zone_count` zones.
    Taxi { path: PathBuf, zone_count: usize },
    /// Built-in clique-vs-path generator.
    Synthetic {
        graphs: usize,
        size_min: usize,
        size_max: usize,
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn build(&self) -> Result<GraphDataset> {
        match self {
            DatasetSpec::Tudataset { path, name } => parse_tudataset(path, name),
            DatasetSpec::Taxi { path, zone_count } => {
                let trips = parse_trip_csv(path)?;
                build_taxi_dataset(&trips, *zone_count)
            }
            DatasetSpec::Synthetic {
                graphs,
                size_min,
                size_max,
                seed,
            } => clique_vs_path(*graphs, *size_min, *size_max, *seed),
        }
    }

    /// Reject missing source paths before any work starts.
    pub fn check_source(&self) -> Result<()> {
        match self {
            DatasetSpec::Tudataset { path, .. } => {
                if !path.is_dir() {
                    return Err(Error::Config(format!(
                        "dataset.path: {} is not a directory",
                        path.display()
                    )));
                }
            }
            DatasetSpec::Taxi { path, zone_count } => {
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "dataset.path: {} is not a file",
                        path.display()
                    )));
                }
                if *zone_count == 0 {
                    return Err(Error::Config("dataset.zone_count: must be positive".into()));
                }
            }
            DatasetSpec::Synthetic {
                graphs,
                size_min,
                size_max,
                ..
            } => {
                if *graphs < 10 {
                    return Err(Error::Config(
                        "dataset.graphs: need at least 10 for an 80/10/10 split".into(),
                    ));
                }
                if *size_min < 3 || size_min > size_max {
                    return Err(Error::Config(format!(
                        "dataset.size_min/size_max: invalid range {size_min}..={size_max}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub modes: Vec<String>,
    pub architectures: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_stage1_epochs")]
    pub stage1_epochs: usize,
    #[serde(default = "default_stage2_epochs")]
    pub stage2_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_stage1_epochs() -> usize {
    200
}
fn default_stage2_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    20
}

/// Grid axes. List-valued fields are searched over; scalar fields are
/// architecture-specific knobs held at one value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub input_dim: Vec<usize>,
    pub hidden_dim: Vec<usize>,
    pub output_dim: Vec<usize>,
    pub num_layers: Vec<usize>,
    #[serde(default = "default_margins")]
    pub margin: Vec<f64>,
    pub classifier_layers: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    #[serde(default = "default_pools")]
    pub global_pool: Vec<String>,
    #[serde(default = "default_gat_heads")]
    pub gat_heads: usize,
    #[serde(default = "default_sagpool_ratio")]
    pub sagpool_ratio: f64,
    /// 0 means derive from the dataset (a quarter of the largest graph).
    #[serde(default)]
    pub diffpool_clusters: usize,
}

fn default_margins() -> Vec<f64> {
    vec![1.0]
}
fn default_pools() -> Vec<String> {
    vec!["mean".into()]
}
fn default_gat_heads() -> usize {
    4
}
fn default_sagpool_ratio() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {}", path.display(), e.message()))
        })?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: {} is not supported (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        config.validate()?;
        Ok(config)
    }

    /// Field-by-field validation against the search spaces; error messages
    /// name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.dataset.check_source()?;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds: must not be empty".into()));
        }
        let distinct: BTreeSet<u64> = self.run.seeds.iter().copied().collect();
        if distinct.len() != self.run.seeds.len() {
            return Err(Error::Config("run.seeds: seeds must be distinct".into()));
        }
        if self.run.modes.is_empty() {
            return Err(Error::Config("run.modes: must not be empty".into()));
        }
        for m in &self.run.modes {
            m.parse::<TrainMode>()
                .map_err(|_| Error::Config(format!("run.modes: unknown mode {m:?}")))?;
        }
        if self.run.architectures.is_empty() {
            return Err(Error::Config("run.architectures: must not be empty".into()));
        }
        for a in &self.run.architectures {
            a.parse::<Architecture>()
                .map_err(|_| Error::Config(format!("run.architectures: unknown architecture {a:?}")))?;
        }
        for (field, values) in [
            ("grid.input_dim", &self.grid.input_dim),
            ("grid.hidden_dim", &self.grid.hidden_dim),
            ("grid.output_dim", &self.grid.output_dim),
        ] {
            if values.is_empty() {
                return Err(Error::Config(format!("{field}: must not be empty")));
            }
            for &v in values {
                if !ALLOWED_DIMS.contains(&v) {
                    return Err(Error::Config(format!(
                        "{field}: {v} is not in the search space {ALLOWED_DIMS:?}"
                    )));
                }
            }
        }
        if self.grid.num_layers.is_empty() || self.grid.num_layers.contains(&0) {
            return Err(Error::Config(
                "grid.num_layers: must be non-empty, all values at least 1".into(),
            ));
        }
        if self.grid.margin.is_empty() {
            return Err(Error::Config("grid.margin: must not be empty".into()));
        }
        for &m in &self.grid.margin {
            if !ALLOWED_MARGINS.contains(&m) {
                return Err(Error::Config(format!(
                    "grid.margin: {m} is not in the search space {ALLOWED_MARGINS:?}"
                )));
            }
        }
        if self.grid.classifier_layers.is_empty()
            || self.grid.classifier_layers.iter().any(|&l| l == 0 || l > 3)
        {
            return Err(Error::Config(
                "grid.classifier_layers: values must be in 1..=3".into(),
            ));
        }
        let max_output = *self.grid.output_dim.iter().max().unwrap();
        if self.grid.classifier_hidden.is_empty() {
            return Err(Error::Config("grid.classifier_hidden: must not be empty".into()));
        }
        for &h in &self.grid.classifier_hidden {
            if !h.is_power_of_two() || h < 2 || h > max_output {
                return Err(Error::Config(format!(
                    "grid.classifier_hidden: {h} must be a power of two in [2, {max_output}]"
                )));
            }
        }
        if self.grid.global_pool.is_empty() {
            return Err(Error::Config("grid.global_pool: must not be empty".into()));
        }
        for p in &self.grid.global_pool {
            if p != "mean" && p != "max" {
                return Err(Error::Config(format!(
                    "grid.global_pool: {p:?} is not mean|max"
                )));
            }
        }
        if !(self.grid.sagpool_ratio > 0.0 && self.grid.sagpool_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "grid.sagpool_ratio: {} is outside (0, 1]",
                self.grid.sagpool_ratio
            )));
        }
        Ok(())
    }

    /// Expand the grid into train configs for the requested modes (the
    /// ordering is the deterministic task order). Margin only matters to
    /// the triplet regimes, so the original setting collapses that axis.
    pub fn expand_grid(&self, mode_filter: Option<TrainMode>, dataset: &GraphDataset) -> Result<Vec<TrainConfig>> {
        let modes: Vec<TrainMode> = self
            .run
            .modes
            .iter()
            .map(|m| m.parse::<TrainMode>())
            .collect::<Result<Vec<_>>>()?;
        let modes: Vec<TrainMode> = match mode_filter {
            Some(f) => {
                if !modes.contains(&f) {
                    return Err(Error::Config(format!(
                        "--mode {} is not among run.modes in the config",
                        f.name()
                    )));
                }
                vec![f]
            }
            None => modes,
        };
        let architectures: Vec<Architecture> = self
            .run
            .architectures
            .iter()
            .map(|a| a.parse::<Architecture>())
            .collect::<Result<Vec<_>>>()?;

        let clusters = if self.grid.diffpool_clusters == 0 {
            default_cluster_count(dataset.max_node_count())
        } else {
            self.grid.diffpool_clusters
        };

        let mut configs = Vec::new();
        for &mode in &modes {
            let margins: &[f64] = if mode.uses_triplets() {
                &self.grid.margin
            } else {
                &self.grid.margin[..1] // collapsed: margin is unused
            };
            for &arch in &architectures {
                for &input_dim in &self.grid.input_dim {
                    for &hidden_dim in &self.grid.hidden_dim {
                        for &output_dim in &self.grid.output_dim {
                            for &num_layers in &self.grid.num_layers {
                                for pool in &self.grid.global_pool {
                                    for &margin in margins {
                                        for &cls_layers in &self.grid.classifier_layers {
                                            for &cls_hidden in &self.grid.classifier_hidden {
                                                if cls_hidden > output_dim {
                                                    continue; // infeasible combo
                                                }
                                                let model = ModelConfig {
                                                    architecture: arch,
                                                    num_layers,
                                                    input_dim,
                                                    hidden_dim,
                                                    output_dim,
                                                    global_pool: if pool == "mean" {
                                                        PoolMode::Mean
                                                    } else {
                                                        PoolMode::Max
                                                    },
                                                    gat_heads: self.grid.gat_heads,
                                                    diffpool_clusters: clusters,
                                                    sagpool_ratio: self.grid.sagpool_ratio,
                                                };
                                                let classifier = ClassifierConfig {
                                                    num_layers: cls_layers,
                                                    hidden_dim: cls_hidden,
                                                    num_classes: dataset.num_classes,
                                                };
                                                let mut tc = TrainConfig::new(mode, model, classifier, 0);
                                                tc.margin = margin;
                                                tc.lr = self.run.lr;
                                                tc.stage1_epochs = self.run.stage1_epochs;
                                                tc.stage2_epochs = self.run.stage2_epochs;
                                                tc.patience = self.run.patience;
                                                tc.validate()?;
                                                configs.push(tc);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if configs.is_empty() {
            return Err(Error::Config(
                "grid: expansion produced no feasible configuration".into(),
            ));
        }
        Ok(configs)
    }
}
