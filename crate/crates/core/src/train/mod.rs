//! Training regimes.
//!
//! Three ways to fit an encoder-plus-classifier to a labeled graph dataset:
//!
//! - original: end-to-end cross-entropy over encoder and MLP head;
//! - two-stage (`2stg`): the encoder is first metric-trained on a triplet
//!   margin loss, then frozen while the head is trained on its embeddings;
//! - two-stage plus (`2stg+`): same first stage, but the second stage
//!   fine-tunes encoder and head jointly.
//!
//! Every stochastic choice (weight init, triplet sampling, example order)
//! derives from the trial seed, so a trial replays bit for bit. Optimizer
//! steps are per-example with the order reshuffled each epoch.

mod search;
mod trainers;

pub use search::{hyperparameter_search, summarize, SearchOptions, SettingSummary, TrialSink};
pub use trainers::{
    run_trial, run_trial_with_checkpoint, train_original, train_stage1, train_stage2,
    EndToEndTrainer, Stage1Outcome, Stage1Trainer, Stage2Outcome,
};

use serde::{Deserialize, Serialize};

use crate::data::GraphDataset;
use crate::error::{Error, Result};
use crate::model::{Architecture, ClassifierConfig, ClassifierHead, GnnModel, ModelConfig, ALLOWED_MARGINS};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// An (anchor, positive, negative) index triple: the positive shares the
/// anchor's class, the negative does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Output of the anchor-once sampler.
#[derive(Debug, Clone)]
pub struct TripletSample {
    pub triplets: Vec<Triplet>,
    /// Anchors whose class had no other member in the restricted set.
    pub skipped_anchors: usize,
}

/// One triplet per eligible anchor in `restricted_to`: the positive is
/// drawn uniformly from same-class others, the negative uniformly from all
/// other-class members. Anchors without a same-class partner are skipped
/// and counted.
pub fn sample_triplets(
    labels: &[usize],
    restricted_to: &[usize],
    seed: u64,
) -> Result<TripletSample> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in restricted_to {
        by_class.entry(labels[i]).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::Domain(format!(
            "triplet sampling needs at least 2 classes, found {}",
            by_class.len()
        )));
    }
    let total = restricted_to.len();
    let mut rng = Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(total);
    let mut skipped = 0;
    for &anchor in restricted_to {
        let same = &by_class[&labels[anchor]];
        if same.len() < 2 {
            skipped += 1;
            continue;
        }
        let positive = loop {
            let cand = same[rng.index(same.len())];
            if cand != anchor {
                break cand;
            }
        };
        let others = total - same.len();
        let mut pick = rng.index(others);
        let mut negative = None;
        for (&class, members) in &by_class {
            if class == labels[anchor] {
                continue;
            }
            if pick < members.len() {
                negative = Some(members[pick]);
                break;
            }
            pick -= members.len();
        }
        triplets.push(Triplet {
            anchor,
            positive,
            negative: negative.expect("counted other-class members"),
        });
    }
    Ok(TripletSample {
        triplets,
        skipped_anchors: skipped,
    })
}

/// Margin loss over squared Euclidean distances:
/// max(d(a, p) - d(a, n) + margin, 0). Differentiable through both
/// distances wherever it is positive.
pub fn triplet_loss(tape: &Tape, a: &Tensor, p: &Tensor, n: &Tensor, margin: f64) -> Tensor {
    assert!(margin > 0.0, "triplet_loss: margin {margin} must be positive");
    let d_ap = tape.squared_l2_distance(a, p);
    let d_an = tape.squared_l2_distance(a, n);
    tape.relu(&tape.add_scalar(&tape.sub(&d_ap, &d_an), margin))
}

/// Training regime selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "original")]
    Original,
    #[serde(rename = "2stg")]
    TwoStage,
    #[serde(rename = "2stg+")]
    TwoStagePlus,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::Original, TrainMode::TwoStage, TrainMode::TwoStagePlus];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Original => "original",
            TrainMode::TwoStage => "2stg",
            TrainMode::TwoStagePlus => "2stg+",
        }
    }

    pub fn uses_triplets(self) -> bool {
        !matches!(self, TrainMode::Original)
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<TrainMode> {
        match s {
            "original" => Ok(TrainMode::Original),
            "2stg" => Ok(TrainMode::TwoStage),
            "2stg+" | "2stg_plus" => Ok(TrainMode::TwoStagePlus),
            other => Err(Error::Config(format!(
                "mode: unknown value {other:?} (expected original|2stg|2stg+)"
            ))),
        }
    }
}

/// Everything one trial needs: regime, margin, optimizer and stopping
/// settings, the trial seed, and the encoder/classifier shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub margin: f64,
    pub lr: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub classifier: ClassifierConfig,
}

impl TrainConfig {
    pub fn new(
        mode: TrainMode,
        model: ModelConfig,
        classifier: ClassifierConfig,
        seed: u64,
    ) -> TrainConfig {
        TrainConfig {
            mode,
            margin: 1.0,
            lr: 1e-3,
            stage1_epochs: 200,
            stage2_epochs: 100,
            patience: 20,
            seed,
            model,
            classifier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_MARGINS.contains(&self.margin) {
            return Err(Error::Config(format!(
                "margin: {} is not in the search space {ALLOWED_MARGINS:?}",
                self.margin
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr: {} must be finite and non-negative",
                self.lr
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience: must be at least 1".into()));
        }
        if self.patience >= self.stage1_epochs || self.patience >= self.stage2_epochs {
            return Err(Error::Config(format!(
                "patience: {} must be below stage1_epochs ({}) and stage2_epochs ({})",
                self.patience, self.stage1_epochs, self.stage2_epochs
            )));
        }
        self.model.validate()?;
        self.classifier.validate(self.model.output_dim)
    }

    /// The fields that define a trial's identity for resume purposes:
    /// architecture-irrelevant knobs are dropped (margin for the original
    /// setting, other architectures' hyperparameters), so configs that
    /// cannot differ in behavior hash identically.
    pub fn identity(&self) -> serde_json::Value {
        let mut model = serde_json::json!({
            "architecture": self.model.architecture.name(),
            "input_dim": self.model.input_dim,
            "hidden_dim": self.model.hidden_dim,
            "output_dim": self.model.output_dim,
            "global_pool": match self.model.global_pool {
                crate::model::PoolMode::Mean => "mean",
                crate::model::PoolMode::Max => "max",
            },
        });
        // num_layers drives the flat encoders; the hierarchical ones have
        // fixed depths and their own knobs instead
        match self.model.architecture {
            Architecture::GraphSage => {
                model["num_layers"] = self.model.num_layers.into();
            }
            Architecture::Gat => {
                model["num_layers"] = self.model.num_layers.into();
                model["gat_heads"] = self.model.gat_heads.into();
            }
            Architecture::DiffPool => {
                model["diffpool_clusters"] = self.model.diffpool_clusters.into();
            }
            Architecture::SagPool => {
                model["sagpool_ratio"] = self.model.sagpool_ratio.into();
            }
        }
        let mut value = serde_json::json!({
            "mode": self.mode.name(),
            "seed": self.seed,
            "lr": self.lr,
            "stage2_epochs": self.stage2_epochs,
            "patience": self.patience,
            "model": model,
            "classifier": {
                "num_layers": self.classifier.num_layers,
                "hidden_dim": self.classifier.hidden_dim,
                "num_classes": self.classifier.num_classes,
            },
        });
        if self.mode.uses_triplets() {
            value["margin"] = self.margin.into();
            value["stage1_epochs"] = self.stage1_epochs.into();
        }
        value
    }
}

/// Result of one trial. Test accuracy is computed exactly once, from the
/// checkpoint with the best validation metric (earliest epoch on ties).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: TrainConfig,
    /// Mean training loss per stage-1 epoch (triplet regimes only).
    pub stage1_train_loss: Vec<f64>,
    pub stage1_val_loss: Vec<f64>,
    pub stage1_best_epoch: Option<usize>,
    /// Mean training loss per stage-2 / end-to-end epoch.
    pub stage2_train_loss: Vec<f64>,
    pub stage2_val_accuracy: Vec<f64>,
    /// Validation accuracy of the untouched initial state (epoch 0).
    pub initial_val_accuracy: f64,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    /// Average absolute correlation of validation embeddings, one entry
    /// per training epoch of whichever phase shapes the encoder.
    pub correlation_trace: Vec<Option<f64>>,
    /// Diagnostics of the best checkpoint's validation embeddings.
    pub intrinsic_dim: Option<f64>,
    pub avg_abs_corr: Option<f64>,
}

/// Mean prediction accuracy of `head` over the graphs at `indices`.
pub fn accuracy(
    model: &GnnModel,
    head: &ClassifierHead,
    dataset: &GraphDataset,
    indices: &[usize],
) -> Result<f64> {
    assert!(!indices.is_empty(), "accuracy: no graphs to evaluate");
    let mut hits = 0usize;
    for &i in indices {
        let tape = Tape::eval();
        let h = model.embed(&tape, &dataset.graphs[i])?;
        if head.predict_class(&h) == dataset.graphs[i].label {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}

/// Mean cross-entropy of `head` over the graphs at `indices`.
pub fn mean_cross_entropy(
    model: &GnnModel,
    head: &ClassifierHead,
    dataset: &GraphDataset,
    indices: &[usize],
) -> Result<f64> {
    assert!(!indices.is_empty(), "mean_cross_entropy: no graphs");
    let mut total = 0.0;
    for &i in indices {
        let tape = Tape::eval();
        let h = model.embed(&tape, &dataset.graphs[i])?;
        let logits = head.logits(&tape, &h);
        total += tape.cross_entropy(&logits, dataset.graphs[i].label).item();
    }
    Ok(total / indices.len() as f64)
}

/// Shared gate for every regime: the dataset must actually be separable
/// into classes before any sampler runs.
pub(crate) fn require_trainable(dataset: &GraphDataset) -> Result<()> {
    if !dataset.has_all_classes() {
        return Err(Error::Domain(format!(
            "dataset {} does not contain every class in [0, {}): cannot train a classifier",
            dataset.name, dataset.num_classes
        )));
    }
    Ok(())
}
