use std::rc::Rc;

use crate::analysis::{avg_abs_correlation, intrinsic_dimension, pca_explained_variance, EmbeddingMatrix};
use crate::data::{GraphDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::model::{embed_all, ClassifierHead, GnnModel};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Adam, Tape, Tensor};

use super::{
    accuracy, require_trainable, sample_triplets, triplet_loss, TrainConfig, TrainMode,
    TrialResult, Triplet,
};

// Salts for deriving independent seed streams from one trial seed.
const SALT_MODEL_INIT: u64 = 1;
const SALT_HEAD_INIT: u64 = 2;
const SALT_VAL_TRIPLETS: u64 = 3;
const SALT_EPOCH_BASE: u64 = 0x100;

/// Tracks the best validation metric and the parameter snapshot that
/// produced it. Strict comparisons keep the earliest epoch on ties.
struct BestTracker {
    higher_is_better: bool,
    best_metric: f64,
    best_epoch: usize,
    snapshot: Vec<Vec<f64>>,
}

impl BestTracker {
    fn new(higher_is_better: bool, epoch0_metric: f64, params: &[Tensor]) -> BestTracker {
        BestTracker {
            higher_is_better,
            best_metric: epoch0_metric,
            best_epoch: 0,
            snapshot: params.iter().map(|p| p.to_vec()).collect(),
        }
    }

    fn observe(&mut self, epoch: usize, metric: f64, params: &[Tensor]) -> bool {
        let improved = if self.higher_is_better {
            metric > self.best_metric
        } else {
            metric < self.best_metric
        };
        if improved {
            self.best_metric = metric;
            self.best_epoch = epoch;
            self.snapshot = params.iter().map(|p| p.to_vec()).collect();
        }
        improved
    }

    fn out_of_patience(&self, epoch: usize, patience: usize) -> bool {
        epoch - self.best_epoch >= patience
    }

    fn restore(&self, params: &[Tensor]) {
        for (p, s) in params.iter().zip(&self.snapshot) {
            p.set_values(s);
        }
    }
}

fn correlation_of_validation(model: &GnnModel, dataset: &GraphDataset, val: &[usize]) -> Option<f64> {
    if val.len() < 2 {
        return None;
    }
    let e = embed_all(model, dataset, val).ok()?;
    avg_abs_correlation(&e).ok()
}

/// Metric pre-training of the encoder on the triplet margin loss, one
/// optimizer step per triplet, triplets resampled each epoch with an
/// epoch-derived seed.
pub struct Stage1Trainer {
    dataset: Rc<GraphDataset>,
    split: SplitPlan,
    pub model: GnnModel,
    labels: Vec<usize>,
    optimizer: Adam,
    margin: f64,
    seed: u64,
    epochs_run: usize,
    val_triplets: Vec<Triplet>,
}

pub struct Stage1Epoch {
    pub train_loss: f64,
    pub val_loss: f64,
}

impl Stage1Trainer {
    pub fn new(dataset: Rc<GraphDataset>, split: SplitPlan, config: &TrainConfig) -> Result<Stage1Trainer> {
        config.validate()?;
        require_trainable(&dataset)?;
        let labels = dataset.labels();
        let model = GnnModel::init(
            config.model.clone(),
            dataset.num_feature_categories,
            derive_seed(config.seed, SALT_MODEL_INIT),
        )?;
        let val_triplets = sample_triplets(
            &labels,
            &split.val_indices,
            derive_seed(config.seed, SALT_VAL_TRIPLETS),
        )?
        .triplets;
        let optimizer = Adam::new(&model.params(), config.lr);
        Ok(Stage1Trainer {
            dataset,
            split,
            model,
            labels,
            optimizer,
            margin: config.margin,
            seed: config.seed,
            epochs_run: 0,
            val_triplets,
        })
    }

    fn triplet_loss_on(&self, tape: &Tape, t: &Triplet) -> Result<Tensor> {
        let a = self.model.embed(tape, &self.dataset.graphs[t.anchor])?;
        let p = self.model.embed(tape, &self.dataset.graphs[t.positive])?;
        let n = self.model.embed(tape, &self.dataset.graphs[t.negative])?;
        Ok(triplet_loss(tape, &a, &p, &n, self.margin))
    }

    /// One pass: resample anchors-once triplets, shuffle, step per triplet.
    pub fn epoch(&mut self) -> Result<Stage1Epoch> {
        self.epochs_run += 1;
        let epoch_seed = derive_seed(self.seed, SALT_EPOCH_BASE + self.epochs_run as u64);
        let mut sample = sample_triplets(&self.labels, &self.split.train_indices, epoch_seed)?;
        Rng::seed_from_u64(derive_seed(epoch_seed, 1)).shuffle(&mut sample.triplets);

        let params = self.model.params();
        let mut total = 0.0;
        for t in &sample.triplets {
            let tape = Tape::new();
            let loss = self.triplet_loss_on(&tape, t)?;
            total += loss.item();
            tape.backward(&loss);
            self.optimizer.step(&params);
        }
        Ok(Stage1Epoch {
            train_loss: total / sample.triplets.len().max(1) as f64,
            val_loss: self.validation_loss()?,
        })
    }

    /// Mean triplet loss over the fixed validation triplet set.
    pub fn validation_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for t in &self.val_triplets {
            let tape = Tape::eval();
            total += self.triplet_loss_on(&tape, t)?.item();
        }
        Ok(total / self.val_triplets.len().max(1) as f64)
    }

    pub fn validation_embeddings(&self) -> Result<EmbeddingMatrix> {
        embed_all(&self.model, &self.dataset, &self.split.val_indices)
    }

    pub fn validation_correlation(&self) -> Option<f64> {
        correlation_of_validation(&self.model, &self.dataset, &self.split.val_indices)
    }

    pub fn split(&self) -> &SplitPlan {
        &self.split
    }
}

pub struct Stage1Outcome {
    pub model: GnnModel,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub initial_val_loss: f64,
    pub best_epoch: usize,
    pub correlation_trace: Vec<Option<f64>>,
}

/// Drive stage 1 with early stopping on validation triplet loss; the model
/// comes back holding its best-validation parameters.
pub fn train_stage1(
    dataset: &GraphDataset,
    split: &SplitPlan,
    config: &TrainConfig,
) -> Result<Stage1Outcome> {
    let mut trainer = Stage1Trainer::new(Rc::new(dataset.clone()), split.clone(), config)?;
    let params = trainer.model.params();
    let initial_val_loss = trainer.validation_loss()?;
    let mut best = BestTracker::new(false, initial_val_loss, &params);
    let mut train_trace = Vec::new();
    let mut val_trace = Vec::new();
    let mut corr_trace = Vec::new();
    for epoch in 1..=config.stage1_epochs {
        let stats = trainer.epoch()?;
        train_trace.push(stats.train_loss);
        val_trace.push(stats.val_loss);
        corr_trace.push(trainer.validation_correlation());
        best.observe(epoch, stats.val_loss, &params);
        if best.out_of_patience(epoch, config.patience) {
            break;
        }
    }
    best.restore(&params);
    Ok(Stage1Outcome {
        model: trainer.model,
        train_loss: train_trace,
        val_loss: val_trace,
        initial_val_loss,
        best_epoch: best.best_epoch,
        correlation_trace: corr_trace,
    })
}

/// End-to-end training of encoder plus head on cross-entropy; also the
/// epoch engine behind the fine-tuning stage.
pub struct EndToEndTrainer {
    dataset: Rc<GraphDataset>,
    split: SplitPlan,
    pub model: GnnModel,
    pub head: ClassifierHead,
    optimizer: Adam,
    seed: u64,
    epochs_run: usize,
    /// When false the encoder's parameters are excluded from updates.
    train_encoder: bool,
}

pub struct ClassifierEpoch {
    pub train_loss: f64,
    pub val_accuracy: f64,
}

impl EndToEndTrainer {
    pub fn new(
        dataset: Rc<GraphDataset>,
        split: SplitPlan,
        config: &TrainConfig,
    ) -> Result<EndToEndTrainer> {
        config.validate()?;
        require_trainable(&dataset)?;
        let model = GnnModel::init(
            config.model.clone(),
            dataset.num_feature_categories,
            derive_seed(config.seed, SALT_MODEL_INIT),
        )?;
        Self::from_parts(dataset, split, config, model, None, true)
    }

    /// Wrap an existing encoder (stage-1 output) for joint fine-tuning, or
    /// freeze it and train only the head.
    pub fn from_parts(
        dataset: Rc<GraphDataset>,
        split: SplitPlan,
        config: &TrainConfig,
        model: GnnModel,
        head: Option<ClassifierHead>,
        train_encoder: bool,
    ) -> Result<EndToEndTrainer> {
        require_trainable(&dataset)?;
        if config.classifier.num_classes != dataset.num_classes {
            return Err(Error::Config(format!(
                "classifier num_classes: {} but dataset has {} classes",
                config.classifier.num_classes, dataset.num_classes
            )));
        }
        let head = match head {
            Some(h) => h,
            None => ClassifierHead::init(
                config.classifier.clone(),
                config.model.output_dim,
                derive_seed(config.seed, SALT_HEAD_INIT),
            )?,
        };
        let mut params = if train_encoder { model.params() } else { Vec::new() };
        params.extend(head.params());
        let optimizer = Adam::new(&params, config.lr);
        Ok(EndToEndTrainer {
            dataset,
            split,
            model,
            head,
            optimizer,
            seed: config.seed,
            epochs_run: 0,
            train_encoder,
        })
    }

    fn trained_params(&self) -> Vec<Tensor> {
        let mut params = if self.train_encoder {
            self.model.params()
        } else {
            Vec::new()
        };
        params.extend(self.head.params());
        params
    }

    /// All parameters whose best-epoch values define the checkpoint.
    fn checkpoint_params(&self) -> Vec<Tensor> {
        let mut params = self.model.params();
        params.extend(self.head.params());
        params
    }

    pub fn epoch(&mut self) -> Result<ClassifierEpoch> {
        self.epochs_run += 1;
        let epoch_seed = derive_seed(self.seed, SALT_EPOCH_BASE + self.epochs_run as u64);
        let mut order = self.split.train_indices.clone();
        Rng::seed_from_u64(epoch_seed).shuffle(&mut order);

        let params = self.trained_params();
        let mut total = 0.0;
        for &i in &order {
            let graph = &self.dataset.graphs[i];
            let tape = Tape::new();
            let h = if self.train_encoder {
                self.model.embed(&tape, graph)?
            } else {
                // frozen encoder: embed off-tape so no gradient flows back
                let eval = Tape::eval();
                self.model.embed(&eval, graph)?
            };
            let logits = self.head.logits(&tape, &h);
            let loss = tape.cross_entropy(&logits, graph.label);
            total += loss.item();
            tape.backward(&loss);
            self.optimizer.step(&params);
        }
        Ok(ClassifierEpoch {
            train_loss: total / order.len().max(1) as f64,
            val_accuracy: self.validation_accuracy()?,
        })
    }

    pub fn validation_accuracy(&self) -> Result<f64> {
        accuracy(&self.model, &self.head, &self.dataset, &self.split.val_indices)
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        accuracy(&self.model, &self.head, &self.dataset, &self.split.test_indices)
    }

    pub fn validation_correlation(&self) -> Option<f64> {
        correlation_of_validation(&self.model, &self.dataset, &self.split.val_indices)
    }

    pub fn validation_embeddings(&self) -> Result<EmbeddingMatrix> {
        embed_all(&self.model, &self.dataset, &self.split.val_indices)
    }
}

/// Train the head on frozen embeddings (the precomputed-vector fast path
/// of the frozen regime).
struct FrozenHeadTrainer {
    head: ClassifierHead,
    optimizer: Adam,
    seed: u64,
    epochs_run: usize,
    train_embeddings: Vec<Tensor>,
    train_labels: Vec<usize>,
    val_embeddings: Vec<Tensor>,
    val_labels: Vec<usize>,
}

impl FrozenHeadTrainer {
    fn new(
        model: &GnnModel,
        dataset: &GraphDataset,
        split: &SplitPlan,
        config: &TrainConfig,
        head: Option<ClassifierHead>,
    ) -> Result<FrozenHeadTrainer> {
        let embed = |indices: &[usize]| -> Result<(Vec<Tensor>, Vec<usize>)> {
            let mut es = Vec::with_capacity(indices.len());
            let mut ls = Vec::with_capacity(indices.len());
            for &i in indices {
                let tape = Tape::eval();
                es.push(model.embed(&tape, &dataset.graphs[i])?);
                ls.push(dataset.graphs[i].label);
            }
            Ok((es, ls))
        };
        let (train_embeddings, train_labels) = embed(&split.train_indices)?;
        let (val_embeddings, val_labels) = embed(&split.val_indices)?;
        let head = match head {
            Some(h) => h,
            None => ClassifierHead::init(
                config.classifier.clone(),
                config.model.output_dim,
                derive_seed(config.seed, SALT_HEAD_INIT),
            )?,
        };
        let optimizer = Adam::new(&head.params(), config.lr);
        Ok(FrozenHeadTrainer {
            head,
            optimizer,
            seed: config.seed,
            epochs_run: 0,
            train_embeddings,
            train_labels,
            val_embeddings,
            val_labels,
        })
    }

    fn epoch(&mut self) -> f64 {
        self.epochs_run += 1;
        let epoch_seed = derive_seed(self.seed, SALT_EPOCH_BASE + self.epochs_run as u64);
        let mut order: Vec<usize> = (0..self.train_embeddings.len()).collect();
        Rng::seed_from_u64(epoch_seed).shuffle(&mut order);
        let params = self.head.params();
        let mut total = 0.0;
        for &i in &order {
            let tape = Tape::new();
            let logits = self.head.logits(&tape, &self.train_embeddings[i]);
            let loss = tape.cross_entropy(&logits, self.train_labels[i]);
            total += loss.item();
            tape.backward(&loss);
            self.optimizer.step(&params);
        }
        total / order.len().max(1) as f64
    }

    fn validation_accuracy(&self) -> f64 {
        let hits = self
            .val_embeddings
            .iter()
            .zip(&self.val_labels)
            .filter(|(e, &l)| self.head.predict_class(e) == l)
            .count();
        hits as f64 / self.val_labels.len().max(1) as f64
    }
}

/// Second stage on top of a metric-trained encoder: frozen (`2stg`) or
/// jointly fine-tuned (`2stg+`). `head_init` lets a caller hand in an
/// already trained head (e.g. fine-tune from a frozen-stage optimum);
/// by default a fresh head is drawn from the trial seed.
pub fn train_stage2(
    model: GnnModel,
    head_init: Option<ClassifierHead>,
    dataset: &GraphDataset,
    split: &SplitPlan,
    config: &TrainConfig,
) -> Result<Stage2Outcome> {
    match config.mode {
        TrainMode::Original => Err(Error::Config(
            "train_stage2 handles 2stg and 2stg+; use train_original for the end-to-end setting"
                .into(),
        )),
        TrainMode::TwoStage => {
            require_trainable(dataset)?;
            let mut trainer = FrozenHeadTrainer::new(&model, dataset, split, config, head_init)?;
            let params = trainer.head.params();
            let initial_val = trainer.validation_accuracy();
            let mut best = BestTracker::new(true, initial_val, &params);
            let mut train_trace = Vec::new();
            let mut val_trace = Vec::new();
            for epoch in 1..=config.stage2_epochs {
                let loss = trainer.epoch();
                train_trace.push(loss);
                let val = trainer.validation_accuracy();
                val_trace.push(val);
                best.observe(epoch, val, &params);
                if best.out_of_patience(epoch, config.patience) {
                    break;
                }
            }
            best.restore(&params);
            let test_accuracy = accuracy(&model, &trainer.head, dataset, &split.test_indices)?;
            Ok(Stage2Outcome {
                model,
                head: trainer.head,
                train_loss: train_trace,
                val_accuracy_trace: val_trace,
                initial_val_accuracy: initial_val,
                best_epoch: best.best_epoch,
                val_accuracy: best.best_metric,
                test_accuracy,
                // the encoder never moves here; run_trial extends the trace
                // with the frozen value
                correlation_trace: Vec::new(),
            })
        }
        TrainMode::TwoStagePlus => {
            let mut trainer = EndToEndTrainer::from_parts(
                Rc::new(dataset.clone()),
                split.clone(),
                config,
                model,
                head_init,
                true,
            )?;
            drive_classifier_phase(&mut trainer, config)
        }
    }
}

fn drive_classifier_phase(
    trainer: &mut EndToEndTrainer,
    config: &TrainConfig,
) -> Result<Stage2Outcome> {
    let params = trainer.checkpoint_params();
    let initial_val = trainer.validation_accuracy()?;
    let mut best = BestTracker::new(true, initial_val, &params);
    let mut train_trace = Vec::new();
    let mut val_trace = Vec::new();
    let mut corr_trace = Vec::new();
    for epoch in 1..=config.stage2_epochs {
        let stats = trainer.epoch()?;
        train_trace.push(stats.train_loss);
        val_trace.push(stats.val_accuracy);
        corr_trace.push(trainer.validation_correlation());
        best.observe(epoch, stats.val_accuracy, &params);
        if best.out_of_patience(epoch, config.patience) {
            break;
        }
    }
    best.restore(&params);
    let test_accuracy = trainer.test_accuracy()?;
    Ok(Stage2Outcome {
        model: trainer.model.clone(),
        head: trainer.head.clone(),
        train_loss: train_trace,
        val_accuracy_trace: val_trace,
        initial_val_accuracy: initial_val,
        best_epoch: best.best_epoch,
        val_accuracy: best.best_metric,
        test_accuracy,
        correlation_trace: corr_trace,
    })
}

#[derive(Debug)]
pub struct Stage2Outcome {
    pub model: GnnModel,
    pub head: ClassifierHead,
    pub train_loss: Vec<f64>,
    pub val_accuracy_trace: Vec<f64>,
    pub initial_val_accuracy: f64,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub correlation_trace: Vec<Option<f64>>,
}

/// The end-to-end baseline: encoder and head trained jointly from scratch
/// by cross-entropy, early-stopped on validation accuracy.
pub fn train_original(
    dataset: &GraphDataset,
    split: &SplitPlan,
    config: &TrainConfig,
) -> Result<Stage2Outcome> {
    if config.mode != TrainMode::Original {
        return Err(Error::Config(format!(
            "train_original called with mode {}",
            config.mode.name()
        )));
    }
    let mut trainer = EndToEndTrainer::new(Rc::new(dataset.clone()), split.clone(), config)?;
    drive_classifier_phase(&mut trainer, config)
}

/// Run one full trial: split the dataset by the trial seed, train under the
/// configured regime, and report best-checkpoint metrics plus embedding
/// diagnostics.
pub fn run_trial(dataset: &GraphDataset, config: &TrainConfig) -> Result<TrialResult> {
    run_trial_with_checkpoint(dataset, config).map(|(result, _)| result)
}

/// As [`run_trial`], also capturing the best model and head as plain
/// checkpoint data for persistence.
pub fn run_trial_with_checkpoint(
    dataset: &GraphDataset,
    config: &TrainConfig,
) -> Result<(TrialResult, crate::model::Checkpoint)> {
    config.validate()?;
    require_trainable(dataset)?;
    let split = crate::data::make_splits(dataset.len(), config.seed)?;

    let (stage1, stage2) = match config.mode {
        TrainMode::Original => (None, train_original(dataset, &split, config)?),
        TrainMode::TwoStage | TrainMode::TwoStagePlus => {
            let s1 = train_stage1(dataset, &split, config)?;
            let model = s1.model.clone();
            let s2 = train_stage2(model, None, dataset, &split, config)?;
            (Some(s1), s2)
        }
    };

    // diagnostics on the best checkpoint's validation embeddings
    let (intrinsic_dim, avg_abs_corr) = match embed_all(&stage2.model, dataset, &split.val_indices)
    {
        Ok(e) => {
            let id = pca_explained_variance(&e)
                .ok()
                .and_then(|c| intrinsic_dimension(&c).ok());
            (id, avg_abs_correlation(&e).ok())
        }
        Err(_) => (None, None),
    };

    let mut correlation_trace = Vec::new();
    let stage1_summary = stage1.as_ref().map(|s1| {
        correlation_trace.extend(s1.correlation_trace.iter().cloned());
        (s1.train_loss.clone(), s1.val_loss.clone(), s1.best_epoch)
    });
    correlation_trace.extend(stage2.correlation_trace.iter().cloned());
    if config.mode == TrainMode::TwoStage {
        // frozen second stage: the encoder trace ends with stage 1; repeat
        // the frozen value so the trace spans the full trial
        let frozen = correlation_of_validation(&stage2.model, dataset, &split.val_indices);
        for _ in 0..stage2.train_loss.len() {
            correlation_trace.push(frozen);
        }
    }

    let (stage1_train_loss, stage1_val_loss, stage1_best_epoch) = match stage1_summary {
        Some((t, v, b)) => (t, v, Some(b)),
        None => (Vec::new(), Vec::new(), None),
    };

    let checkpoint = crate::model::Checkpoint::capture(&stage2.model, Some(&stage2.head));
    let result = TrialResult {
        config: config.clone(),
        stage1_train_loss,
        stage1_val_loss,
        stage1_best_epoch,
        stage2_train_loss: stage2.train_loss,
        stage2_val_accuracy: stage2.val_accuracy_trace,
        initial_val_accuracy: stage2.initial_val_accuracy,
        best_epoch: stage2.best_epoch,
        val_accuracy: stage2.val_accuracy,
        test_accuracy: stage2.test_accuracy,
        correlation_trace,
        intrinsic_dim,
        avg_abs_corr,
    };
    Ok((result, checkpoint))
}
