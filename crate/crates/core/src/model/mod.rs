//! Graph encoders and the classifier head.
//!
//! A [`GnnModel`] maps a graph to an embedding `h_G` of length
//! `output_dim` by looking node categories up in a learnable feature table
//! and running one of four architectures: GraphSAGE and GAT aggregate
//! neighborhoods and finish with global mean/max pooling; DiffPool and
//! SAGPool coarsen the graph hierarchically. A [`ClassifierHead`] is an
//! MLP from embeddings to class logits.

mod forward;

pub use forward::EmbedDiagnostics;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::EmbeddingMatrix;
use crate::data::{Graph, GraphDataset};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{argmax, Tape, Tensor};

/// Dimension grid every encoder draws its vector sizes from.
pub const ALLOWED_DIMS: [usize; 5] = [16, 32, 64, 96, 128];

/// Margin grid for the triplet loss.
pub const ALLOWED_MARGINS: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    GraphSage,
    Gat,
    DiffPool,
    SagPool,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::GraphSage,
        Architecture::Gat,
        Architecture::DiffPool,
        Architecture::SagPool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::GraphSage => "graphsage",
            Architecture::Gat => "gat",
            Architecture::DiffPool => "diffpool",
            Architecture::SagPool => "sagpool",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Architecture> {
        match s {
            "graphsage" => Ok(Architecture::GraphSage),
            "gat" => Ok(Architecture::Gat),
            "diffpool" => Ok(Architecture::DiffPool),
            "sagpool" => Ok(Architecture::SagPool),
            other => Err(Error::Config(format!(
                "architecture: unknown value {other:?} (expected graphsage|gat|diffpool|sagpool)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Mean,
    Max,
}

/// Encoder hyperparameters.
///
/// `num_layers` drives GraphSAGE and GAT; DiffPool always runs three
/// convolutions plus one pooling layer and SAGPool three conv/pool blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub global_pool: PoolMode,
    #[serde(default = "default_gat_heads")]
    pub gat_heads: usize,
    #[serde(default)]
    pub diffpool_clusters: usize,
    #[serde(default = "default_sagpool_ratio")]
    pub sagpool_ratio: f64,
}

fn default_gat_heads() -> usize {
    4
}

fn default_sagpool_ratio() -> f64 {
    0.5
}

impl ModelConfig {
    /// Baseline configuration for an architecture, with the DiffPool
    /// cluster count derived from the dataset's largest graph.
    pub fn defaults(architecture: Architecture, dataset: &GraphDataset) -> ModelConfig {
        ModelConfig {
            architecture,
            num_layers: 2,
            input_dim: 32,
            hidden_dim: 64,
            output_dim: 64,
            global_pool: PoolMode::Mean,
            gat_heads: 4,
            diffpool_clusters: default_cluster_count(dataset.max_node_count()),
            sagpool_ratio: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
        ] {
            if !ALLOWED_DIMS.contains(&value) {
                return Err(Error::Config(format!(
                    "{field}: {value} is not in the search space {ALLOWED_DIMS:?}"
                )));
            }
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers: must be at least 1".into()));
        }
        if self.gat_heads == 0 {
            return Err(Error::Config("gat_heads: must be at least 1".into()));
        }
        if self.architecture == Architecture::DiffPool && self.diffpool_clusters == 0 {
            return Err(Error::Config(
                "diffpool_clusters: must be at least 1".into(),
            ));
        }
        if !(self.sagpool_ratio > 0.0 && self.sagpool_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "sagpool_ratio: {} is outside (0, 1]",
                self.sagpool_ratio
            )));
        }
        Ok(())
    }
}

/// Default DiffPool cluster count: a quarter of the largest graph.
pub fn default_cluster_count(max_nodes: usize) -> usize {
    ((max_nodes as f64 * 0.25).ceil() as usize).max(1)
}

/// MLP head: up to three fully-connected layers, hidden width a power of
/// two no larger than the embedding dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ClassifierConfig {
    pub fn validate(&self, embedding_dim: usize) -> Result<()> {
        if self.num_layers == 0 || self.num_layers > 3 {
            return Err(Error::Config(format!(
                "classifier num_layers: {} is outside 1..=3",
                self.num_layers
            )));
        }
        if self.num_layers > 1 {
            let h = self.hidden_dim;
            if !h.is_power_of_two() || h < 2 || h > embedding_dim {
                return Err(Error::Config(format!(
                    "classifier hidden_dim: {h} must be a power of two in [2, {embedding_dim}]"
                )));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "classifier num_classes: {} must be at least 2",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// A dense layer with bias.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            w: Tensor::param(
                fan_in,
                fan_out,
                (0..fan_in * fan_out)
                    .map(|_| rng.uniform_in(-bound, bound))
                    .collect(),
            ),
            b: Tensor::param(1, fan_out, vec![0.0; fan_out]),
        }
    }

    pub(crate) fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        tape.add(&tape.matmul(x, &self.w), &self.b)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GatHead {
    pub w: Tensor,
    pub a_src: Tensor,
    pub a_dst: Tensor,
}

#[derive(Debug, Clone)]
pub(crate) struct SagBlock {
    pub conv: Linear,
    pub score: Linear,
}

#[derive(Debug, Clone)]
pub(crate) enum ArchParams {
    GraphSage {
        layers: Vec<Linear>,
    },
    Gat {
        layers: Vec<Vec<GatHead>>,
    },
    DiffPool {
        convs: Vec<Linear>,
        assign: Linear,
        coarse: Linear,
    },
    SagPool {
        blocks: Vec<SagBlock>,
        readout: Linear,
    },
}

/// An encoder: a learnable feature table plus per-architecture weights.
#[derive(Debug, Clone)]
pub struct GnnModel {
    pub config: ModelConfig,
    pub num_feature_categories: usize,
    pub feature_table: Tensor,
    pub(crate) arch: ArchParams,
}

pub(crate) const SAGPOOL_BLOCKS: usize = 3;
pub(crate) const DIFFPOOL_CONVS: usize = 3;

impl GnnModel {
    /// Build a model with Xavier-initialized weights drawn from `seed`.
    pub fn init(config: ModelConfig, num_feature_categories: usize, seed: u64) -> Result<GnnModel> {
        config.validate()?;
        if num_feature_categories == 0 {
            return Err(Error::Domain("feature table needs at least one category".into()));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let d_in = config.input_dim;
        let d_hidden = config.hidden_dim;
        let d_out = config.output_dim;
        let table_bound = (6.0 / (num_feature_categories + d_in) as f64).sqrt();
        let feature_table = Tensor::param(
            num_feature_categories,
            d_in,
            (0..num_feature_categories * d_in)
                .map(|_| rng.uniform_in(-table_bound, table_bound))
                .collect(),
        );

        let arch = match config.architecture {
            Architecture::GraphSage => {
                let mut layers = Vec::with_capacity(config.num_layers);
                for k in 0..config.num_layers {
                    let fan_in = if k == 0 { d_in } else { d_hidden };
                    let fan_out = if k + 1 == config.num_layers { d_out } else { d_hidden };
                    layers.push(Linear::init(&mut rng, 2 * fan_in, fan_out));
                }
                ArchParams::GraphSage { layers }
            }
            Architecture::Gat => {
                let heads = config.gat_heads;
                let mut layers = Vec::with_capacity(config.num_layers);
                for k in 0..config.num_layers {
                    let fan_in = if k == 0 { d_in } else { heads * d_hidden };
                    let fan_out = if k + 1 == config.num_layers { d_out } else { d_hidden };
                    let mut layer = Vec::with_capacity(heads);
                    for _ in 0..heads {
                        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        layer.push(GatHead {
                            w: Tensor::param(
                                fan_in,
                                fan_out,
                                (0..fan_in * fan_out)
                                    .map(|_| rng.uniform_in(-bound, bound))
                                    .collect(),
                            ),
                            a_src: Tensor::param(
                                fan_out,
                                1,
                                (0..fan_out).map(|_| rng.uniform_in(-bound, bound)).collect(),
                            ),
                            a_dst: Tensor::param(
                                fan_out,
                                1,
                                (0..fan_out).map(|_| rng.uniform_in(-bound, bound)).collect(),
                            ),
                        });
                    }
                    layers.push(layer);
                }
                ArchParams::Gat { layers }
            }
            Architecture::DiffPool => {
                let mut convs = Vec::with_capacity(DIFFPOOL_CONVS);
                for k in 0..DIFFPOOL_CONVS {
                    let fan_in = if k == 0 { d_in } else { d_hidden };
                    convs.push(Linear::init(&mut rng, 2 * fan_in, d_hidden));
                }
                let assign = Linear::init(&mut rng, 2 * d_in, config.diffpool_clusters);
                let coarse = Linear::init(&mut rng, 2 * d_hidden, d_out);
                ArchParams::DiffPool {
                    convs,
                    assign,
                    coarse,
                }
            }
            Architecture::SagPool => {
                let mut blocks = Vec::with_capacity(SAGPOOL_BLOCKS);
                for b in 0..SAGPOOL_BLOCKS {
                    let fan_in = if b == 0 { d_in } else { d_hidden };
                    blocks.push(SagBlock {
                        conv: Linear::init(&mut rng, 2 * fan_in, d_hidden),
                        score: Linear::init(&mut rng, 2 * d_hidden, 1),
                    });
                }
                let readout = Linear::init(&mut rng, 2 * d_hidden, d_out);
                ArchParams::SagPool { blocks, readout }
            }
        };

        Ok(GnnModel {
            config,
            num_feature_categories,
            feature_table,
            arch,
        })
    }

    /// All learnable tensors, in a stable order.
    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("feature_table".to_string(), self.feature_table.clone())];
        match &self.arch {
            ArchParams::GraphSage { layers } => {
                for (k, l) in layers.iter().enumerate() {
                    out.push((format!("layer{k}.w"), l.w.clone()));
                    out.push((format!("layer{k}.b"), l.b.clone()));
                }
            }
            ArchParams::Gat { layers } => {
                for (k, layer) in layers.iter().enumerate() {
                    for (h, head) in layer.iter().enumerate() {
                        out.push((format!("layer{k}.head{h}.w"), head.w.clone()));
                        out.push((format!("layer{k}.head{h}.a_src"), head.a_src.clone()));
                        out.push((format!("layer{k}.head{h}.a_dst"), head.a_dst.clone()));
                    }
                }
            }
            ArchParams::DiffPool {
                convs,
                assign,
                coarse,
            } => {
                for (k, c) in convs.iter().enumerate() {
                    out.push((format!("conv{k}.w"), c.w.clone()));
                    out.push((format!("conv{k}.b"), c.b.clone()));
                }
                out.push(("assign.w".into(), assign.w.clone()));
                out.push(("assign.b".into(), assign.b.clone()));
                out.push(("coarse.w".into(), coarse.w.clone()));
                out.push(("coarse.b".into(), coarse.b.clone()));
            }
            ArchParams::SagPool { blocks, readout } => {
                for (b, blk) in blocks.iter().enumerate() {
                    out.push((format!("block{b}.conv.w"), blk.conv.w.clone()));
                    out.push((format!("block{b}.conv.b"), blk.conv.b.clone()));
                    out.push((format!("block{b}.score.w"), blk.score.w.clone()));
                    out.push((format!("block{b}.score.b"), blk.score.b.clone()));
                }
                out.push(("readout.w".into(), readout.w.clone()));
                out.push(("readout.b".into(), readout.b.clone()));
            }
        }
        out
    }

    /// Copy all parameter values out (for best-epoch snapshots).
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.to_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) {
        let params = self.params();
        assert_eq!(params.len(), snapshot.len(), "snapshot shape mismatch");
        for (p, s) in params.iter().zip(snapshot) {
            p.set_values(s);
        }
    }

    /// Embedding of `graph` as a 1 x output_dim tensor on `tape`.
    pub fn embed(&self, tape: &Tape, graph: &Graph) -> Result<Tensor> {
        Ok(self.embed_with_diagnostics(tape, graph)?.0)
    }

    /// As [`GnnModel::embed`], also returning inspection data (DiffPool
    /// assignments, SAGPool keep-lists) used by invariants and tests.
    pub fn embed_with_diagnostics(
        &self,
        tape: &Tape,
        graph: &Graph,
    ) -> Result<(Tensor, EmbedDiagnostics)> {
        forward::embed(self, tape, graph)
    }
}

/// Element-wise mean or max over the node axis of an n x d matrix.
pub fn global_pool(tape: &Tape, node_embeddings: &Tensor, mode: PoolMode) -> Tensor {
    match mode {
        PoolMode::Mean => tape.reduce_mean(node_embeddings, 0),
        PoolMode::Max => tape.reduce_max(node_embeddings, 0),
    }
}

/// Embed each selected graph on an evaluation tape; rows follow `indices`
/// and carry the graphs' labels.
pub fn embed_all(
    model: &GnnModel,
    dataset: &GraphDataset,
    indices: &[usize],
) -> Result<EmbeddingMatrix> {
    if indices.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 graphs to build an embedding matrix, got {}",
            indices.len()
        )));
    }
    let d = model.config.output_dim;
    let mut values = Vec::with_capacity(indices.len() * d);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let tape = Tape::eval();
        let h = model.embed(&tape, &dataset.graphs[i])?;
        values.extend(h.to_vec());
        labels.push(dataset.graphs[i].label);
    }
    EmbeddingMatrix::new(indices.len(), d, values)?.with_labels(labels)
}

/// MLP from embeddings to logits. `num_layers - 1` hidden layers with relu,
/// then a linear output layer.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub config: ClassifierConfig,
    pub input_dim: usize,
    layers: Vec<Linear>,
}

impl ClassifierHead {
    pub fn init(config: ClassifierConfig, input_dim: usize, seed: u64) -> Result<ClassifierHead> {
        config.validate(input_dim)?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.num_layers);
        for k in 0..config.num_layers {
            let fan_in = if k == 0 { input_dim } else { config.hidden_dim };
            let fan_out = if k + 1 == config.num_layers {
                config.num_classes
            } else {
                config.hidden_dim
            };
            layers.push(Linear::init(&mut rng, fan_in, fan_out));
        }
        Ok(ClassifierHead {
            config,
            input_dim,
            layers,
        })
    }

    /// Zero all weights and biases. Gives uniform class probabilities for
    /// any input; used by contract tests.
    pub fn zero(&self) {
        for l in &self.layers {
            l.w.set_values(&vec![0.0; l.w.len()]);
            l.b.set_values(&vec![0.0; l.b.len()]);
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("classifier.layer{k}.w"), l.w.clone()));
            out.push((format!("classifier.layer{k}.b"), l.b.clone()));
        }
        out
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.to_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) {
        let params = self.params();
        assert_eq!(params.len(), snapshot.len(), "snapshot shape mismatch");
        for (p, s) in params.iter().zip(snapshot) {
            p.set_values(s);
        }
    }

    /// Class logits for a 1 x input_dim embedding.
    pub fn logits(&self, tape: &Tape, h: &Tensor) -> Tensor {
        assert_eq!(
            h.cols(),
            self.input_dim,
            "classify: embedding length {} does not match classifier input {}",
            h.cols(),
            self.input_dim
        );
        let mut x = h.clone();
        for (k, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, &x);
            if k + 1 < self.layers.len() {
                x = tape.relu(&x);
            }
        }
        x
    }

    /// Class probabilities (softmax of the logits); non-negative, sum 1.
    pub fn predict_proba(&self, h: &Tensor) -> Vec<f64> {
        let tape = Tape::eval();
        let logits = self.logits(&tape, h);
        tape.row_softmax(&logits, None).to_vec()
    }

    /// Most probable class, ties broken toward the lower class index.
    pub fn predict_class(&self, h: &Tensor) -> usize {
        argmax(&self.predict_proba(h))
    }
}

const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedParamRecord {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

/// A model (and optional classifier) captured as plain data: configs plus
/// every parameter as (name, shape, flat values). Serializable, `Send`,
/// and bit-exact through its JSON encoding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    format_version: u32,
    model: ModelConfig,
    num_feature_categories: usize,
    classifier: Option<ClassifierConfig>,
    params: Vec<NamedParamRecord>,
}

impl Checkpoint {
    pub fn capture(model: &GnnModel, head: Option<&ClassifierHead>) -> Checkpoint {
        let mut params: Vec<NamedParamRecord> = Vec::new();
        let mut push_all = |named: Vec<(String, Tensor)>| {
            for (name, t) in named {
                let (r, c) = t.shape();
                params.push(NamedParamRecord {
                    name,
                    shape: [r, c],
                    values: t.to_vec(),
                });
            }
        };
        push_all(model.named_params());
        if let Some(head) = head {
            push_all(head.named_params());
        }
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: model.config.clone(),
            num_feature_categories: model.num_feature_categories,
            classifier: head.map(|h| h.config.clone()),
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let out = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(out), self).map_err(|e| Error::Format {
            file: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
                file: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format {
                file: path.display().to_string(),
                line: 0,
                message: format!(
                    "unsupported checkpoint version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                    ckpt.format_version
                ),
            });
        }
        Ok(ckpt)
    }

    /// Rebuild the model (and classifier, when present), restoring every
    /// parameter by name.
    pub fn instantiate(&self) -> Result<(GnnModel, Option<ClassifierHead>)> {
        let model = GnnModel::init(self.model.clone(), self.num_feature_categories, 0)?;
        let head = match &self.classifier {
            Some(cfg) => Some(ClassifierHead::init(cfg.clone(), self.model.output_dim, 0)?),
            None => None,
        };
        let mut lookup: std::collections::HashMap<String, Tensor> =
            model.named_params().into_iter().collect();
        if let Some(h) = &head {
            lookup.extend(h.named_params());
        }
        if self.params.len() != lookup.len() {
            return Err(Error::Domain(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                lookup.len()
            )));
        }
        for rec in &self.params {
            let tensor = lookup
                .remove(&rec.name)
                .ok_or_else(|| Error::Domain(format!("unexpected parameter {:?}", rec.name)))?;
            if tensor.shape() != (rec.shape[0], rec.shape[1]) {
                return Err(Error::Domain(format!(
                    "parameter {:?} has shape {:?}, model expects {:?}",
                    rec.name,
                    rec.shape,
                    tensor.shape()
                )));
            }
            tensor.set_values(&rec.values);
        }
        Ok((model, head))
    }
}

/// Write model (and optionally classifier) parameters as a versioned JSON
/// document; write-then-read reproduces every value bit for bit.
pub fn save_checkpoint(
    model: &GnnModel,
    head: Option<&ClassifierHead>,
    path: &Path,
) -> Result<()> {
    Checkpoint::capture(model, head).save(path)
}

/// Read a checkpoint file back into a model and optional classifier.
pub fn load_checkpoint(path: &Path) -> Result<(GnnModel, Option<ClassifierHead>)> {
    Checkpoint::load(path)?.instantiate()
}

#[cfg(test)]
mod tests;
