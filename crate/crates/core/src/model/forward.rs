//! Per-architecture forward passes.
//!
//! Graphs enter as dense constant tensors: a raw adjacency with parallel
//! edges counted, a row-normalized form for mean aggregation (zero rows
//! stay zero, so an empty neighborhood aggregates to the zero vector) and,
//! where self-attention needs them, self-looped variants.

use crate::data::Graph;
use crate::error::{Error, Result};
use crate::tensor::{top_k_indices, Tape, Tensor};

use super::{ArchParams, GnnModel, Linear, SAGPOOL_BLOCKS};

const LEAKY_SLOPE: f64 = 0.2;

/// Inspection data from one embedding pass.
#[derive(Debug, Clone, Default)]
pub struct EmbedDiagnostics {
    /// DiffPool soft assignment (n x clusters), row-stochastic.
    pub assignment: Option<Vec<Vec<f64>>>,
    /// SAGPool keep-lists, one per pooling layer.
    pub kept_nodes: Vec<Vec<usize>>,
}

struct DenseGraph {
    n: usize,
    /// Raw adjacency, parallel edges counted.
    adj: Vec<f64>,
}

impl DenseGraph {
    fn new(graph: &Graph) -> DenseGraph {
        let n = graph.node_count;
        let mut adj = vec![0.0; n * n];
        for &(u, v) in &graph.edges {
            adj[u as usize * n + v as usize] += 1.0;
        }
        DenseGraph { n, adj }
    }

    fn sub(&self, kept: &[usize]) -> DenseGraph {
        let m = kept.len();
        let mut adj = vec![0.0; m * m];
        for (i, &u) in kept.iter().enumerate() {
            for (j, &v) in kept.iter().enumerate() {
                adj[i * m + j] = self.adj[u * self.n + v];
            }
        }
        DenseGraph { n: m, adj }
    }

    fn adjacency(&self) -> Tensor {
        Tensor::matrix(self.n, self.n, self.adj.clone())
    }

    /// Row-normalized adjacency; empty rows stay zero.
    fn mean_operator(&self, self_loops: bool) -> Tensor {
        let n = self.n;
        let mut m = self.adj.clone();
        if self_loops {
            for i in 0..n {
                m[i * n + i] += 1.0;
            }
        }
        for i in 0..n {
            let sum: f64 = m[i * n..(i + 1) * n].iter().sum();
            if sum > 0.0 {
                m[i * n..(i + 1) * n].iter_mut().for_each(|x| *x /= sum);
            }
        }
        Tensor::matrix(n, n, m)
    }

    /// Attention mask over N(v) and the node itself.
    fn attention_mask(&self) -> Vec<bool> {
        let n = self.n;
        let mut mask = vec![false; n * n];
        for i in 0..n * n {
            mask[i] = self.adj[i] > 0.0;
        }
        for i in 0..n {
            mask[i * n + i] = true;
        }
        mask
    }
}

/// GraphSAGE-style convolution: nonlinearity over
/// W . concat(h_v, mean of neighbor embeddings) + b.
fn sage_conv(tape: &Tape, layer: &Linear, mean_op: &Tensor, h: &Tensor, relu: bool) -> Tensor {
    let neigh = tape.matmul(mean_op, h);
    let merged = tape.concat_cols(&[h, &neigh]);
    let z = layer.forward(tape, &merged);
    if relu {
        tape.relu(&z)
    } else {
        z
    }
}

pub(super) fn embed(
    model: &GnnModel,
    tape: &Tape,
    graph: &Graph,
) -> Result<(Tensor, EmbedDiagnostics)> {
    if graph.node_count == 0 {
        return Err(Error::Domain(format!(
            "graph {} has no nodes",
            graph.graph_id
        )));
    }
    for &c in &graph.node_categories {
        assert!(
            (c as usize) < model.num_feature_categories,
            "embed: category {c} out of range for feature table with {} rows",
            model.num_feature_categories
        );
    }
    let dense = DenseGraph::new(graph);
    let categories: Vec<usize> = graph.node_categories.iter().map(|&c| c as usize).collect();
    let x = tape.select_rows(&model.feature_table, &categories);
    let mut diagnostics = EmbedDiagnostics::default();

    let h_g = match &model.arch {
        ArchParams::GraphSage { layers } => {
            let mean_op = dense.mean_operator(false);
            let mut h = x;
            for layer in layers {
                h = sage_conv(tape, layer, &mean_op, &h, true);
            }
            super::global_pool(tape, &h, model.config.global_pool)
        }
        ArchParams::Gat { layers } => {
            let mask = dense.attention_mask();
            let n = dense.n;
            let ones_row = Tensor::matrix(1, n, vec![1.0; n]);
            let ones_col = Tensor::matrix(n, 1, vec![1.0; n]);
            let mut h = x;
            for (k, layer) in layers.iter().enumerate() {
                let last = k + 1 == layers.len();
                let mut head_outputs = Vec::with_capacity(layer.len());
                for head in layer {
                    let z = tape.matmul(&h, &head.w);
                    let s_src = tape.matmul(&z, &head.a_src); // n x 1
                    let s_dst = tape.matmul(&z, &head.a_dst); // n x 1
                    let scores = tape.add(
                        &tape.matmul(&s_src, &ones_row),
                        &tape.matmul(&ones_col, &tape.transpose(&s_dst)),
                    );
                    let scores = tape.leaky_relu(&scores, LEAKY_SLOPE);
                    let attention = tape.row_softmax(&scores, Some(&mask));
                    head_outputs.push(tape.matmul(&attention, &z));
                }
                if last {
                    // average the heads
                    let mut sum = head_outputs[0].clone();
                    for out in &head_outputs[1..] {
                        sum = tape.add(&sum, out);
                    }
                    h = tape.scale(&sum, 1.0 / head_outputs.len() as f64);
                } else {
                    let refs: Vec<&Tensor> = head_outputs.iter().collect();
                    h = tape.relu(&tape.concat_cols(&refs));
                }
            }
            super::global_pool(tape, &h, model.config.global_pool)
        }
        ArchParams::DiffPool {
            convs,
            assign,
            coarse,
        } => {
            let mean_op = dense.mean_operator(false);
            let mut z = x.clone();
            for conv in convs {
                z = sage_conv(tape, conv, &mean_op, &z, true);
            }
            let assign_logits = sage_conv(tape, assign, &mean_op, &x, false);
            let s = tape.row_softmax(&assign_logits, None);
            diagnostics.assignment = Some(rows_of(&s));
            let s_t = tape.transpose(&s);
            let coarse_x = tape.matmul(&s_t, &z);
            let coarse_adj = tape.matmul(&tape.matmul(&s_t, &dense.adjacency()), &s);
            // weighted-sum aggregation on the coarsened graph, then the
            // final collapse to one supernode is a uniform readout
            let neigh = tape.matmul(&coarse_adj, &coarse_x);
            let merged = tape.concat_cols(&[&coarse_x, &neigh]);
            let out = coarse.forward(tape, &merged);
            tape.reduce_mean(&out, 0)
        }
        ArchParams::SagPool { blocks, readout } => {
            debug_assert_eq!(blocks.len(), SAGPOOL_BLOCKS);
            let ratio = model.config.sagpool_ratio;
            let mut level = dense;
            let mut h = x;
            let mut summed: Option<Tensor> = None;
            for block in blocks {
                let mean_op = level.mean_operator(false);
                let conv_out = sage_conv(tape, &block.conv, &mean_op, &h, true);
                let score_op = level.mean_operator(true);
                let scores = sage_conv(tape, &block.score, &score_op, &conv_out, false);
                let k = ((ratio * level.n as f64).ceil() as usize).clamp(1, level.n);
                let kept = top_k_indices(&scores.to_vec(), k);
                diagnostics.kept_nodes.push(kept.clone());
                let h_kept = tape.select_rows(&conv_out, &kept);
                let gate = tape.sigmoid(&tape.select_rows(&scores, &kept));
                let gated = tape.mul(&h_kept, &gate);
                let pooled = tape.concat_cols(&[
                    &tape.reduce_mean(&gated, 0),
                    &tape.reduce_max(&gated, 0),
                ]);
                summed = Some(match summed {
                    Some(acc) => tape.add(&acc, &pooled),
                    None => pooled,
                });
                level = level.sub(&kept);
                h = gated;
            }
            readout.forward(tape, &summed.expect("at least one pooling block"))
        }
    };
    debug_assert!(h_g.all_finite(), "non-finite embedding values");
    Ok((h_g, diagnostics))
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = t.shape();
    let v = t.to_vec();
    (0..r).map(|i| v[i * c..(i + 1) * c].to_vec()).collect()
}
