//! Graph and dataset representations, ingestion and splits.
//!
//! Graphs store directed edge lists (undirected inputs carry both
//! directions) plus a CSR neighbor form. Node features are category
//! indices; the model resolves them through a learnable table. All types
//! are immutable after construction and safe to share across threads.

mod taxi;
mod tudataset;

pub use taxi::{build_taxi_dataset, parse_trip_csv, TaxiTrip};
pub use tudataset::parse_tudataset;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// A labeled graph with category-indexed nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub node_count: usize,
    /// Directed edge list as stored; undirected sources include both
    /// (u, v) and (v, u). Parallel edges are kept.
    pub edges: Vec<(u32, u32)>,
    /// Per-node feature-lookup key.
    pub node_categories: Vec<u32>,
    /// Class index in [0, num_classes).
    pub label: usize,
    /// Stable identifier, preserved by the cache round-trip.
    pub graph_id: String,
    /// CSR offsets into `neighbor_targets`; length node_count + 1.
    #[serde(skip)]
    neighbor_offsets: Vec<u32>,
    #[serde(skip)]
    neighbor_targets: Vec<u32>,
}

impl Graph {
    pub fn new(
        node_count: usize,
        edges: Vec<(u32, u32)>,
        node_categories: Vec<u32>,
        label: usize,
        graph_id: String,
    ) -> Result<Graph> {
        if node_categories.len() != node_count {
            return Err(Error::Domain(format!(
                "graph {graph_id}: {} categories for {node_count} nodes",
                node_categories.len()
            )));
        }
        for &(u, v) in &edges {
            if u as usize >= node_count || v as usize >= node_count {
                return Err(Error::Domain(format!(
                    "graph {graph_id}: edge ({u}, {v}) exceeds node count {node_count}"
                )));
            }
        }
        let mut g = Graph {
            node_count,
            edges,
            node_categories,
            label,
            graph_id,
            neighbor_offsets: Vec::new(),
            neighbor_targets: Vec::new(),
        };
        g.rebuild_neighbors();
        Ok(g)
    }

    fn rebuild_neighbors(&mut self) {
        let n = self.node_count;
        let mut counts = vec![0u32; n + 1];
        for &(u, _) in &self.edges {
            counts[u as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut targets = vec![0u32; self.edges.len()];
        let mut cursor = counts.clone();
        for &(u, v) in &self.edges {
            targets[cursor[u as usize] as usize] = v;
            cursor[u as usize] += 1;
        }
        self.neighbor_offsets = counts;
        self.neighbor_targets = targets;
    }

    /// Out-neighbors of `v` (with multiplicity, in edge order).
    pub fn neighbors(&self, v: usize) -> &[u32] {
        let lo = self.neighbor_offsets[v] as usize;
        let hi = self.neighbor_offsets[v + 1] as usize;
        &self.neighbor_targets[lo..hi]
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.neighbors(v).len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// True when every directed edge has a reverse counterpart (counting
    /// multiplicity) — the undirected-input invariant.
    pub fn is_symmetric(&self) -> bool {
        use std::collections::HashMap;
        let mut balance: HashMap<(u32, u32), i64> = HashMap::new();
        for &(u, v) in &self.edges {
            if u == v {
                continue;
            }
            *balance.entry((u.min(v), u.max(v))).or_default() += if u < v { 1 } else { -1 };
        }
        balance.values().all(|&b| b == 0)
    }
}

/// A named collection of graphs sharing a label space and a feature
/// vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub num_feature_categories: usize,
    /// Free-form construction notes (label remappings, sources).
    pub provenance: String,
}

impl GraphDataset {
    pub fn new(
        name: String,
        graphs: Vec<Graph>,
        num_classes: usize,
        num_feature_categories: usize,
        provenance: String,
    ) -> Result<GraphDataset> {
        if graphs.is_empty() {
            return Err(Error::Domain(format!("dataset {name}: no graphs")));
        }
        for g in &graphs {
            if g.label >= num_classes {
                return Err(Error::Domain(format!(
                    "dataset {name}: graph {} has label {} outside [0, {num_classes})",
                    g.graph_id, g.label
                )));
            }
            if let Some(&cat) = g.node_categories.iter().max() {
                if cat as usize >= num_feature_categories {
                    return Err(Error::Domain(format!(
                        "dataset {name}: graph {} has category {cat} outside [0, {num_feature_categories})",
                        g.graph_id
                    )));
                }
            }
        }
        Ok(GraphDataset {
            name,
            graphs,
            num_classes,
            num_feature_categories,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    /// True when every class in [0, num_classes) occurs at least once.
    /// Training entry points require this; degenerate slices (e.g. an
    /// hour-long taxi extract) may legally violate it.
    pub fn has_all_classes(&self) -> bool {
        let mut seen = vec![false; self.num_classes];
        for g in &self.graphs {
            seen[g.label] = true;
        }
        seen.iter().all(|&s| s)
    }

    pub fn mean_node_count(&self) -> f64 {
        self.graphs.iter().map(|g| g.node_count as f64).sum::<f64>() / self.len() as f64
    }

    /// Mean directed-edge-entry count per graph.
    pub fn mean_edge_entries(&self) -> f64 {
        self.graphs.iter().map(|g| g.edge_count() as f64).sum::<f64>() / self.len() as f64
    }

    pub fn max_node_count(&self) -> usize {
        self.graphs.iter().map(|g| g.node_count).max().unwrap_or(0)
    }

    /// True when every member graph is symmetric (undirected input).
    pub fn is_symmetric(&self) -> bool {
        self.graphs.iter().all(|g| g.is_symmetric())
    }
}

/// One 80/10/10 partition of dataset indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Uniformly random 80/10/10 split: |val| = |test| = floor(n/10), the rest
/// train. Deterministic in (n, seed).
pub fn make_splits(n: usize, seed: u64) -> Result<SplitPlan> {
    if n < 10 {
        return Err(Error::Domain(format!(
            "cannot split {n} graphs: validation and test would be empty (need n >= 10)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::seed_from_u64(seed);
    rng.shuffle(&mut order);
    let tenth = n / 10;
    let val_indices = order[..tenth].to_vec();
    let test_indices = order[tenth..2 * tenth].to_vec();
    let train_indices = order[2 * tenth..].to_vec();
    Ok(SplitPlan {
        seed,
        train_indices,
        val_indices,
        test_indices,
    })
}

const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format_version: u32,
    dataset: GraphDataset,
}

/// Write the dataset cache (versioned JSON document).
pub fn write_dataset_cache(dataset: &GraphDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let cache = CacheFile {
        format_version: CACHE_FORMAT_VERSION,
        dataset: dataset.clone(),
    };
    serde_json::to_writer(BufWriter::new(file), &cache)
        .map_err(|e| Error::Format {
            file: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
    Ok(())
}

/// Read a dataset cache written by [`write_dataset_cache`].
pub fn read_dataset_cache(path: &Path) -> Result<GraphDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let cache: CacheFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
            file: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
    if cache.format_version != CACHE_FORMAT_VERSION {
        return Err(Error::Format {
            file: path.display().to_string(),
            line: 0,
            message: format!(
                "unsupported cache format version {} (expected {CACHE_FORMAT_VERSION})",
                cache.format_version
            ),
        });
    }
    let mut dataset = cache.dataset;
    for g in &mut dataset.graphs {
        g.rebuild_neighbors();
    }
    Ok(dataset)
}


#[cfg(test)]
mod split_properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn partition_property(n in 10usize..500, seed in any::<u64>()) {
            let plan = make_splits(n, seed).unwrap();
            let tenth = n / 10;
            prop_assert_eq!(plan.val_indices.len(), tenth);
            prop_assert_eq!(plan.test_indices.len(), tenth);
            prop_assert_eq!(plan.train_indices.len(), n - 2 * tenth);
            let mut all: Vec<usize> = plan
                .train_indices.iter()
                .chain(&plan.val_indices)
                .chain(&plan.test_indices)
                .copied()
                .collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
