//! Synthetic clique-vs-path datasets for tests and demos.
//!
//! Class 0 graphs are complete graphs, class 1 graphs are simple paths.
//! Node categories are clamped degrees, matching how label-free benchmark
//! inputs are keyed.

use crate::data::{Graph, GraphDataset};
use crate::error::Result;
use crate::rng::Rng;

fn clique(n: usize, id: String) -> Result<Graph> {
    let mut edges = Vec::with_capacity(n * (n - 1));
    for u in 0..n as u32 {
        for v in 0..n as u32 {
            if u != v {
                edges.push((u, v));
            }
        }
    }
    let categories = vec![(n as u32 - 1).min(50); n];
    Graph::new(n, edges, categories, 0, id)
}

fn path(n: usize, id: String) -> Result<Graph> {
    let mut edges = Vec::with_capacity(2 * (n - 1));
    for u in 0..(n as u32 - 1) {
        edges.push((u, u + 1));
        edges.push((u + 1, u));
    }
    let categories: Vec<u32> = (0..n)
        .map(|v| if v == 0 || v == n - 1 { 1 } else { 2 })
        .collect();
    Graph::new(n, edges, categories, 1, id)
}

/// A random undirected graph: each unordered pair becomes an edge with
/// probability `edge_prob` (stored in both directions), categories drawn
/// uniformly. Used by gradient checks and invariance tests.
pub fn random_graph(n: usize, edge_prob: f64, num_categories: usize, seed: u64) -> Graph {
    assert!(n >= 1 && num_categories >= 1);
    let mut rng = Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in (u + 1)..n as u32 {
            if rng.uniform() < edge_prob {
                edges.push((u, v));
                edges.push((v, u));
            }
        }
    }
    let categories = (0..n).map(|_| rng.index(num_categories) as u32).collect();
    Graph::new(n, edges, categories, 0, format!("random#{seed}"))
        .expect("construction is valid by construction")
}

/// A balanced clique-vs-path dataset with per-graph sizes drawn uniformly
/// from `size_min..=size_max` (sizes >= 3). With `size_min == size_max`
/// every graph of a class is identical.
pub fn clique_vs_path(
    num_graphs: usize,
    size_min: usize,
    size_max: usize,
    seed: u64,
) -> Result<GraphDataset> {
    assert!(size_min >= 3, "clique_vs_path: sizes below 3 degenerate");
    assert!(size_min <= size_max);
    let mut rng = Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(num_graphs);
    for i in 0..num_graphs {
        let n = size_min + rng.index(size_max - size_min + 1);
        let g = if i % 2 == 0 {
            clique(n, format!("clique#{i}"))?
        } else {
            path(n, format!("path#{i}"))?
        };
        graphs.push(g);
    }
    let max_cat = graphs
        .iter()
        .flat_map(|g| g.node_categories.iter().copied())
        .max()
        .unwrap_or(0);
    GraphDataset::new(
        "clique_vs_path".into(),
        graphs,
        2,
        max_cat as usize + 1,
        format!(
            "synthetic: {num_graphs} graphs, sizes {size_min}..={size_max}, seed {seed}; class 0 = clique, class 1 = path"
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_classes_expected_structure() {
        let ds = clique_vs_path(10, 5, 5, 0).unwrap();
        assert_eq!(ds.len(), 10);
        assert!(ds.has_all_classes());
        let cliques = ds.graphs.iter().filter(|g| g.label == 0).count();
        assert_eq!(cliques, 5);
        for g in &ds.graphs {
            assert_eq!(g.node_count, 5);
            assert!(g.is_symmetric());
            if g.label == 0 {
                assert_eq!(g.edge_count(), 20); // K5: 5*4 directed entries
            } else {
                assert_eq!(g.edge_count(), 8); // P5: 4 undirected edges
            }
        }
    }

    #[test]
    fn varied_sizes_stay_in_range() {
        let ds = clique_vs_path(40, 4, 8, 7).unwrap();
        assert!(ds.graphs.iter().all(|g| (4..=8).contains(&g.node_count)));
        let distinct: std::collections::BTreeSet<usize> =
            ds.graphs.iter().map(|g| g.node_count).collect();
        assert!(distinct.len() > 1, "sizes should actually vary");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = clique_vs_path(20, 4, 8, 3).unwrap();
        let b = clique_vs_path(20, 4, 8, 3).unwrap();
        assert_eq!(a.graphs, b.graphs);
    }
}
