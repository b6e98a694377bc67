//! Parser for the standard TUDataset text layout.
//!
//! A dataset directory holds `{name}_A.txt` (comma-separated 1-based global
//! node pairs, one edge per line), `{name}_graph_indicator.txt` (line i is
//! the 1-based graph id of global node i), `{name}_graph_labels.txt`
//! (line g is graph g's raw label) and optionally `{name}_node_labels.txt`
//! (line i is node i's category).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Graph, GraphDataset};

/// Degree-keyed node categories are clamped here when node labels are
/// absent, giving a bounded feature vocabulary.
pub const DEGREE_CATEGORY_CAP: u32 = 50;

fn read_lines(dir: &Path, file_name: &str) -> Result<Vec<String>> {
    let path = dir.join(file_name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn parse_int(file: &str, line_no: usize, token: &str) -> Result<i64> {
    // Some distributions write integer columns as "1.0".
    token
        .trim()
        .parse::<i64>()
        .or_else(|_| token.trim().parse::<f64>().map(|f| f as i64))
        .map_err(|_| Error::format(file, line_no, format!("expected an integer, got {token:?}")))
}

/// Parse a TUDataset-format directory into a dataset.
///
/// Node indices are renumbered per graph from 0. Raw graph labels are
/// remapped to contiguous class indices (sorted order); raw node labels,
/// when present, are remapped the same way to contiguous categories. When
/// node labels are absent, a node's category is its clamped degree,
/// `min(degree, 50)`.
pub fn parse_tudataset(dir: &Path, name: &str) -> Result<GraphDataset> {
    let indicator_file = format!("{name}_graph_indicator.txt");
    let labels_file = format!("{name}_graph_labels.txt");
    let edges_file = format!("{name}_A.txt");
    let node_labels_file = format!("{name}_node_labels.txt");

    let indicator_lines = read_lines(dir, &indicator_file)?;
    let label_lines = read_lines(dir, &labels_file)?;
    let edge_lines = read_lines(dir, &edges_file)?;
    let node_label_lines = if dir.join(&node_labels_file).is_file() {
        Some(read_lines(dir, &node_labels_file)?)
    } else {
        None
    };

    // Global node -> (graph, local index), counting nodes per graph.
    let num_graphs = label_lines.len();
    let mut graph_of_node = Vec::with_capacity(indicator_lines.len());
    let mut local_index = Vec::with_capacity(indicator_lines.len());
    let mut node_counts = vec![0usize; num_graphs];
    for (i, line) in indicator_lines.iter().enumerate() {
        let gid = parse_int(&indicator_file, i + 1, line)?;
        if gid < 1 || gid as usize > num_graphs {
            return Err(Error::format(
                &indicator_file,
                i + 1,
                format!("graph id {gid} outside 1..={num_graphs}"),
            ));
        }
        let g = gid as usize - 1;
        graph_of_node.push(g);
        local_index.push(node_counts[g]);
        node_counts[g] += 1;
    }
    let num_nodes = graph_of_node.len();

    // Edges, grouped per graph.
    let mut edges_per_graph: Vec<Vec<(u32, u32)>> = vec![Vec::new(); num_graphs];
    for (i, line) in edge_lines.iter().enumerate() {
        let mut parts = line.split(',');
        let (u_tok, v_tok) = match (parts.next(), parts.next()) {
            (Some(u), Some(v)) => (u, v),
            _ => {
                return Err(Error::format(
                    &edges_file,
                    i + 1,
                    format!("expected \"u, v\", got {line:?}"),
                ))
            }
        };
        let u = parse_int(&edges_file, i + 1, u_tok)?;
        let v = parse_int(&edges_file, i + 1, v_tok)?;
        for x in [u, v] {
            if x < 1 || x as usize > num_nodes {
                return Err(Error::format(
                    &edges_file,
                    i + 1,
                    format!("node {x} outside 1..={num_nodes}"),
                ));
            }
        }
        let (gu, gv) = (graph_of_node[u as usize - 1], graph_of_node[v as usize - 1]);
        if gu != gv {
            return Err(Error::format(
                &edges_file,
                i + 1,
                format!(
                    "edge ({u}, {v}) spans graphs {} and {}",
                    gu + 1,
                    gv + 1
                ),
            ));
        }
        edges_per_graph[gu].push((
            local_index[u as usize - 1] as u32,
            local_index[v as usize - 1] as u32,
        ));
    }

    // Graph labels remapped to contiguous class indices.
    let mut raw_labels = Vec::with_capacity(num_graphs);
    for (i, line) in label_lines.iter().enumerate() {
        raw_labels.push(parse_int(&labels_file, i + 1, line)?);
    }
    let mut label_map = BTreeMap::new();
    for &l in &raw_labels {
        let next = label_map.len();
        label_map.entry(l).or_insert(next);
    }
    let num_classes = label_map.len();

    // Node categories: remapped node labels, or clamped degree.
    let mut categories_per_graph: Vec<Vec<u32>> =
        node_counts.iter().map(|&n| vec![0u32; n]).collect();
    let num_feature_categories;
    let feature_note;
    match &node_label_lines {
        Some(lines) => {
            if lines.len() != num_nodes {
                return Err(Error::format(
                    &node_labels_file,
                    lines.len(),
                    format!("{} node labels for {num_nodes} nodes", lines.len()),
                ));
            }
            let mut raw = Vec::with_capacity(num_nodes);
            for (i, line) in lines.iter().enumerate() {
                raw.push(parse_int(&node_labels_file, i + 1, line)?);
            }
            let mut cat_map = BTreeMap::new();
            for &c in &raw {
                let next = cat_map.len();
                cat_map.entry(c).or_insert(next);
            }
            for (node, &c) in raw.iter().enumerate() {
                categories_per_graph[graph_of_node[node]][local_index[node]] =
                    cat_map[&c] as u32;
            }
            num_feature_categories = cat_map.len();
            feature_note = format!("node categories from node labels ({} distinct)", cat_map.len());
        }
        None => {
            let mut max_cat = 0u32;
            for (g, edges) in edges_per_graph.iter().enumerate() {
                let mut degree = vec![0u32; node_counts[g]];
                for &(u, _) in edges {
                    degree[u as usize] += 1;
                }
                for (v, &d) in degree.iter().enumerate() {
                    let cat = d.min(DEGREE_CATEGORY_CAP);
                    categories_per_graph[g][v] = cat;
                    max_cat = max_cat.max(cat);
                }
            }
            num_feature_categories = max_cat as usize + 1;
            feature_note = format!("node categories = min(degree, {DEGREE_CATEGORY_CAP})");
        }
    }

    let label_note: Vec<String> = label_map
        .iter()
        .map(|(raw, idx)| format!("{raw}->{idx}"))
        .collect();
    let provenance = format!(
        "TUDataset {name} from {}; labels remapped {{{}}}; {feature_note}",
        dir.display(),
        label_note.join(", ")
    );

    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        graphs.push(Graph::new(
            node_counts[g],
            std::mem::take(&mut edges_per_graph[g]),
            std::mem::take(&mut categories_per_graph[g]),
            label_map[&raw_labels[g]],
            format!("{name}#{g}"),
        )?);
    }

    GraphDataset::new(
        name.to_string(),
        graphs,
        num_classes,
        num_feature_categories,
        provenance,
    )
}
