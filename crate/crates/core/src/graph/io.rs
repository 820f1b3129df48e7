//! Plain-text and JSON dataset formats.
//!
//! `edges.csv` holds one `i,j` pair per line (0-based), `features.csv`
//! one comma-separated row of decimals per node, and the optional
//! `labels.csv` one integer class or decimal target per line (a single
//! line on a multi-node graph is read as a graph-level label). The
//! `graph.json` bundle carries all three in one file. All decimals are
//! parsed as 64-bit floats.

use super::{EdgePolicy, Graph, Labels};
use crate::error::{Error, Result};
use fcg_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// On-disk representations understood by [`load_graph`] / [`save_graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    /// Directory with `edges.csv`, `features.csv`, optional `labels.csv`.
    EdgeList,
    /// Single `graph.json` bundle.
    Bundle,
}

pub fn load_graph<F: Scalar>(
    path: &Path,
    format: GraphFormat,
    policy: EdgePolicy,
) -> Result<Graph<F>> {
    match format {
        GraphFormat::EdgeList => load_edge_list(path, policy),
        GraphFormat::Bundle => load_bundle(path, policy),
    }
}

pub fn save_graph<F: Scalar>(g: &Graph<F>, path: &Path, format: GraphFormat) -> Result<()> {
    match format {
        GraphFormat::EdgeList => save_edge_list(g, path),
        GraphFormat::Bundle => save_bundle(g, path),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn load_edge_list<F: Scalar>(dir: &Path, policy: EdgePolicy) -> Result<Graph<F>> {
    let features_path = dir.join("features.csv");
    let features = parse_features::<F>(&features_path, &read_to_string(&features_path)?)?;

    let edges_path = dir.join("edges.csv");
    let edges = parse_edges(&edges_path, &read_to_string(&edges_path)?)?;

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        Some(parse_labels::<F>(
            &labels_path,
            &read_to_string(&labels_path)?,
            features.shape()[0],
        )?)
    } else {
        None
    };

    Graph::new(&edges, features, labels, policy)
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse_err(path, lineno + 1, "expected exactly `i,j`")),
        };
        let i: usize = a
            .trim()
            .parse()
            .map_err(|e| parse_err(path, lineno + 1, format!("bad node index `{a}`: {e}")))?;
        let j: usize = b
            .trim()
            .parse()
            .map_err(|e| parse_err(path, lineno + 1, format!("bad node index `{b}`: {e}")))?;
        edges.push((i, j));
    }
    Ok(edges)
}

fn parse_features<F: Scalar>(path: &Path, text: &str) -> Result<Tensor<F>> {
    let mut rows: Vec<Vec<F>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<F> =
            line.split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map(F::c).map_err(|e| {
                        parse_err(path, lineno + 1, format!("bad decimal `{tok}`: {e}"))
                    })
                })
                .collect::<Result<_>>()?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Shape(format!(
                    "{}:{}: feature row has {} columns, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    w
                )));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "empty feature matrix"));
    }
    Tensor::from_rows(&rows).map_err(Error::from)
}

fn parse_labels<F: Scalar>(path: &Path, text: &str, num_nodes: usize) -> Result<Labels<F>> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if lines.is_empty() {
        return Err(parse_err(path, 1, "empty label file"));
    }

    let integral = lines
        .iter()
        .all(|(_, l)| !l.contains('.') && l.parse::<u64>().is_ok());

    if lines.len() == 1 && num_nodes > 1 {
        let (lineno, l) = lines[0];
        return if integral {
            Ok(Labels::GraphClass(l.parse().unwrap()))
        } else {
            let v = l
                .parse::<f64>()
                .map_err(|e| parse_err(path, lineno, format!("bad label `{l}`: {e}")))?;
            Ok(Labels::GraphTarget(F::c(v)))
        };
    }

    if lines.len() != num_nodes {
        return Err(Error::Shape(format!(
            "{}: {} labels for {} nodes",
            path.display(),
            lines.len(),
            num_nodes
        )));
    }

    if integral {
        Ok(Labels::NodeClasses(
            lines.iter().map(|(_, l)| l.parse().unwrap()).collect(),
        ))
    } else {
        let mut out = Vec::with_capacity(lines.len());
        for (lineno, l) in lines {
            let v = l
                .parse::<f64>()
                .map_err(|e| parse_err(path, lineno, format!("bad label `{l}`: {e}")))?;
            out.push(F::c(v));
        }
        Ok(Labels::NodeTargets(out))
    }
}

fn save_edge_list<F: Scalar>(g: &Graph<F>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut edges = String::new();
    for &(i, j) in g.edges() {
        let _ = writeln!(edges, "{i},{j}");
    }
    std::fs::write(dir.join("edges.csv"), edges).map_err(|e| Error::io(dir, e))?;

    let mut feats = String::new();
    for i in 0..g.num_nodes() {
        let row: Vec<String> = g
            .features()
            .row(i)
            .iter()
            .map(|v| format!("{}", v.as_f64()))
            .collect();
        let _ = writeln!(feats, "{}", row.join(","));
    }
    std::fs::write(dir.join("features.csv"), feats).map_err(|e| Error::io(dir, e))?;

    if let Some(labels) = g.labels() {
        let mut text = String::new();
        match labels {
            Labels::NodeClasses(v) => {
                for c in v {
                    let _ = writeln!(text, "{c}");
                }
            }
            Labels::NodeTargets(v) => {
                for t in v {
                    let _ = writeln!(text, "{}", t.as_f64());
                }
            }
            Labels::GraphClass(c) => {
                let _ = writeln!(text, "{c}");
            }
            Labels::GraphTarget(t) => {
                let _ = writeln!(text, "{}", t.as_f64());
            }
        }
        std::fs::write(dir.join("labels.csv"), text).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BundleJson {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<BundleLabels>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "kebab-case")]
enum BundleLabels {
    NodeClasses(Vec<usize>),
    NodeTargets(Vec<f64>),
    GraphClass(usize),
    GraphTarget(f64),
}

fn load_bundle<F: Scalar>(path: &Path, policy: EdgePolicy) -> Result<Graph<F>> {
    let text = read_to_string(path)?;
    let bundle: BundleJson = serde_json::from_str(&text)?;
    if bundle.features.len() != bundle.num_nodes {
        return Err(Error::Shape(format!(
            "{}: bundle declares {} nodes but has {} feature rows",
            path.display(),
            bundle.num_nodes,
            bundle.features.len()
        )));
    }
    let rows: Vec<Vec<F>> = bundle
        .features
        .iter()
        .map(|r| r.iter().map(|&v| F::c(v)).collect())
        .collect();
    let features = Tensor::from_rows(&rows)?;
    let labels = bundle.labels.map(|l| match l {
        BundleLabels::NodeClasses(v) => Labels::NodeClasses(v),
        BundleLabels::NodeTargets(v) => Labels::NodeTargets(v.into_iter().map(F::c).collect()),
        BundleLabels::GraphClass(c) => Labels::GraphClass(c),
        BundleLabels::GraphTarget(t) => Labels::GraphTarget(F::c(t)),
    });
    Graph::new(&bundle.edges, features, labels, policy)
}

fn save_bundle<F: Scalar>(g: &Graph<F>, path: &Path) -> Result<()> {
    let features = (0..g.num_nodes())
        .map(|i| g.features().row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    let labels = g.labels().map(|l| match l {
        Labels::NodeClasses(v) => BundleLabels::NodeClasses(v.clone()),
        Labels::NodeTargets(v) => BundleLabels::NodeTargets(v.iter().map(|t| t.as_f64()).collect()),
        Labels::GraphClass(c) => BundleLabels::GraphClass(*c),
        Labels::GraphTarget(t) => BundleLabels::GraphTarget(t.as_f64()),
    });
    let bundle = BundleJson {
        num_nodes: g.num_nodes(),
        edges: g.edges().to_vec(),
        features,
        labels,
    };
    let text = serde_json::to_string_pretty(&bundle)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, text: &str) {
        std::fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn loads_small_edge_list() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "0,1\n1,2\n");
        write(dir.path(), "features.csv", "1.0\n2.0\n3.0\n");
        let g: Graph<f64> =
            load_graph(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn self_loop_rejected_in_strict_mode() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "2,2\n");
        write(dir.path(), "features.csv", "1.0\n2.0\n3.0\n");
        let r = load_graph::<f64>(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict);
        assert!(matches!(r, Err(Error::Graph(_))));
    }

    #[test]
    fn two_node_single_edge_adjacency_is_symmetric() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "0,1\n");
        write(dir.path(), "features.csv", "0.5\n-0.5\n");
        let g: Graph<f64> =
            load_graph(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "0,1\nnonsense\n");
        write(dir.path(), "features.csv", "1.0\n2.0\n");
        match load_graph::<f64>(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn edge_index_beyond_features_is_bounds_error() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "0,7\n");
        write(dir.path(), "features.csv", "1.0\n2.0\n");
        assert!(matches!(
            load_graph::<f64>(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict),
            Err(Error::Bounds { index: 7, .. })
        ));
    }

    #[test]
    fn label_count_mismatch_is_shape_error() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "0,1\n");
        write(dir.path(), "features.csv", "1.0\n2.0\n3.0\n");
        write(dir.path(), "labels.csv", "0\n1\n");
        assert!(matches!(
            load_graph::<f64>(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn round_trip_edge_list_reproduces_graph_exactly() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "0,1\n1,2\n0,3\n");
        write(
            dir.path(),
            "features.csv",
            "0.1,0.2\n-3.5,1e-9\n7.25,0.3333333333333333\n0,4\n",
        );
        write(dir.path(), "labels.csv", "0\n1\n1\n0\n");
        let g: Graph<f64> =
            load_graph(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict).unwrap();

        let out = tempdir().unwrap();
        save_graph(&g, out.path(), GraphFormat::EdgeList).unwrap();
        let g2: Graph<f64> =
            load_graph(out.path(), GraphFormat::EdgeList, EdgePolicy::Strict).unwrap();
        assert_eq!(g.edges(), g2.edges());
        assert_eq!(g.features(), g2.features());
        assert_eq!(g.labels(), g2.labels());
    }

    #[test]
    fn round_trip_bundle() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "0,1\n");
        write(dir.path(), "features.csv", "0.5,1.5\n2.5,-0.125\n");
        write(dir.path(), "labels.csv", "0.25\n-1.75\n");
        let g: Graph<f64> =
            load_graph(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict).unwrap();
        assert!(matches!(g.labels(), Some(Labels::NodeTargets(_))));

        let path = dir.path().join("graph.json");
        save_graph(&g, &path, GraphFormat::Bundle).unwrap();
        let g2: Graph<f64> = load_graph(&path, GraphFormat::Bundle, EdgePolicy::Strict).unwrap();
        assert_eq!(g.edges(), g2.edges());
        assert_eq!(g.features(), g2.features());
        assert_eq!(g.labels(), g2.labels());
    }

    #[test]
    fn bundle_node_count_mismatch_is_shape_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("graph.json");
        std::fs::write(
            &path,
            r#"{"num_nodes": 3, "edges": [[0,1]], "features": [[1.0],[2.0]]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_graph::<f64>(&path, GraphFormat::Bundle, EdgePolicy::Strict),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn single_label_line_on_multi_node_graph_is_graph_level() {
        let dir = tempdir().unwrap();
        write(dir.path(), "edges.csv", "0,1\n");
        write(dir.path(), "features.csv", "1.0\n2.0\n");
        write(dir.path(), "labels.csv", "3.5\n");
        let g: Graph<f64> =
            load_graph(dir.path(), GraphFormat::EdgeList, EdgePolicy::Strict).unwrap();
        assert_eq!(g.labels(), Some(&Labels::GraphTarget(3.5)));
    }
}
