//! Misclassification networks: one node per class, an edge `i → j` when
//! images of class `i` that are misclassified land on `j` often enough.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::RateTable;

/// Default edge threshold on `v_{j|i}`.
pub const DEFAULT_THETA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassNetwork {
    pub num_classes: usize,
    /// Sorted by `(from, to)`.
    pub edges: Vec<Edge>,
    pub theta: f64,
    pub model_id: String,
}

/// Keeps every off-diagonal `v_{j|i}` that is nonzero and at least `theta`.
pub fn build_network(rates: &RateTable, theta: f64, model_id: &str) -> Result<MisclassNetwork> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::OutOfRange(format!(
            "theta must lie in [0,1], got {theta}"
        )));
    }
    let v = &rates.v.matrix;
    let c = v.len();
    let mut edges = Vec::new();
    for (i, row) in v.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if i != j && w > 0.0 && w >= theta {
                edges.push(Edge {
                    from: i,
                    to: j,
                    weight: w,
                });
            }
        }
    }
    Ok(MisclassNetwork {
        num_classes: c,
        edges,
        theta,
        model_id: model_id.to_string(),
    })
}

/// Weighted in-degree of every class: the sum of incoming edge weights.
pub fn in_degrees(network: &MisclassNetwork) -> Vec<f64> {
    let mut d = vec![0.0; network.num_classes];
    for e in &network.edges {
        d[e.to] += e.weight;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// Unordered pairs `(a, b)` with `a < b` and edges in both directions.
    pub symmetric: Vec<(usize, usize)>,
    /// Edges whose reverse is absent.
    pub asymmetric: Vec<Edge>,
}

pub fn symmetric_pairs(network: &MisclassNetwork) -> SymmetryReport {
    let present: BTreeSet<(usize, usize)> = network.edges.iter().map(|e| (e.from, e.to)).collect();
    let mut symmetric = BTreeSet::new();
    let mut asymmetric = Vec::new();
    for e in &network.edges {
        if present.contains(&(e.to, e.from)) {
            symmetric.insert((e.from.min(e.to), e.from.max(e.to)));
        } else {
            asymmetric.push(*e);
        }
    }
    SymmetryReport {
        symmetric: symmetric.into_iter().collect(),
        asymmetric,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Edges present in every network.
    pub common: Vec<(usize, usize)>,
    /// For every edge seen anywhere, how many networks contain it.
    pub presence: Vec<((usize, usize), usize)>,
    pub networks: usize,
}

pub fn consistent_edges(networks: &[MisclassNetwork]) -> Result<ConsistencyReport> {
    if let Some(first) = networks.first() {
        if let Some(bad) = networks.iter().find(|n| n.num_classes != first.num_classes) {
            return Err(Error::MixedClasses {
                first: first.num_classes,
                other: bad.num_classes,
            });
        }
    }
    let mut presence: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for n in networks {
        for e in &n.edges {
            *presence.entry((e.from, e.to)).or_default() += 1;
        }
    }
    let common = presence
        .iter()
        .filter(|(_, &k)| k == networks.len())
        .map(|(&e, _)| e)
        .collect();
    Ok(ConsistencyReport {
        common,
        presence: presence.into_iter().collect(),
        networks: networks.len(),
    })
}

/// Graphviz description with nodes in class order and weights to three
/// decimals.
pub fn export_dot(network: &MisclassNetwork, names: Option<&[String]>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph misclassification {{");
    let _ = writeln!(
        out,
        "  label=\"{} (theta={:.3})\";",
        escape(&network.model_id),
        network.theta
    );
    for i in 0..network.num_classes {
        let name = names
            .and_then(|n| n.get(i))
            .cloned()
            .unwrap_or_else(|| i.to_string());
        let _ = writeln!(out, "  n{i} [label=\"{}\"];", escape(&name));
    }
    for e in &network.edges {
        let _ = writeln!(
            out,
            "  n{} -> n{} [label=\"{:.3}\"];",
            e.from, e.to, e.weight
        );
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: usize,
    pub name: String,
    pub in_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkJson {
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<Edge>,
    pub theta: f64,
    pub model_id: String,
}

pub fn network_json(network: &MisclassNetwork, names: &[String]) -> NetworkJson {
    let d = in_degrees(network);
    NetworkJson {
        nodes: (0..network.num_classes)
            .map(|i| NetworkNode {
                id: i,
                name: names.get(i).cloned().unwrap_or_else(|| i.to_string()),
                in_degree: d[i],
            })
            .collect(),
        edges: network.edges.clone(),
        theta: network.theta,
        model_id: network.model_id.clone(),
    }
}
