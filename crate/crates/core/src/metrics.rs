//! Network metrics per snapshot and the monthly feature vectors fed to the
//! forecaster.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{Flavor, Snapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub project_id: String,
    pub flavor: Flavor,
    pub month_from: u32,
    pub month_to: u32,
    pub num_left_nodes: usize,
    pub num_right_nodes: usize,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub mean_degree: f64,
    pub clustering_coefficient: f64,
}

impl MetricsRecord {
    pub fn is_empty(&self) -> bool {
        self.num_nodes == 0
    }
}

pub const FEATURE_DIM: usize = 8;

/// `[s_nodes, s_edges, s_mean_degree, s_clustering,
///   t_nodes, t_edges, t_mean_degree, t_clustering]` for one month.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector([0.0; FEATURE_DIM])
    }

    pub fn from_metrics(social: &MetricsRecord, technical: &MetricsRecord) -> Self {
        FeatureVector([
            social.num_nodes as f64,
            social.num_edges as f64,
            social.mean_degree,
            social.clustering_coefficient,
            technical.num_nodes as f64,
            technical.num_edges as f64,
            technical.mean_degree,
            technical.clustering_coefficient,
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Simple undirected graph, adjacency kept sorted for deterministic output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UndirectedGraph {
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl UndirectedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, v: &str) {
        self.adjacency.entry(v.to_owned()).or_default();
    }

    /// Adds `{u, v}`; self-loops are ignored.
    pub fn add_edge(&mut self, u: &str, v: &str) {
        if u == v {
            self.add_vertex(u);
            return;
        }
        self.adjacency.entry(u.to_owned()).or_default().insert(v.to_owned());
        self.adjacency.entry(v.to_owned()).or_default().insert(u.to_owned());
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn vertices(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn neighbors(&self, v: &str) -> Option<&BTreeSet<String>> {
        self.adjacency.get(v)
    }

    pub fn has_edge(&self, u: &str, v: &str) -> bool {
        self.adjacency.get(u).is_some_and(|n| n.contains(v))
    }

    /// Edges as ordered pairs `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.adjacency
            .iter()
            .flat_map(|(u, ns)| ns.iter().filter(move |v| u < *v).map(move |v| (u.as_str(), v.as_str())))
            .collect()
    }
}

/// One-mode developer projection: two developers are adjacent when they share
/// a neighbor. In technical snapshots the shared neighbor is a file type; in
/// social snapshots it is a third developer, with edge direction ignored.
pub fn project_to_developers(s: &Snapshot) -> UndirectedGraph {
    let mut g = UndirectedGraph::new();
    // hub -> developers attached to it
    let mut hubs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    match s.flavor {
        Flavor::Technical => {
            for d in &s.left_nodes {
                g.add_vertex(d);
            }
            for e in &s.edges {
                hubs.entry(e.target.as_str()).or_default().insert(e.source.as_str());
            }
        }
        Flavor::Social => {
            for d in s.left_nodes.iter().chain(&s.right_nodes) {
                g.add_vertex(d);
            }
            for e in &s.edges {
                if e.source != e.target {
                    hubs.entry(e.source.as_str()).or_default().insert(e.target.as_str());
                    hubs.entry(e.target.as_str()).or_default().insert(e.source.as_str());
                }
            }
        }
    }
    for members in hubs.values() {
        let members: Vec<&str> = members.iter().copied().collect();
        for (i, u) in members.iter().enumerate() {
            for v in &members[i + 1..] {
                g.add_edge(u, v);
            }
        }
    }
    g
}

/// Mean local clustering coefficient. Vertices with degree below two
/// contribute zero; the empty graph has coefficient zero.
pub fn clustering_coefficient(g: &UndirectedGraph) -> f64 {
    let n = g.num_vertices();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for ns in g.adjacency.values() {
        let k = ns.len();
        if k < 2 {
            continue;
        }
        let ns: Vec<&String> = ns.iter().collect();
        let mut links = 0usize;
        for (i, a) in ns.iter().enumerate() {
            let adj = &g.adjacency[*a];
            links += ns[i + 1..].iter().filter(|b| adj.contains(**b)).count();
        }
        total += links as f64 / (k * (k - 1) / 2) as f64;
    }
    total / n as f64
}

pub fn compute_metrics(s: &Snapshot) -> MetricsRecord {
    let num_left_nodes = s.left_nodes.len();
    let num_right_nodes = s.right_nodes.len();
    let num_nodes = num_left_nodes + num_right_nodes;
    let num_edges = s.edges.len();
    let mean_degree = if num_nodes > 0 { 2.0 * num_edges as f64 / num_nodes as f64 } else { 0.0 };
    MetricsRecord {
        project_id: s.project_id.clone(),
        flavor: s.flavor,
        month_from: s.month_from,
        month_to: s.month_to,
        num_left_nodes,
        num_right_nodes,
        num_nodes,
        num_edges,
        mean_degree,
        clustering_coefficient: clustering_coefficient(&project_to_developers(s)),
    }
}

/// Share of total edge weight carried by each node, per side, in percent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeShares {
    pub left: BTreeMap<String, f64>,
    pub right: BTreeMap<String, f64>,
}

pub fn node_percentages(s: &Snapshot) -> NodeShares {
    let total = s.total_weight();
    let mut shares = NodeShares::default();
    if total == 0 {
        return shares;
    }
    let mut left: BTreeMap<&str, u64> = BTreeMap::new();
    let mut right: BTreeMap<&str, u64> = BTreeMap::new();
    for e in &s.edges {
        *left.entry(e.source.as_str()).or_default() += e.weight;
        *right.entry(e.target.as_str()).or_default() += e.weight;
    }
    let pct = |w: u64| 100.0 * w as f64 / total as f64;
    shares.left = left.into_iter().map(|(k, w)| (k.to_owned(), pct(w))).collect();
    shares.right = right.into_iter().map(|(k, w)| (k.to_owned(), pct(w))).collect();
    shares
}

/// Feature vectors for months `1..=months`, zero-filled where a month has no
/// metrics record. Records are matched by `month_from` on single-month records.
pub fn feature_sequence(
    social: &[MetricsRecord],
    technical: &[MetricsRecord],
    months: u32,
) -> Vec<FeatureVector> {
    let index = |records: &[MetricsRecord]| -> BTreeMap<u32, MetricsRecord> {
        records
            .iter()
            .filter(|r| r.month_from == r.month_to)
            .map(|r| (r.month_from, r.clone()))
            .collect()
    };
    let social = index(social);
    let technical = index(technical);
    (1..=months)
        .map(|m| match (social.get(&m), technical.get(&m)) {
            (None, None) => FeatureVector::zeros(),
            (s, t) => {
                let blank = |flavor| MetricsRecord {
                    project_id: String::new(),
                    flavor,
                    month_from: m,
                    month_to: m,
                    num_left_nodes: 0,
                    num_right_nodes: 0,
                    num_nodes: 0,
                    num_edges: 0,
                    mean_degree: 0.0,
                    clustering_coefficient: 0.0,
                };
                let s = s.cloned().unwrap_or_else(|| blank(Flavor::Social));
                let t = t.cloned().unwrap_or_else(|| blank(Flavor::Technical));
                FeatureVector::from_metrics(&s, &t)
            }
        })
        .collect()
}
