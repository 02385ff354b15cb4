//! JSON documents of the artifact tree. Field names are part of the
//! compatibility contract with the dashboard and external producers.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::forecast::{ForecastSeries, TurnEvent};
use crate::graph::{Flavor, Snapshot};
use crate::ingest::{DeveloperId, ProjectInfo, ProjectStatus};
use crate::metrics::{node_percentages, MetricsRecord};

pub const SCHEMA_VERSION: u32 = 1;

/// Rounds to 9 significant decimal digits. Idempotent.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub side: Side,
    pub label: String,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDoc {
    pub source: String,
    pub target: String,
    pub weight: u64,
}

/// `social.json` / `tech.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub schema: u32,
    pub project: String,
    pub flavor: Flavor,
    pub month_from: u32,
    pub month_to: u32,
    pub nodes: Vec<NodeDoc>,
    pub links: Vec<LinkDoc>,
}

pub fn node_id(side: Side, label: &str) -> String {
    match side {
        Side::L => format!("L:{label}"),
        Side::R => format!("R:{label}"),
    }
}

impl NetworkDoc {
    pub fn from_snapshot(s: &Snapshot) -> Self {
        let shares = node_percentages(s);
        let pct = |m: &BTreeMap<String, f64>, k: &str| round_sig(m.get(k).copied().unwrap_or(0.0));
        let nodes = s
            .left_nodes
            .iter()
            .map(|l| NodeDoc { id: node_id(Side::L, l), side: Side::L, label: l.clone(), pct: pct(&shares.left, l) })
            .chain(s.right_nodes.iter().map(|r| NodeDoc {
                id: node_id(Side::R, r),
                side: Side::R,
                label: r.clone(),
                pct: pct(&shares.right, r),
            }))
            .collect();
        let links = s
            .edges
            .iter()
            .map(|e| LinkDoc {
                source: node_id(Side::L, &e.source),
                target: node_id(Side::R, &e.target),
                weight: e.weight,
            })
            .collect();
        NetworkDoc {
            schema: SCHEMA_VERSION,
            project: s.project_id.clone(),
            flavor: s.flavor,
            month_from: s.month_from,
            month_to: s.month_to,
            nodes,
            links,
        }
    }

    pub fn to_snapshot(&self) -> Result<Snapshot, String> {
        let mut labels: BTreeMap<&str, (Side, &str)> = BTreeMap::new();
        let mut left = Vec::new();
        let mut right = Vec::new();
        for n in &self.nodes {
            if labels.insert(n.id.as_str(), (n.side, n.label.as_str())).is_some() {
                return Err(format!("nodes: duplicate id `{}`", n.id));
            }
            match n.side {
                Side::L => left.push(n.label.clone()),
                Side::R => right.push(n.label.clone()),
            }
        }
        let mut edges = Vec::with_capacity(self.links.len());
        for l in &self.links {
            let endpoint = |id: &str, want: Side| match labels.get(id) {
                Some((side, label)) if *side == want => Ok(label.to_string()),
                Some(_) => Err(format!("links: `{id}` is on the wrong side")),
                None => Err(format!("links: unknown node id `{id}`")),
            };
            edges.push(crate::graph::Edge {
                source: endpoint(&l.source, Side::L)?,
                target: endpoint(&l.target, Side::R)?,
                weight: l.weight,
            });
        }
        left.sort();
        right.sort();
        edges.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
        let snap = Snapshot {
            project_id: self.project.clone(),
            flavor: self.flavor,
            month_from: self.month_from,
            month_to: self.month_to,
            left_nodes: left,
            right_nodes: right,
            edges,
        };
        snap.validate().map_err(|e| e.to_string())?;
        Ok(snap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideMetricsDoc {
    pub nodes: usize,
    pub left: usize,
    pub right: usize,
    pub edges: usize,
    pub mean_degree: f64,
    pub clustering: f64,
}

impl SideMetricsDoc {
    pub fn from_record(r: &MetricsRecord) -> Self {
        SideMetricsDoc {
            nodes: r.num_nodes,
            left: r.num_left_nodes,
            right: r.num_right_nodes,
            edges: r.num_edges,
            mean_degree: round_sig(r.mean_degree),
            clustering: round_sig(r.clustering_coefficient),
        }
    }

    pub fn to_record(&self, project: &str, flavor: Flavor, from: u32, to: u32) -> MetricsRecord {
        MetricsRecord {
            project_id: project.to_owned(),
            flavor,
            month_from: from,
            month_to: to,
            num_left_nodes: self.left,
            num_right_nodes: self.right,
            num_nodes: self.nodes,
            num_edges: self.edges,
            mean_degree: self.mean_degree,
            clustering_coefficient: self.clustering,
        }
    }
}

/// `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDoc {
    pub schema: u32,
    pub project: String,
    pub month_from: u32,
    pub month_to: u32,
    pub social: SideMetricsDoc,
    pub tech: SideMetricsDoc,
}

impl MetricsDoc {
    pub fn new(social: &MetricsRecord, tech: &MetricsRecord) -> Self {
        MetricsDoc {
            schema: SCHEMA_VERSION,
            project: social.project_id.clone(),
            month_from: social.month_from,
            month_to: social.month_to,
            social: SideMetricsDoc::from_record(social),
            tech: SideMetricsDoc::from_record(tech),
        }
    }

    pub fn records(&self) -> (MetricsRecord, MetricsRecord) {
        (
            self.social.to_record(&self.project, Flavor::Social, self.month_from, self.month_to),
            self.tech.to_record(&self.project, Flavor::Technical, self.month_from, self.month_to),
        )
    }
}

/// `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDoc {
    pub schema: u32,
    pub month: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailRef {
    pub message_id: String,
    pub ts: DateTime<Utc>,
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRef {
    pub commit_id: String,
    pub ts: DateTime<Utc>,
    pub files: Vec<String>,
}

/// `drilldown.json`; lists are newest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrilldownDoc {
    pub schema: u32,
    pub emails: BTreeMap<DeveloperId, Vec<EmailRef>>,
    pub commits: BTreeMap<DeveloperId, Vec<CommitRef>>,
}

/// `info.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoDoc {
    pub schema: u32,
    pub project_id: String,
    pub name: String,
    pub homepage_url: String,
    pub status: StatusDoc,
    pub sponsor: String,
    pub description: String,
    pub incubation_start: NaiveDate,
    pub months_in_incubation: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusDoc {
    Graduated,
    Retired,
    Incubating,
}

impl From<ProjectStatus> for StatusDoc {
    fn from(s: ProjectStatus) -> Self {
        match s {
            ProjectStatus::Graduated => StatusDoc::Graduated,
            ProjectStatus::Retired => StatusDoc::Retired,
            ProjectStatus::Incubating => StatusDoc::Incubating,
        }
    }
}

impl From<StatusDoc> for ProjectStatus {
    fn from(s: StatusDoc) -> Self {
        match s {
            StatusDoc::Graduated => ProjectStatus::Graduated,
            StatusDoc::Retired => ProjectStatus::Retired,
            StatusDoc::Incubating => ProjectStatus::Incubating,
        }
    }
}

impl InfoDoc {
    pub fn from_info(p: &ProjectInfo) -> Self {
        InfoDoc {
            schema: SCHEMA_VERSION,
            project_id: p.project_id.clone(),
            name: p.name.clone(),
            homepage_url: p.homepage_url.clone(),
            status: p.status.into(),
            sponsor: p.sponsor.clone(),
            description: p.description.clone(),
            incubation_start: p.incubation_start,
            months_in_incubation: p.months_in_incubation,
        }
    }

    pub fn to_info(&self) -> ProjectInfo {
        ProjectInfo {
            project_id: self.project_id.clone(),
            name: self.name.clone(),
            homepage_url: self.homepage_url.clone(),
            status: self.status.into(),
            sponsor: self.sponsor.clone(),
            description: self.description.clone(),
            incubation_start: self.incubation_start,
            months_in_incubation: self.months_in_incubation,
        }
    }
}

/// `forecast.json`. An unforecast project has empty lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastDoc {
    pub schema: u32,
    pub probabilities: Vec<f64>,
    pub turns: Vec<TurnEvent>,
}

impl ForecastDoc {
    pub fn empty() -> Self {
        ForecastDoc { schema: SCHEMA_VERSION, probabilities: Vec::new(), turns: Vec::new() }
    }

    pub fn new(series: &ForecastSeries, turns: &[TurnEvent]) -> Self {
        ForecastDoc {
            schema: SCHEMA_VERSION,
            probabilities: series.probabilities.iter().map(|&p| round_sig(p)).collect(),
            turns: turns.iter().map(|t| TurnEvent { delta: round_sig(t.delta), ..*t }).collect(),
        }
    }
}

/// Error payload of the HTTP API: `{"error": {"code", "message"}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDoc {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: u16,
    pub message: String,
}

/// Canonical byte encoding of every artifact: pretty JSON plus newline.
pub fn to_json_bytes<T: Serialize>(doc: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(doc).expect("artifact documents serialize");
    out.push(b'\n');
    out
}
