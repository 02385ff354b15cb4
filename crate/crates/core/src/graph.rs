//! Monthly social (email) and technical (commit) bipartite snapshots.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use regex::RegexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{month_index, normalize_address, Commit, DeveloperId, Email, IdentityMap};

/// Label used for files without an extension.
pub const NO_EXTENSION: &str = "(none)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flavor {
    Social,
    Technical,
}

impl Flavor {
    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::Social => "social",
            Flavor::Technical => "tech",
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "social" => Ok(Flavor::Social),
            "tech" | "technical" => Ok(Flavor::Technical),
            other => Err(format!("unknown flavor `{other}` (expected social|tech)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: u64,
}

/// Weighted directed bipartite network for a project over `month_from..=month_to`.
///
/// Node lists and edges are kept sorted, so two snapshots describing the same
/// network compare equal regardless of how they were built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub project_id: String,
    pub flavor: Flavor,
    pub month_from: u32,
    pub month_to: u32,
    pub left_nodes: Vec<String>,
    pub right_nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("cannot aggregate an empty list of snapshots")]
    Empty,
    #[error("snapshots mix projects `{0}` and `{1}`")]
    MixedProjects(String, String),
    #[error("snapshots mix flavors {0} and {1}")]
    MixedFlavors(Flavor, Flavor),
    #[error("snapshot months are not consecutive: {prev_to} is followed by {next_from}")]
    NonConsecutive { prev_to: u32, next_from: u32 },
    #[error("invalid month range {from}..{to}")]
    BadRange { from: u32, to: u32 },
    #[error("invalid snapshot: {0}")]
    Invalid(String),
}

impl Snapshot {
    pub fn empty(project_id: &str, flavor: Flavor, month_from: u32, month_to: u32) -> Self {
        Snapshot {
            project_id: project_id.to_owned(),
            flavor,
            month_from,
            month_to,
            left_nodes: Vec::new(),
            right_nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Builds a snapshot from accumulated edge weights; node sets are the
    /// edge endpoints.
    pub fn from_weights(
        project_id: &str,
        flavor: Flavor,
        month_from: u32,
        month_to: u32,
        weights: BTreeMap<(String, String), u64>,
    ) -> Self {
        let mut left = BTreeSet::new();
        let mut right = BTreeSet::new();
        let edges = weights
            .into_iter()
            .filter(|(_, w)| *w > 0)
            .map(|((source, target), weight)| {
                left.insert(source.clone());
                right.insert(target.clone());
                Edge { source, target, weight }
            })
            .collect();
        Snapshot {
            project_id: project_id.to_owned(),
            flavor,
            month_from,
            month_to,
            left_nodes: left.into_iter().collect(),
            right_nodes: right.into_iter().collect(),
            edges,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.left_nodes.is_empty() && self.right_nodes.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Checks the structural invariants: ordered range, endpoints present,
    /// positive weights, no duplicate pairs.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.month_from == 0 || self.month_from > self.month_to {
            return Err(GraphError::BadRange { from: self.month_from, to: self.month_to });
        }
        let left: BTreeSet<&str> = self.left_nodes.iter().map(String::as_str).collect();
        let right: BTreeSet<&str> = self.right_nodes.iter().map(String::as_str).collect();
        if left.len() != self.left_nodes.len() || right.len() != self.right_nodes.len() {
            return Err(GraphError::Invalid("duplicate node label".into()));
        }
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            if !left.contains(e.source.as_str()) || !right.contains(e.target.as_str()) {
                return Err(GraphError::Invalid(format!(
                    "edge {} -> {} references a missing node",
                    e.source, e.target
                )));
            }
            if e.weight == 0 {
                return Err(GraphError::Invalid(format!("edge {} -> {} has weight 0", e.source, e.target)));
            }
            if !pairs.insert((e.source.as_str(), e.target.as_str())) {
                return Err(GraphError::Invalid(format!("duplicate edge {} -> {}", e.source, e.target)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageClass {
    Direct,
    Broadcast,
}

/// Mailing-list address patterns. Recipients matching any pattern are lists,
/// everything else is an individual.
#[derive(Debug, Clone)]
pub struct ListPatterns {
    set: RegexSet,
}

impl ListPatterns {
    pub fn new<I, S>(patterns: I) -> Result<Self, regex::Error>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Ok(ListPatterns { set: RegexSet::new(patterns)? })
    }

    pub fn is_list(&self, address: &str) -> bool {
        self.set.is_match(&normalize_address(address))
    }

    pub fn patterns(&self) -> &[String] {
        self.set.patterns()
    }
}

impl Default for ListPatterns {
    fn default() -> Self {
        ListPatterns::new([
            r"^(dev|user|users|commits|private)@([a-z0-9\-]+\.)*apache\.org$",
            r"@([a-z0-9\-]+\.)*incubator\.apache\.org$",
        ])
        .expect("default list patterns compile")
    }
}

pub fn classify_message(e: &Email, list_patterns: &ListPatterns) -> MessageClass {
    if e.recipients.iter().any(|r| !list_patterns.is_list(r)) {
        MessageClass::Direct
    } else {
        MessageClass::Broadcast
    }
}

/// Lower-cased extension (with the dot) of the final path segment.
pub fn file_type(path: &str) -> String {
    let name = path.rsplit(['/', '\\']).next().unwrap_or(path);
    match name.rfind('.') {
        Some(i) if i > 0 && i + 1 < name.len() => name[i..].to_lowercase(),
        _ => NO_EXTENSION.to_owned(),
    }
}

/// Strips repeated leading `re:` / `aw:` tokens, case-folds and trims.
/// The flag reports whether any reply token was removed.
pub fn normalize_subject(subject: &str) -> (String, bool) {
    let mut s = subject.trim();
    let mut stripped = false;
    loop {
        let lower = s.get(..3).map(str::to_ascii_lowercase);
        match lower.as_deref() {
            Some("re:") | Some("aw:") => {
                s = s[3..].trim_start();
                stripped = true;
            }
            _ => break,
        }
    }
    (s.to_lowercase(), stripped)
}

/// Per-project context shared by the snapshot builders.
#[derive(Debug, Clone, Copy)]
pub struct ProjectWindow<'a> {
    pub project_id: &'a str,
    pub incubation_start: NaiveDate,
}

impl ProjectWindow<'_> {
    fn month_of(&self, ts: DateTime<Utc>) -> Option<u32> {
        month_index(ts, self.incubation_start).ok()
    }
}

/// Resolves which earlier email each message replies to: the `reply_to_id`
/// link when it names a known message, otherwise the most recent earlier
/// email with the same normalized subject.
pub fn reply_targets(emails: &[Email]) -> HashMap<&str, &Email> {
    let by_id: HashMap<&str, &Email> = emails.iter().map(|e| (e.message_id.as_str(), e)).collect();
    let mut by_subject: HashMap<String, Vec<&Email>> = HashMap::new();
    for e in emails {
        by_subject.entry(normalize_subject(&e.subject).0).or_default().push(e);
    }
    for list in by_subject.values_mut() {
        list.sort_by(|a, b| (a.timestamp, &a.message_id).cmp(&(b.timestamp, &b.message_id)));
    }

    let mut out = HashMap::new();
    for e in emails {
        if let Some(parent) = e.reply_to_id.as_deref().and_then(|id| by_id.get(id)) {
            if parent.message_id != e.message_id {
                out.insert(e.message_id.as_str(), *parent);
            }
            continue;
        }
        let (norm, is_reply) = normalize_subject(&e.subject);
        if !is_reply || norm.is_empty() {
            continue;
        }
        let Some(candidates) = by_subject.get(&norm) else { continue };
        let key = (e.timestamp, e.message_id.as_str());
        let idx = candidates.partition_point(|c| (c.timestamp, c.message_id.as_str()) < key);
        if let Some(parent) = candidates[..idx].iter().rev().find(|c| c.timestamp < e.timestamp) {
            out.insert(e.message_id.as_str(), *parent);
        }
    }
    out
}

fn resolve(ids: &IdentityMap, raw: &str) -> String {
    ids.resolve_or_self(raw).0
}

/// A project's emails reduced to per-month (source, target) contributions,
/// so repeated snapshot builds do not redo reply matching.
#[derive(Debug, Clone)]
pub struct SocialEvents {
    project_id: String,
    contributions: Vec<(u32, String, String)>,
}

impl SocialEvents {
    pub fn new(
        emails: &[Email],
        ids: &IdentityMap,
        list_patterns: &ListPatterns,
        window: ProjectWindow<'_>,
    ) -> Self {
        let project: Vec<Email> = emails
            .iter()
            .filter(|e| e.project_id == window.project_id)
            .cloned()
            .collect();
        let parents = reply_targets(&project);
        let mut contributions = Vec::new();
        for e in &project {
            let Some(m) = window.month_of(e.timestamp) else { continue };
            let sender = resolve(ids, &e.sender);
            if classify_message(e, list_patterns) == MessageClass::Direct {
                let targets: BTreeSet<String> = e
                    .recipients
                    .iter()
                    .filter(|r| !list_patterns.is_list(r))
                    .map(|r| resolve(ids, r))
                    .collect();
                for t in targets {
                    if t != sender {
                        contributions.push((m, sender.clone(), t));
                    }
                }
            }
            if let Some(parent) = parents.get(e.message_id.as_str()) {
                if classify_message(parent, list_patterns) == MessageClass::Broadcast {
                    let origin = resolve(ids, &parent.sender);
                    if origin != sender {
                        contributions.push((m, origin, sender.clone()));
                    }
                }
            }
        }
        SocialEvents { project_id: window.project_id.to_owned(), contributions }
    }

    pub fn snapshot(&self, from: u32, to: u32) -> Snapshot {
        let mut weights: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (m, s, t) in &self.contributions {
            if (from..=to).contains(m) {
                *weights.entry((s.clone(), t.clone())).or_default() += 1;
            }
        }
        Snapshot::from_weights(&self.project_id, Flavor::Social, from, to, weights)
    }
}

/// Social network over `from..=to`: sender → individual recipient for direct
/// emails and broadcast sender → replier for replies to broadcasts. Reply
/// edges belong to the month of the reply.
pub fn build_social_range(
    emails: &[Email],
    ids: &IdentityMap,
    list_patterns: &ListPatterns,
    window: ProjectWindow<'_>,
    from: u32,
    to: u32,
) -> Snapshot {
    SocialEvents::new(emails, ids, list_patterns, window).snapshot(from, to)
}

pub fn build_social_snapshot(
    emails: &[Email],
    ids: &IdentityMap,
    list_patterns: &ListPatterns,
    window: ProjectWindow<'_>,
    month: u32,
) -> Snapshot {
    build_social_range(emails, ids, list_patterns, window, month, month)
}

/// Technical network over `from..=to`: developer → file type, weighted by
/// the number of (commit, file) touches.
pub fn build_technical_range(
    commits: &[Commit],
    ids: &IdentityMap,
    window: ProjectWindow<'_>,
    from: u32,
    to: u32,
) -> Snapshot {
    let mut weights: BTreeMap<(String, String), u64> = BTreeMap::new();
    for c in commits.iter().filter(|c| c.project_id == window.project_id) {
        let Some(m) = window.month_of(c.timestamp) else { continue };
        if m < from || m > to {
            continue;
        }
        let dev = resolve(ids, &c.author);
        for f in c.files.iter().filter(|f| !f.is_empty()) {
            *weights.entry((dev.clone(), file_type(f))).or_default() += 1;
        }
    }
    Snapshot::from_weights(window.project_id, Flavor::Technical, from, to, weights)
}

pub fn build_technical_snapshot(
    commits: &[Commit],
    ids: &IdentityMap,
    window: ProjectWindow<'_>,
    month: u32,
) -> Snapshot {
    build_technical_range(commits, ids, window, month, month)
}

/// Merges snapshots over consecutive months: node sets are unioned and
/// weights of identical pairs summed.
pub fn aggregate_snapshots(snaps: &[Snapshot]) -> Result<Snapshot, GraphError> {
    let first = snaps.first().ok_or(GraphError::Empty)?;
    let mut sorted: Vec<&Snapshot> = snaps.iter().collect();
    sorted.sort_by_key(|s| s.month_from);
    let mut weights: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut left: BTreeSet<String> = BTreeSet::new();
    let mut right: BTreeSet<String> = BTreeSet::new();
    for (i, s) in sorted.iter().enumerate() {
        if s.project_id != first.project_id {
            return Err(GraphError::MixedProjects(first.project_id.clone(), s.project_id.clone()));
        }
        if s.flavor != first.flavor {
            return Err(GraphError::MixedFlavors(first.flavor, s.flavor));
        }
        if s.month_from > s.month_to {
            return Err(GraphError::BadRange { from: s.month_from, to: s.month_to });
        }
        if i > 0 && sorted[i - 1].month_to + 1 != s.month_from {
            return Err(GraphError::NonConsecutive {
                prev_to: sorted[i - 1].month_to,
                next_from: s.month_from,
            });
        }
        left.extend(s.left_nodes.iter().cloned());
        right.extend(s.right_nodes.iter().cloned());
        for e in &s.edges {
            *weights.entry((e.source.clone(), e.target.clone())).or_default() += e.weight;
        }
    }
    let mut out = Snapshot::from_weights(
        &first.project_id,
        first.flavor,
        sorted[0].month_from,
        sorted[sorted.len() - 1].month_to,
        weights,
    );
    out.left_nodes = left.into_iter().collect();
    out.right_nodes = right.into_iter().collect();
    Ok(out)
}

/// Developer behind an email or commit, used for drilldown listings.
pub fn developer_of(ids: &IdentityMap, raw: &str) -> DeveloperId {
    ids.resolve_or_self(raw)
}
