//! CSV ingestion of mailing-list and commit records, developer identity
//! resolution and incubation-month indexing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::sync::OnceLock;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMAIL_COLUMNS: [&str; 8] = [
    "message_id",
    "project_id",
    "sender",
    "recipients",
    "reply_to_id",
    "timestamp",
    "subject",
    "body",
];
pub const COMMIT_COLUMNS: [&str; 5] = ["commit_id", "project_id", "author", "timestamp", "files"];
pub const PROJECT_COLUMNS: [&str; 8] = [
    "project_id",
    "name",
    "homepage_url",
    "status",
    "sponsor",
    "description",
    "incubation_start",
    "months",
];
pub const REPORT_COLUMNS: [&str; 3] = ["project_id", "month", "text"];

/// Separator used inside multi-valued CSV cells such as recipient lists.
pub const LIST_SEPARATOR: char = '|';

/// Domain used for senders that carry a display name but no address.
pub const UNKNOWN_DOMAIN: &str = "unknown.invalid";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus format error: missing column `{column}` in {table}")]
    MissingColumn { table: &'static str, column: &'static str },
    #[error("corpus format error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no valid {table} records remain ({errors} rows rejected)")]
    NoValidRecords { table: &'static str, errors: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("timestamp {ts} precedes incubation start month {start}")]
pub struct MonthRangeError {
    pub ts: DateTime<Utc>,
    pub start: NaiveDate,
}

/// One rejected input row. `row` is 1-based and counts data rows only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub table: String,
    pub row: usize,
    pub reason: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} row {}: {}", self.table, self.row, self.reason)
    }
}

/// Output of a table parse: the records that survived plus one entry per
/// rejected row.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<RowError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Email {
    pub message_id: String,
    pub project_id: String,
    pub sender: String,
    pub recipients: Vec<String>,
    pub reply_to_id: Option<String>,
    pub timestamp: DateTime<Utc>,
    pub subject: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub commit_id: String,
    pub project_id: String,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProjectStatus {
    Graduated,
    Retired,
    Incubating,
}

impl ProjectStatus {
    /// Forecaster label: graduated projects are 1, retired 0, incubating
    /// projects have no label.
    pub fn label(self) -> Option<u8> {
        match self {
            ProjectStatus::Graduated => Some(1),
            ProjectStatus::Retired => Some(0),
            ProjectStatus::Incubating => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProjectStatus::Graduated => "graduated",
            ProjectStatus::Retired => "retired",
            ProjectStatus::Incubating => "incubating",
        }
    }
}

impl std::str::FromStr for ProjectStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "graduated" => Ok(ProjectStatus::Graduated),
            "retired" => Ok(ProjectStatus::Retired),
            "incubating" | "current" => Ok(ProjectStatus::Incubating),
            other => Err(format!("unknown project status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectInfo {
    pub project_id: String,
    pub name: String,
    pub homepage_url: String,
    pub status: ProjectStatus,
    pub sponsor: String,
    pub description: String,
    pub incubation_start: NaiveDate,
    pub months_in_incubation: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthlyReport {
    pub project_id: String,
    pub month: u32,
    pub text: String,
}

/// Canonical developer identifier: the preferred normalized address of the
/// developer's address group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeveloperId(pub String);

impl DeveloperId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeveloperId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Developer {
    pub display_name: String,
    pub addresses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityMap {
    pub canonical_of: BTreeMap<String, DeveloperId>,
    pub developers: BTreeMap<DeveloperId, Developer>,
}

impl IdentityMap {
    /// Looks up a raw address, falling back to its normalized form.
    pub fn resolve(&self, raw: &str) -> Option<&DeveloperId> {
        self.canonical_of
            .get(raw)
            .or_else(|| self.canonical_of.get(&normalize_address(raw)))
    }

    /// Like [`IdentityMap::resolve`], but unseen addresses resolve to their
    /// own normalized form so callers never lose an endpoint.
    pub fn resolve_or_self(&self, raw: &str) -> DeveloperId {
        self.resolve(raw)
            .cloned()
            .unwrap_or_else(|| DeveloperId(normalize_address(raw)))
    }

    pub fn len(&self) -> usize {
        self.developers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.developers.is_empty()
    }
}

/// Identity resolution result together with non-fatal diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Resolution {
    pub identities: IdentityMap,
    pub warnings: Vec<String>,
}

/// Alias groups to force-merge, one group per line.
pub fn parse_alias_groups(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(split_list)
        .filter(|group| !group.is_empty())
        .collect()
}

pub(crate) fn split_list(cell: &str) -> Vec<String> {
    cell.split(LIST_SEPARATOR)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("unparseable timestamp `{s}`: {e}"))
}

/// Maps each required column to its position in the header row.
fn column_positions<const N: usize>(
    table: &'static str,
    headers: &csv::StringRecord,
    columns: &[&'static str; N],
) -> Result<[usize; N], IngestError> {
    let mut out = [0usize; N];
    for (slot, &column) in out.iter_mut().zip(columns.iter()) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == column)
            .ok_or(IngestError::MissingColumn { table, column })?;
    }
    Ok(out)
}

fn parse_table<R, T, const N: usize, F>(
    table: &'static str,
    reader: R,
    columns: &[&'static str; N],
    mut convert: F,
) -> Result<Parsed<T>, IngestError>
where
    R: Read,
    F: FnMut(&[&str; N]) -> Result<T, String>,
{
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let pos = column_positions(table, &headers, columns)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { table: table.into(), row: row_no, reason: e.to_string() });
                continue;
            }
        };
        let mut cells = [""; N];
        let mut short = None;
        for (cell, &p) in cells.iter_mut().zip(pos.iter()) {
            match row.get(p) {
                Some(v) => *cell = v,
                None => short = Some(p),
            }
        }
        if let Some(p) = short {
            errors.push(RowError {
                table: table.into(),
                row: row_no,
                reason: format!("row has no field at column {p}"),
            });
            continue;
        }
        match convert(&cells) {
            Ok(rec) => records.push(rec),
            Err(reason) => errors.push(RowError { table: table.into(), row: row_no, reason }),
        }
    }
    Ok(Parsed { records, errors })
}

fn required<'a>(value: &'a str, name: &str) -> Result<&'a str, String> {
    let v = value.trim();
    if v.is_empty() {
        Err(format!("empty `{name}`"))
    } else {
        Ok(v)
    }
}

pub fn parse_email_records<R: Read>(reader: R) -> Result<Parsed<Email>, IngestError> {
    let mut seen = BTreeSet::new();
    parse_table("emails", reader, &EMAIL_COLUMNS, |c| {
        let message_id = required(c[0], "message_id")?.to_owned();
        let project_id = required(c[1], "project_id")?.to_owned();
        let sender = required(c[2], "sender")?.to_owned();
        let timestamp = parse_timestamp(c[5])?;
        if !seen.insert((project_id.clone(), message_id.clone())) {
            return Err(format!("duplicate message_id `{message_id}`"));
        }
        let reply = c[4].trim();
        Ok(Email {
            message_id,
            project_id,
            sender,
            recipients: split_list(c[3]),
            reply_to_id: (!reply.is_empty()).then(|| reply.to_owned()),
            timestamp,
            subject: c[6].to_owned(),
            body: c[7].to_owned(),
        })
    })
}

pub fn parse_commit_records<R: Read>(reader: R) -> Result<Parsed<Commit>, IngestError> {
    let mut seen = BTreeSet::new();
    parse_table("commits", reader, &COMMIT_COLUMNS, |c| {
        let commit_id = required(c[0], "commit_id")?.to_owned();
        let project_id = required(c[1], "project_id")?.to_owned();
        let author = required(c[2], "author")?.to_owned();
        let timestamp = parse_timestamp(c[3])?;
        if !seen.insert((project_id.clone(), commit_id.clone())) {
            return Err(format!("duplicate commit_id `{commit_id}`"));
        }
        Ok(Commit { commit_id, project_id, author, timestamp, files: split_list(c[4]) })
    })
}

pub fn parse_project_records<R: Read>(reader: R) -> Result<Parsed<ProjectInfo>, IngestError> {
    parse_table("projects", reader, &PROJECT_COLUMNS, |c| {
        let incubation_start = NaiveDate::parse_from_str(c[6].trim(), "%Y-%m-%d")
            .map_err(|e| format!("unparseable incubation_start `{}`: {e}", c[6]))?;
        let months: u32 = c[7]
            .trim()
            .parse()
            .map_err(|_| format!("unparseable months `{}`", c[7]))?;
        if months == 0 {
            return Err("months must be at least 1".into());
        }
        Ok(ProjectInfo {
            project_id: required(c[0], "project_id")?.to_owned(),
            name: c[1].to_owned(),
            homepage_url: c[2].to_owned(),
            status: c[3].parse()?,
            sponsor: c[4].to_owned(),
            description: c[5].to_owned(),
            incubation_start,
            months_in_incubation: months,
        })
    })
}

pub fn parse_report_records<R: Read>(reader: R) -> Result<Parsed<MonthlyReport>, IngestError> {
    parse_table("reports", reader, &REPORT_COLUMNS, |c| {
        let month: u32 = c[1]
            .trim()
            .parse()
            .map_err(|_| format!("unparseable month `{}`", c[1]))?;
        if month == 0 {
            return Err("month must be at least 1".into());
        }
        Ok(MonthlyReport {
            project_id: required(c[0], "project_id")?.to_owned(),
            month,
            text: c[2].to_owned(),
        })
    })
}

fn address_in_text_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)+").unwrap())
}

/// Extracts the bare address from forms like `Jane Doe <jd@x.org>`;
/// display-name-only senders map to `name@unknown.invalid`.
pub fn normalize_address(raw: &str) -> String {
    let raw = raw.trim();
    let inner = match (raw.rfind('<'), raw.rfind('>')) {
        (Some(a), Some(b)) if a < b => &raw[a + 1..b],
        _ => raw,
    };
    let inner = inner.trim().trim_matches(|c| c == '"' || c == '\'');
    if inner.contains('@') {
        inner.to_lowercase()
    } else {
        let local: Vec<String> = inner
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .collect();
        let local = if local.is_empty() { "anonymous".to_owned() } else { local.join(".") };
        format!("{local}@{UNKNOWN_DOMAIN}")
    }
}

/// Display name carried in a raw address, if any (`Jane Doe <jd@x.org>`
/// or a bare name without `@`).
pub fn display_name_of(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if let Some(a) = raw.rfind('<') {
        let name = raw[..a].trim().trim_matches('"').trim();
        return (!name.is_empty()).then(|| name.to_owned());
    }
    (!raw.contains('@') && !raw.is_empty()).then(|| raw.to_owned())
}

/// An address is partial when its domain has fewer than three characters or
/// is (or ends in) an ellipsis.
pub fn is_partial_address(addr: &str) -> bool {
    let addr = addr.trim();
    let Some(at) = addr.find('@') else { return false };
    if at == 0 {
        return false;
    }
    let domain = &addr[at + 1..];
    domain.chars().count() < 3 || domain.ends_with("...") || domain.ends_with('…')
}

/// Searches the corpus text for the unique full address that completes
/// `partial`. Returns `None` when there are zero or several candidates.
pub fn backfill_partial_address<'a, I>(partial: &str, corpus_bodies: I) -> Option<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let partial = normalize_address(partial);
    let (local, domain) = partial.split_once('@')?;
    let domain_prefix = domain.trim_end_matches('…').trim_end_matches('.');
    let mut candidates = BTreeSet::new();
    for body in corpus_bodies {
        for m in address_in_text_re().find_iter(body) {
            let found = m.as_str().to_lowercase();
            let Some((l, d)) = found.split_once('@') else { continue };
            if l == local && d.starts_with(domain_prefix) && !is_partial_address(&found) {
                candidates.insert(found);
                if candidates.len() > 1 {
                    return None;
                }
            }
        }
    }
    candidates.into_iter().next()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index wins so the result does not depend on call order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Builds the developer identity map as the union-find closure of
/// case-insensitive address equality, alias groups and partial-address
/// backfills.
pub fn resolve_identities(
    emails: &[Email],
    commits: &[Commit],
    alias_groups: Option<&[Vec<String>]>,
) -> Resolution {
    let mut warnings = Vec::new();

    // raw form -> normalized address; BTreeMap keeps everything order-independent
    let mut raw_forms: BTreeMap<String, String> = BTreeMap::new();
    let mut names: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut observe = |raw: &str| {
        let norm = normalize_address(raw);
        if let Some(name) = display_name_of(raw) {
            names.entry(norm.clone()).or_default().insert(name);
        }
        raw_forms.insert(raw.to_owned(), norm);
    };
    for e in emails {
        observe(&e.sender);
        e.recipients.iter().for_each(|r| observe(r));
    }
    for c in commits {
        observe(&c.author);
    }

    let mut addresses: BTreeSet<String> = raw_forms.values().cloned().collect();
    let observed = addresses.clone();

    let mut bodies: Vec<&str> = emails.iter().map(|e| e.body.as_str()).collect();
    bodies.sort_unstable();
    let mut backfills = Vec::new();
    for addr in observed.iter().filter(|a| is_partial_address(a)) {
        if let Some(full) = backfill_partial_address(addr, bodies.iter().copied()) {
            addresses.insert(full.clone());
            backfills.push((addr.clone(), full));
        }
    }

    let mut alias_pairs = Vec::new();
    for group in alias_groups.unwrap_or_default() {
        let normed: Vec<String> = group.iter().map(|a| normalize_address(a)).collect();
        for a in &normed {
            if !observed.contains(a) {
                let msg = format!("alias file references unknown address `{a}`");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            addresses.insert(a.clone());
        }
        for pair in normed.windows(2) {
            alias_pairs.push((pair[0].clone(), pair[1].clone()));
        }
    }

    let index: BTreeMap<&str, usize> =
        addresses.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let mut uf = UnionFind::new(addresses.len());
    for (a, b) in backfills.iter().chain(alias_pairs.iter()) {
        uf.union(index[a.as_str()], index[b.as_str()]);
    }

    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (addr, &i) in &index {
        groups.entry(uf.find(i)).or_default().push(addr);
    }

    let mut map = IdentityMap::default();
    let mut id_of_norm: BTreeMap<&str, DeveloperId> = BTreeMap::new();
    for members in groups.values() {
        let id = DeveloperId(preferred_address(members).to_owned());
        let display_name = members
            .iter()
            .filter_map(|m| names.get(*m))
            .flatten()
            .min()
            .cloned()
            .unwrap_or_else(|| id.0.split('@').next().unwrap_or_default().to_owned());
        let mut member_addrs: Vec<String> = members.iter().map(|m| m.to_string()).collect();
        for m in members {
            id_of_norm.insert(m, id.clone());
            map.canonical_of.insert(m.to_string(), id.clone());
        }
        // raw spellings are listed alongside normalized forms
        for (raw, norm) in &raw_forms {
            if members.contains(&norm.as_str()) && raw != norm {
                member_addrs.push(raw.clone());
            }
        }
        member_addrs.sort();
        member_addrs.dedup();
        map.developers.insert(id, Developer { display_name, addresses: member_addrs });
    }
    for (raw, norm) in &raw_forms {
        map.canonical_of.insert(raw.clone(), id_of_norm[norm.as_str()].clone());
    }

    Resolution { identities: map, warnings }
}

/// Full addresses are preferred over partial or synthetic ones; ties break
/// lexicographically.
fn preferred_address<'a>(members: &[&'a str]) -> &'a str {
    members
        .iter()
        .copied()
        .min_by_key(|a| (is_partial_address(a), a.ends_with(UNKNOWN_DOMAIN), *a))
        .expect("address group is never empty")
}

/// 1-based incubation month of `ts`; month 1 is the calendar month that
/// contains `incubation_start`.
pub fn month_index(ts: DateTime<Utc>, incubation_start: NaiveDate) -> Result<u32, MonthRangeError> {
    let d = ts.date_naive();
    let elapsed = (d.year() - incubation_start.year()) * 12 + d.month() as i32
        - incubation_start.month() as i32;
    if elapsed < 0 {
        Err(MonthRangeError { ts, start: incubation_start })
    } else {
        Ok(elapsed as u32 + 1)
    }
}
