//! In-memory copy of the artifact tree and the pure query functions behind
//! every route.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sustain_core::graph::{aggregate_snapshots, Flavor};
use sustain_core::metrics::compute_metrics;
use sustain_core::store::schema::{
    to_json_bytes, CommitRef, DrilldownDoc, EmailRef, ErrorBody, ErrorDoc, ForecastDoc, MetricsDoc, NetworkDoc,
    ReportDoc, StatusDoc, SCHEMA_VERSION,
};
use sustain_core::store::{self, StoreError};
use sustain_core::{ProjectInfo, Snapshot};

use crate::ServiceError;

/// Error returned by a query; rendered as `{"error": {"code", "message"}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub message: String,
}

impl ApiError {
    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError { status: 404, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: 400, message: message.into() }
    }

    pub fn body(&self) -> Vec<u8> {
        to_json_bytes(&ErrorDoc { error: ErrorBody { code: self.status, message: self.message.clone() } })
    }
}

/// Entry of `GET /api/projects`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectEntry {
    pub project_id: String,
    pub name: String,
    pub status: StatusDoc,
}

#[derive(Debug, Clone)]
struct MonthData {
    social_bytes: Vec<u8>,
    tech_bytes: Vec<u8>,
    metrics_bytes: Vec<u8>,
    report_bytes: Option<Vec<u8>>,
    social: Snapshot,
    technical: Snapshot,
    drilldown: DrilldownDoc,
}

#[derive(Debug, Clone)]
struct ProjectData {
    info: ProjectInfo,
    info_bytes: Vec<u8>,
    forecast_bytes: Vec<u8>,
    /// index 0 is month 1
    months: Vec<MonthData>,
}

/// Immutable snapshot of an artifact tree, loaded once at startup.
#[derive(Debug, Clone)]
pub struct Tree {
    root: PathBuf,
    projects: BTreeMap<String, ProjectData>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|source| StoreError::Io { path: path.to_owned(), source })
}

fn load_project(root: &Path, id: &str) -> Result<ProjectData, StoreError> {
    let info = store::read_project_info(root, id)?;
    let dir = store::project_dir(root, id);
    let info_bytes = read_bytes(&dir.join("info.json"))?;
    let forecast_path = dir.join("forecast.json");
    let forecast_bytes = if forecast_path.exists() {
        let doc: ForecastDoc = store::load_json(&forecast_path)?;
        if doc.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(StoreError::Load { path: forecast_path, message: "field `probabilities`: value outside [0, 1]".into() });
        }
        read_bytes(&forecast_path)?
    } else {
        to_json_bytes(&ForecastDoc::empty())
    };
    let mut months = Vec::with_capacity(info.months_in_incubation as usize);
    for m in 1..=info.months_in_incubation {
        let bundle = store::read_month_bundle(id, m, root)?;
        let mdir = store::month_dir(root, id, m);
        let report_path = mdir.join("report.json");
        months.push(MonthData {
            social_bytes: read_bytes(&mdir.join(store::network_file(Flavor::Social)))?,
            tech_bytes: read_bytes(&mdir.join(store::network_file(Flavor::Technical)))?,
            metrics_bytes: read_bytes(&mdir.join("metrics.json"))?,
            report_bytes: if report_path.exists() { Some(read_bytes(&report_path)?) } else { None },
            social: bundle.social,
            technical: bundle.technical,
            drilldown: DrilldownDoc { schema: SCHEMA_VERSION, emails: bundle.emails_index, commits: bundle.commits_index },
        });
    }
    Ok(ProjectData { info, info_bytes, forecast_bytes, months })
}

fn parse_month(name: &str, raw: Option<&str>) -> Result<Option<u32>, ApiError> {
    match raw {
        None => Ok(None),
        Some(s) => s
            .trim()
            .parse::<u32>()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("`{name}` must be a month number, got `{s}`"))),
    }
}

/// Query parameters as received; validated by the query functions so that
/// every malformed value yields the same JSON error shape.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct RangeQuery {
    pub flavor: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub month: Option<String>,
    pub dev: Option<String>,
    pub kind: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrillKind {
    Emails,
    Commits,
}

/// Drilldown rows; untagged so a range response is a plain JSON array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DrillRecord {
    Email(EmailRef),
    Commit(CommitRef),
}

impl Tree {
    /// Loads and validates every document of the tree. A tree without
    /// projects is refused.
    pub fn load(root: &Path) -> Result<Tree, ServiceError> {
        if !root.is_dir() {
            return Err(ServiceError::NoTree(root.to_owned()));
        }
        let mut projects = BTreeMap::new();
        for id in store::list_projects(root)? {
            let data = load_project(root, &id)?;
            projects.insert(id, data);
        }
        if projects.is_empty() {
            return Err(ServiceError::EmptyTree(root.to_owned()));
        }
        log::info!("loaded {} projects from {}", projects.len(), root.display());
        Ok(Tree { root: root.to_owned(), projects })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn project(&self, id: &str) -> Result<&ProjectData, ApiError> {
        self.projects.get(id).ok_or_else(|| ApiError::not_found(format!("unknown project `{id}`")))
    }

    /// Validated `from..=to`. `from` defaults to 1 and `to` to `from`.
    fn range(p: &ProjectData, q: &RangeQuery) -> Result<(u32, u32), ApiError> {
        let from = parse_month("from", q.from.as_deref())?.unwrap_or(1);
        let to = parse_month("to", q.to.as_deref())?.unwrap_or(from);
        let months = p.info.months_in_incubation;
        if from == 0 || from > to || to > months {
            return Err(ApiError::bad_request(format!(
                "invalid month range {from}..{to}; project `{}` has months 1..{months}",
                p.info.project_id
            )));
        }
        Ok((from, to))
    }

    pub fn projects(&self) -> Vec<u8> {
        let entries: Vec<ProjectEntry> = self
            .projects
            .values()
            .map(|p| ProjectEntry { project_id: p.info.project_id.clone(), name: p.info.name.clone(), status: p.info.status.into() })
            .collect();
        to_json_bytes(&entries)
    }

    pub fn info(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        Ok(self.project(id)?.info_bytes.clone())
    }

    pub fn forecast(&self, id: &str) -> Result<Vec<u8>, ApiError> {
        Ok(self.project(id)?.forecast_bytes.clone())
    }

    fn parse_flavor(q: &RangeQuery) -> Result<Flavor, ApiError> {
        match q.flavor.as_deref() {
            None => Err(ApiError::bad_request("missing `flavor` (social or tech)")),
            Some(f) => f.parse().map_err(|_| ApiError::bad_request(format!("`flavor` must be social or tech, got `{f}`"))),
        }
    }

    fn aggregated(p: &ProjectData, flavor: Flavor, from: u32, to: u32) -> Result<Snapshot, ApiError> {
        let snaps: Vec<Snapshot> = p.months[from as usize - 1..to as usize]
            .iter()
            .map(|m| match flavor {
                Flavor::Social => m.social.clone(),
                Flavor::Technical => m.technical.clone(),
            })
            .collect();
        aggregate_snapshots(&snaps).map_err(|e| ApiError { status: 500, message: e.to_string() })
    }

    /// A single month is served from the stored file; ranges are aggregated
    /// from the stored months with percentages recomputed.
    pub fn network(&self, id: &str, q: &RangeQuery) -> Result<Vec<u8>, ApiError> {
        let p = self.project(id)?;
        let flavor = Self::parse_flavor(q)?;
        let (from, to) = Self::range(p, q)?;
        if from == to {
            let m = &p.months[from as usize - 1];
            return Ok(match flavor {
                Flavor::Social => m.social_bytes.clone(),
                Flavor::Technical => m.tech_bytes.clone(),
            });
        }
        Ok(to_json_bytes(&NetworkDoc::from_snapshot(&Self::aggregated(p, flavor, from, to)?)))
    }

    /// Range metrics are recomputed on the aggregated networks; averaging
    /// per-month values would be wrong for the nonlinear metrics.
    pub fn metrics(&self, id: &str, q: &RangeQuery) -> Result<Vec<u8>, ApiError> {
        let p = self.project(id)?;
        let (from, to) = Self::range(p, q)?;
        if from == to {
            return Ok(p.months[from as usize - 1].metrics_bytes.clone());
        }
        let social = compute_metrics(&Self::aggregated(p, Flavor::Social, from, to)?);
        let tech = compute_metrics(&Self::aggregated(p, Flavor::Technical, from, to)?);
        Ok(to_json_bytes(&MetricsDoc::new(&social, &tech)))
    }

    /// A month without a report yields an empty report, not a 404.
    pub fn report(&self, id: &str, q: &RangeQuery) -> Result<Vec<u8>, ApiError> {
        let p = self.project(id)?;
        let month = parse_month("month", q.month.as_deref())?
            .ok_or_else(|| ApiError::bad_request("missing `month`"))?;
        if month == 0 || month > p.info.months_in_incubation {
            return Err(ApiError::bad_request(format!(
                "month {month} outside 1..{}",
                p.info.months_in_incubation
            )));
        }
        Ok(match &p.months[month as usize - 1].report_bytes {
            Some(bytes) => bytes.clone(),
            None => to_json_bytes(&ReportDoc { schema: SCHEMA_VERSION, month, text: String::new() }),
        })
    }

    /// One developer's emails or commits over the range, newest first. An
    /// unknown or inactive developer gives an empty list.
    pub fn drilldown_records(&self, id: &str, q: &RangeQuery) -> Result<Vec<DrillRecord>, ApiError> {
        let p = self.project(id)?;
        let dev = q.dev.as_deref().ok_or_else(|| ApiError::bad_request("missing `dev`"))?;
        let kind = match q.kind.as_deref() {
            Some("emails") => DrillKind::Emails,
            Some("commits") => DrillKind::Commits,
            other => {
                return Err(ApiError::bad_request(format!(
                    "`kind` must be emails or commits, got `{}`",
                    other.unwrap_or("")
                )))
            }
        };
        let (from, to) = Self::range(p, q)?;
        let dev = sustain_core::DeveloperId(dev.trim().to_lowercase());
        let mut out = Vec::new();
        for m in p.months[from as usize - 1..to as usize].iter().rev() {
            match kind {
                DrillKind::Emails => {
                    out.extend(m.drilldown.emails.get(&dev).into_iter().flatten().cloned().map(DrillRecord::Email))
                }
                DrillKind::Commits => {
                    out.extend(m.drilldown.commits.get(&dev).into_iter().flatten().cloned().map(DrillRecord::Commit))
                }
            }
        }
        Ok(out)
    }

    pub fn drilldown(&self, id: &str, q: &RangeQuery) -> Result<Vec<u8>, ApiError> {
        self.drilldown_records(id, q).map(|r| to_json_bytes(&r))
    }
}
