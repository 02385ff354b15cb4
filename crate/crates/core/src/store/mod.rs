//! Artifact tree: one directory per project and month holding JSON
//! documents, plus the imported corpus and its summary.
//!
//! ```text
//! <root>/corpus.json               imported corpus (identities resolved)
//! <root>/ingest_errors.txt         one line per rejected row or warning
//! <root>/<project>/info.json
//! <root>/<project>/forecast.json
//! <root>/<project>/<month>/social.json
//! <root>/<project>/<month>/tech.json
//! <root>/<project>/<month>/metrics.json
//! <root>/<project>/<month>/drilldown.json
//! <root>/<project>/<month>/report.json   (only when a report exists)
//! ```

pub mod schema;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{ForecastSeries, LabeledSequence, TurnEvent};
use crate::graph::{build_technical_range, ListPatterns, ProjectWindow, Snapshot, SocialEvents};
use crate::ingest::{
    self, month_index, parse_alias_groups, resolve_identities, Commit, DeveloperId, Email, IdentityMap, IngestError,
    MonthlyReport, ProjectInfo, ProjectStatus, RowError,
};
use crate::metrics::{compute_metrics, feature_sequence, FeatureVector, MetricsRecord};
use schema::{
    round_sig, to_json_bytes, CommitRef, DrilldownDoc, EmailRef, ForecastDoc, InfoDoc, MetricsDoc, NetworkDoc,
    ReportDoc, SCHEMA_VERSION,
};

pub const EMAILS_CSV: &str = "emails.csv";
pub const COMMITS_CSV: &str = "commits.csv";
pub const PROJECTS_CSV: &str = "projects.csv";
pub const REPORTS_CSV: &str = "reports.csv";
pub const ALIASES_FILE: &str = "aliases.txt";
pub const CORPUS_FILE: &str = "corpus.json";
pub const ERRORS_FILE: &str = "ingest_errors.txt";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("missing corpus file {name} in {dir}")]
    MissingFile { name: &'static str, dir: PathBuf },
    #[error("{file}: {source}")]
    Ingest { file: &'static str, source: IngestError },
    #[error("corpus is empty: {0}")]
    EmptyCorpus(String),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot load {path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub schema: u32,
    pub projects: Vec<ProjectInfo>,
    pub emails: Vec<Email>,
    pub commits: Vec<Commit>,
    pub reports: Vec<MonthlyReport>,
    pub identities: IdentityMap,
}

impl Corpus {
    pub fn project(&self, id: &str) -> Option<&ProjectInfo> {
        self.projects.iter().find(|p| p.project_id == id)
    }
}

/// An imported corpus with the diagnostics collected along the way.
#[derive(Debug, Clone)]
pub struct Import {
    pub corpus: Corpus,
    pub errors: Vec<RowError>,
    pub warnings: Vec<String>,
}

impl Import {
    /// Error report text, one line per rejected row followed by warnings.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for e in &self.errors {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        for w in &self.warnings {
            out.push_str("warning: ");
            out.push_str(w);
            out.push('\n');
        }
        out
    }
}

fn open_table(dir: &Path, name: &'static str) -> Result<fs::File, StoreError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(StoreError::MissingFile { name, dir: dir.to_owned() });
    }
    fs::File::open(&path).map_err(io_err(&path))
}

fn check_nonempty<T>(file: &'static str, parsed: &ingest::Parsed<T>) -> Result<(), StoreError> {
    if parsed.records.is_empty() && !parsed.errors.is_empty() {
        return Err(StoreError::Ingest {
            file,
            source: IngestError::NoValidRecords { table: file, errors: parsed.errors.len() },
        });
    }
    Ok(())
}

/// Parses the four corpus tables (and `aliases.txt` when present), drops
/// events outside any known project's incubation window with a warning, and
/// resolves developer identities.
pub fn import_csv_corpus(dir: &Path) -> Result<Import, StoreError> {
    let files = [PROJECTS_CSV, EMAILS_CSV, COMMITS_CSV, REPORTS_CSV].map(|name| open_table(dir, name));
    let [projects_f, emails_f, commits_f, reports_f] = files;
    let (projects_f, emails_f, commits_f, reports_f) = (projects_f?, emails_f?, commits_f?, reports_f?);
    let projects = ingest::parse_project_records(projects_f)
        .map_err(|source| StoreError::Ingest { file: PROJECTS_CSV, source })?;
    let emails = ingest::parse_email_records(emails_f)
        .map_err(|source| StoreError::Ingest { file: EMAILS_CSV, source })?;
    let commits = ingest::parse_commit_records(commits_f)
        .map_err(|source| StoreError::Ingest { file: COMMITS_CSV, source })?;
    let reports = ingest::parse_report_records(reports_f)
        .map_err(|source| StoreError::Ingest { file: REPORTS_CSV, source })?;
    check_nonempty(PROJECTS_CSV, &projects)?;
    check_nonempty(EMAILS_CSV, &emails)?;
    check_nonempty(COMMITS_CSV, &commits)?;
    check_nonempty(REPORTS_CSV, &reports)?;

    let mut errors = Vec::new();
    errors.extend(projects.errors);
    errors.extend(emails.errors);
    errors.extend(commits.errors);
    errors.extend(reports.errors);
    let mut warnings = Vec::new();

    let mut project_list: Vec<ProjectInfo> = Vec::new();
    let mut seen = BTreeMap::new();
    for p in projects.records {
        if seen.insert(p.project_id.clone(), ()).is_some() {
            warnings.push(format!("duplicate project `{}` ignored", p.project_id));
            continue;
        }
        project_list.push(p);
    }
    project_list.sort_by(|a, b| a.project_id.cmp(&b.project_id));
    if project_list.is_empty() {
        return Err(StoreError::EmptyCorpus(format!("{} has no projects", dir.join(PROJECTS_CSV).display())));
    }
    let starts: BTreeMap<&str, &ProjectInfo> = project_list.iter().map(|p| (p.project_id.as_str(), p)).collect();

    let mut keep_event = |kind: &str, id: &str, project: &str, ts| match starts.get(project) {
        None => {
            warnings.push(format!("{kind} `{id}` references unknown project `{project}`; excluded"));
            false
        }
        Some(p) => match month_index(ts, p.incubation_start) {
            Ok(_) => true,
            Err(e) => {
                warnings.push(format!("{kind} `{id}` excluded: {e}"));
                false
            }
        },
    };
    let emails: Vec<Email> = emails
        .records
        .into_iter()
        .filter(|e| keep_event("email", &e.message_id, &e.project_id, e.timestamp))
        .collect();
    let commits: Vec<Commit> = commits
        .records
        .into_iter()
        .filter(|c| keep_event("commit", &c.commit_id, &c.project_id, c.timestamp))
        .collect();

    let mut report_list = Vec::new();
    for r in reports.records {
        match starts.get(r.project_id.as_str()) {
            Some(p) if r.month <= p.months_in_incubation => report_list.push(r),
            Some(p) => warnings.push(format!(
                "report for `{}` month {} outside 1..={} ignored",
                r.project_id, r.month, p.months_in_incubation
            )),
            None => warnings.push(format!("report for unknown project `{}` ignored", r.project_id)),
        }
    }
    report_list.sort_by(|a, b| (&a.project_id, a.month).cmp(&(&b.project_id, b.month)));

    let aliases = {
        let path = dir.join(ALIASES_FILE);
        if path.is_file() {
            Some(parse_alias_groups(&fs::read_to_string(&path).map_err(io_err(&path))?))
        } else {
            None
        }
    };
    let resolution = resolve_identities(&emails, &commits, aliases.as_deref());
    warnings.extend(resolution.warnings);

    let corpus = Corpus {
        schema: SCHEMA_VERSION,
        projects: project_list,
        emails,
        commits,
        reports: report_list,
        identities: resolution.identities,
    };
    Ok(Import { corpus, errors, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub num_projects: usize,
    pub num_graduated: usize,
    pub num_retired: usize,
    pub num_incubating: usize,
    pub num_emails: usize,
    pub num_commits: usize,
    pub mean_months_in_incubation: f64,
}

pub fn dataset_summary(corpus: &Corpus) -> CorpusSummary {
    let count = |s: ProjectStatus| corpus.projects.iter().filter(|p| p.status == s).count();
    let n = corpus.projects.len();
    let months: u64 = corpus.projects.iter().map(|p| u64::from(p.months_in_incubation)).sum();
    CorpusSummary {
        num_projects: n,
        num_graduated: count(ProjectStatus::Graduated),
        num_retired: count(ProjectStatus::Retired),
        num_incubating: count(ProjectStatus::Incubating),
        num_emails: corpus.emails.len(),
        num_commits: corpus.commits.len(),
        mean_months_in_incubation: if n == 0 { 0.0 } else { months as f64 / n as f64 },
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Load { path: path.to_owned(), message: e.to_string() })
}

/// Writes `corpus.json` and the ingest error report into the tree root.
pub fn write_import(import: &Import, root: &Path) -> Result<(), StoreError> {
    write_file(&root.join(CORPUS_FILE), &to_json_bytes(&import.corpus))?;
    write_file(&root.join(ERRORS_FILE), import.report().as_bytes())
}

pub fn read_corpus(root: &Path) -> Result<Corpus, StoreError> {
    let corpus: Corpus = load_json(&root.join(CORPUS_FILE))?;
    if corpus.projects.is_empty() {
        return Err(StoreError::EmptyCorpus(format!("{} has no projects", root.join(CORPUS_FILE).display())));
    }
    Ok(corpus)
}

/// Everything the dashboard shows for one project-month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthBundle {
    pub project_id: String,
    pub month: u32,
    pub social: Snapshot,
    pub technical: Snapshot,
    pub social_metrics: MetricsRecord,
    pub technical_metrics: MetricsRecord,
    pub report: Option<MonthlyReport>,
    pub emails_index: BTreeMap<DeveloperId, Vec<EmailRef>>,
    pub commits_index: BTreeMap<DeveloperId, Vec<CommitRef>>,
}

fn rounded(mut m: MetricsRecord) -> MetricsRecord {
    m.mean_degree = round_sig(m.mean_degree);
    m.clustering_coefficient = round_sig(m.clustering_coefficient);
    m
}

impl MonthBundle {
    /// Assembles a bundle, computing metrics from the snapshots. Real-valued
    /// metrics are held at the stored precision (9 significant digits).
    pub fn new(
        social: Snapshot,
        technical: Snapshot,
        report: Option<MonthlyReport>,
        emails_index: BTreeMap<DeveloperId, Vec<EmailRef>>,
        commits_index: BTreeMap<DeveloperId, Vec<CommitRef>>,
    ) -> Self {
        MonthBundle {
            project_id: social.project_id.clone(),
            month: social.month_from,
            social_metrics: rounded(compute_metrics(&social)),
            technical_metrics: rounded(compute_metrics(&technical)),
            social,
            technical,
            report,
            emails_index,
            commits_index,
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::InvalidBundle(m));
        if self.month == 0 {
            return bad("month must be at least 1".into());
        }
        for s in [&self.social, &self.technical] {
            if s.project_id != self.project_id || s.month_from != self.month || s.month_to != self.month {
                return bad(format!("{} snapshot does not match {} month {}", s.flavor, self.project_id, self.month));
            }
            s.validate().map_err(|e| StoreError::InvalidBundle(e.to_string()))?;
        }
        for m in [&self.social_metrics, &self.technical_metrics] {
            if m.project_id != self.project_id || m.month_from != self.month || m.month_to != self.month {
                return bad(format!("{} metrics do not match {} month {}", m.flavor, self.project_id, self.month));
            }
        }
        if let Some(r) = &self.report {
            if r.project_id != self.project_id || r.month != self.month {
                return bad("report does not match bundle".into());
            }
        }
        Ok(())
    }
}

pub fn project_dir(root: &Path, project_id: &str) -> PathBuf {
    root.join(project_id)
}

pub fn month_dir(root: &Path, project_id: &str, month: u32) -> PathBuf {
    root.join(project_id).join(month.to_string())
}

pub fn network_file(flavor: crate::graph::Flavor) -> &'static str {
    match flavor {
        crate::graph::Flavor::Social => "social.json",
        crate::graph::Flavor::Technical => "tech.json",
    }
}

/// Writes the month's documents under `root/<project>/<month>/`. A stale
/// `report.json` is removed when the bundle has no report.
pub fn write_month_bundle(b: &MonthBundle, root: &Path) -> Result<Vec<PathBuf>, StoreError> {
    b.validate()?;
    let dir = month_dir(root, &b.project_id, b.month);
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), StoreError> {
        let path = dir.join(name);
        write_file(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    put("social.json", to_json_bytes(&NetworkDoc::from_snapshot(&b.social)))?;
    put("tech.json", to_json_bytes(&NetworkDoc::from_snapshot(&b.technical)))?;
    put("metrics.json", to_json_bytes(&MetricsDoc::new(&b.social_metrics, &b.technical_metrics)))?;
    put(
        "drilldown.json",
        to_json_bytes(&DrilldownDoc {
            schema: SCHEMA_VERSION,
            emails: b.emails_index.clone(),
            commits: b.commits_index.clone(),
        }),
    )?;
    match &b.report {
        Some(r) => put("report.json", to_json_bytes(&ReportDoc { schema: SCHEMA_VERSION, month: r.month, text: r.text.clone() }))?,
        None => {
            let stale = dir.join("report.json");
            if stale.exists() {
                fs::remove_file(&stale).map_err(io_err(&stale))?;
            }
        }
    }
    Ok(written)
}

fn check_schema(path: &Path, schema: u32) -> Result<(), StoreError> {
    if schema != SCHEMA_VERSION {
        return Err(StoreError::Load { path: path.to_owned(), message: format!("field `schema`: unsupported version {schema}") });
    }
    Ok(())
}

pub fn read_network(path: &Path) -> Result<Snapshot, StoreError> {
    let doc: NetworkDoc = load_json(path)?;
    check_schema(path, doc.schema)?;
    doc.to_snapshot().map_err(|message| StoreError::Load { path: path.to_owned(), message })
}

pub fn read_metrics(path: &Path) -> Result<(MetricsRecord, MetricsRecord), StoreError> {
    let doc: MetricsDoc = load_json(path)?;
    check_schema(path, doc.schema)?;
    Ok(doc.records())
}

pub fn read_month_bundle(project_id: &str, month: u32, root: &Path) -> Result<MonthBundle, StoreError> {
    let dir = month_dir(root, project_id, month);
    let social = read_network(&dir.join("social.json"))?;
    let technical = read_network(&dir.join("tech.json"))?;
    let metrics_path = dir.join("metrics.json");
    let (social_metrics, technical_metrics) = read_metrics(&metrics_path)?;
    let drill_path = dir.join("drilldown.json");
    let drill: DrilldownDoc = load_json(&drill_path)?;
    check_schema(&drill_path, drill.schema)?;
    let report_path = dir.join("report.json");
    let report = if report_path.exists() {
        let doc: ReportDoc = load_json(&report_path)?;
        check_schema(&report_path, doc.schema)?;
        Some(MonthlyReport { project_id: project_id.to_owned(), month: doc.month, text: doc.text })
    } else {
        None
    };
    let bundle = MonthBundle {
        project_id: project_id.to_owned(),
        month,
        social,
        technical,
        social_metrics,
        technical_metrics,
        report,
        emails_index: drill.emails,
        commits_index: drill.commits,
    };
    bundle.validate().map_err(|e| StoreError::Load { path: dir.clone(), message: e.to_string() })?;
    Ok(bundle)
}

pub fn write_project_info(info: &ProjectInfo, root: &Path) -> Result<(), StoreError> {
    write_file(&project_dir(root, &info.project_id).join("info.json"), &to_json_bytes(&InfoDoc::from_info(info)))
}

pub fn read_project_info(root: &Path, project_id: &str) -> Result<ProjectInfo, StoreError> {
    let path = project_dir(root, project_id).join("info.json");
    let doc: InfoDoc = load_json(&path)?;
    check_schema(&path, doc.schema)?;
    Ok(doc.to_info())
}

pub fn write_forecast(root: &Path, series: &ForecastSeries, turns: &[TurnEvent]) -> Result<(), StoreError> {
    let path = project_dir(root, &series.project_id).join("forecast.json");
    write_file(&path, &to_json_bytes(&ForecastDoc::new(series, turns)))
}

fn write_empty_forecast(root: &Path, project_id: &str) -> Result<(), StoreError> {
    write_file(&project_dir(root, project_id).join("forecast.json"), &to_json_bytes(&ForecastDoc::empty()))
}

/// Builds every month bundle of one project from the corpus.
pub fn project_bundles(corpus: &Corpus, info: &ProjectInfo, list_patterns: &ListPatterns) -> Vec<MonthBundle> {
    let window = ProjectWindow { project_id: &info.project_id, incubation_start: info.incubation_start };
    let ids = &corpus.identities;
    let social = SocialEvents::new(&corpus.emails, ids, list_patterns, window);
    let commits: Vec<Commit> = corpus.commits.iter().filter(|c| c.project_id == info.project_id).cloned().collect();

    let mut emails_by_month: BTreeMap<u32, BTreeMap<DeveloperId, Vec<EmailRef>>> = BTreeMap::new();
    for e in corpus.emails.iter().filter(|e| e.project_id == info.project_id) {
        if let Ok(m) = month_index(e.timestamp, info.incubation_start) {
            emails_by_month.entry(m).or_default().entry(ids.resolve_or_self(&e.sender)).or_default().push(EmailRef {
                message_id: e.message_id.clone(),
                ts: e.timestamp,
                subject: e.subject.clone(),
            });
        }
    }
    let mut commits_by_month: BTreeMap<u32, BTreeMap<DeveloperId, Vec<CommitRef>>> = BTreeMap::new();
    for c in &commits {
        if let Ok(m) = month_index(c.timestamp, info.incubation_start) {
            commits_by_month.entry(m).or_default().entry(ids.resolve_or_self(&c.author)).or_default().push(CommitRef {
                commit_id: c.commit_id.clone(),
                ts: c.timestamp,
                files: c.files.clone(),
            });
        }
    }
    for per_dev in emails_by_month.values_mut() {
        for list in per_dev.values_mut() {
            list.sort_by(|a, b| (b.ts, &b.message_id).cmp(&(a.ts, &a.message_id)));
        }
    }
    for per_dev in commits_by_month.values_mut() {
        for list in per_dev.values_mut() {
            list.sort_by(|a, b| (b.ts, &b.commit_id).cmp(&(a.ts, &a.commit_id)));
        }
    }

    (1..=info.months_in_incubation)
        .map(|m| {
            let report = corpus
                .reports
                .iter()
                .rfind(|r| r.project_id == info.project_id && r.month == m)
                .cloned();
            MonthBundle::new(
                social.snapshot(m, m),
                build_technical_range(&commits, ids, window, m, m),
                report,
                emails_by_month.remove(&m).unwrap_or_default(),
                commits_by_month.remove(&m).unwrap_or_default(),
            )
        })
        .collect()
}

/// Writes `info.json`, an empty `forecast.json` and all month bundles for
/// every project. Projects are built in parallel, one writer per directory.
pub fn build_tree(root: &Path, list_patterns: &ListPatterns) -> Result<usize, StoreError> {
    let corpus = read_corpus(root)?;
    let counts: Vec<usize> = corpus
        .projects
        .par_iter()
        .map(|info| -> Result<usize, StoreError> {
            write_project_info(info, root)?;
            write_empty_forecast(root, &info.project_id)?;
            let bundles = project_bundles(&corpus, info, list_patterns);
            for b in &bundles {
                write_month_bundle(b, root)?;
            }
            Ok(bundles.len())
        })
        .collect::<Result<_, _>>()?;
    Ok(counts.iter().sum())
}

/// Project ids present in the tree (directories with an `info.json`), sorted.
pub fn list_projects(root: &Path) -> Result<Vec<String>, StoreError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.path().join("info.json").is_file() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Monthly feature vectors of a project, read back from its stored metrics.
pub fn load_features(root: &Path, info: &ProjectInfo) -> Result<Vec<FeatureVector>, StoreError> {
    let mut social = Vec::new();
    let mut technical = Vec::new();
    for m in 1..=info.months_in_incubation {
        let path = month_dir(root, &info.project_id, m).join("metrics.json");
        if path.exists() {
            let (s, t) = read_metrics(&path)?;
            social.push(s);
            technical.push(t);
        }
    }
    Ok(feature_sequence(&social, &technical, info.months_in_incubation))
}

/// Labeled sequences for every concluded project in the tree.
pub fn load_training_set(root: &Path) -> Result<Vec<(String, LabeledSequence)>, StoreError> {
    let mut out = Vec::new();
    for id in list_projects(root)? {
        let info = read_project_info(root, &id)?;
        if let Some(label) = info.status.label() {
            out.push((id, LabeledSequence { features: load_features(root, &info)?, label }));
        }
    }
    Ok(out)
}
