//! Seeded synthetic corpora in the CSV interchange format.
//!
//! Each project has a fixed developer pool. Every month each developer is
//! active with a probability taken from the activity curve; active
//! developers send a Poisson number of emails (broadcast to the dev list or
//! direct to one or two peers) and make a Poisson number of commits.
//! Broadcasts draw replies from other active developers.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{COMMIT_COLUMNS, EMAIL_COLUMNS, LIST_SEPARATOR, PROJECT_COLUMNS, REPORT_COLUMNS};
use crate::store::{COMMITS_CSV, EMAILS_CSV, PROJECTS_CSV, REPORTS_CSV};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelRule {
    /// Graduates ramp activity up over incubation, retirees ramp it down.
    GrowingGraduates,
    /// Labels drawn at random; activity follows the curve unchanged.
    Random,
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: u32,
    pub max: u32,
}

/// Linear ramp from `start` (month 1) to `end` (final month).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub start: f64,
    pub end: f64,
}

impl Curve {
    pub fn at(&self, month: u32, months: u32) -> f64 {
        if months <= 1 {
            return self.start;
        }
        let t = f64::from(month - 1) / f64::from(months - 1);
        self.start + (self.end - self.start) * t
    }

    fn reversed(self) -> Curve {
        Curve { start: self.end, end: self.start }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    /// Probability a developer is active in a month.
    pub active_fraction: Curve,
    pub emails_per_dev_month: Curve,
    pub commits_per_dev_month: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub num_projects: u32,
    pub months: Span,
    pub developers: Span,
    pub label_rule: LabelRule,
    pub activity: Activity,
    #[serde(default = "default_broadcast_prob")]
    pub broadcast_prob: f64,
    #[serde(default = "default_reply_prob")]
    pub reply_prob: f64,
    pub seed: u64,
}

fn default_broadcast_prob() -> f64 {
    0.5
}

fn default_reply_prob() -> f64 {
    0.5
}

impl GenSpec {
    /// 40 projects of 12 to 24 months. Activity rises over incubation for
    /// graduates and falls for retirees.
    pub fn growing_graduates(seed: u64) -> Self {
        GenSpec {
            num_projects: 40,
            months: Span { min: 12, max: 24 },
            developers: Span { min: 5, max: 10 },
            label_rule: LabelRule::GrowingGraduates,
            activity: Activity {
                active_fraction: Curve { start: 0.25, end: 0.95 },
                emails_per_dev_month: Curve { start: 0.5, end: 4.0 },
                commits_per_dev_month: Curve { start: 0.5, end: 4.0 },
            },
            broadcast_prob: default_broadcast_prob(),
            reply_prob: default_reply_prob(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let err = |m: &str| Err(GenError::Spec(m.to_owned()));
        if self.num_projects == 0 {
            return err("num_projects must be at least 1");
        }
        if self.months.min == 0 || self.months.min > self.months.max {
            return err("months range must be non-empty and start at 1 or more");
        }
        if self.developers.min == 0 || self.developers.min > self.developers.max {
            return err("developers range must be non-empty and start at 1 or more");
        }
        for p in [self.broadcast_prob, self.reply_prob] {
            if !(0.0..=1.0).contains(&p) {
                return err("probabilities must lie in [0, 1]");
            }
        }
        let a = &self.activity;
        for c in [a.active_fraction, a.emails_per_dev_month, a.commits_per_dev_month] {
            if !(c.start.is_finite() && c.end.is_finite()) || c.start < 0.0 || c.end < 0.0 {
                return err("activity curves must be finite and non-negative");
            }
        }
        if a.active_fraction.start > 1.0 || a.active_fraction.end > 1.0 {
            return err("active_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// In-memory CSV text of a generated corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedCorpus {
    pub projects_csv: String,
    pub emails_csv: String,
    pub commits_csv: String,
    pub reports_csv: String,
}

const EXTENSIONS: [&str; 8] = ["java", "xml", "md", "html", "py", "js", "properties", "txt"];
const DIRS: [&str; 4] = ["src/main", "src/test", "docs", "conf"];

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u32).unwrap_or(0)
}

fn add_months(d: NaiveDate, months: u32) -> NaiveDate {
    let total = d.year() * 12 + d.month0() as i32 + months as i32;
    NaiveDate::from_ymd_opt(total.div_euclid(12), total.rem_euclid(12) as u32 + 1, 1).expect("valid date")
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, GenError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| GenError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn generate(spec: &GenSpec) -> Result<GeneratedCorpus, GenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut projects = Vec::new();
    let mut emails = Vec::new();
    let mut commits = Vec::new();
    let mut reports = Vec::new();
    let base = NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date");

    for k in 0..spec.num_projects {
        let pid = format!("proj{:03}", k + 1);
        let months = rng.random_range(spec.months.min..=spec.months.max);
        let n_devs = rng.random_range(spec.developers.min..=spec.developers.max);
        let graduated = match spec.label_rule {
            LabelRule::GrowingGraduates => k % 2 == 0,
            LabelRule::Random => rng.random_bool(0.5),
        };
        let start_month = add_months(base, rng.random_range(0..36));
        let start = start_month + Duration::days(rng.random_range(0..28));
        let mut curves = spec.activity.clone();
        if spec.label_rule == LabelRule::GrowingGraduates && !graduated {
            curves.active_fraction = curves.active_fraction.reversed();
            curves.emails_per_dev_month = curves.emails_per_dev_month.reversed();
            curves.commits_per_dev_month = curves.commits_per_dev_month.reversed();
        }
        projects.push(vec![
            pid.clone(),
            format!("Project {}", k + 1),
            format!("https://{pid}.example.org"),
            if graduated { "graduated" } else { "retired" }.to_owned(),
            "incubator".to_owned(),
            format!("Synthetic project {} with {n_devs} developers", k + 1),
            start.format("%Y-%m-%d").to_string(),
            months.to_string(),
        ]);
        let devs: Vec<String> = (0..n_devs).map(|d| format!("dev{}.{pid}@example.org", d + 1)).collect();
        let list = format!("dev@{pid}.incubator.apache.org");
        let mut msg_no = 0u32;
        let mut commit_no = 0u32;

        for m in 1..=months {
            let month_start = add_months(start_month, m - 1);
            let at = |rng: &mut ChaCha8Rng, day_lo: u32| {
                let day = rng.random_range(day_lo..=20);
                let secs = rng.random_range(0..86_400);
                Utc.from_utc_datetime(&month_start.and_hms_opt(0, 0, 0).unwrap())
                    + Duration::days(i64::from(day))
                    + Duration::seconds(secs)
            };
            let p_active = curves.active_fraction.at(m, months).clamp(0.0, 1.0);
            let active: Vec<usize> = (0..devs.len()).filter(|_| rng.random_bool(p_active)).collect();
            for &d in &active {
                let n_mail = poisson(&mut rng, curves.emails_per_dev_month.at(m, months));
                for _ in 0..n_mail {
                    msg_no += 1;
                    let id = format!("<{pid}.m{msg_no}@mail.example.org>");
                    let ts = at(&mut rng, 0);
                    let subject = format!("Topic {msg_no} of {pid}");
                    let peers: Vec<usize> = (0..devs.len()).filter(|&x| x != d).collect();
                    let broadcast = peers.is_empty() || rng.random_bool(spec.broadcast_prob);
                    let recipients = if broadcast {
                        list.clone()
                    } else {
                        let n = rng.random_range(1..=2.min(peers.len()));
                        let mut chosen: Vec<usize> = peers.choose_multiple(&mut rng, n).copied().collect();
                        chosen.sort_unstable();
                        chosen.iter().map(|&x| devs[x].clone()).collect::<Vec<_>>().join(&LIST_SEPARATOR.to_string())
                    };
                    emails.push(vec![
                        id.clone(),
                        pid.clone(),
                        devs[d].clone(),
                        recipients,
                        String::new(),
                        ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                        subject.clone(),
                        format!("Message {msg_no} from {}", devs[d]),
                    ]);
                    if broadcast {
                        let mut repliers: Vec<usize> = active.iter().copied().filter(|&x| x != d).collect();
                        repliers.shuffle(&mut rng);
                        for r in repliers {
                            if !rng.random_bool(spec.reply_prob) {
                                continue;
                            }
                            msg_no += 1;
                            let reply_ts = ts + Duration::minutes(rng.random_range(1..600));
                            emails.push(vec![
                                format!("<{pid}.m{msg_no}@mail.example.org>"),
                                pid.clone(),
                                devs[r].clone(),
                                list.clone(),
                                id.clone(),
                                reply_ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                                format!("Re: {subject}"),
                                format!("Reply {msg_no} from {}", devs[r]),
                            ]);
                        }
                    }
                }
                let n_commit = poisson(&mut rng, curves.commits_per_dev_month.at(m, months));
                for _ in 0..n_commit {
                    commit_no += 1;
                    let n_files = rng.random_range(1..=3);
                    let files: Vec<String> = (0..n_files)
                        .map(|f| {
                            let ext = EXTENSIONS.choose(&mut rng).unwrap();
                            let dir = DIRS.choose(&mut rng).unwrap();
                            format!("{dir}/File{commit_no}_{f}.{ext}")
                        })
                        .collect();
                    commits.push(vec![
                        format!("{pid}-c{commit_no:05}"),
                        pid.clone(),
                        devs[d].clone(),
                        at(&mut rng, 0).to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                        files.join(&LIST_SEPARATOR.to_string()),
                    ]);
                }
            }
            reports.push(vec![
                pid.clone(),
                m.to_string(),
                format!("{pid} month {m}: {} active developers.", active.len()),
            ]);
        }
    }

    Ok(GeneratedCorpus {
        projects_csv: csv_text(&PROJECT_COLUMNS, projects)?,
        emails_csv: csv_text(&EMAIL_COLUMNS, emails)?,
        commits_csv: csv_text(&COMMIT_COLUMNS, commits)?,
        reports_csv: csv_text(&REPORT_COLUMNS, reports)?,
    })
}

/// Generates a corpus and writes the four CSV files into `dir`.
pub fn generate_synthetic_corpus(spec: &GenSpec, dir: &Path) -> Result<GeneratedCorpus, GenError> {
    let corpus = generate(spec)?;
    fs::create_dir_all(dir)?;
    for (name, text) in [
        (PROJECTS_CSV, &corpus.projects_csv),
        (EMAILS_CSV, &corpus.emails_csv),
        (COMMITS_CSV, &corpus.commits_csv),
        (REPORTS_CSV, &corpus.reports_csv),
    ] {
        fs::File::create(dir.join(name))?.write_all(text.as_bytes())?;
    }
    Ok(corpus)
}
