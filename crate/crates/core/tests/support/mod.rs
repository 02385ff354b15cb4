//! Random fixtures and brute-force oracles shared by the integration tests.
//! The oracles deliberately avoid the library's own helpers for anything
//! derived, reply matching and projections included.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sustain_core::forecast::{loss_and_gradients, ForecastModel, Hyperparams, LabeledSequence, Mode, Normalization};
use sustain_core::graph::{Flavor, Snapshot};
use sustain_core::metrics::FeatureVector;
use sustain_core::ingest::{Commit, Email, IdentityMap};

pub const PROJECT: &str = "alpha";
pub const OTHER_PROJECT: &str = "beta";

/// Incubation starts in November so month windows cross a year boundary.
pub fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2012, 11, 1).unwrap()
}

pub const LISTS: [&str; 4] = [
    "dev@alpha.incubator.apache.org",
    "commits@alpha.incubator.apache.org",
    "user@apache.org",
    "private@apache.org",
];

/// (path, expected file type)
pub const FILES: [(&str, &str); 9] = [
    ("src/Main.java", ".java"),
    ("src/util/Helper.JAVA", ".java"),
    ("pom.xml", ".xml"),
    ("docs/index.md", ".md"),
    ("README", "(none)"),
    ("conf/.hidden", "(none)"),
    ("build/archive.tar.gz", ".gz"),
    ("web/app.js", ".js"),
    ("dir.d/Makefile", "(none)"),
];

#[derive(Debug, Clone)]
pub struct RandomCorpus {
    pub emails: Vec<Email>,
    pub commits: Vec<Commit>,
    pub months: u32,
}

fn dev_address(rng: &mut ChaCha8Rng, i: usize) -> String {
    // Mixed case variants of one address must collapse to one developer.
    match rng.random_range(0..4) {
        0 => format!("Dev{i}@Example.ORG"),
        _ => format!("dev{i}@example.org"),
    }
}

fn timestamp(rng: &mut ChaCha8Rng, month: i32) -> DateTime<Utc> {
    let s = start_date();
    let total = s.year() * 12 + s.month0() as i32 + month - 1;
    let (y, m) = (total.div_euclid(12), total.rem_euclid(12) as u32 + 1);
    // A coarse clock makes equal timestamps reasonably common.
    Utc.with_ymd_and_hms(y, m, rng.random_range(1..=28), rng.random_range(0..3) * 8, 0, 0).unwrap()
}

/// Small corpus: up to 10 developers over up to 5 months, plus some noise
/// (another project, a message before incubation).
pub fn random_corpus(seed: u64) -> RandomCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let devs = rng.random_range(2..=10usize);
    let months = rng.random_range(1..=5u32);
    let n_emails = rng.random_range(0..=40usize);
    let mut emails: Vec<Email> = Vec::new();
    for k in 0..n_emails {
        let project = if rng.random_bool(0.1) { OTHER_PROJECT } else { PROJECT };
        let month = if rng.random_bool(0.05) { 0 } else { rng.random_range(1..=months as i32) };
        let mut recipients = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            if rng.random_bool(0.5) {
                recipients.push(LISTS.choose(&mut rng).unwrap().to_string());
            } else {
                let d = rng.random_range(0..devs);
                recipients.push(dev_address(&mut rng, d));
            }
        }
        let topic = rng.random_range(0..4);
        let prefix = ["", "", "Re: ", "RE: re: ", "Aw: ", "re:"].choose(&mut rng).unwrap();
        let reply_to_id = match rng.random_range(0..10) {
            0..=2 if !emails.is_empty() => Some(emails.choose(&mut rng).unwrap().message_id.clone()),
            3 => Some(format!("<missing-{k}>")),
            _ => None,
        };
        let sender_idx = rng.random_range(0..devs);
        emails.push(Email {
            message_id: format!("<m{k}@example.org>"),
            project_id: project.to_string(),
            sender: dev_address(&mut rng, sender_idx),
            recipients,
            reply_to_id,
            timestamp: timestamp(&mut rng, month),
            subject: format!("{prefix}Topic {topic}"),
            body: String::new(),
        });
    }
    let n_commits = rng.random_range(0..=25usize);
    let commits = (0..n_commits)
        .map(|k| {
            let month = if rng.random_bool(0.05) { 0 } else { rng.random_range(1..=months as i32) };
            let nfiles = rng.random_range(0..=4);
            Commit {
                commit_id: format!("c{k}"),
                project_id: if rng.random_bool(0.1) { OTHER_PROJECT } else { PROJECT }.to_string(),
                author: {
                    let d = rng.random_range(0..devs);
                    dev_address(&mut rng, d)
                },
                timestamp: timestamp(&mut rng, month),
                files: (0..nfiles).map(|_| FILES.choose(&mut rng).unwrap().0.to_string()).collect(),
            }
        })
        .collect();
    RandomCorpus { emails, commits, months }
}

/// Month of a timestamp counted from the incubation start, 1-based; `None`
/// before the start.
pub fn oracle_month(ts: DateTime<Utc>) -> Option<u32> {
    let s = start_date();
    let d = (ts.year() - s.year()) * 12 + ts.month() as i32 - s.month() as i32;
    (d >= 0).then(|| d as u32 + 1)
}

fn is_list(addr: &str) -> bool {
    LISTS.contains(&addr.to_lowercase().as_str())
}

fn plain_subject(s: &str) -> (String, bool) {
    let mut s = s.to_lowercase();
    let mut prefixed = false;
    loop {
        let t = s.trim_start().to_string();
        if let Some(rest) = t.strip_prefix("re:").or_else(|| t.strip_prefix("aw:")) {
            s = rest.to_string();
            prefixed = true;
        } else {
            return (t.trim().to_string(), prefixed);
        }
    }
}

fn oracle_parent<'a>(e: &Email, project: &[&'a Email]) -> Option<&'a Email> {
    if let Some(id) = &e.reply_to_id {
        if let Some(p) = project.iter().find(|p| &p.message_id == id) {
            return (p.message_id != e.message_id).then_some(*p);
        }
    }
    let (subject, prefixed) = plain_subject(&e.subject);
    if !prefixed {
        return None;
    }
    project
        .iter()
        .filter(|p| p.timestamp < e.timestamp && plain_subject(&p.subject).0 == subject)
        .max_by(|a, b| (a.timestamp, &a.message_id).cmp(&(b.timestamp, &b.message_id)))
        .copied()
}

/// Brute-force social edge weights of `PROJECT` over `from..=to`.
pub fn oracle_social(c: &RandomCorpus, ids: &IdentityMap, from: u32, to: u32) -> BTreeMap<(String, String), u64> {
    let project: Vec<&Email> = c.emails.iter().filter(|e| e.project_id == PROJECT).collect();
    let who = |a: &str| ids.resolve_or_self(a).0;
    let mut w = BTreeMap::new();
    for e in &project {
        let Some(m) = oracle_month(e.timestamp) else { continue };
        if m < from || m > to {
            continue;
        }
        let sender = who(&e.sender);
        let mut seen = BTreeSet::new();
        for r in e.recipients.iter().filter(|r| !is_list(r)) {
            let t = who(r);
            if t != sender && seen.insert(t.clone()) {
                *w.entry((sender.clone(), t)).or_insert(0) += 1;
            }
        }
        if let Some(p) = oracle_parent(e, &project) {
            let broadcast = p.recipients.iter().all(|r| is_list(r));
            let origin = who(&p.sender);
            if broadcast && origin != sender {
                *w.entry((origin, sender.clone())).or_insert(0) += 1;
            }
        }
    }
    w
}

/// Brute-force technical edge weights of `PROJECT` over `from..=to`.
pub fn oracle_technical(c: &RandomCorpus, ids: &IdentityMap, from: u32, to: u32) -> BTreeMap<(String, String), u64> {
    let mut w = BTreeMap::new();
    for commit in c.commits.iter().filter(|c| c.project_id == PROJECT) {
        let Some(m) = oracle_month(commit.timestamp) else { continue };
        if m < from || m > to {
            continue;
        }
        for f in &commit.files {
            let ty = FILES.iter().find(|(p, _)| p == f).unwrap().1;
            *w.entry((ids.resolve_or_self(&commit.author).0, ty.to_string())).or_insert(0) += 1;
        }
    }
    w
}

pub fn snapshot_weights(s: &Snapshot) -> BTreeMap<(String, String), u64> {
    s.edges.iter().map(|e| ((e.source.clone(), e.target.clone()), e.weight)).collect()
}

/// Random bipartite snapshot. Social right nodes are drawn from the same
/// developer pool as the left ones.
pub fn random_snapshot(rng: &mut ChaCha8Rng, flavor: Flavor, month: u32) -> Snapshot {
    let devs = rng.random_range(1..=12usize);
    let right: Vec<String> = match flavor {
        Flavor::Social => (0..devs).map(|i| format!("d{i}@x.org")).collect(),
        Flavor::Technical => [".java", ".xml", ".md", "(none)", ".js"].iter().map(|s| s.to_string()).collect(),
    };
    let mut w = BTreeMap::new();
    for _ in 0..rng.random_range(0..=30) {
        let s = format!("d{}@x.org", rng.random_range(0..devs));
        let t = right.choose(rng).unwrap().clone();
        if s != t {
            *w.entry((s, t)).or_insert(0) += rng.random_range(1..=5u64);
        }
    }
    Snapshot::from_weights(PROJECT, flavor, month, month, w)
}

/// Developer projection by pairwise search for a shared hub.
pub fn oracle_projection(s: &Snapshot) -> (Vec<String>, BTreeSet<(String, String)>) {
    let touches = |d: &str, hub: &str| -> bool {
        s.edges.iter().any(|e| match s.flavor {
            Flavor::Technical => e.source == d && e.target == hub,
            Flavor::Social => e.source != e.target && ((e.source == d && e.target == hub) || (e.target == d && e.source == hub)),
        })
    };
    let vertices: BTreeSet<String> = match s.flavor {
        Flavor::Technical => s.left_nodes.iter().cloned().collect(),
        Flavor::Social => s.left_nodes.iter().chain(&s.right_nodes).cloned().collect(),
    };
    let hubs: BTreeSet<String> = match s.flavor {
        Flavor::Technical => s.right_nodes.iter().cloned().collect(),
        Flavor::Social => vertices.clone(),
    };
    let vertices: Vec<String> = vertices.into_iter().collect();
    let mut edges = BTreeSet::new();
    for (i, u) in vertices.iter().enumerate() {
        for v in &vertices[i + 1..] {
            if hubs.iter().any(|h| h != u && h != v && touches(u, h) && touches(v, h)) {
                edges.insert((u.clone(), v.clone()));
            }
        }
    }
    (vertices, edges)
}

/// Mean local clustering by explicit triangle enumeration.
pub fn oracle_clustering(vertices: &[String], edges: &BTreeSet<(String, String)>) -> f64 {
    let n = vertices.len();
    if n == 0 {
        return 0.0;
    }
    let adj = |a: usize, b: usize| {
        let (x, y) = (&vertices[a], &vertices[b]);
        edges.contains(&(x.clone(), y.clone())) || edges.contains(&(y.clone(), x.clone()))
    };
    let mut total = 0.0;
    for v in 0..n {
        let k = (0..n).filter(|&u| u != v && adj(u, v)).count();
        if k < 2 {
            continue;
        }
        let mut tri = 0usize;
        for a in 0..n {
            for b in a + 1..n {
                if a != v && b != v && adj(v, a) && adj(v, b) && adj(a, b) {
                    tri += 1;
                }
            }
        }
        total += tri as f64 / (k * (k - 1) / 2) as f64;
    }
    total / n as f64
}

pub fn random_features(rng: &mut ChaCha8Rng, len: usize) -> Vec<FeatureVector> {
    (0..len)
        .map(|_| {
            let mut v = [0.0; 8];
            for x in v.iter_mut() {
                *x = rng.random_range(-2.0..2.0);
            }
            FeatureVector(v)
        })
        .collect()
}

fn random_batch(rng: &mut ChaCha8Rng) -> Vec<LabeledSequence> {
    (0..rng.random_range(1..=3))
        .map(|_| {
            let len = rng.random_range(1..=6);
            LabeledSequence { features: random_features(rng, len), label: rng.random_range(0..=1) }
        })
        .collect()
}

/// Input-3 / hidden-4 model with randomized biases so every bias gradient
/// is exercised.
pub fn small_model(seed: u64, dropout: f64) -> ForecastModel {
    let hp = Hyperparams { hidden_dim: 4, dropout_rate: dropout, ..Hyperparams::default() };
    let mut m = ForecastModel::initialize(3, hp, Normalization::identity(3), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for b in m.lstm.bias.iter_mut().chain(m.dense_bias.iter_mut()) {
        *b += rng.random_range(-0.5..0.5);
    }
    m
}

/// Central differences of the batch loss for every trainable parameter.
pub fn numeric_gradient(m: &ForecastModel, batch: &[LabeledSequence], mode: Mode) -> Vec<Vec<f64>> {
    let eps = 1e-5;
    (0..4)
        .map(|tensor| {
            (0..m.tensors()[tensor].len())
                .map(|i| {
                    let mut plus = m.clone();
                    plus.tensors_mut()[tensor][i] += eps;
                    let mut minus = m.clone();
                    minus.tensors_mut()[tensor][i] -= eps;
                    let lp = loss_and_gradients(&plus, batch, mode).unwrap().0;
                    let lm = loss_and_gradients(&minus, batch, mode).unwrap().0;
                    (lp - lm) / (2.0 * eps)
                })
                .collect()
        })
        .collect()
}

/// Worst relative error between analytic and numeric gradients over
/// `draws` random models and batches; odd draws use dropout.
pub fn worst_gradient_error(draws: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let m = small_model(draw, if draw % 2 == 0 { 0.0 } else { 0.3 });
        let batch = random_batch(&mut rng);
        let mode = Mode::Train { seed: 1000 + draw };
        let (_, analytic) = loss_and_gradients(&m, &batch, mode).unwrap();
        let numeric = numeric_gradient(&m, &batch, mode);
        for (a_t, n_t) in analytic.tensors().iter().zip(&numeric) {
            for (a, n) in a_t.iter().zip(n_t) {
                worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
            }
        }
    }
    worst
}
