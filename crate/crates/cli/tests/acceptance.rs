//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
//! below. Run with `cargo test -p sustain-cli --test acceptance -- --nocapture`
//! to see the report.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::fs;
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use sustain_core::corpusgen::{generate_synthetic_corpus, GenSpec, Span};
use sustain_core::forecast::{
    self, detect_turns, forward, loss_and_gradients, ForecastModel, Hyperparams, LabeledSequence, Mode, Normalization,
    TurnKind,
};
use sustain_core::graph::{aggregate_snapshots, build_social_range, build_technical_range, Flavor, ListPatterns, ProjectWindow};
use sustain_core::ingest::resolve_identities;
use sustain_core::metrics::{clustering_coefficient, compute_metrics, node_percentages, UndirectedGraph};
use sustain_core::store::schema::{ForecastDoc, MetricsDoc};
use sustain_core::store::{self, read_month_bundle, write_month_bundle};
use sustain_core::{ForecastSeries, MonthBundle};
use support::*;

const CORPORA: u64 = 120;
const NETWORK_BUDGET: Duration = Duration::from_secs(10);
const METRIC_TOL: f64 = 1e-12;
const PCT_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-4;
const FD_DRAWS: u64 = 20;
const SOFTMAX_TOL: f64 = 1e-9;
const LN2_TOL: f64 = 1e-12;
const E2E_BUDGET: Duration = Duration::from_secs(300);
const MIN_ACCURACY: f64 = 0.9;
const E2E_SEED: u64 = 2024;
const STORM: usize = 1000;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn window() -> ProjectWindow<'static> {
    ProjectWindow { project_id: PROJECT, incubation_start: start_date() }
}

fn network_oracle() -> Check {
    let t0 = Instant::now();
    let patterns = ListPatterns::default();
    let mut months = 0;
    for seed in 0..CORPORA {
        let c = random_corpus(seed);
        let ids = resolve_identities(&c.emails, &c.commits, None).identities;
        for m in 1..=c.months {
            let s = build_social_range(&c.emails, &ids, &patterns, window(), m, m);
            ensure(snapshot_weights(&s) == oracle_social(&c, &ids, m, m), format!("social mismatch, corpus {seed} month {m}"))?;
            let t = build_technical_range(&c.commits, &ids, window(), m, m);
            ensure(snapshot_weights(&t) == oracle_technical(&c, &ids, m, m), format!("tech mismatch, corpus {seed} month {m}"))?;
            months += 1;
        }
    }
    let took = t0.elapsed();
    ensure(took < NETWORK_BUDGET, format!("took {took:?}"))?;
    Ok(format!("{CORPORA} corpora, {months} project-months, {took:.2?}"))
}

fn range_consistency() -> Check {
    let patterns = ListPatterns::default();
    let mut ranges = 0;
    for seed in 0..CORPORA {
        let c = random_corpus(seed);
        let ids = resolve_identities(&c.emails, &c.commits, None).identities;
        for from in 1..=c.months {
            for to in from..=c.months {
                let singles: Vec<_> = (from..=to).map(|m| build_social_range(&c.emails, &ids, &patterns, window(), m, m)).collect();
                let direct = build_social_range(&c.emails, &ids, &patterns, window(), from, to);
                ensure(aggregate_snapshots(&singles).map_err(|e| e.to_string())? == direct, format!("social {seed} {from}..{to}"))?;
                let singles: Vec<_> = (from..=to).map(|m| build_technical_range(&c.commits, &ids, window(), m, m)).collect();
                let direct = build_technical_range(&c.commits, &ids, window(), from, to);
                ensure(aggregate_snapshots(&singles).map_err(|e| e.to_string())? == direct, format!("tech {seed} {from}..{to}"))?;
                ranges += 1;
            }
        }
    }
    Ok(format!("{ranges} ranges over {CORPORA} corpora, exact"))
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let n = rng.random_range(0..=20usize);
        let p = rng.random_range(0.0..1.0);
        let vertices: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
        let mut edges = std::collections::BTreeSet::new();
        let mut g = UndirectedGraph::new();
        for v in &vertices {
            g.add_vertex(v);
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(p) {
                    edges.insert((vertices[i].clone(), vertices[j].clone()));
                    g.add_edge(&vertices[i], &vertices[j]);
                }
            }
        }
        worst = worst.max((clustering_coefficient(&g) - oracle_clustering(&vertices, &edges)).abs());
    }
    ensure(worst <= METRIC_TOL, format!("clustering error {worst:e}"))?;

    let mut pct_worst: f64 = 0.0;
    for k in 0..300 {
        let flavor = if k % 2 == 0 { Flavor::Social } else { Flavor::Technical };
        let s = random_snapshot(&mut rng, flavor, 1);
        let r = compute_metrics(&s);
        let left: std::collections::BTreeSet<_> = s.edges.iter().map(|e| &e.source).collect();
        let right: std::collections::BTreeSet<_> = s.edges.iter().map(|e| &e.target).collect();
        let nodes = left.len() + right.len();
        ensure(r.num_nodes == nodes && r.num_edges == s.edges.len(), "node or edge count")?;
        let deg = if nodes == 0 { 0.0 } else { 2.0 * s.edges.len() as f64 / nodes as f64 };
        ensure(r.mean_degree == deg, format!("mean degree {} vs {deg}", r.mean_degree))?;
        let (v, e) = oracle_projection(&s);
        let c_err = (r.clustering_coefficient - oracle_clustering(&v, &e)).abs();
        ensure(c_err <= METRIC_TOL, format!("projected clustering error {c_err:e}"))?;
        let shares = node_percentages(&s);
        for side in [&shares.left, &shares.right] {
            if !side.is_empty() {
                pct_worst = pct_worst.max((side.values().sum::<f64>() - 100.0).abs());
            }
        }
    }
    ensure(pct_worst <= PCT_TOL, format!("percentage sum error {pct_worst:e}"))?;
    Ok(format!("clustering max err {worst:.1e} (tol {METRIC_TOL:e}), pct sum max err {pct_worst:.1e} (tol {PCT_TOL:e})"))
}

fn lstm_correctness() -> Check {
    let fd = worst_gradient_error(FD_DRAWS);
    ensure(fd < FD_TOL, format!("finite-difference rel err {fd:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut softmax: f64 = 0.0;
    for seed in 0..20 {
        let m = ForecastModel::initialize(8, Hyperparams::default(), Normalization::identity(8), seed);
        let seq = random_features(&mut rng, 12);
        for mode in [Mode::Eval, Mode::Train { seed }] {
            for p in forward(&m, &seq, mode).map_err(|e| e.to_string())? {
                softmax = softmax.max((p[0] + p[1] - 1.0).abs());
            }
        }
        let full = forward(&m, &seq, Mode::Eval).map_err(|e| e.to_string())?;
        for t in 1..=seq.len() {
            let prefix = forward(&m, &seq[..t], Mode::Eval).map_err(|e| e.to_string())?;
            let same = prefix.iter().zip(&full).all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits());
            ensure(same, format!("prefix {t} differs (seed {seed})"))?;
        }
    }
    ensure(softmax <= SOFTMAX_TOL, format!("softmax row error {softmax:e}"))?;

    let zero = ForecastModel::zeros(8, 64);
    let batch: Vec<LabeledSequence> =
        (0..4).map(|k| LabeledSequence { features: random_features(&mut rng, 5 + k), label: (k % 2) as u8 }).collect();
    let (loss, _) = loss_and_gradients(&zero, &batch, Mode::Eval).map_err(|e| e.to_string())?;
    let ln2 = (loss - std::f64::consts::LN_2).abs();
    ensure(ln2 <= LN2_TOL, format!("zero-model loss off ln 2 by {ln2:e}"))?;
    Ok(format!(
        "FD max rel err {fd:.1e} (tol {FD_TOL:e}, {FD_DRAWS} draws), softmax {softmax:.1e}, ln2 {ln2:.1e}, prefixes bit-exact"
    ))
}

fn sustain(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sustain")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`sustain {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end(work: &Path) -> Check {
    let t0 = Instant::now();
    let spec = work.join("spec.json");
    fs::write(&spec, serde_json::to_vec_pretty(&GenSpec::growing_graduates(E2E_SEED)).unwrap()).unwrap();
    let (csv, tree, model) = (work.join("csv"), work.join("tree"), work.join("model.ckpt"));
    let p = |x: &Path| x.to_str().unwrap().to_owned();
    sustain(&["gen", &p(&spec), "-o", &p(&csv)])?;
    sustain(&["import", &p(&csv), "-o", &p(&tree)])?;
    sustain(&["build", &p(&tree)])?;
    sustain(&["train", &p(&tree), "-o", &p(&model), "--seed", "7", "--epochs", "200"])?;
    sustain(&["forecast", &p(&tree), "--model", &p(&model)])?;
    let took = t0.elapsed();

    let m = forecast::load_checkpoint(&model).map_err(|e| e.to_string())?;
    let data: Vec<LabeledSequence> = store::load_training_set(&tree).map_err(|e| e.to_string())?.into_iter().map(|x| x.1).collect();
    let acc = forecast::accuracy(&m, &data).map_err(|e| e.to_string())?;
    let (mut grad, mut ret) = (Vec::new(), Vec::new());
    for id in store::list_projects(&tree).map_err(|e| e.to_string())? {
        let info = store::read_project_info(&tree, &id).map_err(|e| e.to_string())?;
        let doc: ForecastDoc = store::load_json(&store::project_dir(&tree, &id).join("forecast.json")).map_err(|e| e.to_string())?;
        let last = *doc.probabilities.last().ok_or("empty forecast")?;
        match info.status.label() {
            Some(1) => grad.push(last),
            Some(_) => ret.push(last),
            None => {}
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (g, r) = (mean(&grad), mean(&ret));
    ensure(data.len() == 40, format!("expected 40 labeled projects, got {}", data.len()))?;
    ensure(took < E2E_BUDGET, format!("pipeline took {took:?}"))?;
    ensure(acc >= MIN_ACCURACY, format!("training accuracy {acc}"))?;
    ensure(g > r, format!("graduated mean {g} not above retired mean {r}"))?;
    Ok(format!("{took:.1?} (budget {E2E_BUDGET:?}), accuracy {acc:.3} (min {MIN_ACCURACY}), final forecast graduated {g:.3} vs retired {r:.3}"))
}

fn turning_points() -> Check {
    let s = ForecastSeries { project_id: "p".into(), probabilities: vec![0.8, 0.65, 0.70] };
    let turns = detect_turns(&s, 0.1);
    ensure(turns.len() == 1, format!("{} turns", turns.len()))?;
    let t = &turns[0];
    ensure(t.month == 2 && t.kind == TurnKind::Downturn && (t.delta + 0.15).abs() <= 1e-12, format!("{t:?}"))?;
    Ok(format!("one downturn at month 2, delta {:.2}", t.delta))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn checksum(root: &Path) -> String {
    let mut h = Sha256::new();
    for (p, bytes) in files_under(root) {
        h.update(p.to_string_lossy().as_bytes());
        h.update(&bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn persistence(work: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let dir = work.join("bundles");
    for k in 0..100 {
        let month = rng.random_range(1..=24);
        let b = MonthBundle::new(
            random_snapshot(&mut rng, Flavor::Social, month),
            random_snapshot(&mut rng, Flavor::Technical, month),
            None,
            BTreeMap::new(),
            BTreeMap::new(),
        );
        write_month_bundle(&b, &dir).map_err(|e| e.to_string())?;
        let back = read_month_bundle(PROJECT, month, &dir).map_err(|e| e.to_string())?;
        ensure(back == b, format!("bundle {k} changed in round trip"))?;
    }

    let csv = work.join("persist-csv");
    let spec = GenSpec { num_projects: 5, months: Span { min: 3, max: 6 }, ..GenSpec::growing_graduates(3) };
    generate_synthetic_corpus(&spec, &csv).map_err(|e| e.to_string())?;
    let mut sums = Vec::new();
    for name in ["tree-a", "tree-b"] {
        let tree = work.join(name);
        let import = store::import_csv_corpus(&csv).map_err(|e| e.to_string())?;
        store::write_import(&import, &tree).map_err(|e| e.to_string())?;
        store::build_tree(&tree, &ListPatterns::default()).map_err(|e| e.to_string())?;
        sums.push(files_under(&tree));
    }
    ensure(sums[0] == sums[1], "rebuilt trees differ")?;
    Ok(format!("100 bundle round trips; two rebuilds byte-identical over {} files", sums[0].len()))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn service_contract(tree: &Path) -> Check {
    let before = checksum(tree);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let _server = Server(
        Command::new(env!("CARGO_BIN_EXE_sustain"))
            .args(["serve", tree.to_str().unwrap(), "--addr", &addr])
            .spawn()
            .map_err(|e| e.to_string())?,
    );
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let client = reqwest::Client::new();
        let base = format!("http://{addr}/api");
        let deadline = Instant::now() + Duration::from_secs(30);
        while client.get(format!("{base}/projects")).send().await.is_err() {
            ensure(Instant::now() < deadline, "server did not start")?;
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        let get = |url: String| {
            let client = client.clone();
            async move {
                let r = client.get(url).send().await.map_err(|e| e.to_string())?;
                let status = r.status().as_u16();
                r.bytes().await.map(|b| (status, b.to_vec())).map_err(|e| e.to_string())
            }
        };

        let corpus = store::read_corpus(tree).map_err(|e| e.to_string())?;
        let mut single = 0;
        let mut ranges = 0;
        for p in &corpus.projects {
            let id = &p.project_id;
            for m in 1..=p.months_in_incubation {
                let dir = store::month_dir(tree, id, m);
                for (flavor, file) in [("social", "social.json"), ("tech", "tech.json")] {
                    let (status, body) = get(format!("{base}/projects/{id}/network?flavor={flavor}&from={m}&to={m}")).await?;
                    ensure(status == 200 && body == fs::read(dir.join(file)).unwrap(), format!("{id} month {m} {flavor} not verbatim"))?;
                    single += 1;
                }
            }
            let n = p.months_in_incubation;
            let (status, body) = get(format!("{base}/projects/{id}/metrics?from=1&to={n}")).await?;
            ensure(status == 200, format!("range metrics status {status}"))?;
            let doc: MetricsDoc = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
            let agg = |flavor| -> Result<_, String> {
                let snaps: Vec<_> = (1..=n)
                    .map(|m| {
                        let b = read_month_bundle(id, m, tree).unwrap();
                        if flavor == Flavor::Social { b.social } else { b.technical }
                    })
                    .collect();
                Ok(compute_metrics(&aggregate_snapshots(&snaps).map_err(|e| e.to_string())?))
            };
            let (s, t) = doc.records();
            for (got, want) in [(s, agg(Flavor::Social)?), (t, agg(Flavor::Technical)?)] {
                ensure(got.num_nodes == want.num_nodes && got.num_edges == want.num_edges, "range counts")?;
                // served values carry 9 significant digits
                ensure((got.mean_degree - want.mean_degree).abs() <= 1e-8 * want.mean_degree.max(1.0), "range mean degree")?;
                ensure((got.clustering_coefficient - want.clustering_coefficient).abs() <= 1e-8, "range clustering")?;
            }
            ranges += 1;
        }

        let id = corpus.projects[0].project_id.clone();
        let urls = [
            format!("{base}/projects"),
            format!("{base}/projects/{id}/network?flavor=social&from=1&to=4"),
            format!("{base}/projects/{id}/metrics?from=2&to=5"),
            format!("{base}/projects/{id}/forecast"),
            format!("{base}/projects/{id}/report?month=3"),
            format!("{base}/projects/{id}/drilldown?dev=x@y.z&kind=emails&from=1&to=3"),
        ];
        let tasks: Vec<_> = (0..STORM).map(|k| tokio::spawn(get(urls[k % urls.len()].clone()))).collect();
        let mut firsts: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
        for (k, t) in tasks.into_iter().enumerate() {
            let (status, body) = t.await.map_err(|e| e.to_string())??;
            ensure(status == 200, format!("storm request {k} got {status}"))?;
            let first = firsts.entry(k % urls.len()).or_insert_with(|| body.clone());
            ensure(*first == body, "identical queries gave different bytes")?;
        }
        Ok::<_, String>(format!("{single} single-month responses verbatim, {ranges} range metrics match oracle"))
    })
    .and_then(|detail| {
        ensure(checksum(tree) == before, "tree checksum changed")?;
        Ok(format!("{detail}, {STORM}-request storm left checksum unchanged"))
    })
}

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL  {name}: {why}");
            false
        }
    }
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let e2e = work.path().join("e2e");
    fs::create_dir_all(&e2e).unwrap();
    let results = [
        run("network oracle equivalence", network_oracle),
        run("range consistency", range_consistency),
        run("metrics oracle", metrics_oracle),
        run("lstm correctness", lstm_correctness),
        run("end-to-end synthetic experiment", || end_to_end(&e2e)),
        run("turning points", turning_points),
        run("persistence", || persistence(work.path())),
        run("service contract", || service_contract(&e2e.join("tree"))),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len());
}
