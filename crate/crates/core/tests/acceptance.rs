//! Acceptance gate: eight end-to-end criteria, one PASS/FAIL line each.
//!
//! Runs the real command-line pipeline on the cardio and effusion phantom
//! tasks, so it takes several minutes. Set `ACCEPTANCE_DIR` to keep the
//! artifacts; otherwise a temporary directory is used.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{greedy, eigen, gradients};
use eigenfind::cli::{probe, run_from, TuningRecord};
use eigenfind::models::ModelBundle;
use eigenfind::phantom::ClassLabel;
use eigenfind::search::{eigen_find, Algorithm, SearchConfig, SearchImage, SearchReport};
use eigenfind::stylespace::{ChannelStats, StyleBasis};
use eigenfind::{pgm, Image};

const N_SEARCH: usize = 600;
const TUNE_N: usize = 150;
const TUNE_GRID: &str = "1,2,5,10,15,20";
const K: usize = 8;
const GAN_ITERATIONS: &str = "2000";
const CLASSIFIER_ITERATIONS: &str = "2000";

struct Gate {
    failures: usize,
}

impl Gate {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

fn cli(args: &[String]) {
    let argv = std::iter::once("eigenfind".to_owned()).chain(args.iter().cloned());
    if let Err(err) = run_from(argv) {
        panic!("eigenfind {} failed: {err:#}", args.join(" "));
    }
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|a| a.to_string()).collect()
}

/// Data, training, factorization and both searches for one task.
fn pipeline(root: &Path, pathology: &str, algo: &str) -> Duration {
    let start = Instant::now();
    let dir = |name: &str| root.join(name);
    for (name, n, seed) in [("train", "2000", "42"), ("heldout", "500", "43"), ("pool", "3000", "7")] {
        cli(&args(&["gen-data", "--n", n, "--pathology", pathology, "--seed", seed, "--out", &s(&dir(name))]));
    }
    cli(&args(&[
        "train-classifier", "--data", &s(&dir("train")), "--eval-data", &s(&dir("heldout")),
        "--iterations", CLASSIFIER_ITERATIONS, "--seed", "1", "--out", &s(&dir("models")),
    ]));
    cli(&args(&[
        "train-gan", "--data", &s(&dir("train")), "--classifier", &s(&dir("models").join("classifier.lcf")),
        "--eval-data", &s(&dir("heldout")), "--iterations", GAN_ITERATIONS, "--seed", "1",
        "--out", &s(&dir("models")),
    ]));
    let bundle = dir("models").join("bundle.lcf");
    cli(&args(&["factorize", "--bundle", &s(&bundle), "--k", "8", "--seed", "1", "--out", &s(&dir("factors"))]));
    cli(&args(&[
        "explain", "--bundle", &s(&bundle), "--factors", &s(&dir("factors")), "--data", &s(&dir("pool")),
        "--pathology", pathology, "--n", &N_SEARCH.to_string(), "--k", &K.to_string(), "--algo", algo,
        "--tune-grid", TUNE_GRID, "--tune-n", &TUNE_N.to_string(), "--out", &s(&dir("explain")),
    ]));
    start.elapsed()
}

fn read_report(root: &Path, algorithm: Algorithm) -> SearchReport {
    let path = root.join("explain").join(format!("{}.json", algorithm.name()));
    serde_json::from_slice(&fs::read(&path).unwrap()).unwrap()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn load_bundle(root: &Path) -> ModelBundle {
    ModelBundle::from_bytes(&fs::read(root.join("models").join("bundle.lcf")).unwrap()).unwrap()
}

fn load_factors(root: &Path) -> (StyleBasis, ChannelStats) {
    let f = root.join("factors");
    (read_json(&f.join("basis.json")), read_json(&f.join("channel_stats.json")))
}

fn pool_image(root: &Path, id: u64) -> Image {
    pgm::read(&root.join("pool").join(format!("img_{id:05}.pgm"))).unwrap()
}

/// Every file under `dir` except run manifests, with wall times zeroed in
/// search reports.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            let key = p.strip_prefix(dir).unwrap().display().to_string();
            if p.is_dir() {
                stack.push(p);
            } else if key.ends_with(".manifest.json") {
                continue;
            } else if key.ends_with("eigenfind.json") || key.ends_with("attfind.json") {
                let mut r: SearchReport = read_json(&p);
                r.wall_ms = 0.0;
                out.insert(key, serde_json::to_vec(&r).unwrap());
            } else {
                out.insert(key, fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Counterfactuals recomputed from the originals must land on the other class.
fn flip_audit(root: &Path, report: &SearchReport) -> (usize, usize) {
    let bundle = load_bundle(root);
    let (basis, stats) = load_factors(root);
    let y = ClassLabel::Healthy;
    let ok = report
        .per_image
        .iter()
        .filter(|rec| {
            let x = pool_image(root, rec.id);
            let cf = greedy::counterfactual(&bundle, &basis, &stats, &x, y, &rec.direction, report.d);
            bundle.classifier.classify(&cf).predicted == y.opposite()
        })
        .count();
    (ok, report.per_image.len())
}

fn main() {
    let keep = std::env::var_os("ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    fs::create_dir_all(&root).unwrap();
    let mut gate = Gate { failures: 0 };

    // 1. eigensolver against power iteration
    let t = Instant::now();
    let e = eigen::check_random_matrices(11, 50);
    let secs = t.elapsed().as_secs_f64();
    gate.record(
        1,
        e.passes() && secs < 5.0,
        format!(
            "eigenvalue rel err {:.1e}, 1-|cos| {:.1e}, trace err {:.1e}, {secs:.2} s",
            e.worst_value_err, e.worst_cos_gap, e.worst_trace_err
        ),
    );

    // 2. gradients against finite differences
    let t = Instant::now();
    let worst = gradients::dense_worst_error().max(gradients::generator_worst_error());
    let secs = t.elapsed().as_secs_f64();
    gate.record(
        2,
        worst <= gradients::TOLERANCE && secs < 30.0,
        format!("worst relative error {worst:.1e} over 40 configurations, {secs:.2} s"),
    );

    // 3. searches against the straight-line reference
    let t = Instant::now();
    let c = greedy::check_instances(100);
    let secs = t.elapsed().as_secs_f64();
    gate.record(
        3,
        c.mismatches == 0 && c.instances >= 100 && secs < 60.0,
        format!(
            "{} mismatches in {} runs ({} informative), {secs:.2} s",
            c.mismatches, c.instances, c.informative
        ),
    );

    let cardio = root.join("cardio");
    let elapsed = pipeline(&cardio, "cardio", "both");
    let eigen_report = read_report(&cardio, Algorithm::EigenFind);
    let att_report = read_report(&cardio, Algorithm::AttFind);
    let bundle = load_bundle(&cardio);
    let m = bundle.generator.config.style_dim();

    // 4. query and time complexity
    let query_ratio = att_report.ranking_queries as f64 / eigen_report.ranking_queries as f64;
    let time_ratio = att_report.wall_ms / eigen_report.wall_ms;
    gate.record(
        4,
        att_report.ranking_queries * K as u64 == eigen_report.ranking_queries * m as u64 && time_ratio >= 10.0,
        format!("ranking query ratio {query_ratio} (m/k = {m}/{K}), wall-time ratio {time_ratio:.1}"),
    );

    // 5. explained fractions
    let tuning: Vec<TuningRecord> = read_json(&cardio.join("explain").join("tuning.json"));
    let d_in_range = tuning.iter().all(|t| (1.0..=20.0).contains(&t.chosen_d));
    let gap = (eigen_report.explained_pct - att_report.explained_pct).abs();
    gate.record(
        5,
        eigen_report.n == N_SEARCH
            && eigen_report.explained_pct >= 85.0
            && gap <= 5.0
            && d_in_range
            && elapsed < Duration::from_secs(30 * 60),
        format!(
            "EigenFind {:.1}% (d {}), AttFind {:.1}% (d {}), gap {gap:.1} points, pipeline {:.0} s",
            eigen_report.explained_pct,
            eigen_report.d,
            att_report.explained_pct,
            att_report.d,
            elapsed.as_secs_f64()
        ),
    );

    // 6. semantic validity
    let effusion = root.join("effusion");
    pipeline(&effusion, "effusion", "eigenfind");
    let heart = probe(&cardio.join("explain"), Algorithm::EigenFind, 3).unwrap().overall;
    let fluid = probe(&effusion.join("explain"), Algorithm::EigenFind, 3).unwrap().overall;
    gate.record(
        6,
        heart.n_images > 0 && heart.heart_width_increased >= 0.8 && fluid.n_images > 0 && fluid.fluid_level_increased >= 0.7,
        format!(
            "cardio heart width grows in {:.1}% of {} counterfactuals, effusion fluid rises in {:.1}% of {}",
            100.0 * heart.heart_width_increased,
            heart.n_images,
            100.0 * fluid.fluid_level_increased,
            fluid.n_images
        ),
    );

    // 7. determinism: a second full run and a multi-threaded search
    let rerun = root.join("cardio_rerun");
    pipeline(&rerun, "cardio", "both");
    let (a, b) = (snapshot(&cardio), snapshot(&rerun));
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let same_files = a.len() == b.len() && differing.is_empty();

    let (basis, _) = load_factors(&cardio);
    let images: Vec<SearchImage> = eigen_report
        .per_image
        .iter()
        .map(|r| r.id)
        .chain(eigen_report.unexplained.iter().copied())
        .map(|id| SearchImage {
            id,
            image: pool_image(&cardio, id),
        })
        .collect();
    let config = SearchConfig {
        k: K,
        d: eigen_report.d,
        ..SearchConfig::default()
    };
    let single = eigen_find(&bundle, &images, ClassLabel::Healthy, &config, &basis).unwrap();
    let multi = eigen_find(
        &bundle,
        &images,
        ClassLabel::Healthy,
        &SearchConfig {
            parallel_workers: 4,
            ..config.clone()
        },
        &basis,
    )
    .unwrap();
    let ids = |r: &eigenfind::search::SearchResult| r.explained.iter().map(|e| e.image_id).collect::<Vec<_>>();
    let mean_gap = single
        .delta_table
        .mean
        .iter()
        .zip(&multi.delta_table.mean)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let reproduces_report = ids(&single) == eigen_report.per_image.iter().map(|r| r.id).collect::<Vec<_>>();
    gate.record(
        7,
        same_files && ids(&single) == ids(&multi) && mean_gap <= 1e-6 && reproduces_report,
        format!(
            "{} files compared, {} differ; 4-thread search max mean-delta gap {mean_gap:.1e}, same explained set {}",
            a.len(),
            differing.len(),
            ids(&single) == ids(&multi)
        ),
    );

    // 8. flip soundness
    let audits = [
        flip_audit(&cardio, &eigen_report),
        flip_audit(&cardio, &att_report),
        flip_audit(&effusion, &read_report(&effusion, Algorithm::EigenFind)),
    ];
    let (ok, total) = audits.iter().fold((0, 0), |(a, b), (o, t)| (a + o, b + t));
    gate.record(8, ok == total && total > 0, format!("{ok}/{total} counterfactuals re-classify to the other class"));

    if gate.failures > 0 {
        println!("{} of 8 criteria failed", gate.failures);
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
