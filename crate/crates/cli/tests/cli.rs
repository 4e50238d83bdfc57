use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demo/demo.toml")
}

fn geotarget(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geotarget"))
        .args(args)
        .env("GEOTARGET_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stage(name: &str, config: &Path, out: &Path) -> Output {
    geotarget(&[
        name,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn demo_run_writes_full_grid_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    ok(&stage("run", &demo_config(), &out));

    let grid = std::fs::read_to_string(out.join("evaluation/grid_ee.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    // family column plus EE and IE for the benchmark and 3 k values x pca on/off
    assert_eq!(header.len(), 1 + 2 * (1 + 3 * 2));
    assert_eq!(lines.len(), 1 + 8 + 1);
    assert!(lines.last().unwrap().starts_with("minimum,"));

    for rel in [
        "weights/edges.csv",
        "stats/moran.csv",
        "stats/getis_ord.csv",
        "cluster/dendrogram.json",
        "cluster/assignment_k4.csv",
        "cluster/assignment_k6.csv",
        "cluster/assignment_k12.csv",
        "models/logistic__sml_k6_pca.json",
        "predictions/random_forest__benchmark.csv",
        "evaluation/provinces.geojson",
        "pca/scree.csv",
    ] {
        assert!(out.join(rel).is_file(), "missing {rel}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failed_stage"], serde_json::Value::Null);
    assert_eq!(manifest["stages"]["evaluate"], "ok");
    assert_eq!(manifest["seeds"]["master"], 20240601);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn rerun_is_byte_identical_except_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&stage("run", &demo_config(), &a));
    ok(&stage("run", &demo_config(), &b));
    let (mut fa, mut fb) = (files(&a), files(&b));
    fa.remove("manifest.json");
    fb.remove("manifest.json");
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(fb[k] == *v, "{k} differs between runs");
    }
}

#[test]
fn chained_subcommands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    let (full, chained) = (dir.path().join("full"), dir.path().join("chained"));
    ok(&stage("run", &demo_config(), &full));
    for s in [
        "synth", "ingest", "weights", "stats", "cluster", "pca", "train", "evaluate",
    ] {
        ok(&stage(s, &demo_config(), &chained));
        let (f, c) = (files(&full), files(&chained));
        for (k, v) in &c {
            assert!(f[k] == *v, "{k} after `{s}` differs from the run output");
        }
    }
    let mut f = files(&full);
    f.remove("manifest.json");
    assert_eq!(f, files(&chained));
}

#[test]
fn demo_synth_seed_gives_moran_p_of_one_in_a_thousand() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for s in ["synth", "ingest", "weights", "stats"] {
        ok(&stage(s, &demo_config(), &out));
    }
    let text = std::fs::read_to_string(out.join("stats/moran.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let row = rdr.records().next().unwrap().unwrap();
    let p: f64 = row[2].parse().unwrap();
    let i: f64 = row[0].parse().unwrap();
    assert_eq!(p, 0.001);
    assert!(i > 0.3);
}

#[test]
fn missing_region_file_is_named_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("households.csv"),
        "household_id,region_id,year,pce\n",
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 1\n[input]\nhouseholds = \"households.csv\"\nregions = \"no_such_regions.csv\"\n",
    );
    let o = stage("run", &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no_such_regions.csv"), "{err}");
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(
        manifest.contains("\"failed_stage\": \"ingest\""),
        "{manifest}"
    );
}

#[test]
fn missing_and_stale_upstream_artifacts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = stage("weights", &demo_config(), &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingest/regions.csv"));

    ok(&stage("synth", &demo_config(), &out));
    ok(&stage("ingest", &demo_config(), &out));
    ok(&stage("weights", &demo_config(), &out));
    let train = out.join("ingest/train.csv");
    let mut text = std::fs::read_to_string(&train).unwrap();
    text.push('\n');
    std::fs::write(&train, text).unwrap();
    let o = stage("stats", &demo_config(), &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("stale") && err.contains("ingest/train.csv"),
        "{err}"
    );
}

#[test]
fn evaluate_prediction_file_reports_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pred.csv");
    std::fs::write(
        &p,
        "household_id,truth,label\nh1,1,1\nh2,1,0\nh3,1,1\nh4,0,0\nh5,0,1\n",
    )
    .unwrap();
    let o = geotarget(&["evaluate", "--predictions", p.to_str().unwrap()]);
    ok(&o);
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("EE = 33.33%"), "{s}");
    assert!(s.contains("IE = 33.33%"), "{s}");
    assert!(s.contains("tp = 2 fn = 1 fp = 1 tn = 1"), "{s}");
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(geotarget(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(geotarget(&["run"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 1\n[input]\nsynthetic = true\n[target]\npoverty_quantile = 1.5\n",
    );
    let o = stage("run", &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("poverty_quantile"));
    assert_eq!(geotarget(&["--help"]).status.code(), Some(0));
}
