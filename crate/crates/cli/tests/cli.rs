use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mzrtree::generate::{generate_mixed_levels, GenMode, GenSpec};
use mzrtree::storage::{INDEX_FILE, MANIFEST_FILE};
use mzrtree::{MzRTree, QueryRect, Store};
use tempfile::tempdir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mzrtree"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

const GEN: [&str; 8] = [
    "--spectra", "100", "--mz-min", "400", "--mz-max", "460", "--seed", "11",
];

/// Emits a 100-spectrum mzXML (levels 1 and 2) and builds its level-1 store.
fn fixture(dir: &Path) -> (String, String) {
    let mzxml = dir.join("in.mzXML").to_string_lossy().into_owned();
    let store = dir.join("store").to_string_lossy().into_owned();
    let mut gen = vec!["gen", "--out", &mzxml, "--ms-levels", "1,2"];
    gen.extend(GEN);
    ok(&gen);
    ok(&["build", "--input", &mzxml, "--out", &store, "--k", "3"]);
    (mzxml, store)
}

#[test]
fn build_from_generated_mzxml() {
    let dir = tempdir().unwrap();
    let (mzxml, store) = fixture(dir.path());
    let s = Store::open(Path::new(&store)).unwrap();
    let m = s.manifest();
    assert_eq!(m.meta.ms_level, 1);
    assert_eq!(m.strips.len(), 3);
    assert_eq!(m.strips.iter().map(|s| s.row_end - s.row_start).sum::<u32>(), 100);

    let again = dir.path().join("again").to_string_lossy().into_owned();
    ok(&["build", "--input", &mzxml, "--out", &again, "--k", "3"]);
    let mut names = vec![MANIFEST_FILE.to_string(), INDEX_FILE.to_string()];
    names.extend(m.strips.iter().filter_map(|s| s.file.clone()));
    for name in names {
        assert_eq!(
            fs::read(Path::new(&store).join(&name)).unwrap(),
            fs::read(Path::new(&again).join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn ms_level_two_build_keeps_only_level_two() {
    let dir = tempdir().unwrap();
    let (mzxml, _) = fixture(dir.path());
    let out = dir.path().join("ms2").to_string_lossy().into_owned();
    ok(&["build", "--input", &mzxml, "--out", &out, "--ms-level", "2"]);

    let spec = GenSpec {
        spectra_count: 100,
        mz_min: 400.0,
        mz_max: 460.0,
        mode: GenMode::Peaked,
        seed: 11,
        ..GenSpec::default()
    };
    let level2: Vec<_> = generate_mixed_levels(&spec, &[1, 2])
        .unwrap()
        .into_iter()
        .filter(|r| r.ms_level == 2)
        .collect();
    let peaks: usize = level2.iter().map(|r| r.peaks.len()).sum();
    let tree = MzRTree::open(Path::new(&out)).unwrap();
    assert_eq!(tree.meta().ms_level, 2);
    assert_eq!(tree.meta().rows() as usize, level2.len());
    let rts: Vec<f64> = level2.iter().map(|r| r.rt).collect();
    assert_eq!(tree.meta().rt_axis, rts);
    assert_eq!(tree.store().manifest().nnz as usize, peaks);
}

#[test]
fn query_counts_match_the_library() {
    let dir = tempdir().unwrap();
    let (_, store) = fixture(dir.path());
    let tree = MzRTree::open(Path::new(&store)).unwrap();
    let nnz = tree.store().manifest().nnz;

    let full = ok(&["query", &store, "--workload", "rect", "--rect=-1,100000,-1,10000000"]);
    assert_eq!(full.trim(), nnz.to_string());
    let empty = ok(&["query", &store, "--workload", "rect", "--rect", "7,7,0,500"]);
    assert_eq!(empty.trim(), "0");

    let want = tree.range_query(QueryRect::new(10, 60, 1000, 3000)).unwrap();
    let csv = ok(&["query", &store, "--workload", "rect", "--rect", "10,60,1000,3000", "--format", "csv"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "row,col,rt,mz,intensity");
    assert_eq!(lines.len() - 1, want.entries.len());
    for (line, e) in lines[1..].iter().zip(&want.entries) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0].parse::<u32>().unwrap(), e.row);
        assert_eq!(f[1].parse::<u32>().unwrap(), e.col);
        assert_eq!(f[4].parse::<f32>().unwrap(), e.intensity);
    }

    let json = ok(&["query", &store, "--workload", "chrom", "--mz", "430", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let want = tree
        .range_query(mzrtree::Workload::Chromatogram.rect_at(tree.meta(), 430.0, 50))
        .unwrap();
    assert_eq!(v["count"], want.entries.len());
}

#[test]
fn bench_report_has_every_engine_and_workload() {
    let dir = tempdir().unwrap();
    let (_, store) = fixture(dir.path());
    let plots = dir.path().join("plots").to_string_lossy().into_owned();
    let csv = ok(&["bench", &store, "--reps", "2", "--queries", "3", "--plot", &plots]);
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("engine,workload,"));
    assert_eq!(lines.len(), 1 + 16);
    for engine in ["mzrtree", "full-scan", "spectrum-major", "column-major"] {
        for workload in ["chrom", "spectra", "pep-small", "pep-large"] {
            let prefix = format!("{engine},{workload},3,2,");
            assert!(lines.iter().any(|l| l.starts_with(&prefix)), "{prefix}");
        }
    }
    assert!(Path::new(&plots).join("access.svg").exists());

    let json = ok(&["bench", &store, "--reps", "1", "--queries", "2", "--engines", "mzrtree", "--format", "json", "--threads", "2"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
    assert_eq!(v["throughput"].as_array().unwrap().len(), 4);
}

#[test]
fn space_reports_savings() {
    let dir = tempdir().unwrap();
    let (mzxml, store) = fixture(dir.path());
    let json = ok(&["space", &store, "--mzxml", &mzxml]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let mzxml_bytes = fs::metadata(&mzxml).unwrap().len();
    assert_eq!(v["mzxml_bytes"], mzxml_bytes);
    assert!(v["store_bytes"].as_u64().unwrap() < mzxml_bytes);
    let missing = dir.path().join("missing.mzXML").to_string_lossy().into_owned();
    assert_eq!(code(&["space", &store, "--mzxml", &missing]), 1);
}

#[test]
fn exit_codes() {
    let dir = tempdir().unwrap();
    let (_, store) = fixture(dir.path());
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["query", &store, "--workload", "rect"]), 1);
    assert_eq!(code(&["query", &store, "--workload", "rect", "--rect", "5,2,0,1"]), 1);
    assert_eq!(code(&["build", "--out", "x", "--k", "1", "--density", "2"]), 1);

    let nowhere = dir.path().join("nowhere").to_string_lossy().into_owned();
    assert_eq!(code(&["info", &nowhere]), 2);
    let bad = dir.path().join("bad.mzXML");
    fs::write(&bad, "<mzXML><msRun><scan num=\"1\"").unwrap();
    let out = dir.path().join("bad_store").to_string_lossy().into_owned();
    assert_eq!(code(&["build", "--input", &bad.to_string_lossy(), "--out", &out]), 2);

    // An index from another build is a consistency error.
    let other = dir.path().join("other").to_string_lossy().into_owned();
    let mut args = vec!["build", "--out", &other, "--k", "2", "--mode", "uniform"];
    args.extend(GEN);
    ok(&args);
    fs::copy(Path::new(&other).join(INDEX_FILE), Path::new(&store).join(INDEX_FILE)).unwrap();
    assert_eq!(code(&["info", &store]), 3);
}
