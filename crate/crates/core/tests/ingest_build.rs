mod common;

use std::io::Write;

use common::Oracle;
use mzrtree::generate::{emit_mzxml, generate, generate_mixed_levels, GenMode, GenSpec};
use mzrtree::ingest::PeaksEncoding;
use mzrtree::storage::{build_from_mzxml, BuildOptions, StripChoice};
use mzrtree::{Error, MzRTree};
use tempfile::tempdir;

fn spec() -> GenSpec {
    GenSpec {
        spectra_count: 80,
        mz_min: 400.0,
        mz_max: 470.0,
        density: 0.05,
        seed: 21,
        ..GenSpec::default()
    }
}

fn opts(spec: &GenSpec, ms_level: u32, k: u32) -> BuildOptions {
    BuildOptions {
        ms_level,
        resolution: spec.resolution,
        mz_range: Some((spec.mz_min, spec.mz_max)),
        strips: StripChoice::Count(k),
        ..BuildOptions::default()
    }
}

#[test]
fn mzxml_build_preserves_every_peak() {
    let dir = tempdir().unwrap();
    let s = spec();
    let records: Vec<_> = generate(&s).unwrap().collect();
    let xml = dir.path().join("run.mzXML");
    for enc in [PeaksEncoding::F64, PeaksEncoding::F32] {
        emit_mzxml(records.clone(), enc, &xml).unwrap();
        let store = dir.path().join("store");
        let manifest = build_from_mzxml(&xml, &store, &opts(&s, 1, 3)).unwrap();
        assert_eq!(manifest.source.peak_precisions, vec![enc.precision.bits()]);
        assert_eq!(manifest.meta.rt_axis, s.rt_axis());
        let oracle = Oracle::from_records(&records, &manifest.meta);
        let tree = MzRTree::open(&store).unwrap();
        let got = tree.range_query(tree.meta().full_rect()).unwrap();
        assert_eq!(got.entries, oracle.cells);
    }
}

#[test]
fn gzip_input_and_inferred_extent() {
    let dir = tempdir().unwrap();
    let s = spec();
    let records: Vec<_> = generate(&s).unwrap().collect();
    let plain = dir.path().join("run.mzXML");
    emit_mzxml(records.clone(), PeaksEncoding::F64, &plain).unwrap();
    let gz = dir.path().join("run.mzXML.gz");
    let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(&gz).unwrap(), flate2::Compression::fast());
    enc.write_all(&std::fs::read(&plain).unwrap()).unwrap();
    enc.finish().unwrap();

    let o = BuildOptions {
        mz_range: None,
        strips: StripChoice::RamBudget(64 << 10),
        ..opts(&s, 1, 1)
    };
    let manifest = build_from_mzxml(&gz, &dir.path().join("store"), &o).unwrap();
    let lo = records.iter().flat_map(|r| r.peaks.iter().map(|p| p.0)).fold(f64::INFINITY, f64::min);
    let hi = records.iter().flat_map(|r| r.peaks.iter().map(|p| p.0)).fold(0.0, f64::max);
    assert_eq!((manifest.meta.mz_min, manifest.meta.mz_max), (lo, hi));
    assert!(manifest.meta.strip_count > 1, "budget should force several strips");
    let peaks: usize = records.iter().map(|r| r.peaks.len()).sum();
    assert_eq!(manifest.nnz, peaks as u64);
}

#[test]
fn build_selects_one_ms_level() {
    let dir = tempdir().unwrap();
    let s = GenSpec {
        mode: GenMode::Uniform,
        ..spec()
    };
    let records = generate_mixed_levels(&s, &[1, 2]).unwrap();
    let xml = dir.path().join("mixed.mzXML");
    emit_mzxml(records.clone(), PeaksEncoding::F64, &xml).unwrap();
    for level in [1, 2] {
        let store = dir.path().join(format!("ms{level}"));
        let manifest = build_from_mzxml(&xml, &store, &opts(&s, level, 2)).unwrap();
        let only: Vec<_> = records.iter().filter(|r| r.ms_level == level).cloned().collect();
        assert_eq!(manifest.meta.rows(), 80);
        assert_eq!(manifest.meta.ms_level, level);
        let oracle = Oracle::from_records(&only, &manifest.meta);
        let tree = MzRTree::open(&store).unwrap();
        assert_eq!(tree.range_query(tree.meta().full_rect()).unwrap().entries, oracle.cells);
    }
    let none = build_from_mzxml(&xml, &dir.path().join("ms3"), &opts(&s, 3, 1)).unwrap();
    assert_eq!(none.nnz, 0);
    assert_eq!(none.meta.rows(), 0);
}

#[test]
fn malformed_input_is_a_data_error() {
    let dir = tempdir().unwrap();
    let xml = dir.path().join("bad.mzXML");
    std::fs::write(
        &xml,
        r#"<mzXML><msRun><scan num="1" msLevel="1" retentionTime="PT1S"><peaks precision="32" byteOrder="network" pairOrder="m/z-int">@@@@</peaks></scan></msRun></mzXML>"#,
    )
    .unwrap();
    let err = build_from_mzxml(&xml, &dir.path().join("s"), &opts(&spec(), 1, 1)).unwrap_err();
    assert!(matches!(err, Error::Decode(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    let missing = build_from_mzxml(&dir.path().join("nope.mzXML"), &dir.path().join("s"), &opts(&spec(), 1, 1));
    assert!(matches!(missing, Err(Error::Io(_))));
}
