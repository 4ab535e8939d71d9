//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p mzrtree --test acceptance -- 4 5`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{random_rect, Oracle};
use mzrtree::bench::{density_sweep, run_bench, space_report, BenchConfig, BenchReport, EngineKind};
use mzrtree::generate::{emit_mzxml, generate, generate_mixed_levels, GenMode, GenSpec};
use mzrtree::index::{partition_groups, BBRef, IndexParams, NodeKind, RTree};
use mzrtree::ingest::PeaksEncoding;
use mzrtree::model::{PeakEntry, QueryRect, INTENSITY_BYTES};
use mzrtree::query::Workload;
use mzrtree::storage::{
    build_from_mzxml, deserialize_bb, BoundingBox, BuildOptions, Repr, Store, StripChoice,
    BB_HEADER_BYTES, SPARSE_ENTRY_BYTES, SPARSE_ROW_BYTES,
};
use mzrtree::MzRTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let work = TempDir::new().expect("temp dir");
    let mut shared = Shared::new(work.path());
    let criteria: [(&str, Duration, fn(&mut Shared) -> Outcome); 8] = [
        ("oracle correctness", Duration::from_secs(120), c1_oracle),
        ("partition and height", Duration::from_secs(60), c2_structure),
        ("dense/sparse rule", Duration::from_secs(30), c3_dense_sparse),
        ("space vs 64-bit mzXML", Duration::from_secs(300), c4_space),
        ("query speed vs baselines", Duration::from_secs(600), c5_speed),
        ("density scalability", Duration::from_secs(900), c6_density),
        ("MS-level parity", Duration::from_secs(300), c7_ms_level),
        ("ingestion fidelity", Duration::from_secs(120), c8_ingest),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut shared)))
            .unwrap_or_else(|p| Err(panic_message(p)));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *budget => Err(format!("{detail}; exceeded {budget:?} budget")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}) [{:.1}s]", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({why}) [{:.1}s]", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

/// State shared by criteria that use the same peaked dataset.
struct Shared {
    root: PathBuf,
    peaked: Option<PeakedRun>,
}

struct PeakedRun {
    store: PathBuf,
    mzxml_bytes: u64,
    build_time: Duration,
}

/// 2130 spectra over 400-1800 Da at 0.01 Da, about 5% nonzero.
fn peaked_spec() -> GenSpec {
    GenSpec {
        spectra_count: 2130,
        mz_min: 400.0,
        mz_max: 1800.0,
        resolution: 0.01,
        density: 0.05,
        mode: GenMode::Peaked,
        seed: 2130,
        ..GenSpec::default()
    }
}

/// Strips for the peaked benchmark store.
const PEAKED_STRIPS: u32 = 10;

impl Shared {
    fn new(root: &Path) -> Shared {
        Shared {
            root: root.to_path_buf(),
            peaked: None,
        }
    }

    fn peaked(&mut self) -> Result<&PeakedRun, String> {
        if self.peaked.is_none() {
            let spec = peaked_spec();
            let xml = self.root.join("peaked.mzXML");
            let mzxml_bytes =
                emit_mzxml(generate(&spec).map_err(s)?, PeaksEncoding::F64, &xml).map_err(s)?;
            let store = self.root.join("peaked");
            let opts = BuildOptions {
                ms_level: 1,
                resolution: spec.resolution,
                mz_range: Some((spec.mz_min, spec.mz_max)),
                strips: StripChoice::Count(PEAKED_STRIPS),
                ..BuildOptions::default()
            };
            let start = Instant::now();
            build_from_mzxml(&xml, &store, &opts).map_err(s)?;
            let build_time = start.elapsed();
            std::fs::remove_file(&xml).map_err(s)?;
            self.peaked = Some(PeakedRun {
                store,
                mzxml_bytes,
                build_time,
            });
        }
        Ok(self.peaked.as_ref().unwrap())
    }
}

fn s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c1_oracle(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = TempDir::new().map_err(s)?;
    let (mut datasets, mut rects, mut entries) = (0, 0, 0u64);
    for i in 0..100u64 {
        let rows = rng.gen_range(1..=50u32);
        let cols = rng.gen_range(1..=20_000u32);
        let spec = GenSpec {
            spectra_count: rows,
            mz_min: 200.0,
            // Half a column short of the next column keeps the grid at `cols`.
            mz_max: 200.0 + (cols as f64 - 0.5) * 0.01,
            resolution: 0.01,
            density: rng.gen_range(0.005..=0.30),
            mode: if i % 2 == 0 { GenMode::Uniform } else { GenMode::Peaked },
            seed: i,
            ..GenSpec::default()
        };
        let k = rng.gen_range(1..=rows);
        let bb_da = rng.gen_range(0.05..=10.0);
        let params = IndexParams {
            d: rng.gen_range(2..=8),
            f: rng.gen_range(1..=40),
        };
        // Uniform needs at least one peak per spectrum; tiny grids fall back to Peaked.
        let records: Vec<_> = match generate(&spec) {
            Ok(g) => g.collect(),
            Err(_) => generate(&GenSpec { mode: GenMode::Peaked, ..spec.clone() }).map_err(s)?.collect(),
        };
        let meta = spec.meta(k, bb_da).map_err(s)?;
        ensure!(meta.cols() == cols, "grid has {} columns, wanted {cols}", meta.cols());
        let path = dir.path().join(format!("d{i}"));
        let mut builder = mzrtree::StoreBuilder::create(&path, meta.clone(), params).map_err(s)?;
        for r in &records {
            builder.push_record(r).map_err(s)?;
        }
        builder.finish().map_err(s)?;
        let tree = MzRTree::open(&path).map_err(s)?;
        let oracle = Oracle::from_records(&records, &meta);
        for j in 0..100 {
            let q = if j % 2 == 0 {
                random_rect(&mut rng, rows, cols)
            } else {
                let r = rng.gen_range(-1..rows as i64);
                let c = rng.gen_range(-1..cols as i64);
                QueryRect::new(r, r + rng.gen_range(0..12), c, c + rng.gen_range(0..900))
            };
            let got = tree.range_query(q).map_err(s)?.entries;
            let want = oracle.query(&q);
            ensure!(got == want, "dataset {i} rect {q:?}: {} entries, oracle {}", got.len(), want.len());
            entries += got.len() as u64;
            rects += 1;
        }
        std::fs::remove_dir_all(&path).map_err(s)?;
        datasets += 1;
    }
    Ok(format!("{datasets} datasets, {rects} rects, {entries} entries matched"))
}

fn random_refs(rng: &mut ChaCha8Rng, w: usize) -> Vec<BBRef> {
    // Narrow coordinate ranges force ties on every key.
    let span = (w as u32 / 4).max(3);
    (0..w)
        .map(|i| {
            let top = rng.gen_range(0..span);
            let left = rng.gen_range(0..span);
            BBRef {
                top_rt: top,
                bottom_rt: top + rng.gen_range(0..5),
                left_mz: left,
                right_mz: left + rng.gen_range(0..5),
                strip_id: rng.gen_range(0..4),
                offset: i as u64 * 7 + 16,
            }
        })
        .collect()
}

/// Step-by-step reference partition: five sorted takes, remainder last.
fn partition_oracle(refs: &[BBRef]) -> Vec<Vec<BBRef>> {
    let q = refs.len().div_ceil(6);
    let mut rest = refs.to_vec();
    let mut groups = Vec::new();
    let keys: [fn(&BBRef) -> (i64, u32, u64); 5] = [
        |r| (r.top_rt as i64, r.strip_id, r.offset),
        |r| (r.left_mz as i64, r.strip_id, r.offset),
        |r| (-(r.bottom_rt as i64), r.strip_id, r.offset),
        |r| (-(r.right_mz as i64), r.strip_id, r.offset),
        |r| (r.left_mz as i64, r.strip_id, r.offset),
    ];
    for key in keys {
        rest.sort_by_key(key);
        let take = q.min(rest.len());
        groups.push(rest.drain(..take).collect());
    }
    groups.push(rest);
    groups
}

fn sorted(mut v: Vec<BBRef>) -> Vec<BBRef> {
    v.sort_by_key(|r| r.location());
    v
}

fn check_tree(tree: &RTree, refs: &[BBRef]) -> Result<(), String> {
    let f = tree.params.f as usize;
    let mut leaf_refs: Vec<BBRef> = Vec::new();
    for node in &tree.nodes {
        let union = match &node.kind {
            NodeKind::Leaf(rs) => {
                ensure!(!rs.is_empty() && rs.len() <= f, "leaf holds {} refs", rs.len());
                leaf_refs.extend(rs);
                rs.iter().map(BBRef::rect).reduce(|a, b| a.union(&b)).unwrap()
            }
            NodeKind::Internal(ch) => {
                ensure!(ch.len() >= 2 && ch.len() <= 6, "internal node with {} children", ch.len());
                ch.iter()
                    .map(|&c| tree.nodes[c as usize].mbr)
                    .reduce(|a, b| a.union(&b))
                    .unwrap()
            }
        };
        ensure!(node.mbr == union, "MBR {:?} is not tight ({union:?})", node.mbr);
    }
    ensure!(sorted(leaf_refs) == sorted(refs.to_vec()), "leaves do not partition the input");
    Ok(())
}

fn c2_structure(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut heights = Vec::new();
    for w in [1usize, 6, 7, 200, 201, 1200, 7200, 100_000] {
        let refs = random_refs(&mut rng, w);
        let tree = RTree::build(refs.clone(), IndexParams::default()).map_err(s)?;
        check_tree(&tree, &refs)?;
        let bound = (w as f64 / 200.0).log(6.0).ceil().max(0.0) as u32;
        ensure!(tree.height() <= bound, "W={w}: height {} > {bound}", tree.height());
        heights.push(format!("{w}:{}", tree.height()));

        for _ in 0..5 {
            let n = rng.gen_range(1..=w.min(3000));
            let sample = random_refs(&mut rng, n);
            let got: Vec<Vec<BBRef>> = partition_groups(sample.clone()).into_iter().map(sorted).collect();
            let want: Vec<Vec<BBRef>> = partition_oracle(&sample).into_iter().map(sorted).collect();
            ensure!(got == want, "partition of {n} refs differs from the step-by-step oracle");
        }
    }
    Ok(format!("heights {}", heights.join(" ")))
}

fn c3_dense_sparse(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..300 {
        let h = rng.gen_range(1..=30u32);
        let w = rng.gen_range(1..=30u32);
        let cells = (h * w) as usize;
        let half = cells.div_ceil(2);
        for nnz in [half.saturating_sub(1), half, half + 1] {
            if nnz < 2.min(cells) || nnz > cells {
                continue;
            }
            // Opposite corners pin the tight rect; the rest are random cells.
            let mut all: Vec<(u32, u32)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
            let last = all.len() - 1;
            all.swap(1.min(last), last);
            let (fixed, free) = all.split_at_mut(2.min(cells));
            let need = nnz - fixed.len();
            let picked: Vec<(u32, u32)> = rand::seq::index::sample(&mut rng, free.len(), need)
                .into_iter()
                .map(|i| free[i])
                .chain(fixed.iter().copied())
                .collect();
            let mut entries: Vec<PeakEntry> = picked
                .iter()
                .map(|&(r, c)| PeakEntry::new(100 + r, 7 + c, rng.gen_range(1.0..1e6)))
                .collect();
            entries.sort_by_key(|e| e.key());
            let bb = BoundingBox::from_entries(&entries).ok_or("no BB")?;
            ensure!(bb.cells() == cells as u64, "BB is not tight: {:?}", bb.rect());
            let dense = 2 * nnz >= cells;
            ensure!((bb.repr() == Repr::Dense) == dense, "{h}x{w} with {nnz} entries stored as {:?}", bb.repr());
            let bytes = bb.serialize();
            let payload = u32::from_le_bytes(bytes[28..32].try_into().unwrap()) as usize;
            ensure!(payload == bytes.len() - BB_HEADER_BYTES - 4, "payload length field");
            match bb.repr() {
                Repr::Dense => ensure!(payload == cells * INTENSITY_BYTES, "dense payload {payload} for {cells} cells"),
                Repr::Sparse => ensure!(
                    payload <= nnz * (SPARSE_ENTRY_BYTES + SPARSE_ROW_BYTES),
                    "sparse payload {payload} for {nnz} entries"
                ),
            }
            ensure!(deserialize_bb(&bytes).map_err(s)?.entries() == entries, "round trip");
            checked += 1;
        }
    }
    Ok(format!("{checked} boxes at 50% +/- 1 cell"))
}

fn c4_space(shared: &mut Shared) -> Outcome {
    let run = shared.peaked()?;
    let (mzxml, build) = (run.mzxml_bytes, run.build_time);
    let store = Store::open(&run.store).map_err(s)?;
    let report = space_report(&store, None).map_err(s)?;
    let ratio = report.store_bytes as f64 / mzxml as f64;
    let detail = format!(
        "store {} B / mzXML {} B = {:.1}%; density {:.2}%, {} dense + {} sparse BBs, build {:.1}s",
        report.store_bytes,
        mzxml,
        100.0 * ratio,
        100.0 * report.density,
        report.dense_bbs,
        report.sparse_bbs,
        build.as_secs_f64()
    );
    ensure!((0.04..=0.06).contains(&report.density), "density off target: {detail}");
    ensure!(ratio <= 0.70, "{detail}");
    Ok(detail)
}

fn ms(r: &BenchReport, e: EngineKind, w: Workload) -> f64 {
    r.row(e, w).map_or(f64::NAN, |r| r.mean_access_s * 1e3)
}

fn c5_speed(shared: &mut Shared) -> Outcome {
    let dir = shared.peaked()?.store.clone();
    let report = run_bench(&dir, &BenchConfig::default()).map_err(s)?;
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    use EngineKind::*;
    for w in Workload::ALL {
        let mz = ms(&report, MzRTree, w);
        lines.push(format!(
            "{}: mzrtree {mz:.3} full {:.3} spec {:.3} col {:.3} ms",
            w.name(),
            ms(&report, FullScan, w),
            ms(&report, SpectrumMajor, w),
            ms(&report, ColumnMajor, w)
        ));
        match w {
            Workload::PeptideSmall | Workload::PeptideLarge => {
                if mz > ms(&report, FullScan, w) / 10.0 {
                    failures.push(format!("{} above FullScan/10", w.name()));
                }
            }
            Workload::Chromatogram | Workload::Spectra => {
                let slow = if w == Workload::Chromatogram { SpectrumMajor } else { ColumnMajor };
                if mz > ms(&report, slow, w) {
                    failures.push(format!("{} slower than {}", w.name(), slow.name()));
                }
                let best = [FullScan, SpectrumMajor, ColumnMajor]
                    .into_iter()
                    .map(|e| ms(&report, e, w))
                    .fold(f64::INFINITY, f64::min);
                if mz > 1.5 * best {
                    failures.push(format!("{} above 1.5x best baseline ({:.2}x)", w.name(), mz / best));
                }
            }
        }
    }
    let detail = lines.join("; ");
    ensure!(failures.is_empty(), "{}; {detail}", failures.join(", "));
    Ok(detail)
}

fn c6_density(shared: &mut Shared) -> Outcome {
    let base = GenSpec {
        spectra_count: 2130,
        mz_min: 400.0,
        mz_max: 1800.0,
        resolution: 0.05,
        mode: GenMode::Uniform,
        seed: 6,
        ..GenSpec::default()
    };
    let cfg = BenchConfig {
        engines: vec![EngineKind::MzRTree],
        ..BenchConfig::default()
    };
    let root = shared.root.join("sweep");
    let points = density_sweep(&root, &base, &[0.025, 0.08, 0.16, 0.28], 10, 5.0, IndexParams::default(), &cfg)
        .map_err(s)?;
    std::fs::remove_dir_all(&root).map_err(s)?;
    let worst: Vec<f64> = points.iter().map(|p| p.worst_access_s(EngineKind::MzRTree)).collect();
    let loads: Vec<f64> = points.iter().map(|p| p.load_s(EngineKind::MzRTree)).collect();
    let growth = worst[3] / worst[0];
    let load_spread = loads.iter().copied().fold(0.0, f64::max) / loads.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "worst access {} ms; growth {growth:.2}x; load {} ms, spread {load_spread:.2}x",
        worst.iter().map(|t| format!("{:.2}", t * 1e3)).collect::<Vec<_>>().join("/"),
        loads.iter().map(|t| format!("{:.3}", t * 1e3)).collect::<Vec<_>>().join("/"),
    );
    ensure!(growth <= 5.0, "access growth above 5x: {detail}");
    ensure!(load_spread < 2.0, "load time varies 2x or more: {detail}");
    Ok(detail)
}

fn c7_ms_level(shared: &mut Shared) -> Outcome {
    let spec = GenSpec {
        spectra_count: 1000,
        mz_min: 400.0,
        mz_max: 1800.0,
        resolution: 0.02,
        density: 0.05,
        mode: GenMode::Uniform,
        seed: 7,
        ..GenSpec::default()
    };
    let records = generate_mixed_levels(&spec, &[1, 2]).map_err(s)?;
    let xml = shared.root.join("mixed.mzXML");
    emit_mzxml(records.clone(), PeaksEncoding::F64, &xml).map_err(s)?;
    let cfg = BenchConfig {
        engines: vec![EngineKind::MzRTree],
        ..BenchConfig::default()
    };
    let mut reports = BTreeMap::new();
    for level in [1, 2] {
        let dir = shared.root.join(format!("ms{level}"));
        let opts = BuildOptions {
            ms_level: level,
            resolution: spec.resolution,
            mz_range: Some((spec.mz_min, spec.mz_max)),
            strips: StripChoice::Count(5),
            ..BuildOptions::default()
        };
        build_from_mzxml(&xml, &dir, &opts).map_err(s)?;
        let only: Vec<_> = records.iter().filter(|r| r.ms_level == level).cloned().collect();
        let tree = MzRTree::open(&dir).map_err(s)?;
        let oracle = Oracle::from_records(&only, tree.meta());
        let got = tree.range_query(tree.meta().full_rect()).map_err(s)?.entries;
        ensure!(got == oracle.cells, "level {level} store differs from the filtered oracle");
        let mut rng = ChaCha8Rng::seed_from_u64(level as u64);
        for _ in 0..50 {
            let q = random_rect(&mut rng, tree.meta().rows(), tree.meta().cols());
            ensure!(tree.range_query(q).map_err(s)?.entries == oracle.query(&q), "level {level} rect {q:?}");
        }
        reports.insert(level, run_bench(&dir, &cfg).map_err(s)?);
    }
    std::fs::remove_file(&xml).map_err(s)?;
    let (a, b) = (&reports[&1], &reports[&2]);
    ensure!(a.dataset.nnz == b.dataset.nnz, "nnz differs: {} vs {}", a.dataset.nnz, b.dataset.nnz);
    let mut parts = Vec::new();
    let mut worst = 1.0f64;
    for w in Workload::ALL {
        let (x, y) = (ms(a, EngineKind::MzRTree, w), ms(b, EngineKind::MzRTree, w));
        let ratio = x.max(y) / x.min(y);
        worst = worst.max(ratio);
        parts.push(format!("{} {x:.3}/{y:.3} ms", w.name()));
    }
    let detail = format!("{}; max ratio {worst:.2}x at nnz {}", parts.join(", "), a.dataset.nnz);
    ensure!(worst < 2.0, "{detail}");
    Ok(detail)
}

fn c8_ingest(shared: &mut Shared) -> Outcome {
    let spec = GenSpec {
        spectra_count: 600,
        mz_min: 400.0,
        mz_max: 1000.0,
        resolution: 0.01,
        density: 0.05,
        mode: GenMode::Peaked,
        seed: 8,
        ..GenSpec::default()
    };
    let records: Vec<_> = generate(&spec).map_err(s)?.collect();
    let nnz: u64 = records.iter().map(|r| r.peaks.len() as u64).sum();
    let total: f64 = records.iter().flat_map(|r| r.peaks.iter().map(|p| p.1)).sum();
    let mut parts = Vec::new();
    for enc in [PeaksEncoding::F64, PeaksEncoding::F32] {
        let xml = shared.root.join("fidelity.mzXML");
        emit_mzxml(records.clone(), enc, &xml).map_err(s)?;
        let dir = shared.root.join("fidelity");
        let opts = BuildOptions {
            resolution: spec.resolution,
            mz_range: Some((spec.mz_min, spec.mz_max)),
            strips: StripChoice::Count(4),
            ..BuildOptions::default()
        };
        build_from_mzxml(&xml, &dir, &opts).map_err(s)?;
        let tree = MzRTree::open(&dir).map_err(s)?;
        let got = tree.range_query(tree.meta().full_rect()).map_err(s)?;
        let bits = enc.precision.bits();
        ensure!(got.entries.len() as u64 == nnz, "{bits}-bit: nnz {} != {nnz}", got.entries.len());
        let sum = got.total_intensity();
        let rel = (sum - total).abs() / total;
        if bits == 64 {
            ensure!(sum == total, "64-bit total {sum} != {total}");
        } else {
            ensure!(rel <= 1e-3, "32-bit total off by {rel:e}");
        }
        parts.push(format!("{bits}-bit: nnz {nnz}, rel error {rel:e}"));
    }
    Ok(parts.join("; "))
}
