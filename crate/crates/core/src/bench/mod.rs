//! Benchmark protocol: load and access times for mzRTree and the baseline
//! engines over the four workloads, plus density sweeps, concurrent
//! throughput and space accounting.
//!
//! One sweep runs every spanning rect of a workload once; its access time is
//! the sum of the per-query times. Each sweep's results are compared with the
//! reference sweep, and any mismatch aborts the run.

mod baseline;
pub mod plot;

pub use baseline::{
    baseline_query, build_baselines, ensure_baselines, BaselineEngine, BaselineKind, BASELINE_DIR,
};

use std::hint::black_box;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{build_generated, GenSpec};
use crate::index::IndexParams;
use crate::model::{QueryRect, INTENSITY_BYTES};
use crate::query::{MzRTree, QueryResult, Workload};
use crate::storage::{SizeBreakdown, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    MzRTree,
    FullScan,
    SpectrumMajor,
    ColumnMajor,
}

impl EngineKind {
    pub const ALL: [EngineKind; 4] = [
        EngineKind::MzRTree,
        EngineKind::FullScan,
        EngineKind::SpectrumMajor,
        EngineKind::ColumnMajor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::MzRTree => "mzrtree",
            other => other.baseline().unwrap().name(),
        }
    }

    pub fn from_name(name: &str) -> Option<EngineKind> {
        EngineKind::ALL.into_iter().find(|e| e.name() == name)
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            EngineKind::MzRTree => None,
            EngineKind::FullScan => Some(BaselineKind::FullScan),
            EngineKind::SpectrumMajor => Some(BaselineKind::SpectrumMajor),
            EngineKind::ColumnMajor => Some(BaselineKind::ColumnMajor),
        }
    }
}

/// An opened engine.
pub enum Engine {
    MzRTree(MzRTree),
    Baseline(BaselineEngine),
}

impl Engine {
    pub fn open(kind: EngineKind, dir: &Path) -> Result<Engine> {
        Ok(match kind.baseline() {
            None => Engine::MzRTree(MzRTree::open(dir)?),
            Some(b) => Engine::Baseline(BaselineEngine::open(b, dir)?),
        })
    }

    pub fn load_time(&self) -> Duration {
        match self {
            Engine::MzRTree(t) => t.load_time(),
            Engine::Baseline(b) => b.load_time(),
        }
    }

    pub fn query(&self, rect: QueryRect) -> Result<QueryResult> {
        match self {
            Engine::MzRTree(t) => t.range_query(rect),
            Engine::Baseline(b) => b.query(rect),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Spanning rects per workload sweep.
    pub queries: usize,
    /// Timed sweeps per engine and workload; also the number of timed loads.
    pub reps: usize,
    pub engines: Vec<EngineKind>,
    pub workloads: Vec<Workload>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            queries: 10,
            reps: 10,
            engines: EngineKind::ALL.to_vec(),
            workloads: Workload::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub engine: EngineKind,
    pub workload: Workload,
    /// Queries per sweep.
    pub queries: usize,
    pub reps: usize,
    /// Access time of one sweep, in seconds.
    pub mean_access_s: f64,
    pub min_access_s: f64,
    pub max_access_s: f64,
    /// Mean time to open the engine, in seconds.
    pub load_s: f64,
    /// Bytes of BBs, rows or blocks read by one sweep.
    pub bytes_read: u64,
    /// BBs, rows or blocks read by one sweep.
    pub units_read: u64,
    /// Entries returned by one sweep.
    pub entries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub crate_version: String,
    pub intensity_bytes: usize,
    pub optimized: bool,
}

impl Environment {
    pub fn current() -> Environment {
        Environment {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            intensity_bytes: INTENSITY_BYTES,
            optimized: !cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: u32,
    pub cols: u32,
    pub nnz: u64,
    pub density: f64,
    pub ms_level: u32,
    pub strip_count: u32,
    pub bb_count: u64,
    pub dense_bbs: u64,
    pub sparse_bbs: u64,
}

impl DatasetSummary {
    pub fn of(store: &Store) -> DatasetSummary {
        let m = store.manifest();
        DatasetSummary {
            rows: m.meta.rows(),
            cols: m.meta.cols(),
            nnz: m.nnz,
            density: m.density(),
            ms_level: m.meta.ms_level,
            strip_count: m.meta.strip_count,
            bb_count: m.bb_count,
            dense_bbs: m.dense_bbs,
            sparse_bbs: m.sparse_bbs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub workload: Workload,
    pub threads: usize,
    pub queries_run: u64,
    pub elapsed_s: f64,
    pub queries_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: DatasetSummary,
    pub config: BenchConfig,
    pub environment: Environment,
    pub sizes: SizeBreakdown,
    /// Sizes of the spectrum-major and column-major baseline files.
    pub baseline_bytes: Option<(u64, u64)>,
    pub rows: Vec<BenchRow>,
    #[serde(default)]
    pub throughput: Vec<ThroughputRow>,
}

impl BenchReport {
    pub fn row(&self, engine: EngineKind, workload: Workload) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.engine == engine && r.workload == workload)
    }

    pub const CSV_HEADER: &'static str = "engine,workload,queries,reps,mean_access_s,min_access_s,max_access_s,load_s,bytes_read,units_read,entries";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.9},{:.9},{:.9},{:.9},{},{},{}\n",
                r.engine.name(),
                r.workload.name(),
                r.queries,
                r.reps,
                r.mean_access_s,
                r.min_access_s,
                r.max_access_s,
                r.load_s,
                r.bytes_read,
                r.units_read,
                r.entries
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn summarize(times: &[Duration]) -> (f64, f64, f64) {
    let secs: Vec<f64> = times.iter().map(Duration::as_secs_f64).collect();
    let mean = secs.iter().sum::<f64>() / secs.len().max(1) as f64;
    let min = secs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = secs.iter().copied().fold(0.0, f64::max);
    // Summation error can put the mean a few ulps outside [min, max].
    (mean.clamp(min, max), min, max)
}

/// Opens `kind` `reps` times, returning the last instance and the mean load time.
fn open_timed(kind: EngineKind, dir: &Path, reps: usize) -> Result<(Engine, f64)> {
    let mut total = 0.0;
    let mut engine = None;
    for _ in 0..reps.max(1) {
        let e = Engine::open(kind, dir)?;
        total += e.load_time().as_secs_f64();
        engine = Some(e);
    }
    Ok((engine.unwrap(), total / reps.max(1) as f64))
}

fn check_equal(engine: EngineKind, workload: Workload, i: usize, got: &QueryResult, want: &QueryResult) -> Result<()> {
    if got.entries != want.entries {
        return Err(Error::Consistency(format!(
            "{} returned {} entries for {} query {i}, mzrtree returned {}",
            engine.name(),
            got.entries.len(),
            workload.name(),
            want.entries.len()
        )));
    }
    Ok(())
}

/// Runs the benchmark protocol on the store in `dir`, building baseline files
/// first if a baseline engine is requested.
///
/// For each workload, an untimed warm-up sweep of mzRTree provides the
/// reference results; then `reps` timed sweeps run per engine, rotating
/// engines within each repetition, and every sweep is checked against the
/// reference.
pub fn run_bench(dir: &Path, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.queries == 0 || cfg.reps == 0 {
        return Err(Error::invalid("queries and reps must be positive"));
    }
    let store = Store::open(dir)?;
    let dataset = DatasetSummary::of(&store);
    let sizes = store.sizes()?;
    let baseline_bytes = if cfg.engines.iter().any(|e| {
        matches!(e, EngineKind::SpectrumMajor | EngineKind::ColumnMajor)
    }) {
        Some(ensure_baselines(&store)?)
    } else {
        None
    };
    let meta = store.meta().clone();
    drop(store);

    let reference = MzRTree::open(dir)?;
    let mut engines = Vec::new();
    for &kind in &cfg.engines {
        let (engine, load_s) = open_timed(kind, dir, cfg.reps)?;
        engines.push((kind, engine, load_s));
    }

    let mut rows = Vec::new();
    for &workload in &cfg.workloads {
        let rects = workload.spanning_rects(&meta, cfg.queries);
        let want: Vec<QueryResult> = rects
            .iter()
            .map(|r| reference.range_query(*r))
            .collect::<Result<_>>()?;

        // One discarded warm-up sweep per engine, also checked.
        for (kind, engine, _) in &engines {
            for (i, rect) in rects.iter().enumerate() {
                check_equal(*kind, workload, i, &engine.query(*rect)?, &want[i])?;
            }
        }
        let mut times = vec![Vec::with_capacity(cfg.reps); engines.len()];
        let mut per_sweep = vec![(0u64, 0u64, 0u64); engines.len()];
        for _ in 0..cfg.reps {
            for (slot, (kind, engine, _)) in engines.iter().enumerate() {
                let mut sweep = Duration::ZERO;
                let mut counts = (0, 0, 0);
                for (i, rect) in rects.iter().enumerate() {
                    let start = Instant::now();
                    let got = black_box(engine.query(*rect)?);
                    sweep += start.elapsed();
                    check_equal(*kind, workload, i, &got, &want[i])?;
                    counts.0 += got.stats.bytes_read;
                    counts.1 += got.stats.bbs_touched;
                    counts.2 += got.entries.len() as u64;
                }
                times[slot].push(sweep);
                per_sweep[slot] = counts;
            }
        }
        for (slot, (kind, _, load_s)) in engines.iter().enumerate() {
            let (mean, min, max) = summarize(&times[slot]);
            let (bytes_read, units_read, entries) = per_sweep[slot];
            rows.push(BenchRow {
                engine: *kind,
                workload,
                queries: cfg.queries,
                reps: cfg.reps,
                mean_access_s: mean,
                min_access_s: min,
                max_access_s: max,
                load_s: *load_s,
                bytes_read,
                units_read,
                entries,
            });
        }
    }

    Ok(BenchReport {
        dataset,
        config: cfg.clone(),
        environment: Environment::current(),
        sizes,
        baseline_bytes,
        rows,
        throughput: Vec::new(),
    })
}

/// Runs every spanning rect of `workload` `reps` times on each of `threads`
/// threads sharing one opened tree, checking every result.
pub fn run_throughput(
    tree: &MzRTree,
    workload: Workload,
    queries: usize,
    threads: usize,
    reps: usize,
) -> Result<ThroughputRow> {
    if threads == 0 {
        return Err(Error::invalid("threads must be positive"));
    }
    let rects = workload.spanning_rects(tree.meta(), queries);
    let want: Vec<QueryResult> = rects
        .iter()
        .map(|r| tree.range_query(*r))
        .collect::<Result<_>>()?;
    let start = Instant::now();
    let results: Vec<Result<u64>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| -> Result<u64> {
                    let mut n = 0;
                    for _ in 0..reps {
                        for (i, rect) in rects.iter().enumerate() {
                            let got = tree.range_query(*rect)?;
                            check_equal(EngineKind::MzRTree, workload, i, &got, &want[i])?;
                            n += 1;
                        }
                    }
                    Ok(n)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("query thread panicked"))
            .collect()
    });
    let elapsed = start.elapsed().as_secs_f64();
    let mut queries_run = 0;
    for r in results {
        queries_run += r?;
    }
    Ok(ThroughputRow {
        workload,
        threads,
        queries_run,
        elapsed_s: elapsed,
        queries_per_s: queries_run as f64 / elapsed.max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub density: f64,
    pub nnz: u64,
    pub report: BenchReport,
}

impl SweepPoint {
    /// Largest mean access time over the workloads for `engine`.
    pub fn worst_access_s(&self, engine: EngineKind) -> f64 {
        self.report
            .rows
            .iter()
            .filter(|r| r.engine == engine)
            .map(|r| r.mean_access_s)
            .fold(0.0, f64::max)
    }

    pub fn load_s(&self, engine: EngineKind) -> f64 {
        self.report
            .rows
            .iter()
            .find(|r| r.engine == engine)
            .map_or(0.0, |r| r.load_s)
    }
}

/// Builds one generated store per density under `root` (fixed grid and strip
/// count) and benchmarks each.
pub fn density_sweep(
    root: &Path,
    base: &GenSpec,
    densities: &[f64],
    strip_count: u32,
    bb_width_da: f64,
    params: IndexParams,
    cfg: &BenchConfig,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for &density in densities {
        let spec = GenSpec {
            density,
            ..base.clone()
        };
        let dir = root.join(format!("density_{density}"));
        let manifest = build_generated(&spec, &dir, strip_count, bb_width_da, params)?;
        let report = run_bench(&dir, cfg)?;
        points.push(SweepPoint {
            density,
            nnz: manifest.nnz,
            report,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceReport {
    pub sizes: SizeBreakdown,
    pub store_bytes: u64,
    pub mzxml_bytes: Option<u64>,
    /// Store size over mzXML size.
    pub ratio: Option<f64>,
    /// `100 * (1 - ratio)`.
    pub savings_pct: Option<f64>,
    pub nnz: u64,
    pub density: f64,
    pub bb_count: u64,
    pub dense_bbs: u64,
    pub sparse_bbs: u64,
    pub dense_bytes: u64,
    pub sparse_bytes: u64,
}

/// Store size accounting, optionally against the mzXML file it came from.
/// Baseline files are not counted.
pub fn space_report(store: &Store, mzxml: Option<&Path>) -> Result<SpaceReport> {
    let sizes = store.sizes()?;
    let store_bytes = sizes.total();
    let mzxml_bytes = match mzxml {
        Some(p) => Some(
            std::fs::metadata(p)
                .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))?
                .len(),
        ),
        None => None,
    };
    let ratio = mzxml_bytes.map(|m| store_bytes as f64 / m as f64);
    let m = store.manifest();
    Ok(SpaceReport {
        sizes,
        store_bytes,
        mzxml_bytes,
        ratio,
        savings_pct: ratio.map(|r| 100.0 * (1.0 - r)),
        nnz: m.nnz,
        density: m.density(),
        bb_count: m.bb_count,
        dense_bbs: m.dense_bbs,
        sparse_bbs: m.sparse_bbs,
        dense_bytes: m.dense_payload_bytes,
        sparse_bytes: m.sparse_payload_bytes,
    })
}
