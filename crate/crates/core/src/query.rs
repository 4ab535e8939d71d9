//! Range queries over an opened store and its index, plus the four named
//! workloads (chromatograms, spectra, small and large peptide windows).

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{BBRef, RTree};
use crate::model::{DatasetMeta, PeakEntry, QueryRect, Rect};
use crate::storage::Store;

/// m/z width of chromatogram and peptide windows, in Da.
pub const WINDOW_DA: f64 = 5.0;
/// Rows in a spectra block.
pub const SPECTRA_ROWS: u32 = 20;
pub const PEPTIDE_SMALL_ROWS: u32 = 60;
pub const PEPTIDE_LARGE_ROWS: u32 = 200;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub bbs_touched: u64,
    pub nodes_visited: u64,
    pub bytes_read: u64,
    /// BB fetch, scan and merge time; excludes opening the store.
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryResult {
    /// Matched entries, strictly sorted by `(row, col)`.
    pub entries: Vec<PeakEntry>,
    pub stats: QueryStats,
}

impl QueryResult {
    pub fn total_intensity(&self) -> f64 {
        self.entries.iter().map(|e| e.intensity as f64).sum()
    }
}

/// Appends the union of `parts` to `out` in `(row, col)` order.
///
/// Each range of `scratch` must be sorted by `(row, col)`, and for any row the
/// columns of an earlier range must all precede those of a later one, which
/// holds for the BBs of one strip taken in slice order.
pub(crate) fn merge_row_interleaved(
    scratch: &[PeakEntry],
    parts: &[(usize, usize)],
    out: &mut Vec<PeakEntry>,
) {
    match parts {
        [] => return,
        [(lo, hi)] => {
            out.extend_from_slice(&scratch[*lo..*hi]);
            return;
        }
        _ => {}
    }
    let mut cursors: Vec<(usize, usize)> = parts.iter().copied().filter(|(a, b)| a < b).collect();
    while !cursors.is_empty() {
        let row = cursors
            .iter()
            .map(|&(at, _)| scratch[at].row)
            .min()
            .unwrap();
        for (at, end) in cursors.iter_mut() {
            let start = *at;
            while *at < *end && scratch[*at].row == row {
                *at += 1;
            }
            out.extend_from_slice(&scratch[start..*at]);
        }
        cursors.retain(|(a, b)| a < b);
    }
}

/// Fetches `refs` (sorted by strip, then offset) and returns their entries
/// inside `q` sorted by `(row, col)`.
pub(crate) fn fetch_and_scan(
    store: &Store,
    refs: &[BBRef],
    q: &Rect,
    stats: &mut QueryStats,
) -> Result<Vec<PeakEntry>> {
    let mut out = Vec::new();
    let mut cursors = Vec::new();
    for strip_refs in refs.chunk_by(|a, b| a.strip_id == b.strip_id) {
        cursors.clear();
        let mut expect = 0usize;
        for r in strip_refs {
            let view = store.view(r)?;
            stats.bbs_touched += 1;
            stats.bytes_read += view.record_len() as u64;
            if let Some(c) = view.row_cursor(q) {
                if let Some(hit) = view.rect.intersection(q) {
                    let frac = hit.area() as f64 / view.rect.area() as f64;
                    expect += (view.nnz as f64 * frac) as usize;
                }
                cursors.push(c);
            }
        }
        out.reserve(expect);
        // Offsets follow slice order, so emitting each row across the
        // cursors in turn keeps `(row, col)` order.
        let lo = cursors.iter().map(|c| c.rows.start).min().unwrap_or(0);
        let hi = cursors.iter().map(|c| c.rows.end).max().unwrap_or(0);
        for row in lo..hi {
            for c in cursors.iter_mut() {
                c.emit_row(row, &mut out);
            }
        }
    }
    Ok(out)
}

/// Returns every stored entry with `rt1 < row <= rt2` and `mz1 < col <= mz2`.
pub fn range_query(store: &Store, index: &RTree, rect: QueryRect) -> Result<QueryResult> {
    let start = Instant::now();
    if index.generation != store.generation() {
        return Err(Error::Consistency(format!(
            "index generation {:016x} does not match store generation {:016x}",
            index.generation,
            store.generation()
        )));
    }
    let mut stats = QueryStats::default();
    let Some(q) = rect.clip(store.meta()).closed() else {
        stats.elapsed = start.elapsed();
        return Ok(QueryResult {
            entries: Vec::new(),
            stats,
        });
    };
    let (refs, index_stats) = index.query(&q);
    stats.nodes_visited = index_stats.nodes_visited;
    let entries = fetch_and_scan(store, &refs, &q, &mut stats)?;
    stats.elapsed = start.elapsed();
    Ok(QueryResult { entries, stats })
}

/// All rows, m/z in `(mz_lo, mz_hi]` Da.
pub fn chromatogram_rect(meta: &DatasetMeta, mz_lo: f64, mz_hi: f64) -> QueryRect {
    meta.query_rect_from_physical(f64::NEG_INFINITY, f64::INFINITY, mz_lo, mz_hi)
}

/// `n_rows` rows starting at `rt_lo_row`, all columns, clipped to the grid.
pub fn spectrum_rect(meta: &DatasetMeta, rt_lo_row: i64, n_rows: u32) -> QueryRect {
    let full = meta.full_rect();
    QueryRect {
        rt1: rt_lo_row - 1,
        rt2: rt_lo_row - 1 + n_rows as i64,
        mz1: full.mz1,
        mz2: full.mz2,
    }
    .clip(meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PeptideSize {
    /// 5 Da by 60 rows.
    Small,
    /// 5 Da by 200 rows.
    Large,
}

impl PeptideSize {
    pub fn rows(self) -> u32 {
        match self {
            PeptideSize::Small => PEPTIDE_SMALL_ROWS,
            PeptideSize::Large => PEPTIDE_LARGE_ROWS,
        }
    }
}

/// A 5 Da window centered on `mz_center` by `size.rows()` rows centered on
/// `rt_center_row`, clipped to the grid.
pub fn peptide_rect(
    meta: &DatasetMeta,
    mz_center: f64,
    rt_center_row: i64,
    size: PeptideSize,
) -> QueryRect {
    let half = WINDOW_DA / 2.0;
    let cols = meta.query_rect_from_physical(
        f64::NEG_INFINITY,
        f64::INFINITY,
        mz_center - half,
        mz_center + half,
    );
    if cols.is_empty() {
        return QueryRect::EMPTY;
    }
    let n = size.rows() as i64;
    let first = rt_center_row - n / 2;
    QueryRect {
        rt1: first - 1,
        rt2: first - 1 + n,
        mz1: cols.mz1,
        mz2: cols.mz2,
    }
    .clip(meta)
}

pub fn chromatogram(store: &Store, index: &RTree, mz_lo: f64, mz_hi: f64) -> Result<QueryResult> {
    range_query(store, index, chromatogram_rect(store.meta(), mz_lo, mz_hi))
}

pub fn spectrum_block(
    store: &Store,
    index: &RTree,
    rt_lo_row: i64,
    n_rows: u32,
) -> Result<QueryResult> {
    range_query(store, index, spectrum_rect(store.meta(), rt_lo_row, n_rows))
}

pub fn peptide_query(
    store: &Store,
    index: &RTree,
    mz_center: f64,
    rt_center_row: i64,
    size: PeptideSize,
) -> Result<QueryResult> {
    range_query(
        store,
        index,
        peptide_rect(store.meta(), mz_center, rt_center_row, size),
    )
}

/// The named query shapes used by benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Workload {
    Chromatogram,
    Spectra,
    PeptideSmall,
    PeptideLarge,
}

impl Workload {
    pub const ALL: [Workload; 4] = [
        Workload::Chromatogram,
        Workload::Spectra,
        Workload::PeptideSmall,
        Workload::PeptideLarge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Workload::Chromatogram => "chrom",
            Workload::Spectra => "spectra",
            Workload::PeptideSmall => "pep-small",
            Workload::PeptideLarge => "pep-large",
        }
    }

    pub fn from_name(name: &str) -> Option<Workload> {
        Workload::ALL.into_iter().find(|w| w.name() == name)
    }

    /// The workload's rect centered at the given m/z and row.
    pub fn rect_at(self, meta: &DatasetMeta, mz_center: f64, row_center: i64) -> QueryRect {
        let half = WINDOW_DA / 2.0;
        match self {
            Workload::Chromatogram => chromatogram_rect(meta, mz_center - half, mz_center + half),
            Workload::Spectra => {
                spectrum_rect(meta, row_center - SPECTRA_ROWS as i64 / 2, SPECTRA_ROWS)
            }
            Workload::PeptideSmall => peptide_rect(meta, mz_center, row_center, PeptideSize::Small),
            Workload::PeptideLarge => peptide_rect(meta, mz_center, row_center, PeptideSize::Large),
        }
    }

    /// `n` rects whose centers sit at the `(i + 0.5) / n` quantiles of both axes,
    /// so the queries span the whole dataset.
    pub fn spanning_rects(self, meta: &DatasetMeta, n: usize) -> Vec<QueryRect> {
        (0..n)
            .map(|i| {
                let frac = (i as f64 + 0.5) / n as f64;
                let mz = meta.mz_min + frac * (meta.mz_max - meta.mz_min);
                let row = (frac * meta.rows() as f64).floor() as i64;
                self.rect_at(meta, mz, row)
            })
            .collect()
    }
}

impl std::fmt::Display for Workload {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A store together with its loaded index.
#[derive(Debug)]
pub struct MzRTree {
    store: Store,
    index: RTree,
    load_time: Duration,
}

impl MzRTree {
    /// Opens the manifest and strips and loads the index into memory.
    pub fn open(dir: &Path) -> Result<MzRTree> {
        let start = Instant::now();
        let store = Store::open(dir)?;
        let index = store.load_index()?;
        Ok(MzRTree {
            store,
            index,
            load_time: start.elapsed(),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn index(&self) -> &RTree {
        &self.index
    }

    pub fn meta(&self) -> &DatasetMeta {
        self.store.meta()
    }

    /// Time spent in [`MzRTree::open`].
    pub fn load_time(&self) -> Duration {
        self.load_time
    }

    pub fn range_query(&self, rect: QueryRect) -> Result<QueryResult> {
        range_query(&self.store, &self.index, rect)
    }

    pub fn chromatogram(&self, mz_lo: f64, mz_hi: f64) -> Result<QueryResult> {
        chromatogram(&self.store, &self.index, mz_lo, mz_hi)
    }

    pub fn spectrum_block(&self, rt_lo_row: i64, n_rows: u32) -> Result<QueryResult> {
        spectrum_block(&self.store, &self.index, rt_lo_row, n_rows)
    }

    pub fn peptide_query(
        &self,
        mz_center: f64,
        rt_center_row: i64,
        size: PeptideSize,
    ) -> Result<QueryResult> {
        peptide_query(&self.store, &self.index, mz_center, rt_center_row, size)
    }
}
