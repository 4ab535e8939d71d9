//! Strip and bounding-box layout on disk.
//!
//! Rows are split into K contiguous strips, each written to its own file. A
//! strip is tiled into fixed-width m/z slices and every nonempty slice becomes
//! one bounding box with tight coordinates.

mod bb;
mod store;

pub(crate) use bb::{intensity_at, u32_at};

pub use bb::{
    build_bbs, deserialize_bb, deserialize_bb_at, BbView, BoundingBox, Payload, Repr, RowCursor, SparseRow,
    BB_HEADER_BYTES, BB_MAGIC, BB_TRAILER_BYTES, SPARSE_ENTRY_BYTES, SPARSE_ROW_BYTES,
};
pub use store::{
    SizeBreakdown, SourceInfo, Store, StoreBuilder, StoreManifest, StripInfo, StripViews,
    FORMAT_VERSION, INDEX_FILE,
    MANIFEST_FILE, STRIP_HEADER_BYTES, STRIP_MAGIC,
};

use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::IndexParams;
use crate::ingest::open_mzxml;
use crate::model::{DatasetMeta, PeakEntry, DEFAULT_BB_WIDTH_DA, INTENSITY_BYTES};

/// Splits `rows` into `k` contiguous ranges whose sizes differ by at most one,
/// earlier strips taking the larger size.
pub fn plan_strips(rows: u32, k: u32) -> Result<Vec<Range<u32>>> {
    if k == 0 || k > rows {
        return Err(Error::invalid(format!(
            "strip count {k} must be in 1..={rows}"
        )));
    }
    let base = rows / k;
    let extra = rows % k;
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + u32::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// In-memory bytes per nonzero entry while a strip is being built.
pub const ENTRY_FOOTPRINT_BYTES: usize = std::mem::size_of::<PeakEntry>();

/// Estimated in-memory footprint of `rows` rows at the given density.
pub fn estimate_footprint(rows: u32, cols: u32, density: f64) -> f64 {
    rows as f64 * cols as f64 * density.clamp(0.0, 1.0) * ENTRY_FOOTPRINT_BYTES as f64
}

/// Smallest strip count whose largest strip fits `ram_budget_bytes`, clamped to `[1, rows]`.
pub fn choose_k(rows: u32, cols: u32, est_density: f64, ram_budget_bytes: u64) -> u32 {
    if rows <= 1 {
        return 1;
    }
    let per_row = estimate_footprint(1, cols, est_density);
    if per_row <= 0.0 {
        return 1;
    }
    // Relative slack keeps exact fractions of the total from rounding down.
    let rows_per_strip = (ram_budget_bytes as f64 / per_row * (1.0 + 1e-12)).floor();
    if rows_per_strip < 1.0 {
        return rows;
    }
    let k = (rows as f64 / rows_per_strip).ceil() as u32;
    k.clamp(1, rows)
}

/// Bytes a sparse BB payload needs for `nnz` entries spread over `rows` nonempty rows.
pub fn sparse_payload_bytes(nnz: u64, rows: u64) -> u64 {
    rows * SPARSE_ROW_BYTES as u64 + nnz * SPARSE_ENTRY_BYTES as u64
}

/// Bytes a dense BB payload needs for a tight rectangle of `cells` cells.
pub fn dense_payload_bytes(cells: u64) -> u64 {
    cells * INTENSITY_BYTES as u64
}

/// How the number of strips is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StripChoice {
    Count(u32),
    /// Largest in-memory strip footprint in bytes; see [`choose_k`].
    RamBudget(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub ms_level: u32,
    /// Da per grid column.
    pub resolution: f64,
    /// Grid extent; the observed peak range when absent.
    pub mz_range: Option<(f64, f64)>,
    pub strips: StripChoice,
    pub bb_width_da: f64,
    pub params: IndexParams,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            ms_level: 1,
            resolution: 0.01,
            mz_range: None,
            strips: StripChoice::RamBudget(256 << 20),
            bb_width_da: DEFAULT_BB_WIDTH_DA,
            params: IndexParams::default(),
        }
    }
}

/// Builds a store from the scans of one MS level in an mzXML file.
///
/// A first pass collects retention times (and, when needed, the m/z extent and
/// peak count); the second streams spectra into the store strip by strip.
pub fn build_from_mzxml(path: &Path, dir: &Path, opts: &BuildOptions) -> Result<StoreManifest> {
    let need_peaks = opts.mz_range.is_none() || matches!(opts.strips, StripChoice::RamBudget(_));
    let mut rt_axis = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut peaks = 0u64;
    let mut reader = open_mzxml(path, opts.ms_level)?.decode_peaks(need_peaks);
    for rec in &mut reader {
        let rec = rec?;
        rt_axis.push(rec.rt);
        peaks += rec.peaks.len() as u64;
        for &(mz, _) in &rec.peaks {
            lo = lo.min(mz);
            hi = hi.max(mz);
        }
    }
    let (mz_min, mz_max) = match opts.mz_range {
        Some(r) => r,
        None if lo <= hi => (lo, hi),
        None => (0.0, opts.resolution),
    };
    let rows = rt_axis.len() as u32;
    let probe = DatasetMeta::new(mz_min, mz_max, opts.resolution, Vec::new(), opts.ms_level, 1, opts.bb_width_da)?;
    let k = match opts.strips {
        StripChoice::Count(k) => k.min(rows.max(1)),
        StripChoice::RamBudget(budget) => {
            let density = crate::model::density(peaks, rows as u64, probe.cols() as u64);
            choose_k(rows, probe.cols(), density, budget)
        }
    };
    let meta = DatasetMeta::new(mz_min, mz_max, opts.resolution, rt_axis, opts.ms_level, k, opts.bb_width_da)?;

    let mut second = open_mzxml(path, opts.ms_level)?;
    let mut builder = StoreBuilder::create(dir, meta, opts.params)?;
    for rec in &mut second {
        builder.push_record(&rec?)?;
    }
    let source = SourceInfo {
        kind: "mzxml".into(),
        path: Some(path.display().to_string()),
        peak_precisions: second.precisions_seen().iter().copied().collect(),
        description: None,
    };
    builder.with_source(source).finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_strips_examples() {
        assert_eq!(plan_strips(10, 1).unwrap(), vec![0..10]);
        assert_eq!(plan_strips(10, 3).unwrap(), vec![0..4, 4..7, 7..10]);
        let strips = plan_strips(2130, 5).unwrap();
        assert!(strips.iter().all(|s| s.len() == 426));
        assert!(plan_strips(3, 4).is_err());
        assert!(plan_strips(3, 0).is_err());
    }

    #[test]
    fn plan_strips_partitions_rows() {
        for rows in 1..60 {
            for k in 1..=rows {
                let strips = plan_strips(rows, k).unwrap();
                assert_eq!(strips.len(), k as usize);
                assert_eq!(strips[0].start, 0);
                assert_eq!(strips.last().unwrap().end, rows);
                assert!(strips.windows(2).all(|w| w[0].end == w[1].start));
                let sizes: Vec<usize> = strips.iter().map(|s| s.len()).collect();
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(hi - lo <= 1);
                assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn choose_k_examples() {
        assert_eq!(choose_k(100, 1000, 0.05, 1 << 30), 1);
        let total = estimate_footprint(2130, 140_001, 0.05);
        assert_eq!(choose_k(2130, 140_001, 0.05, (total / 2.0) as u64), 2);
        let total = estimate_footprint(2000, 140_001, 0.05);
        assert_eq!(choose_k(2000, 140_001, 0.05, (total / 10.0).ceil() as u64), 10);
        assert_eq!(choose_k(50, 1000, 0.5, 1), 50);
        assert_eq!(choose_k(50, 1000, 0.0, 1), 1);
    }

    #[test]
    fn choose_k_is_minimal() {
        for rows in [1u32, 7, 100, 2130] {
            for budget in [1u64, 1000, 123_456, 10_000_000] {
                let k = choose_k(rows, 5000, 0.1, budget);
                let per_row = estimate_footprint(1, 5000, 0.1);
                let fits = |k: u32| rows.div_ceil(k) as f64 * per_row <= budget as f64;
                if k < rows {
                    assert!(fits(k));
                }
                if k > 1 {
                    assert!(!fits(k - 1), "rows={rows} budget={budget} k={k}");
                }
            }
        }
    }
}
