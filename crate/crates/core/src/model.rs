//! Grid geometry and the shared dataset vocabulary.
//!
//! An LC-MS run is viewed as a matrix whose rows are spectra (indexed by
//! position on the retention-time axis) and whose columns are m/z values on a
//! fixed grid of `resolution` Da. Every other module speaks in these grid
//! coordinates; physical units only appear at the edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stored intensity type. 32-bit unless the `f64-intensity` feature is on.
#[cfg(not(feature = "f64-intensity"))]
pub type Intensity = f32;
#[cfg(feature = "f64-intensity")]
pub type Intensity = f64;

/// Width in bytes of one stored intensity.
pub const INTENSITY_BYTES: usize = std::mem::size_of::<Intensity>();

/// Default bounding-box width in Da.
pub const DEFAULT_BB_WIDTH_DA: f64 = 5.0;

// Absorbs representation error in (mz - mz_min) / resolution before rounding
// or flooring, e.g. (1800 - 400) / 0.001 = 1399999.9999999998.
const GRID_EPS: f64 = 1e-6;

/// Geometry of a gridded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mz_min: f64,
    pub mz_max: f64,
    /// Da per column.
    pub resolution: f64,
    /// Retention time in seconds of each row. Nondecreasing; ties keep scan order.
    pub rt_axis: Vec<f64>,
    pub ms_level: u32,
    /// Number of strips K.
    pub strip_count: u32,
    /// Columns per bounding-box slice.
    pub bb_width_cols: u32,
}

impl DatasetMeta {
    /// Builds and validates a grid, deriving `bb_width_cols` from a width in Da.
    pub fn new(
        mz_min: f64,
        mz_max: f64,
        resolution: f64,
        rt_axis: Vec<f64>,
        ms_level: u32,
        strip_count: u32,
        bb_width_da: f64,
    ) -> Result<Self> {
        if !(bb_width_da > 0.0) || !(resolution > 0.0) {
            return Err(Error::invalid(format!(
                "bb width {bb_width_da} Da and resolution {resolution} must be positive"
            )));
        }
        let bb_width_cols = ((bb_width_da / resolution).round() as u32).max(1);
        let meta = DatasetMeta {
            mz_min,
            mz_max,
            resolution,
            rt_axis,
            ms_level,
            strip_count,
            bb_width_cols,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mz_min < self.mz_max) {
            return Err(Error::invalid(format!(
                "mz_min {} must be below mz_max {}",
                self.mz_min, self.mz_max
            )));
        }
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::invalid(format!(
                "resolution {} must be positive",
                self.resolution
            )));
        }
        if self.cols_f64() > u32::MAX as f64 {
            return Err(Error::invalid("grid has more than 2^32 columns"));
        }
        if self.rt_axis.len() > u32::MAX as usize {
            return Err(Error::invalid("grid has more than 2^32 rows"));
        }
        if let Some(w) = self.rt_axis.windows(2).find(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid(format!(
                "retention-time axis decreases ({} then {})",
                w[0], w[1]
            )));
        }
        if self.ms_level == 0 {
            return Err(Error::invalid("ms_level must be positive"));
        }
        if self.strip_count == 0 {
            return Err(Error::invalid("strip count must be at least 1"));
        }
        if !self.rt_axis.is_empty() && self.strip_count as usize > self.rt_axis.len() {
            return Err(Error::invalid(format!(
                "strip count {} exceeds row count {}",
                self.strip_count,
                self.rt_axis.len()
            )));
        }
        if self.bb_width_cols == 0 {
            return Err(Error::invalid("bb_width_cols must be at least 1"));
        }
        Ok(())
    }

    fn cols_f64(&self) -> f64 {
        ((self.mz_max - self.mz_min) / self.resolution + GRID_EPS).floor() + 1.0
    }

    pub fn rows(&self) -> u32 {
        self.rt_axis.len() as u32
    }

    pub fn cols(&self) -> u32 {
        self.cols_f64() as u32
    }

    /// Grid column of an m/z value, rounding to the nearest grid point.
    pub fn col_of_mz(&self, mz: f64) -> Result<u32> {
        if !(mz >= self.mz_min && mz <= self.mz_max) {
            return Err(Error::Range {
                value: mz,
                lo: self.mz_min,
                hi: self.mz_max,
            });
        }
        let col = ((mz - self.mz_min) / self.resolution).round() as u32;
        Ok(col.min(self.cols() - 1))
    }

    /// m/z value of a grid column's center.
    pub fn mz_of_col(&self, col: u32) -> f64 {
        self.mz_min + col as f64 * self.resolution
    }

    /// Fraction of grid cells holding `nnz` nonzero entries.
    pub fn density(&self, nnz: u64) -> f64 {
        density(nnz, self.rows() as u64, self.cols() as u64)
    }

    /// Rect matching every cell of the grid.
    pub fn full_rect(&self) -> QueryRect {
        if self.rows() == 0 {
            return QueryRect::EMPTY;
        }
        QueryRect::new(-1, self.rows() as i64 - 1, -1, self.cols() as i64 - 1)
    }

    /// Largest grid rect contained in the physical ranges `(rt_lo, rt_hi]` seconds
    /// by `(mz_lo, mz_hi]` Da.
    ///
    /// Bounds follow the same lower-exclusive convention as [`QueryRect`], so a
    /// 5 Da window covers exactly `5 / resolution` columns. Ranges missing the
    /// grid yield [`QueryRect::EMPTY`].
    pub fn query_rect_from_physical(
        &self,
        rt_lo: f64,
        rt_hi: f64,
        mz_lo: f64,
        mz_hi: f64,
    ) -> QueryRect {
        if !(rt_lo < rt_hi) || !(mz_lo < mz_hi) || self.rows() == 0 {
            return QueryRect::EMPTY;
        }
        let first_row = self.rt_axis.partition_point(|&t| t <= rt_lo) as i64;
        let end_row = self.rt_axis.partition_point(|&t| t <= rt_hi) as i64;
        if first_row >= end_row {
            return QueryRect::EMPTY;
        }

        let last_col_idx = self.cols() as i64 - 1;
        let lo = (mz_lo - self.mz_min) / self.resolution;
        let hi = (mz_hi - self.mz_min) / self.resolution;
        let first_col = if lo < 0.0 {
            0
        } else {
            ((lo + GRID_EPS).floor() as i64 + 1).min(last_col_idx + 1)
        };
        let last_col = if hi < 0.0 {
            -1
        } else {
            ((hi + GRID_EPS).floor() as i64).min(last_col_idx)
        };
        if first_col > last_col {
            return QueryRect::EMPTY;
        }
        QueryRect::new(first_row - 1, end_row - 1, first_col - 1, last_col)
    }
}

/// `nnz / (rows * cols)`, or zero on an empty grid.
pub fn density(nnz: u64, rows: u64, cols: u64) -> f64 {
    let cells = rows as f64 * cols as f64;
    if cells == 0.0 {
        0.0
    } else {
        nnz as f64 / cells
    }
}

/// One nonzero cell of the intensity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEntry {
    pub row: u32,
    pub col: u32,
    pub intensity: Intensity,
}

impl PeakEntry {
    pub fn new(row: u32, col: u32, intensity: Intensity) -> Self {
        PeakEntry {
            row,
            col,
            intensity,
        }
    }

    #[inline]
    pub fn key(&self) -> (u32, u32) {
        (self.row, self.col)
    }
}

/// Half-open grid range: matches rows `rt1 < row <= rt2` and columns `mz1 < col <= mz2`.
///
/// Bounds are signed so that `-1` can express "from the first row/column".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryRect {
    pub rt1: i64,
    pub rt2: i64,
    pub mz1: i64,
    pub mz2: i64,
}

impl QueryRect {
    /// Matches nothing.
    pub const EMPTY: QueryRect = QueryRect {
        rt1: 0,
        rt2: 0,
        mz1: 0,
        mz2: 0,
    };

    /// Panics if a lower bound exceeds its upper bound.
    pub fn new(rt1: i64, rt2: i64, mz1: i64, mz2: i64) -> Self {
        assert!(rt1 <= rt2 && mz1 <= mz2, "inverted query rect");
        QueryRect { rt1, rt2, mz1, mz2 }
    }

    pub fn try_new(rt1: i64, rt2: i64, mz1: i64, mz2: i64) -> Result<Self> {
        if rt1 > rt2 || mz1 > mz2 {
            return Err(Error::invalid(format!(
                "inverted rect ({rt1}, {rt2}] x ({mz1}, {mz2}]"
            )));
        }
        Ok(QueryRect { rt1, rt2, mz1, mz2 })
    }

    pub fn is_empty(&self) -> bool {
        self.rt1 >= self.rt2 || self.mz1 >= self.mz2
    }

    #[inline]
    pub fn contains(&self, row: u32, col: u32) -> bool {
        let (r, c) = (row as i64, col as i64);
        self.rt1 < r && r <= self.rt2 && self.mz1 < c && c <= self.mz2
    }

    /// Equivalent closed rectangle in `u32` grid space, or `None` if nothing can match.
    pub fn closed(&self) -> Option<Rect> {
        if self.is_empty() || self.rt2 < 0 || self.mz2 < 0 {
            return None;
        }
        let clamp = |v: i64| v.clamp(0, u32::MAX as i64) as u32;
        Some(Rect {
            row_lo: clamp(self.rt1 + 1),
            row_hi: clamp(self.rt2),
            col_lo: clamp(self.mz1 + 1),
            col_hi: clamp(self.mz2),
        })
    }

    /// Shrinks the rect to the grid's extent.
    pub fn clip(&self, meta: &DatasetMeta) -> QueryRect {
        let rows = meta.rows() as i64;
        let cols = meta.cols() as i64;
        let rt1 = self.rt1.clamp(-1, rows - 1);
        let rt2 = self.rt2.clamp(-1, rows - 1);
        let mz1 = self.mz1.clamp(-1, cols - 1);
        let mz2 = self.mz2.clamp(-1, cols - 1);
        if rt1 >= rt2 || mz1 >= mz2 {
            QueryRect::EMPTY
        } else {
            QueryRect { rt1, rt2, mz1, mz2 }
        }
    }

    /// Number of grid cells matched by the rect.
    pub fn area(&self) -> u64 {
        if self.is_empty() {
            0
        } else {
            (self.rt2 - self.rt1) as u64 * (self.mz2 - self.mz1) as u64
        }
    }
}

/// Closed rectangle in grid coordinates: rows `row_lo..=row_hi`, columns `col_lo..=col_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub row_lo: u32,
    pub row_hi: u32,
    pub col_lo: u32,
    pub col_hi: u32,
}

impl Rect {
    #[inline]
    pub fn intersects(&self, other: &Rect) -> bool {
        self.row_lo <= other.row_hi
            && other.row_lo <= self.row_hi
            && self.col_lo <= other.col_hi
            && other.col_lo <= self.col_hi
    }

    #[inline]
    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.row_lo <= other.row_lo
            && other.row_hi <= self.row_hi
            && self.col_lo <= other.col_lo
            && other.col_hi <= self.col_hi
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            row_lo: self.row_lo.min(other.row_lo),
            row_hi: self.row_hi.max(other.row_hi),
            col_lo: self.col_lo.min(other.col_lo),
            col_hi: self.col_hi.max(other.col_hi),
        }
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        self.intersects(other).then(|| Rect {
            row_lo: self.row_lo.max(other.row_lo),
            row_hi: self.row_hi.min(other.row_hi),
            col_lo: self.col_lo.max(other.col_lo),
            col_hi: self.col_hi.min(other.col_hi),
        })
    }

    pub fn height(&self) -> u32 {
        self.row_hi - self.row_lo + 1
    }

    pub fn area(&self) -> u64 {
        self.height() as u64 * self.width() as u64
    }

    pub fn width(&self) -> u32 {
        self.col_hi - self.col_lo + 1
    }
}

/// One spectrum as read from a file or produced by a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRecord {
    /// Retention time in seconds.
    pub rt: f64,
    pub ms_level: u32,
    /// `(m/z, intensity)` pairs sorted by m/z.
    pub peaks: Vec<(f64, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(res: f64) -> DatasetMeta {
        DatasetMeta::new(400.0, 1800.0, res, vec![0.0, 1.0], 1, 1, 5.0).unwrap()
    }

    #[test]
    fn col_of_mz_examples() {
        let m = meta(0.001);
        assert_eq!(m.col_of_mz(400.0).unwrap(), 0);
        assert_eq!(m.col_of_mz(400.0014).unwrap(), 1);
        // (1800 - 400) / 0.001
        assert_eq!(m.col_of_mz(1800.0).unwrap(), 1_400_000);
        assert_eq!(m.cols(), 1_400_001);
        assert_eq!(m.bb_width_cols, 5000);
    }

    #[test]
    fn col_of_mz_out_of_range_names_value() {
        let m = meta(0.001);
        let err = m.col_of_mz(1900.0).unwrap_err();
        assert!(matches!(err, Error::Range { value, .. } if value == 1900.0));
        assert!(err.to_string().contains("1900"));
        assert!(m.col_of_mz(399.9).is_err());
        assert!(m.col_of_mz(f64::NAN).is_err());
    }

    #[test]
    fn density_examples() {
        assert_eq!(density(1, 2, 2), 0.25);
        assert_eq!(density(0, 7, 9), 0.0);
        assert_eq!(density(0, 0, 0), 0.0);
        let rows = 2130u64;
        let cols = 1_400_001u64;
        let nnz = (0.025 * rows as f64 * cols as f64).round() as u64;
        assert!((density(nnz, rows, cols) - 0.025).abs() < 1e-9);
    }

    #[test]
    fn physical_rect_full_extent() {
        let m = DatasetMeta::new(400.0, 410.0, 0.01, vec![1.0, 2.0, 3.0], 1, 1, 5.0).unwrap();
        let r = m.query_rect_from_physical(f64::NEG_INFINITY, f64::INFINITY, 0.0, 1e9);
        assert_eq!(r, m.full_rect());
        assert_eq!(r.area(), 3 * 1001);
    }

    #[test]
    fn physical_rect_five_da_window() {
        let m = meta(0.001);
        let r = m.query_rect_from_physical(-1.0, 10.0, 400.0, 405.0);
        assert_eq!(r.mz2 - r.mz1, 5000);
        let r = m.query_rect_from_physical(-1.0, 10.0, 1000.0, 1005.0);
        assert_eq!(r.mz2 - r.mz1, 5000);
    }

    #[test]
    fn physical_rect_between_rt_samples_is_empty() {
        let m = DatasetMeta::new(400.0, 410.0, 0.01, vec![1.0, 2.0, 3.0], 1, 1, 5.0).unwrap();
        let r = m.query_rect_from_physical(1.2, 1.8, 400.0, 410.0);
        assert_eq!(r, QueryRect::EMPTY);
        assert!(r.is_empty());
        let r = m.query_rect_from_physical(1.2, 2.0, 400.0, 410.0);
        assert_eq!((r.rt1, r.rt2), (0, 1));
    }

    #[test]
    fn validate_rejects_bad_meta() {
        assert!(DatasetMeta::new(10.0, 5.0, 0.1, vec![0.0], 1, 1, 5.0).is_err());
        assert!(DatasetMeta::new(1.0, 5.0, 0.0, vec![0.0], 1, 1, 5.0).is_err());
        assert!(DatasetMeta::new(1.0, 5.0, 0.1, vec![1.0, 0.0], 1, 1, 5.0).is_err());
        assert!(DatasetMeta::new(1.0, 5.0, 0.1, vec![0.0], 1, 2, 5.0).is_err());
        assert!(DatasetMeta::new(1.0, 5.0, 0.1, vec![0.0, 0.0], 1, 2, 5.0).is_ok());
    }

    #[test]
    fn closed_rect_conversion() {
        let r = QueryRect::new(-1, 4, 9, 20);
        assert_eq!(
            r.closed(),
            Some(Rect {
                row_lo: 0,
                row_hi: 4,
                col_lo: 10,
                col_hi: 20
            })
        );
        assert!(QueryRect::EMPTY.closed().is_none());
        assert!(r.contains(0, 10) && !r.contains(0, 9) && r.contains(4, 20) && !r.contains(5, 20));
    }
}
