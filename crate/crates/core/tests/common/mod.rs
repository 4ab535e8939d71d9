#![allow(dead_code)]

use std::collections::BTreeMap;

use mzrtree::model::{DatasetMeta, Intensity, PeakEntry, QueryRect, SpectrumRecord};

/// Brute-force copy of a dataset: every nonzero cell in `(row, col)` order.
pub struct Oracle {
    pub cells: Vec<PeakEntry>,
}

impl Oracle {
    /// Grids `records` (one per row) by rounding m/z to the nearest column
    /// and summing collisions.
    pub fn from_records(records: &[SpectrumRecord], meta: &DatasetMeta) -> Oracle {
        let cols = meta.cols() as i64;
        let mut cells: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (row, rec) in records.iter().enumerate() {
            for &(mz, v) in &rec.peaks {
                let col = ((mz - meta.mz_min) / meta.resolution).round() as i64;
                if (0..cols).contains(&col) && v > 0.0 {
                    *cells.entry((row as u32, col as u32)).or_default() += v;
                }
            }
        }
        Oracle {
            cells: cells
                .into_iter()
                .map(|((r, c), v)| PeakEntry::new(r, c, v as Intensity))
                .filter(|e| e.intensity > 0.0)
                .collect(),
        }
    }

    pub fn query(&self, q: &QueryRect) -> Vec<PeakEntry> {
        self.cells
            .iter()
            .filter(|e| q.contains(e.row, e.col))
            .copied()
            .collect()
    }

    pub fn nnz(&self) -> u64 {
        self.cells.len() as u64
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().map(|e| e.intensity as f64).sum()
    }
}

/// Random rect with bounds anywhere from before the grid to past its end.
pub fn random_rect<R: rand::Rng>(rng: &mut R, rows: u32, cols: u32) -> QueryRect {
    let mut pick = |n: u32| {
        let a = rng.gen_range(-2..=n as i64 + 1);
        let b = rng.gen_range(-2..=n as i64 + 1);
        (a.min(b), a.max(b))
    };
    let (rt1, rt2) = pick(rows);
    let (mz1, mz2) = pick(cols);
    QueryRect::new(rt1, rt2, mz1, mz2)
}
