//! Bounding boxes: tight tiles of one strip × one m/z slice, with a dense or
//! sparse payload, and their on-disk record format.
//!
//! Record layout (little-endian):
//!
//! ```text
//!  0  [u8; 4]  magic "MZBB"
//!  4  u8       repr (0 = dense, 1 = sparse)
//!  5  u8       intensity width in bytes
//!  6  u16      reserved, zero
//!  8  u32      top_rt      12  u32  bottom_rt
//! 16  u32      left_mz     20  u32  right_mz
//! 24  u32      nnz         28  u32  payload length
//! 32  payload
//!     u32      CRC32 of everything above
//! ```
//!
//! Dense payload: row-major intensities over the tight rectangle, zero where
//! empty. Sparse payload: for each nonempty row, `row - top_rt: u32`,
//! `count: u32`, then `count` pairs of `(col - left_mz: u32, intensity)`.

use crate::error::{Error, Result};
use crate::model::{DatasetMeta, Intensity, PeakEntry, Rect, INTENSITY_BYTES};

pub const BB_MAGIC: [u8; 4] = *b"MZBB";
pub const BB_HEADER_BYTES: usize = 32;
pub const BB_TRAILER_BYTES: usize = 4;
/// Bytes per sparse row header (relative row index and entry count).
pub const SPARSE_ROW_BYTES: usize = 8;
/// Bytes per sparse entry (relative column and intensity).
pub const SPARSE_ENTRY_BYTES: usize = 4 + INTENSITY_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Repr {
    Dense,
    Sparse,
}

impl Repr {
    /// Dense when half or more of the tight rectangle's cells are nonzero.
    pub fn for_occupancy(nnz: u64, cells: u64) -> Repr {
        if 2 * nnz >= cells {
            Repr::Dense
        } else {
            Repr::Sparse
        }
    }

    fn tag(self) -> u8 {
        match self {
            Repr::Dense => 0,
            Repr::Sparse => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    /// Row offset from `top_rt`.
    pub row: u32,
    /// `(column offset from left_mz, intensity)`, sorted by column.
    pub entries: Vec<(u32, Intensity)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(Vec<Intensity>),
    Sparse(Vec<SparseRow>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub top_rt: u32,
    pub bottom_rt: u32,
    pub left_mz: u32,
    pub right_mz: u32,
    pub nnz: u32,
    pub payload: Payload,
}

impl BoundingBox {
    /// Builds a BB over entries sorted by `(row, col)`. Returns `None` if empty.
    pub fn from_entries(entries: &[PeakEntry]) -> Option<BoundingBox> {
        let first = entries.first()?;
        let last = entries.last()?;
        debug_assert!(entries.windows(2).all(|w| w[0].key() < w[1].key()));
        let (left, right) = entries
            .iter()
            .fold((u32::MAX, 0), |(lo, hi), e| (lo.min(e.col), hi.max(e.col)));
        let (top, bottom) = (first.row, last.row);
        let width = right - left + 1;
        let cells = (bottom - top + 1) as u64 * width as u64;
        let nnz = entries.len() as u32;

        let payload = match Repr::for_occupancy(nnz as u64, cells) {
            Repr::Dense => {
                let mut block = vec![0.0 as Intensity; cells as usize];
                for e in entries {
                    block[((e.row - top) * width + (e.col - left)) as usize] = e.intensity;
                }
                Payload::Dense(block)
            }
            Repr::Sparse => {
                let mut rows: Vec<SparseRow> = Vec::new();
                for e in entries {
                    let rel = e.row - top;
                    match rows.last_mut() {
                        Some(r) if r.row == rel => r.entries.push((e.col - left, e.intensity)),
                        _ => rows.push(SparseRow {
                            row: rel,
                            entries: vec![(e.col - left, e.intensity)],
                        }),
                    }
                }
                Payload::Sparse(rows)
            }
        };
        Some(BoundingBox {
            top_rt: top,
            bottom_rt: bottom,
            left_mz: left,
            right_mz: right,
            nnz,
            payload,
        })
    }

    pub fn repr(&self) -> Repr {
        match self.payload {
            Payload::Dense(_) => Repr::Dense,
            Payload::Sparse(_) => Repr::Sparse,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect {
            row_lo: self.top_rt,
            row_hi: self.bottom_rt,
            col_lo: self.left_mz,
            col_hi: self.right_mz,
        }
    }

    pub fn cells(&self) -> u64 {
        self.rect().height() as u64 * self.rect().width() as u64
    }

    /// All nonzero entries sorted by `(row, col)`.
    pub fn entries(&self) -> Vec<PeakEntry> {
        let mut out = Vec::with_capacity(self.nnz as usize);
        match &self.payload {
            Payload::Dense(block) => {
                let width = self.rect().width();
                for (i, &v) in block.iter().enumerate() {
                    if v != 0.0 {
                        let i = i as u32;
                        out.push(PeakEntry::new(
                            self.top_rt + i / width,
                            self.left_mz + i % width,
                            v,
                        ));
                    }
                }
            }
            Payload::Sparse(rows) => {
                for r in rows {
                    for &(c, v) in &r.entries {
                        out.push(PeakEntry::new(self.top_rt + r.row, self.left_mz + c, v));
                    }
                }
            }
        }
        out
    }

    /// Entries inside the half-open rect, sorted by `(row, col)`.
    pub fn scan(&self, rect: &crate::model::QueryRect) -> Vec<PeakEntry> {
        self.entries()
            .into_iter()
            .filter(|e| rect.contains(e.row, e.col))
            .collect()
    }

    pub fn payload_len(&self) -> usize {
        match &self.payload {
            Payload::Dense(block) => block.len() * INTENSITY_BYTES,
            Payload::Sparse(rows) => rows
                .iter()
                .map(|r| SPARSE_ROW_BYTES + r.entries.len() * SPARSE_ENTRY_BYTES)
                .sum(),
        }
    }

    /// Total serialized size including header and trailing checksum.
    pub fn record_len(&self) -> usize {
        BB_HEADER_BYTES + self.payload_len() + BB_TRAILER_BYTES
    }

    pub fn serialize_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.reserve(self.record_len());
        out.extend_from_slice(&BB_MAGIC);
        out.push(self.repr().tag());
        out.push(INTENSITY_BYTES as u8);
        out.extend_from_slice(&0u16.to_le_bytes());
        for v in [
            self.top_rt,
            self.bottom_rt,
            self.left_mz,
            self.right_mz,
            self.nnz,
            self.payload_len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.payload {
            Payload::Dense(block) => {
                for v in block {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Sparse(rows) => {
                for r in rows {
                    out.extend_from_slice(&r.row.to_le_bytes());
                    out.extend_from_slice(&(r.entries.len() as u32).to_le_bytes());
                    for (c, v) in &r.entries {
                        out.extend_from_slice(&c.to_le_bytes());
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.serialize_into(&mut out);
        out
    }
}

/// Tiles one strip's rows into fixed-width column slices and emits one tight
/// BB per nonempty slice, in increasing slice order.
///
/// `rows` holds `(row index, entries sorted by column)` in increasing row order.
pub fn build_bbs(rows: &[(u32, Vec<(u32, Intensity)>)], meta: &DatasetMeta) -> Vec<BoundingBox> {
    let width = meta.bb_width_cols;
    let slices = (meta.cols() as usize).div_ceil(width as usize);
    let mut per_slice: Vec<Vec<PeakEntry>> = vec![Vec::new(); slices];
    for (row, entries) in rows {
        for &(col, v) in entries {
            per_slice[(col / width) as usize].push(PeakEntry::new(*row, col, v));
        }
    }
    per_slice
        .iter()
        .filter_map(|entries| BoundingBox::from_entries(entries))
        .collect()
}

#[inline]
pub(crate) fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

#[inline]
pub(crate) fn intensity_at(bytes: &[u8], at: usize) -> Intensity {
    Intensity::from_le_bytes(bytes[at..at + INTENSITY_BYTES].try_into().unwrap())
}

/// Zero-copy view over one serialized BB record.
///
/// Construction validates the header and length framing; the payload checksum
/// is checked only by [`BbView::verify_checksum`] and [`deserialize_bb`].
#[derive(Debug, Clone, Copy)]
pub struct BbView<'a> {
    pub rect: Rect,
    pub repr: Repr,
    pub nnz: u32,
    record: &'a [u8],
}

impl<'a> BbView<'a> {
    /// Parses the record starting at `bytes[0]`; `base` is its offset in the
    /// enclosing file, used in error messages.
    pub fn parse(bytes: &'a [u8], base: u64) -> Result<BbView<'a>> {
        if bytes.len() < BB_HEADER_BYTES {
            return Err(Error::corruption(base, "truncated BB header"));
        }
        if bytes[0..4] != BB_MAGIC {
            return Err(Error::corruption(base, "bad BB record magic"));
        }
        let repr = match bytes[4] {
            0 => Repr::Dense,
            1 => Repr::Sparse,
            other => return Err(Error::corruption(base + 4, format!("unknown BB repr {other}"))),
        };
        if bytes[5] as usize != INTENSITY_BYTES {
            return Err(Error::corruption(
                base + 5,
                format!(
                    "BB stores {}-byte intensities, this build reads {INTENSITY_BYTES}",
                    bytes[5]
                ),
            ));
        }
        let rect = Rect {
            row_lo: u32_at(bytes, 8),
            row_hi: u32_at(bytes, 12),
            col_lo: u32_at(bytes, 16),
            col_hi: u32_at(bytes, 20),
        };
        if rect.row_lo > rect.row_hi || rect.col_lo > rect.col_hi {
            return Err(Error::corruption(base + 8, "inverted BB coordinates"));
        }
        let nnz = u32_at(bytes, 24);
        let payload_len = u32_at(bytes, 28) as usize;
        let total = BB_HEADER_BYTES + payload_len + BB_TRAILER_BYTES;
        if bytes.len() < total {
            return Err(Error::corruption(
                base + BB_HEADER_BYTES as u64,
                format!("truncated BB payload: need {total} bytes, have {}", bytes.len()),
            ));
        }
        if repr == Repr::Dense {
            let cells = rect.height() as u64 * rect.width() as u64;
            if cells * INTENSITY_BYTES as u64 != payload_len as u64 {
                return Err(Error::corruption(base + 28, "dense payload length mismatch"));
            }
        }
        Ok(BbView {
            rect,
            repr,
            nnz,
            record: &bytes[..total],
        })
    }

    /// Serialized size of the record including header and checksum.
    pub fn record_len(&self) -> usize {
        self.record.len()
    }

    fn payload(&self) -> &'a [u8] {
        &self.record[BB_HEADER_BYTES..self.record.len() - BB_TRAILER_BYTES]
    }

    pub fn verify_checksum(&self, base: u64) -> Result<()> {
        let body = self.record.len() - BB_TRAILER_BYTES;
        let stored = u32_at(self.record, body);
        if crc32fast::hash(&self.record[..body]) != stored {
            return Err(Error::corruption(base + body as u64, "BB checksum mismatch"));
        }
        Ok(())
    }

    /// Appends the entries inside the closed rect `q` to `out`, sorted by `(row, col)`.
    ///
    /// Rows outside `q` are skipped without touching their entries.
    pub fn scan_into(&self, q: &Rect, out: &mut Vec<PeakEntry>) {
        if let Some(mut cursor) = self.row_cursor(q) {
            for row in cursor.rows.clone() {
                cursor.emit_row(row, out);
            }
        }
    }

    /// Row-at-a-time reader over the part of this BB inside `q`, or `None`
    /// when they do not intersect.
    pub fn row_cursor(&self, q: &Rect) -> Option<RowCursor<'a>> {
        let bb = self.rect;
        if !bb.intersects(q) {
            return None;
        }
        let col_lo = bb.col_lo.max(q.col_lo);
        let col_hi = bb.col_hi.min(q.col_hi);
        Some(RowCursor {
            rect: bb,
            repr: self.repr,
            payload: self.payload(),
            rows: bb.row_lo.max(q.row_lo)..bb.row_hi.min(q.row_hi) + 1,
            rel_lo: col_lo - bb.col_lo,
            rel_hi: col_hi - bb.col_lo,
            at: 0,
        })
    }
}

/// Emits one BB's entries row by row, so the BBs of a strip can be read in
/// lockstep and produce `(row, col)` order without a merge.
#[derive(Debug, Clone)]
pub struct RowCursor<'a> {
    rect: Rect,
    repr: Repr,
    payload: &'a [u8],
    /// Rows of the BB inside the query.
    pub rows: std::ops::Range<u32>,
    rel_lo: u32,
    rel_hi: u32,
    /// Sparse only: offset of the next unread row header.
    at: usize,
}

impl RowCursor<'_> {
    /// Appends the entries of `row` inside the query. Rows must be requested
    /// in increasing order; rows outside [`RowCursor::rows`] emit nothing.
    #[inline]
    pub fn emit_row(&mut self, row: u32, out: &mut Vec<PeakEntry>) {
        if !self.rows.contains(&row) {
            return;
        }
        let payload = self.payload;
        match self.repr {
            Repr::Dense => {
                let width = self.rect.width() as usize;
                let base = (row - self.rect.row_lo) as usize * width;
                let lo = (base + self.rel_lo as usize) * INTENSITY_BYTES;
                let hi = (base + self.rel_hi as usize + 1) * INTENSITY_BYTES;
                push_nonzero(out, row, self.rect.col_lo + self.rel_lo, &payload[lo..hi]);
            }
            Repr::Sparse => {
                while self.at + SPARSE_ROW_BYTES <= payload.len() {
                    let at = self.at;
                    let r = self.rect.row_lo + u32_at(payload, at);
                    if r > row {
                        return;
                    }
                    let start = at + SPARSE_ROW_BYTES;
                    // Clamped so a damaged count cannot read past the payload.
                    let count = (u32_at(payload, at + 4) as usize)
                        .min((payload.len() - start) / SPARSE_ENTRY_BYTES);
                    let end = start + count * SPARSE_ENTRY_BYTES;
                    self.at = end;
                    if r < row {
                        continue;
                    }
                    let entries = &payload[start..end];
                    let first = if self.rel_lo == 0 {
                        0
                    } else {
                        partition_point_col(entries, count, self.rel_lo)
                    };
                    out.reserve(count - first);
                    for e in entries[first * SPARSE_ENTRY_BYTES..].chunks_exact(SPARSE_ENTRY_BYTES) {
                        let rel = u32_at(e, 0);
                        if rel > self.rel_hi {
                            break;
                        }
                        out.push(PeakEntry::new(row, self.rect.col_lo + rel, intensity_at(e, 4)));
                    }
                    return;
                }
            }
        }
    }
}

/// Appends the nonzero cells of one dense row segment starting at `col`.
#[inline]
fn push_nonzero(out: &mut Vec<PeakEntry>, row: u32, col: u32, cells: &[u8]) {
    let n = cells.len() / INTENSITY_BYTES;
    out.reserve(n);
    let mut len = out.len();
    let ptr = out.as_mut_ptr();
    for (i, cell) in cells.chunks_exact(INTENSITY_BYTES).enumerate() {
        let v = Intensity::from_le_bytes(cell.try_into().unwrap());
        // Every cell is written and the length advances only past nonzero
        // ones, which avoids a data-dependent branch.
        // SAFETY: `len <= old_len + i < old_len + n <= capacity`.
        unsafe { ptr.add(len).write(PeakEntry::new(row, col + i as u32, v)) };
        len += usize::from(v != 0.0);
    }
    // SAFETY: every slot below `len` was initialized above or before the call.
    unsafe { out.set_len(len) };
}

/// First entry index whose relative column is `>= target`.
#[inline]
fn partition_point_col(entries: &[u8], count: usize, target: u32) -> usize {
    let (mut lo, mut hi) = (0usize, count);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if u32_at(entries, mid * SPARSE_ENTRY_BYTES) < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Fully decodes and validates one BB record, returning it and the number of
/// bytes consumed. `base` is the record's offset for error reporting.
pub fn deserialize_bb_at(bytes: &[u8], base: u64) -> Result<(BoundingBox, usize)> {
    let view = BbView::parse(bytes, base)?;
    view.verify_checksum(base)?;
    let rect = view.rect;
    let payload = view.payload();
    let width = rect.width();
    let height = rect.height();
    let bb_payload = match view.repr {
        Repr::Dense => {
            let block: Vec<Intensity> = payload
                .chunks_exact(INTENSITY_BYTES)
                .map(|c| Intensity::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let nnz = block.iter().filter(|v| **v != 0.0).count();
            if nnz != view.nnz as usize {
                return Err(Error::corruption(base + 24, "dense nnz mismatch"));
            }
            Payload::Dense(block)
        }
        Repr::Sparse => {
            let mut rows = Vec::new();
            let mut at = 0usize;
            let mut seen = 0usize;
            let mut prev_row: Option<u32> = None;
            let err = |at: usize, msg: &str| {
                Error::corruption(base + (BB_HEADER_BYTES + at) as u64, msg.to_string())
            };
            while at < payload.len() {
                if at + SPARSE_ROW_BYTES > payload.len() {
                    return Err(err(at, "truncated sparse row header"));
                }
                let row = u32_at(payload, at);
                let count = u32_at(payload, at + 4) as usize;
                if row >= height || prev_row.is_some_and(|p| row <= p) || count == 0 {
                    return Err(err(at, "invalid sparse row header"));
                }
                prev_row = Some(row);
                at += SPARSE_ROW_BYTES;
                if at + count * SPARSE_ENTRY_BYTES > payload.len() {
                    return Err(err(at, "truncated sparse row"));
                }
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let col = u32_at(payload, at);
                    let v = intensity_at(payload, at + 4);
                    if col >= width || entries.last().is_some_and(|&(p, _)| col <= p) {
                        return Err(err(at, "invalid sparse column"));
                    }
                    entries.push((col, v));
                    at += SPARSE_ENTRY_BYTES;
                }
                seen += count;
                rows.push(SparseRow { row, entries });
            }
            if seen != view.nnz as usize {
                return Err(Error::corruption(base + 24, "sparse nnz mismatch"));
            }
            Payload::Sparse(rows)
        }
    };
    let bb = BoundingBox {
        top_rt: rect.row_lo,
        bottom_rt: rect.row_hi,
        left_mz: rect.col_lo,
        right_mz: rect.col_hi,
        nnz: view.nnz,
        payload: bb_payload,
    };
    Ok((bb, view.record_len()))
}

pub fn deserialize_bb(bytes: &[u8]) -> Result<BoundingBox> {
    deserialize_bb_at(bytes, 0).map(|(bb, _)| bb)
}
