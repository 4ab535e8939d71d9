//! Naive engines with fixed access patterns, used as benchmark references.
//!
//! `FullScan` decodes every BB of the store. `SpectrumMajor` keeps each row
//! contiguous and decodes whole rows; `ColumnMajor` keeps each BB-width column
//! block contiguous and decodes whole blocks. The latter two are derived from a
//! built store and live in its `baselines/` directory.

use std::fs::{self, File};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PeakEntry, QueryRect, Rect, INTENSITY_BYTES};
use crate::query::{merge_row_interleaved, QueryResult, QueryStats};
use crate::storage::{intensity_at, u32_at, Store, FORMAT_VERSION};

/// Subdirectory of a store holding derived baseline files.
pub const BASELINE_DIR: &str = "baselines";

const HEADER_BYTES: usize = 32;
const SPECTRUM_MAGIC: [u8; 8] = *b"MZBLSPEC";
const COLUMN_MAGIC: [u8; 8] = *b"MZBLCOLM";
const SPECTRUM_FILE: &str = "spectrum_major.bin";
const COLUMN_FILE: &str = "column_major.bin";
/// `col, intensity`.
const SPECTRUM_ENTRY_BYTES: usize = 4 + INTENSITY_BYTES;
/// `row, col, intensity`.
const COLUMN_ENTRY_BYTES: usize = 8 + INTENSITY_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    FullScan,
    SpectrumMajor,
    ColumnMajor,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [
        BaselineKind::FullScan,
        BaselineKind::SpectrumMajor,
        BaselineKind::ColumnMajor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::FullScan => "full-scan",
            BaselineKind::SpectrumMajor => "spectrum-major",
            BaselineKind::ColumnMajor => "column-major",
        }
    }

    fn file(self) -> Option<(&'static str, [u8; 8])> {
        match self {
            BaselineKind::FullScan => None,
            BaselineKind::SpectrumMajor => Some((SPECTRUM_FILE, SPECTRUM_MAGIC)),
            BaselineKind::ColumnMajor => Some((COLUMN_FILE, COLUMN_MAGIC)),
        }
    }
}

/// File layout shared by both derived baselines: a 32-byte header (magic,
/// version, intensity width, reserved byte, group count, store generation,
/// reserved u64), `count + 1` little-endian u64 byte offsets, then the entries.
struct GroupFile {
    map: Mmap,
    count: usize,
}

impl GroupFile {
    fn open(path: &Path, magic: [u8; 8], generation: u64) -> Result<GroupFile> {
        let file = File::open(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        // SAFETY: baseline files are written once and only replaced wholesale.
        let map = unsafe { Mmap::map(&file)? };
        let count = check_header(&map, magic, generation)?;
        let table_end = HEADER_BYTES + (count + 1) * 8;
        if map.len() < table_end {
            return Err(Error::corruption(HEADER_BYTES as u64, "truncated offset table"));
        }
        let gf = GroupFile { map, count };
        if gf.range(count).1 != gf.map.len() || gf.range(0).0 != table_end {
            return Err(Error::corruption(HEADER_BYTES as u64, "offset table does not span file"));
        }
        Ok(gf)
    }

    /// Byte range of group `i`'s entries; `i == count` gives the end sentinel twice.
    fn range(&self, i: usize) -> (usize, usize) {
        let at = |j: usize| {
            let p = HEADER_BYTES + j.min(self.count) * 8;
            u64::from_le_bytes(self.map[p..p + 8].try_into().unwrap()) as usize
        };
        (at(i), at(i + 1))
    }

    fn group(&self, i: usize) -> Result<&[u8]> {
        let (lo, hi) = self.range(i);
        self.map
            .get(lo..hi)
            .ok_or_else(|| Error::corruption((HEADER_BYTES + i * 8) as u64, "group offset out of file"))
    }
}

fn check_header(bytes: &[u8], magic: [u8; 8], generation: u64) -> Result<usize> {
    if bytes.len() < HEADER_BYTES || bytes[..8] != magic {
        return Err(Error::corruption(0, "bad baseline magic"));
    }
    if u16::from_le_bytes([bytes[8], bytes[9]]) != FORMAT_VERSION
        || bytes[10] as usize != INTENSITY_BYTES
    {
        return Err(Error::Format("baseline written by an incompatible build".into()));
    }
    let stored = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if stored != generation {
        return Err(Error::Consistency(format!(
            "baseline generation {stored:016x} does not match store {generation:016x}"
        )));
    }
    Ok(u32_at(bytes, 12) as usize)
}

fn baseline_path(store: &Store, name: &str) -> PathBuf {
    store.dir().join(BASELINE_DIR).join(name)
}

fn write_group_file<F>(path: &Path, magic: [u8; 8], generation: u64, count: usize, mut fill: F) -> Result<u64>
where
    F: FnMut(usize, &mut Vec<u8>) -> Result<()>,
{
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::with_capacity(1 << 20, File::create(&tmp)?);
    let mut header = [0u8; HEADER_BYTES];
    header[..8].copy_from_slice(&magic);
    header[8..10].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[10] = INTENSITY_BYTES as u8;
    header[12..16].copy_from_slice(&(count as u32).to_le_bytes());
    header[16..24].copy_from_slice(&generation.to_le_bytes());
    w.write_all(&header)?;
    w.write_all(&vec![0u8; (count + 1) * 8])?;

    let mut offsets = Vec::with_capacity(count + 1);
    let mut at = (HEADER_BYTES + (count + 1) * 8) as u64;
    let mut buf = Vec::new();
    for i in 0..count {
        offsets.push(at);
        buf.clear();
        fill(i, &mut buf)?;
        w.write_all(&buf)?;
        at += buf.len() as u64;
    }
    offsets.push(at);

    let mut file = w.into_inner().map_err(|e| e.into_error())?;
    file.seek(SeekFrom::Start(HEADER_BYTES as u64))?;
    let table: Vec<u8> = offsets.iter().flat_map(|o| o.to_le_bytes()).collect();
    file.write_all(&table)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path)?;
    Ok(at)
}

/// Every entry of one strip in `(row, col)` order.
fn strip_entries(store: &Store, strip_id: u32, out: &mut Vec<PeakEntry>) -> Result<()> {
    let mut scratch = Vec::new();
    let mut parts = Vec::new();
    for item in store.strip_views(strip_id) {
        let (_, view) = item?;
        let start = scratch.len();
        view.scan_into(&view.rect, &mut scratch);
        parts.push((start, scratch.len()));
    }
    merge_row_interleaved(&scratch, &parts, out);
    Ok(())
}

/// Writes both derived baseline files for `store`. Returns their sizes in bytes.
pub fn build_baselines(store: &Store) -> Result<(u64, u64)> {
    fs::create_dir_all(store.dir().join(BASELINE_DIR))?;
    let meta = store.meta();
    let generation = store.generation();

    // Rows are filled strip by strip; only one strip's entries are held at a time.
    let mut strip_rows: Vec<PeakEntry> = Vec::new();
    let mut loaded_strip = None;
    let strips = &store.manifest().strips;
    let spectrum = write_group_file(
        &baseline_path(store, SPECTRUM_FILE),
        SPECTRUM_MAGIC,
        generation,
        meta.rows() as usize,
        |row, buf| {
            let row = row as u32;
            let strip = strips
                .iter()
                .find(|s| s.rows().contains(&row))
                .expect("strips cover every row");
            if loaded_strip != Some(strip.id) {
                strip_rows.clear();
                strip_entries(store, strip.id, &mut strip_rows)?;
                loaded_strip = Some(strip.id);
            }
            let lo = strip_rows.partition_point(|e| e.row < row);
            let hi = strip_rows.partition_point(|e| e.row <= row);
            for e in &strip_rows[lo..hi] {
                buf.extend_from_slice(&e.col.to_le_bytes());
                buf.extend_from_slice(&e.intensity.to_le_bytes());
            }
            Ok(())
        },
    )?;

    // BBs are aligned to slices of the block width, so a column block is the
    // concatenation of one BB per strip, already in row-major order.
    let width = meta.bb_width_cols.max(1);
    let blocks = meta.cols().div_ceil(width) as usize;
    let mut by_block: Vec<Vec<(u32, u64)>> = vec![Vec::new(); blocks];
    for s in strips {
        for item in store.strip_views(s.id) {
            let (offset, view) = item?;
            by_block[(view.rect.col_lo / width) as usize].push((s.id, offset));
        }
    }
    let mut scratch = Vec::new();
    let column = write_group_file(
        &baseline_path(store, COLUMN_FILE),
        COLUMN_MAGIC,
        generation,
        blocks,
        |block, buf| {
            for &(strip, offset) in &by_block[block] {
                let bytes = &store.strip_bytes(strip).expect("strip with BBs has a file")
                    [offset as usize..];
                let view = crate::storage::BbView::parse(bytes, offset)?;
                scratch.clear();
                view.scan_into(&view.rect, &mut scratch);
                for e in &scratch {
                    buf.extend_from_slice(&e.row.to_le_bytes());
                    buf.extend_from_slice(&e.col.to_le_bytes());
                    buf.extend_from_slice(&e.intensity.to_le_bytes());
                }
            }
            Ok(())
        },
    )?;
    Ok((spectrum, column))
}

/// Builds the baseline files unless current ones exist. Returns their sizes.
pub fn ensure_baselines(store: &Store) -> Result<(u64, u64)> {
    let current = |kind: BaselineKind| -> Option<u64> {
        let (name, magic) = kind.file()?;
        let path = baseline_path(store, name);
        let gf = GroupFile::open(&path, magic, store.generation()).ok()?;
        Some(gf.map.len() as u64)
    };
    match (current(BaselineKind::SpectrumMajor), current(BaselineKind::ColumnMajor)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => build_baselines(store),
    }
}

/// An opened baseline engine over a store.
pub struct BaselineEngine {
    kind: BaselineKind,
    store: Store,
    file: Option<GroupFile>,
    load_time: Duration,
}

impl std::fmt::Debug for BaselineEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BaselineEngine")
            .field("kind", &self.kind)
            .field("store", &self.store.dir())
            .finish()
    }
}

impl BaselineEngine {
    /// Opens the store and, for the derived layouts, the baseline file, which
    /// must already exist (see [`ensure_baselines`]).
    pub fn open(kind: BaselineKind, dir: &Path) -> Result<BaselineEngine> {
        let start = Instant::now();
        let store = Store::open(dir)?;
        let file = match kind.file() {
            Some((name, magic)) => Some(GroupFile::open(
                &baseline_path(&store, name),
                magic,
                store.generation(),
            )?),
            None => None,
        };
        Ok(BaselineEngine {
            kind,
            store,
            file,
            load_time: start.elapsed(),
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn load_time(&self) -> Duration {
        self.load_time
    }

    pub fn query(&self, rect: QueryRect) -> Result<QueryResult> {
        baseline_query(self, rect)
    }
}

/// Runs `rect` with the engine's access pattern; the entries equal
/// [`crate::query::range_query`]'s.
pub fn baseline_query(engine: &BaselineEngine, rect: QueryRect) -> Result<QueryResult> {
    let start = Instant::now();
    let mut stats = QueryStats::default();
    let mut entries = Vec::new();
    if let Some(q) = rect.clip(engine.store.meta()).closed() {
        match engine.kind {
            BaselineKind::FullScan => full_scan(&engine.store, &q, &mut stats, &mut entries)?,
            BaselineKind::SpectrumMajor => {
                spectrum_major(engine.file.as_ref().unwrap(), &q, &mut stats, &mut entries)?
            }
            BaselineKind::ColumnMajor => column_major(
                engine.file.as_ref().unwrap(),
                engine.store.meta().bb_width_cols.max(1),
                &q,
                &mut stats,
                &mut entries,
            )?,
        }
    }
    stats.elapsed = start.elapsed();
    Ok(QueryResult { entries, stats })
}

fn full_scan(store: &Store, q: &Rect, stats: &mut QueryStats, out: &mut Vec<PeakEntry>) -> Result<()> {
    let mut decoded = Vec::new();
    let mut scratch = Vec::new();
    let mut parts = Vec::new();
    for s in &store.manifest().strips {
        scratch.clear();
        parts.clear();
        for item in store.strip_views(s.id) {
            let (_, view) = item?;
            stats.bbs_touched += 1;
            stats.bytes_read += view.record_len() as u64;
            decoded.clear();
            view.scan_into(&view.rect, &mut decoded);
            let start = scratch.len();
            scratch.extend(decoded.iter().filter(|e| in_rect(q, e.row, e.col)));
            parts.push((start, scratch.len()));
        }
        merge_row_interleaved(&scratch, &parts, out);
    }
    Ok(())
}

#[inline]
fn in_rect(q: &Rect, row: u32, col: u32) -> bool {
    q.row_lo <= row && row <= q.row_hi && q.col_lo <= col && col <= q.col_hi
}

fn spectrum_major(gf: &GroupFile, q: &Rect, stats: &mut QueryStats, out: &mut Vec<PeakEntry>) -> Result<()> {
    for row in q.row_lo..=q.row_hi {
        let bytes = gf.group(row as usize)?;
        stats.bbs_touched += 1;
        stats.bytes_read += bytes.len() as u64;
        for chunk in bytes.chunks_exact(SPECTRUM_ENTRY_BYTES) {
            let col = u32_at(chunk, 0);
            let v = intensity_at(chunk, 4);
            if q.col_lo <= col && col <= q.col_hi {
                out.push(PeakEntry::new(row, col, v));
            }
        }
    }
    Ok(())
}

fn column_major(
    gf: &GroupFile,
    width: u32,
    q: &Rect,
    stats: &mut QueryStats,
    out: &mut Vec<PeakEntry>,
) -> Result<()> {
    let mut scratch = Vec::new();
    let mut parts = Vec::new();
    for block in q.col_lo / width..=q.col_hi / width {
        let bytes = gf.group(block as usize)?;
        stats.bbs_touched += 1;
        stats.bytes_read += bytes.len() as u64;
        let start = scratch.len();
        for chunk in bytes.chunks_exact(COLUMN_ENTRY_BYTES) {
            let row = u32_at(chunk, 0);
            let col = u32_at(chunk, 4);
            let v = intensity_at(chunk, 8);
            if in_rect(q, row, col) {
                scratch.push(PeakEntry::new(row, col, v));
            }
        }
        parts.push((start, scratch.len()));
    }
    merge_row_interleaved(&scratch, &parts, out);
    Ok(())
}
