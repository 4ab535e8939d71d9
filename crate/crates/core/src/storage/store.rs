use std::fs::{self, File};
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use super::bb::{build_bbs, deserialize_bb_at, BbView, Repr};
use super::plan_strips;
use crate::error::{Error, Result};
use crate::index::{BBRef, IndexParams, RTree};
use crate::ingest::{snap_to_grid, IngestStats};
use crate::model::{DatasetMeta, Intensity, SpectrumRecord, INTENSITY_BYTES};

pub const STRIP_MAGIC: [u8; 8] = *b"MZRTSTRP";
pub const FORMAT_VERSION: u16 = 1;
/// magic, version, intensity width, reserved byte, strip id.
pub const STRIP_HEADER_BYTES: usize = 8 + 2 + 1 + 1 + 4;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.bin";

fn strip_file_name(id: u32) -> String {
    format!("strip_{id}.bin")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripInfo {
    pub id: u32,
    pub row_start: u32,
    pub row_end: u32,
    /// Absent when the strip holds no entries.
    pub file: Option<String>,
    pub bb_count: u32,
    pub dense_bbs: u32,
    pub sparse_bbs: u32,
    pub nnz: u64,
    pub bytes: u64,
    pub crc32: u32,
}

impl StripInfo {
    pub fn rows(&self) -> Range<u32> {
        self.row_start..self.row_end
    }
}

/// Where a store's data came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub kind: String,
    pub path: Option<String>,
    /// Peak precisions (bits) seen while reading mzXML.
    #[serde(default)]
    pub peak_precisions: Vec<u32>,
    pub description: Option<String>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u16,
    pub meta: DatasetMeta,
    pub intensity_bytes: u8,
    pub index_params: IndexParams,
    pub nnz: u64,
    pub bb_count: u64,
    pub dense_bbs: u64,
    pub sparse_bbs: u64,
    /// Serialized BB record bytes (headers and checksums included).
    pub dense_payload_bytes: u64,
    pub sparse_payload_bytes: u64,
    pub strips: Vec<StripInfo>,
    pub index_file: String,
    pub index_bytes: u64,
    pub index_crc32: u32,
    /// Hex digest tying the index and strips to this build.
    pub generation: String,
    pub source: SourceInfo,
    pub ingest: Option<IngestStats>,
}

impl StoreManifest {
    pub fn generation_id(&self) -> Result<u64> {
        u64::from_str_radix(&self.generation, 16)
            .map_err(|_| Error::Format(format!("bad generation {:?}", self.generation)))
    }

    pub fn density(&self) -> f64 {
        self.meta.density(self.nnz)
    }
}

fn fnv1a(state: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *state ^= b as u64;
        *state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
}

/// Streams rows into a new store: one strip is held in memory at a time.
pub struct StoreBuilder {
    dir: PathBuf,
    meta: DatasetMeta,
    params: IndexParams,
    strips: Vec<Range<u32>>,
    pending: Vec<(u32, Vec<(u32, Intensity)>)>,
    next_row: u32,
    refs: Vec<BBRef>,
    infos: Vec<StripInfo>,
    totals: Totals,
    source: SourceInfo,
    ingest: IngestStats,
}

#[derive(Default)]
struct Totals {
    nnz: u64,
    dense: u64,
    sparse: u64,
    dense_bytes: u64,
    sparse_bytes: u64,
}

impl StoreBuilder {
    /// Prepares `dir` for a new store, removing files left by a previous build.
    pub fn create(dir: &Path, meta: DatasetMeta, params: IndexParams) -> Result<Self> {
        meta.validate()?;
        params.validate()?;
        let strips = if meta.rows() == 0 {
            Vec::new()
        } else {
            plan_strips(meta.rows(), meta.strip_count)?
        };
        fs::create_dir_all(dir)?;
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name == MANIFEST_FILE
                || name == INDEX_FILE
                || (name.starts_with("strip_") && name.ends_with(".bin"))
            {
                fs::remove_file(entry.path())?;
            }
        }
        let baselines = dir.join(crate::bench::BASELINE_DIR);
        if baselines.is_dir() {
            fs::remove_dir_all(baselines)?;
        }
        Ok(StoreBuilder {
            dir: dir.to_path_buf(),
            meta,
            params,
            strips,
            pending: Vec::new(),
            next_row: 0,
            refs: Vec::new(),
            infos: Vec::new(),
            totals: Totals::default(),
            source: SourceInfo::default(),
            ingest: IngestStats::default(),
        })
    }

    pub fn with_source(mut self, source: SourceInfo) -> Self {
        self.source = source;
        self
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn ingest_stats(&self) -> &IngestStats {
        &self.ingest
    }

    /// Appends the next row. Entries must be sorted by strictly increasing
    /// column and have positive intensity.
    pub fn push_row(&mut self, entries: Vec<(u32, Intensity)>) -> Result<()> {
        let row = self.next_row;
        if row >= self.meta.rows() {
            return Err(Error::invalid(format!(
                "row {row} beyond the {} declared rows",
                self.meta.rows()
            )));
        }
        let cols = self.meta.cols();
        if let Some(bad) = entries.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid(format!(
                "row {row}: columns {} and {} out of order",
                bad[0].0, bad[1].0
            )));
        }
        if let Some(&(c, v)) = entries.iter().find(|&&(c, v)| c >= cols || !(v > 0.0)) {
            return Err(Error::invalid(format!(
                "row {row}: entry ({c}, {v}) outside grid or not positive"
            )));
        }
        self.totals.nnz += entries.len() as u64;
        self.pending.push((row, entries));
        self.next_row += 1;
        let strip = self.infos.len();
        if self.next_row == self.strips[strip].end {
            self.flush_strip()?;
        }
        Ok(())
    }

    /// Snaps a spectrum onto the grid and appends it as the next row.
    pub fn push_record(&mut self, record: &SpectrumRecord) -> Result<()> {
        let row = snap_to_grid(record, &self.meta, &mut self.ingest);
        self.ingest.spectra_read += 1;
        self.push_row(row)
    }

    fn flush_strip(&mut self) -> Result<()> {
        let id = self.infos.len() as u32;
        let range = self.strips[id as usize].clone();
        let rows = std::mem::take(&mut self.pending);
        let bbs = build_bbs(&rows, &self.meta);
        drop(rows);

        let mut info = StripInfo {
            id,
            row_start: range.start,
            row_end: range.end,
            file: None,
            bb_count: bbs.len() as u32,
            dense_bbs: 0,
            sparse_bbs: 0,
            nnz: 0,
            bytes: 0,
            crc32: 0,
        };
        if !bbs.is_empty() {
            let mut buf = Vec::new();
            buf.extend_from_slice(&STRIP_MAGIC);
            buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
            buf.push(INTENSITY_BYTES as u8);
            buf.push(0);
            buf.extend_from_slice(&id.to_le_bytes());
            for bb in &bbs {
                let offset = buf.len() as u64;
                bb.serialize_into(&mut buf);
                let len = buf.len() as u64 - offset;
                info.nnz += bb.nnz as u64;
                match bb.repr() {
                    Repr::Dense => {
                        info.dense_bbs += 1;
                        self.totals.dense_bytes += len;
                    }
                    Repr::Sparse => {
                        info.sparse_bbs += 1;
                        self.totals.sparse_bytes += len;
                    }
                }
                self.refs.push(BBRef {
                    top_rt: bb.top_rt,
                    bottom_rt: bb.bottom_rt,
                    left_mz: bb.left_mz,
                    right_mz: bb.right_mz,
                    strip_id: id,
                    offset,
                });
            }
            let name = strip_file_name(id);
            let mut file = File::create(self.dir.join(&name))?;
            file.write_all(&buf)?;
            file.sync_all()?;
            info.file = Some(name);
            info.bytes = buf.len() as u64;
            info.crc32 = crc32fast::hash(&buf);
        }
        self.totals.dense += info.dense_bbs as u64;
        self.totals.sparse += info.sparse_bbs as u64;
        self.infos.push(info);
        Ok(())
    }

    /// Writes the index and manifest. Every declared row must have been pushed.
    pub fn finish(self) -> Result<StoreManifest> {
        if self.next_row != self.meta.rows() {
            return Err(Error::invalid(format!(
                "store declared {} rows but received {}",
                self.meta.rows(),
                self.next_row
            )));
        }
        let mut gen = 0xcbf2_9ce4_8422_2325u64;
        fnv1a(&mut gen, &serde_json::to_vec(&self.meta)?);
        fnv1a(&mut gen, &self.params.d.to_le_bytes());
        fnv1a(&mut gen, &self.params.f.to_le_bytes());
        for info in &self.infos {
            fnv1a(&mut gen, &info.crc32.to_le_bytes());
            fnv1a(&mut gen, &info.bytes.to_le_bytes());
        }

        let mut tree = RTree::build(self.refs, self.params)?;
        tree.generation = gen;
        let index = tree.serialize();
        let mut file = File::create(self.dir.join(INDEX_FILE))?;
        file.write_all(&index)?;
        file.sync_all()?;

        let manifest = StoreManifest {
            format_version: FORMAT_VERSION,
            meta: self.meta,
            intensity_bytes: INTENSITY_BYTES as u8,
            index_params: self.params,
            nnz: self.totals.nnz,
            bb_count: self.totals.dense + self.totals.sparse,
            dense_bbs: self.totals.dense,
            sparse_bbs: self.totals.sparse,
            dense_payload_bytes: self.totals.dense_bytes,
            sparse_payload_bytes: self.totals.sparse_bytes,
            strips: self.infos,
            index_file: INDEX_FILE.to_string(),
            index_bytes: index.len() as u64,
            index_crc32: crc32fast::hash(&index),
            generation: format!("{gen:016x}"),
            source: self.source,
            ingest: Some(self.ingest),
        };
        let mut file = File::create(self.dir.join(MANIFEST_FILE))?;
        serde_json::to_writer_pretty(&mut file, &manifest)?;
        file.write_all(b"\n")?;
        file.sync_all()?;
        Ok(manifest)
    }
}

/// An opened, immutable store. Strip files are memory-mapped, so BB reads are
/// independent positioned reads and the store can be shared across threads.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    manifest: StoreManifest,
    generation: u64,
    strips: Vec<Option<Mmap>>,
}

/// On-disk sizes of a store's files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBreakdown {
    pub manifest: u64,
    pub index: u64,
    pub strips: u64,
}

impl SizeBreakdown {
    pub fn total(&self) -> u64 {
        self.manifest + self.index + self.strips
    }
}

impl Store {
    /// Opens a store: parses the manifest and maps strip files, checking their
    /// sizes and headers. Full checksum verification is [`Store::verify`].
    pub fn open(dir: &Path) -> Result<Store> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read(&manifest_path).map_err(|e| {
            std::io::Error::new(e.kind(), format!("{}: {e}", manifest_path.display()))
        })?;
        let manifest: StoreManifest = serde_json::from_slice(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "store format version {} is not supported",
                manifest.format_version
            )));
        }
        if manifest.intensity_bytes as usize != INTENSITY_BYTES {
            return Err(Error::Format(format!(
                "store holds {}-byte intensities, this build reads {INTENSITY_BYTES}",
                manifest.intensity_bytes
            )));
        }
        manifest.meta.validate()?;
        let generation = manifest.generation_id()?;

        let mut strips = Vec::with_capacity(manifest.strips.len());
        for (i, info) in manifest.strips.iter().enumerate() {
            if info.id as usize != i {
                return Err(Error::Format(format!("strip table out of order at {i}")));
            }
            let Some(name) = &info.file else {
                strips.push(None);
                continue;
            };
            let path = dir.join(name);
            let file = File::open(&path)
                .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
            // SAFETY: store files are written once by the builder and never modified.
            let map = unsafe { Mmap::map(&file)? };
            if map.len() as u64 != info.bytes {
                return Err(Error::corruption(
                    0,
                    format!("{name} is {} bytes, manifest says {}", map.len(), info.bytes),
                ));
            }
            check_strip_header(&map, info.id)?;
            strips.push(Some(map));
        }
        Ok(Store {
            dir: dir.to_path_buf(),
            manifest,
            generation,
            strips,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.manifest.meta
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Reads and deserializes `index.bin`, checking it belongs to this store.
    pub fn load_index(&self) -> Result<RTree> {
        let bytes = fs::read(self.dir.join(&self.manifest.index_file))?;
        let tree = RTree::load(&bytes)?;
        if tree.generation != self.generation {
            return Err(Error::Consistency(format!(
                "index generation {:016x} does not match store generation {:016x}",
                tree.generation, self.generation
            )));
        }
        Ok(tree)
    }

    /// Recomputes every file checksum against the manifest.
    pub fn verify(&self) -> Result<()> {
        for (info, map) in self.manifest.strips.iter().zip(&self.strips) {
            if let Some(map) = map {
                if crc32fast::hash(map) != info.crc32 {
                    return Err(Error::corruption(
                        0,
                        format!("strip {} checksum mismatch", info.id),
                    ));
                }
            }
        }
        let index = fs::read(self.dir.join(&self.manifest.index_file))?;
        if crc32fast::hash(&index) != self.manifest.index_crc32 {
            return Err(Error::corruption(0, "index.bin checksum mismatch"));
        }
        Ok(())
    }

    pub fn strip_bytes(&self, strip_id: u32) -> Option<&[u8]> {
        self.strips.get(strip_id as usize)?.as_deref()
    }

    fn record_bytes(&self, strip_id: u32, offset: u64) -> Result<&[u8]> {
        let bytes = self.strip_bytes(strip_id).ok_or_else(|| {
            Error::corruption(offset, format!("strip {strip_id} has no data file"))
        })?;
        if offset < STRIP_HEADER_BYTES as u64 || offset >= bytes.len() as u64 {
            return Err(Error::corruption(
                offset,
                format!("offset outside strip {strip_id}"),
            ));
        }
        Ok(&bytes[offset as usize..])
    }

    /// Reads one BB by location, verifying its checksum.
    pub fn read_bb(&self, strip_id: u32, offset: u64) -> Result<super::BoundingBox> {
        let bytes = self.record_bytes(strip_id, offset)?;
        deserialize_bb_at(bytes, offset).map(|(bb, _)| bb)
    }

    /// Zero-copy view of the BB an index ref points at. The record's
    /// coordinates must match the ref.
    pub fn view(&self, r: &BBRef) -> Result<BbView<'_>> {
        let view = BbView::parse(self.record_bytes(r.strip_id, r.offset)?, r.offset)?;
        if view.rect != r.rect() {
            return Err(Error::corruption(
                r.offset,
                format!("BB at strip {} does not match its index entry", r.strip_id),
            ));
        }
        Ok(view)
    }

    /// Every BB record of a strip in file order, without consulting the index.
    pub fn strip_views(&self, strip_id: u32) -> StripViews<'_> {
        StripViews {
            bytes: self.strip_bytes(strip_id).unwrap_or(&[]),
            at: STRIP_HEADER_BYTES,
        }
    }

    pub fn sizes(&self) -> Result<SizeBreakdown> {
        let len = |name: &str| -> Result<u64> { Ok(fs::metadata(self.dir.join(name))?.len()) };
        Ok(SizeBreakdown {
            manifest: len(MANIFEST_FILE)?,
            index: len(&self.manifest.index_file)?,
            strips: self.manifest.strips.iter().map(|s| s.bytes).sum(),
        })
    }
}

fn check_strip_header(bytes: &[u8], id: u32) -> Result<()> {
    if bytes.len() < STRIP_HEADER_BYTES || bytes[0..8] != STRIP_MAGIC {
        return Err(Error::corruption(0, format!("strip {id}: bad magic")));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(Error::corruption(8, format!("strip {id}: version {version}")));
    }
    if bytes[10] as usize != INTENSITY_BYTES {
        return Err(Error::corruption(10, format!("strip {id}: intensity width {}", bytes[10])));
    }
    let stored = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if stored != id {
        return Err(Error::corruption(12, format!("strip file for {stored} used as {id}")));
    }
    Ok(())
}

/// Sequential walk over the BB records of one strip.
pub struct StripViews<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Iterator for StripViews<'a> {
    type Item = Result<(u64, BbView<'a>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.at >= self.bytes.len() {
            return None;
        }
        let offset = self.at as u64;
        match BbView::parse(&self.bytes[self.at..], offset) {
            Ok(view) => {
                self.at += view.record_len();
                Some(Ok((offset, view)))
            }
            Err(e) => {
                self.at = self.bytes.len();
                Some(Err(e))
            }
        }
    }
}
