//! Streaming reader for the mzXML subset needed to build a store.
//!
//! Only `scan` and `peaks` elements are interpreted. Peaks must be
//! uncompressed, network byte order, interleaved `(m/z, intensity)` pairs at
//! 32 or 64 bit precision. Memory use is bounded by one scan's peak list.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use flate2::read::MultiGzDecoder;
use quick_xml::events::{BytesStart, Event};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DatasetMeta, Intensity, SpectrumRecord};

/// Float width of an encoded peak array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    Bits32,
    Bits64,
}

impl Precision {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::Bits32),
            64 => Ok(Precision::Bits64),
            other => Err(Error::Unsupported(format!("peak precision {other}"))),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Precision::Bits32 => 32,
            Precision::Bits64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }
}

/// Encoding of a peaks element. Byte order is always network (big-endian) and
/// pairs are always interleaved m/z then intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeaksEncoding {
    pub precision: Precision,
}

impl PeaksEncoding {
    pub const F32: PeaksEncoding = PeaksEncoding {
        precision: Precision::Bits32,
    };
    pub const F64: PeaksEncoding = PeaksEncoding {
        precision: Precision::Bits64,
    };
}

/// Counters accumulated while ingesting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub spectra_read: u64,
    pub peaks_read: u64,
    pub peaks_dropped_out_of_range: u64,
    pub collisions_summed: u64,
}

/// Decodes a Base64 peak array into `(m/z, intensity)` pairs.
pub fn decode_peaks(b64: &[u8], enc: PeaksEncoding) -> Result<Vec<(f64, f64)>> {
    let text: Vec<u8> = b64
        .iter()
        .copied()
        .filter(|b| !b.is_ascii_whitespace())
        .collect();
    let bytes = STANDARD
        .decode(&text)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let width = enc.precision.bytes();
    let pair = 2 * width;
    if bytes.len() % pair != 0 {
        return Err(Error::Truncated {
            len: bytes.len(),
            pair,
        });
    }
    let peaks = match enc.precision {
        Precision::Bits32 => bytes
            .chunks_exact(pair)
            .map(|c| {
                let mz = f32::from_be_bytes(c[0..4].try_into().unwrap());
                let it = f32::from_be_bytes(c[4..8].try_into().unwrap());
                (mz as f64, it as f64)
            })
            .collect(),
        Precision::Bits64 => bytes
            .chunks_exact(pair)
            .map(|c| {
                let mz = f64::from_be_bytes(c[0..8].try_into().unwrap());
                let it = f64::from_be_bytes(c[8..16].try_into().unwrap());
                (mz, it)
            })
            .collect(),
    };
    Ok(peaks)
}

/// Encodes pairs as Base64 of big-endian interleaved floats.
pub fn encode_peaks(peaks: &[(f64, f64)], enc: PeaksEncoding) -> String {
    let mut bytes = Vec::with_capacity(peaks.len() * 2 * enc.precision.bytes());
    for &(mz, it) in peaks {
        match enc.precision {
            Precision::Bits32 => {
                bytes.extend_from_slice(&(mz as f32).to_be_bytes());
                bytes.extend_from_slice(&(it as f32).to_be_bytes());
            }
            Precision::Bits64 => {
                bytes.extend_from_slice(&mz.to_be_bytes());
                bytes.extend_from_slice(&it.to_be_bytes());
            }
        }
    }
    STANDARD.encode(bytes)
}

/// Parses an `xs:duration` of the form `PT<seconds>S`.
pub fn parse_retention_time(text: &str) -> Result<f64> {
    let bad = || Error::Format(format!("retention time {text:?} is not of the form PT<number>S"));
    let inner = text
        .trim()
        .strip_prefix("PT")
        .and_then(|s| s.strip_suffix('S'))
        .ok_or_else(bad)?;
    let secs: f64 = inner.parse().map_err(|_| bad())?;
    if !secs.is_finite() || secs < 0.0 {
        return Err(bad());
    }
    Ok(secs)
}

/// Maps a spectrum's peaks onto grid columns.
///
/// Peaks outside the m/z range are dropped and counted, peaks that land on an
/// already occupied column are summed into it, and nonpositive intensities are
/// discarded. The result is sorted by column.
pub fn snap_to_grid(
    record: &SpectrumRecord,
    meta: &DatasetMeta,
    stats: &mut IngestStats,
) -> Vec<(u32, Intensity)> {
    let mut cells: Vec<(u32, f64)> = Vec::with_capacity(record.peaks.len());
    let mut sorted = true;
    for &(mz, intensity) in &record.peaks {
        stats.peaks_read += 1;
        let Ok(col) = meta.col_of_mz(mz) else {
            stats.peaks_dropped_out_of_range += 1;
            continue;
        };
        if !(intensity > 0.0) {
            continue;
        }
        if let Some(&(last, _)) = cells.last() {
            sorted &= last <= col;
        }
        cells.push((col, intensity));
    }
    if !sorted {
        cells.sort_by_key(|&(c, _)| c);
    }

    let mut row: Vec<(u32, f64)> = Vec::with_capacity(cells.len());
    for (col, intensity) in cells {
        match row.last_mut() {
            Some((last, acc)) if *last == col => {
                *acc += intensity;
                stats.collisions_summed += 1;
            }
            _ => row.push((col, intensity)),
        }
    }
    row.into_iter()
        .map(|(c, i)| (c, i as Intensity))
        .filter(|&(_, i)| i > 0.0)
        .collect()
}

/// Opens a plain or gzip-compressed mzXML file.
pub fn open_mzxml(path: &Path, wanted_ms_level: u32) -> Result<MzXmlReader<Box<dyn BufRead>>> {
    let file = File::open(path)?;
    let mut buffered = BufReader::with_capacity(1 << 16, file);
    let gz = buffered.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    let inner: Box<dyn BufRead> = if gz {
        Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(buffered)))
    } else {
        Box::new(buffered)
    };
    Ok(MzXmlReader::new(inner, wanted_ms_level))
}

/// Parses mzXML from an in-memory or arbitrary reader.
pub fn parse_mzxml<R: Read>(stream: R, wanted_ms_level: u32) -> MzXmlReader<BufReader<R>> {
    MzXmlReader::new(BufReader::new(stream), wanted_ms_level)
}

#[derive(Debug)]
struct ScanFrame {
    num: String,
    ms_level: u32,
    rt: Option<f64>,
    done: bool,
}

/// Pull parser yielding one [`SpectrumRecord`] per scan at the wanted MS level,
/// in document order. Nested scans (tandem scans inside survey scans) are handled.
pub struct MzXmlReader<R: BufRead> {
    reader: quick_xml::Reader<R>,
    wanted: u32,
    buf: Vec<u8>,
    stack: Vec<ScanFrame>,
    stats: IngestStats,
    precisions: BTreeSet<u32>,
    decode: bool,
    finished: bool,
}

impl<R: BufRead> MzXmlReader<R> {
    pub fn new(inner: R, wanted_ms_level: u32) -> Self {
        let mut reader = quick_xml::Reader::from_reader(inner);
        reader.config_mut().trim_text(true);
        MzXmlReader {
            reader,
            wanted: wanted_ms_level,
            buf: Vec::with_capacity(1 << 16),
            stack: Vec::new(),
            stats: IngestStats::default(),
            precisions: BTreeSet::new(),
            decode: true,
            finished: false,
        }
    }

    /// When disabled, records carry no peaks; only retention times and levels
    /// are read. Used by a first pass that only needs the row axis.
    pub fn decode_peaks(mut self, decode: bool) -> Self {
        self.decode = decode;
        self
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    /// Peak precisions (in bits) encountered so far in wanted scans.
    pub fn precisions_seen(&self) -> &BTreeSet<u32> {
        &self.precisions
    }

    fn parse_error(&self, e: impl std::fmt::Display) -> Error {
        Error::Parse {
            offset: self.reader.error_position(),
            message: e.to_string(),
        }
    }

    fn open_scan(&mut self, e: &BytesStart) -> Result<ScanFrame> {
        let mut num = None;
        let mut level = None;
        let mut rt = None;
        for attr in e.attributes() {
            let attr = attr.map_err(|err| self.parse_error(err))?;
            let value = std::str::from_utf8(&attr.value)
                .map_err(|err| self.parse_error(err))?
                .to_owned();
            match attr.key.local_name().as_ref() {
                b"num" => num = Some(value),
                b"msLevel" => level = Some(value),
                b"retentionTime" => rt = Some(value),
                _ => {}
            }
        }
        let num = num.unwrap_or_else(|| format!("#{}", self.stats.spectra_read + 1));
        let schema = |message: String| Error::Schema {
            scan: num.clone(),
            message,
        };
        let level = level.ok_or_else(|| schema("missing msLevel attribute".into()))?;
        let ms_level: u32 = level
            .trim()
            .parse()
            .map_err(|_| schema(format!("msLevel {level:?} is not a positive integer")))?;
        let rt = if ms_level == self.wanted {
            let text = rt.ok_or_else(|| schema("missing retentionTime attribute".into()))?;
            Some(parse_retention_time(&text).map_err(|e| schema(e.to_string()))?)
        } else {
            None
        };
        Ok(ScanFrame {
            num,
            ms_level,
            rt,
            done: false,
        })
    }

    fn peaks_encoding(&self, e: &BytesStart) -> Result<PeaksEncoding> {
        let scan = self
            .stack
            .last()
            .map(|f| f.num.clone())
            .unwrap_or_default();
        let mut precision = Precision::Bits32;
        for attr in e.attributes() {
            let attr = attr.map_err(|err| self.parse_error(err))?;
            let value = std::str::from_utf8(&attr.value).map_err(|err| self.parse_error(err))?;
            match attr.key.local_name().as_ref() {
                b"precision" => {
                    let bits: u32 = value.trim().parse().map_err(|_| Error::Schema {
                        scan: scan.clone(),
                        message: format!("precision {value:?} is not an integer"),
                    })?;
                    precision = Precision::from_bits(bits)?;
                }
                b"byteOrder" if value != "network" => {
                    return Err(Error::Unsupported(format!(
                        "byteOrder {value:?} in scan {scan}; only network order is supported"
                    )));
                }
                b"pairOrder" | b"contentType" if value != "m/z-int" => {
                    return Err(Error::Unsupported(format!(
                        "pair order {value:?} in scan {scan}; only m/z-int is supported"
                    )));
                }
                b"compressionType" if value != "none" => {
                    return Err(Error::Unsupported(format!(
                        "compressionType {value:?} in scan {scan}; compressed peaks are not supported"
                    )));
                }
                _ => {}
            }
        }
        Ok(PeaksEncoding { precision })
    }

    fn wanted_top(&self) -> bool {
        self.stack
            .last()
            .is_some_and(|f| f.ms_level == self.wanted && !f.done)
    }

    fn finish_top(&mut self, peaks: Vec<(f64, f64)>) -> SpectrumRecord {
        let frame = self.stack.last_mut().expect("scan frame");
        frame.done = true;
        self.stats.spectra_read += 1;
        SpectrumRecord {
            rt: frame.rt.expect("retention time of wanted scan"),
            ms_level: frame.ms_level,
            peaks,
        }
    }

    /// Reads the text content of the current `peaks` element.
    fn read_peaks_text(&mut self) -> Result<Vec<u8>> {
        let mut text = Vec::new();
        loop {
            self.buf.clear();
            match self.reader.read_event_into(&mut self.buf) {
                Ok(Event::Text(t)) => text.extend_from_slice(&t),
                Ok(Event::CData(t)) => text.extend_from_slice(&t),
                Ok(Event::End(e)) if e.local_name().as_ref() == b"peaks" => return Ok(text),
                Ok(Event::Eof) => return Err(self.parse_error("unexpected end of file in peaks")),
                Ok(_) => {}
                Err(e) => return Err(self.parse_error(e)),
            }
        }
    }

    fn next_record(&mut self) -> Result<Option<SpectrumRecord>> {
        loop {
            self.buf.clear();
            let event = match self.reader.read_event_into(&mut self.buf) {
                Ok(ev) => ev.into_owned(),
                Err(e) => return Err(self.parse_error(e)),
            };
            match event {
                Event::Start(e) if e.local_name().as_ref() == b"scan" => {
                    let frame = self.open_scan(&e)?;
                    self.stack.push(frame);
                }
                Event::Empty(e) if e.local_name().as_ref() == b"scan" => {
                    let frame = self.open_scan(&e)?;
                    self.stack.push(frame);
                    let rec = self.wanted_top().then(|| self.finish_top(Vec::new()));
                    self.stack.pop();
                    if rec.is_some() {
                        return Ok(rec);
                    }
                }
                Event::Start(e) if e.local_name().as_ref() == b"peaks" => {
                    if self.stack.is_empty() {
                        return Err(self.parse_error("peaks element outside a scan"));
                    }
                    let enc = self.peaks_encoding(&e)?;
                    let text = self.read_peaks_text()?;
                    if self.wanted_top() {
                        self.precisions.insert(enc.precision.bits());
                        let peaks = if self.decode {
                            decode_peaks(&text, enc)?
                        } else {
                            Vec::new()
                        };
                        return Ok(Some(self.finish_top(peaks)));
                    }
                }
                Event::Empty(e) if e.local_name().as_ref() == b"peaks" => {
                    if self.stack.is_empty() {
                        return Err(self.parse_error("peaks element outside a scan"));
                    }
                    self.peaks_encoding(&e)?;
                    if self.wanted_top() {
                        return Ok(Some(self.finish_top(Vec::new())));
                    }
                }
                Event::End(e) if e.local_name().as_ref() == b"scan" => {
                    let rec = self.wanted_top().then(|| self.finish_top(Vec::new()));
                    self.stack.pop();
                    if rec.is_some() {
                        return Ok(rec);
                    }
                }
                Event::Eof => {
                    if !self.stack.is_empty() {
                        return Err(self.parse_error("unexpected end of file inside scan"));
                    }
                    return Ok(None);
                }
                _ => {}
            }
        }
    }
}

impl<R: BufRead> Iterator for MzXmlReader<R> {
    type Item = Result<SpectrumRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        match self.next_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => {
                self.finished = true;
                None
            }
            Err(e) => {
                self.finished = true;
                Some(Err(e))
            }
        }
    }
}
