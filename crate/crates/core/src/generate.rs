//! Synthetic datasets.
//!
//! `Uniform` fills every spectrum with exactly `round(d * cols)` distinct
//! columns drawn uniformly, so each spectrum and hence the whole dataset has
//! density `d`. `Peaked` places Gaussian elution profiles with isotope-like
//! m/z envelopes until the summed cluster area reaches the target density;
//! it exercises dense bounding boxes. Output is a pure function of [`GenSpec`].
//!
//! Intensities are rounded to `f32` so they survive every storage and
//! encoding width unchanged.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexParams;
use crate::ingest::{encode_peaks, PeaksEncoding};
use crate::model::{DatasetMeta, SpectrumRecord};
use crate::storage::{SourceInfo, StoreBuilder, StoreManifest};

const MAX_INTENSITY: f64 = 1e6;
const ISOTOPE_SPACING_DA: f64 = 1.003_355;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    Uniform,
    Peaked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub spectra_count: u32,
    pub mz_min: f64,
    pub mz_max: f64,
    pub resolution: f64,
    /// Target fraction of nonzero cells, in (0, 1].
    pub density: f64,
    pub mode: GenMode,
    pub seed: u64,
    pub ms_level: u32,
    pub rt_start: f64,
    /// Seconds between consecutive spectra.
    pub rt_step: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            spectra_count: 2130,
            mz_min: 400.0,
            mz_max: 1800.0,
            resolution: 0.01,
            density: 0.05,
            mode: GenMode::Peaked,
            seed: 1,
            ms_level: 1,
            rt_start: 0.0,
            rt_step: 1.5,
        }
    }
}

impl GenSpec {
    /// Grid covering the generated data with the given strip count and BB width.
    pub fn meta(&self, strip_count: u32, bb_width_da: f64) -> Result<DatasetMeta> {
        DatasetMeta::new(
            self.mz_min,
            self.mz_max,
            self.resolution,
            self.rt_axis(),
            self.ms_level,
            strip_count,
            bb_width_da,
        )
    }

    pub fn rt_axis(&self) -> Vec<f64> {
        (0..self.spectra_count).map(|i| self.rt_of(i)).collect()
    }

    fn rt_of(&self, row: u32) -> f64 {
        self.rt_start + row as f64 * self.rt_step
    }

    fn grid(&self) -> Result<DatasetMeta> {
        DatasetMeta::new(
            self.mz_min,
            self.mz_max,
            self.resolution,
            Vec::new(),
            self.ms_level.max(1),
            1,
            1.0,
        )
    }

    fn check(&self) -> Result<u32> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::invalid(format!(
                "density {} must be in (0, 1]",
                self.density
            )));
        }
        if self.ms_level == 0 {
            return Err(Error::invalid("ms_level must be positive"));
        }
        Ok(self.grid()?.cols())
    }
}

fn row_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Intensity in (0, 1e6], rounded to the nearest `f32`.
fn draw_intensity(rng: &mut ChaCha8Rng) -> f64 {
    let v = MAX_INTENSITY * (1.0 - rng.gen::<f64>());
    (v as f32).max(f32::MIN_POSITIVE) as f64
}

/// Uniform-density spectra, one per row.
pub struct UniformGen {
    spec: GenSpec,
    grid: DatasetMeta,
    per_spectrum: usize,
    row: u32,
}

pub fn generate_uniform(spec: &GenSpec) -> Result<UniformGen> {
    let cols = spec.check()?;
    let per_spectrum = (spec.density * cols as f64).round() as usize;
    if per_spectrum == 0 {
        return Err(Error::invalid(format!(
            "density {} over {cols} columns rounds to zero peaks per spectrum",
            spec.density
        )));
    }
    Ok(UniformGen {
        grid: spec.grid()?,
        spec: spec.clone(),
        per_spectrum: per_spectrum.min(cols as usize),
        row: 0,
    })
}

impl UniformGen {
    /// Nonzero cells per spectrum.
    pub fn per_spectrum(&self) -> usize {
        self.per_spectrum
    }
}

impl Iterator for UniformGen {
    type Item = SpectrumRecord;

    fn next(&mut self) -> Option<SpectrumRecord> {
        if self.row >= self.spec.spectra_count {
            return None;
        }
        let row = self.row;
        self.row += 1;
        let mut rng = row_rng(self.spec.seed, row as u64 + 1);
        let mut cols = sample(&mut rng, self.grid.cols() as usize, self.per_spectrum).into_vec();
        cols.sort_unstable();
        let peaks = cols
            .into_iter()
            .map(|c| (self.grid.mz_of_col(c as u32), draw_intensity(&mut rng)))
            .collect();
        Some(SpectrumRecord {
            rt: self.spec.rt_of(row),
            ms_level: self.spec.ms_level,
            peaks,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.spec.spectra_count - self.row) as usize;
        (left, Some(left))
    }
}

#[derive(Debug, Clone)]
struct Cluster {
    row_start: u32,
    row_end: u32,
    col_start: u32,
    col_end: u32,
    apex_row: f64,
    sigma_rows: f64,
    amplitude: f64,
    /// `(center column, sigma in columns, relative height)`.
    isotopes: Vec<(f64, f64, f64)>,
}

impl Cluster {
    // Floor of the m/z profile relative to the isotope peaks; keeps every cell
    // of the cluster's footprint nonzero so the cluster is one connected region.
    const BASELINE: f64 = 0.02;

    fn value(&self, row: u32, col: u32) -> f64 {
        let dr = (row as f64 - self.apex_row) / self.sigma_rows;
        let profile: f64 = self
            .isotopes
            .iter()
            .map(|&(c, s, h)| {
                let dc = (col as f64 - c) / s;
                h * (-0.5 * dc * dc).exp()
            })
            .sum();
        self.amplitude * (-0.5 * dr * dr).exp() * (Self::BASELINE + profile)
    }

    fn area(&self) -> u64 {
        (self.row_end - self.row_start) as u64 * (self.col_end - self.col_start + 1) as u64
    }
}

/// Peaked spectra: overlapping Gaussian clusters, one spectrum per row.
pub struct PeakedGen {
    spec: GenSpec,
    grid: DatasetMeta,
    clusters: Vec<Cluster>,
    next_cluster: usize,
    active: Vec<usize>,
    row: u32,
}

pub fn generate_peaked(spec: &GenSpec) -> Result<PeakedGen> {
    let cols = spec.check()?;
    let grid = spec.grid()?;
    let rows = spec.spectra_count;
    let mut clusters = Vec::new();
    if rows > 0 {
        let target = (spec.density * rows as f64 * cols as f64).ceil() as u64;
        let mut rng = row_rng(spec.seed, 0);
        let mut placed = 0u64;
        while placed < target {
            let c = random_cluster(&mut rng, rows, cols, spec.resolution);
            placed += c.area();
            clusters.push(c);
        }
        clusters.sort_by_key(|c| c.row_start);
    }
    Ok(PeakedGen {
        spec: spec.clone(),
        grid,
        clusters,
        next_cluster: 0,
        active: Vec::new(),
        row: 0,
    })
}

fn random_cluster(rng: &mut ChaCha8Rng, rows: u32, cols: u32, resolution: f64) -> Cluster {
    let width = rng.gen_range(10..=40u32);
    let apex = rng.gen_range(0..rows);
    let row_start = apex.saturating_sub(width / 2);
    let row_end = (row_start + width).min(rows);

    let envelope_da = rng.gen_range(1.0..=4.0);
    let env_cols = ((envelope_da / resolution).round() as u32).clamp(1, cols);
    let col_start = rng.gen_range(0..=cols - env_cols);
    let col_end = col_start + env_cols - 1;

    let charge = rng.gen_range(1..=3u32) as f64;
    let spacing = ISOTOPE_SPACING_DA / charge / resolution;
    let sigma = (0.02 / resolution).max(0.5);
    let lead = rng.gen_range(0.0..0.3) * env_cols as f64;
    let mut isotopes = Vec::new();
    let mut center = col_start as f64 + lead;
    let mut height = 1.0;
    while center <= col_end as f64 {
        isotopes.push((center, sigma, height));
        center += spacing;
        height *= rng.gen_range(0.4..0.9);
    }
    Cluster {
        row_start,
        row_end,
        col_start,
        col_end,
        apex_row: apex as f64,
        sigma_rows: width as f64 / 4.0,
        amplitude: rng.gen_range(1e3..MAX_INTENSITY / 4.0),
        isotopes,
    }
}

impl Iterator for PeakedGen {
    type Item = SpectrumRecord;

    fn next(&mut self) -> Option<SpectrumRecord> {
        if self.row >= self.spec.spectra_count {
            return None;
        }
        let row = self.row;
        self.row += 1;
        while self.next_cluster < self.clusters.len()
            && self.clusters[self.next_cluster].row_start <= row
        {
            self.active.push(self.next_cluster);
            self.next_cluster += 1;
        }
        let clusters = &self.clusters;
        self.active.retain(|&i| clusters[i].row_end > row);

        let mut cells: Vec<(u32, f64)> = Vec::new();
        for &i in &self.active {
            let c = &self.clusters[i];
            cells.extend((c.col_start..=c.col_end).map(|col| (col, c.value(row, col))));
        }
        cells.sort_unstable_by_key(|&(col, _)| col);
        let mut peaks: Vec<(f64, f64)> = Vec::with_capacity(cells.len());
        let mut last_col = None;
        for (col, v) in cells {
            if last_col == Some(col) {
                peaks.last_mut().unwrap().1 += v;
            } else {
                peaks.push((self.grid.mz_of_col(col), v));
                last_col = Some(col);
            }
        }
        for p in &mut peaks {
            p.1 = (p.1 as f32).max(f32::MIN_POSITIVE) as f64;
        }
        Some(SpectrumRecord {
            rt: self.spec.rt_of(row),
            ms_level: self.spec.ms_level,
            peaks,
        })
    }
}

/// Either generator behind one iterator type.
pub enum Generator {
    Uniform(UniformGen),
    Peaked(PeakedGen),
}

pub fn generate(spec: &GenSpec) -> Result<Generator> {
    Ok(match spec.mode {
        GenMode::Uniform => Generator::Uniform(generate_uniform(spec)?),
        GenMode::Peaked => Generator::Peaked(generate_peaked(spec)?),
    })
}

impl Iterator for Generator {
    type Item = SpectrumRecord;

    fn next(&mut self) -> Option<SpectrumRecord> {
        match self {
            Generator::Uniform(g) => g.next(),
            Generator::Peaked(g) => g.next(),
        }
    }
}

/// Interleaves one generated run per MS level: for each row index, one scan of
/// every level in order, with retention times spread evenly inside the step.
/// Level `l` uses seed `spec.seed + l`.
pub fn generate_mixed_levels(spec: &GenSpec, levels: &[u32]) -> Result<Vec<SpectrumRecord>> {
    let mut runs = Vec::new();
    for &level in levels {
        let mut s = spec.clone();
        s.ms_level = level;
        s.seed = spec.seed.wrapping_add(level as u64);
        runs.push(generate(&s)?);
    }
    let mut out = Vec::with_capacity(spec.spectra_count as usize * levels.len());
    for _ in 0..spec.spectra_count {
        for (j, run) in runs.iter_mut().enumerate() {
            let mut rec = run.next().expect("generator yields spectra_count records");
            rec.rt += j as f64 * spec.rt_step / levels.len() as f64;
            out.push(rec);
        }
    }
    Ok(out)
}

/// Generates `spec` straight into a new store in `dir`.
pub fn build_generated(
    spec: &GenSpec,
    dir: &Path,
    strip_count: u32,
    bb_width_da: f64,
    params: IndexParams,
) -> Result<StoreManifest> {
    let meta = spec.meta(strip_count, bb_width_da)?;
    let source = SourceInfo {
        kind: "generated".into(),
        description: Some(serde_json::to_string(spec)?),
        ..SourceInfo::default()
    };
    let mut builder = StoreBuilder::create(dir, meta, params)?.with_source(source);
    for rec in generate(spec)? {
        builder.push_record(&rec)?;
    }
    builder.finish()
}

/// Writes records as mzXML with Base64 peaks at the given precision and
/// returns the number of bytes written.
pub fn emit_mzxml<I>(records: I, encoding: PeaksEncoding, path: &Path) -> Result<u64>
where
    I: IntoIterator<Item = SpectrumRecord>,
{
    let file = File::create(path)?;
    let mut w = CountingWriter {
        inner: BufWriter::with_capacity(1 << 20, file),
        written: 0,
    };
    write_mzxml(records, encoding, &mut w)?;
    w.inner.flush()?;
    Ok(w.written)
}

pub fn write_mzxml<I, W>(records: I, encoding: PeaksEncoding, w: &mut W) -> Result<()>
where
    I: IntoIterator<Item = SpectrumRecord>,
    W: Write,
{
    let bits = encoding.precision.bits();
    writeln!(w, r#"<?xml version="1.0" encoding="ISO-8859-1"?>"#)?;
    writeln!(
        w,
        r#"<mzXML xmlns="http://sashimi.sourceforge.net/schema_revision/mzXML_3.2" xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance">"#
    )?;
    writeln!(w, r#" <msRun>"#)?;
    for (i, rec) in records.into_iter().enumerate() {
        let (low, high) = match (rec.peaks.first(), rec.peaks.last()) {
            (Some(a), Some(b)) => (a.0, b.0),
            _ => (0.0, 0.0),
        };
        let tic: f64 = rec.peaks.iter().map(|p| p.1).sum();
        writeln!(
            w,
            r#"  <scan num="{}" scanType="Full" msLevel="{}" peaksCount="{}" polarity="+" retentionTime="PT{}S" lowMz="{low}" highMz="{high}" totIonCurrent="{tic}">"#,
            i + 1,
            rec.ms_level,
            rec.peaks.len(),
            rec.rt
        )?;
        if rec.ms_level > 1 {
            let precursor = rec.peaks.first().map_or(0.0, |p| p.0);
            writeln!(w, r#"   <precursorMz precursorIntensity="0">{precursor}</precursorMz>"#)?;
        }
        writeln!(
            w,
            r#"   <peaks precision="{bits}" byteOrder="network" pairOrder="m/z-int">{}</peaks>"#,
            encode_peaks(&rec.peaks, encoding)
        )?;
        writeln!(w, "  </scan>")?;
    }
    writeln!(w, " </msRun>")?;
    writeln!(w, "</mzXML>")?;
    Ok(())
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}
