use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mzrtree::bench::{
    density_sweep, plot, run_bench, run_throughput, space_report, BenchConfig, EngineKind,
};
use mzrtree::generate::{build_generated, emit_mzxml, generate, generate_mixed_levels, GenMode, GenSpec};
use mzrtree::ingest::PeaksEncoding;
use mzrtree::{
    build_from_mzxml, BuildOptions, Error, IndexParams, MzRTree, QueryRect, QueryResult, Result,
    Store, StoreManifest, StripChoice, Workload,
};

#[derive(Parser)]
#[command(name = "mzrtree", version, about = "Build, query and benchmark mzRTree LC-MS stores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a store from an mzXML file or a synthetic dataset.
    Build(BuildArgs),
    /// Run one workload query or an explicit rect against a store.
    Query(QueryArgs),
    /// Time mzRTree against the baseline layouts.
    Bench(BenchArgs),
    /// Report store size, optionally against an mzXML file.
    Space(SpaceArgs),
    /// Write a synthetic dataset as mzXML.
    Gen(GenArgs),
    /// Print a store's manifest summary and index shape.
    Info(InfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Uniform,
    Peaked,
}

#[derive(Args, Clone)]
struct GenOpts {
    /// Number of spectra.
    #[arg(long, default_value_t = 2130)]
    spectra: u32,
    #[arg(long, default_value_t = 400.0)]
    mz_min: f64,
    #[arg(long, default_value_t = 1800.0)]
    mz_max: f64,
    /// Da per grid column.
    #[arg(long, default_value_t = 0.01)]
    resolution: f64,
    /// Target fraction of nonzero cells.
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, value_enum, default_value_t = Mode::Peaked)]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl GenOpts {
    fn spec(&self, ms_level: u32) -> GenSpec {
        GenSpec {
            spectra_count: self.spectra,
            mz_min: self.mz_min,
            mz_max: self.mz_max,
            resolution: self.resolution,
            density: self.density,
            mode: match self.mode {
                Mode::Uniform => GenMode::Uniform,
                Mode::Peaked => GenMode::Peaked,
            },
            seed: self.seed,
            ms_level,
            ..GenSpec::default()
        }
    }
}

#[derive(Args)]
struct LayoutOpts {
    /// Number of strips; derived from --ram-budget-mb when absent.
    #[arg(long)]
    k: Option<u32>,
    /// Largest in-memory strip footprint while building, in MiB.
    #[arg(long, default_value_t = 256)]
    ram_budget_mb: u64,
    /// Width of a bounding-box slice in Da.
    #[arg(long, default_value_t = 5.0)]
    bb_width_da: f64,
    /// R-tree internal node fanout.
    #[arg(long, default_value_t = 6)]
    d: u32,
    /// R-tree leaf capacity.
    #[arg(long, default_value_t = 200)]
    f: u32,
}

impl LayoutOpts {
    fn params(&self) -> IndexParams {
        IndexParams { d: self.d, f: self.f }
    }
}

#[derive(Args)]
struct BuildArgs {
    /// mzXML input; a synthetic dataset is generated when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Store directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    ms_level: u32,
    /// Grid resolution for mzXML input, in Da.
    #[arg(long, default_value_t = 0.01)]
    grid_resolution: f64,
    #[command(flatten)]
    layout: LayoutOpts,
    #[command(flatten)]
    gen: GenOpts,
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryWorkload {
    Chrom,
    Spectra,
    PepSmall,
    PepLarge,
    Rect,
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryFormat {
    Count,
    Csv,
    Json,
}

#[derive(Args)]
struct QueryArgs {
    /// Store directory.
    store: PathBuf,
    #[arg(long, value_enum)]
    workload: QueryWorkload,
    /// Half-open grid rect `rt1,rt2,mz1,mz2` for `--workload rect`; -1 means from the first.
    #[arg(long, allow_hyphen_values = true)]
    rect: Option<String>,
    /// m/z the workload window is centered on; defaults to the middle of the grid.
    #[arg(long)]
    mz: Option<f64>,
    /// Row the workload window is centered on; defaults to the middle row.
    #[arg(long)]
    row: Option<i64>,
    #[arg(long, value_enum, default_value_t = QueryFormat::Count)]
    format: QueryFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct BenchArgs {
    /// Store directory, or the output root with --sweep.
    store: PathBuf,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Spanning rects per workload sweep.
    #[arg(long, default_value_t = 10)]
    queries: usize,
    /// Comma-separated engines (mzrtree, full-scan, spectrum-major, column-major).
    #[arg(long, value_delimiter = ',')]
    engines: Option<Vec<String>>,
    /// Comma-separated workloads (chrom, spectra, pep-small, pep-large).
    #[arg(long, value_delimiter = ',')]
    workloads: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for SVG charts.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Also measure concurrent mzRTree throughput with this many threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated densities: build one generated store per density under
    /// the store argument and benchmark each.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[command(flatten)]
    layout: LayoutOpts,
    #[command(flatten)]
    gen: GenOpts,
}

#[derive(Args)]
struct SpaceArgs {
    /// Store directory.
    store: PathBuf,
    /// mzXML file to compare against.
    #[arg(long)]
    mzxml: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
}

#[derive(Args)]
struct GenArgs {
    /// mzXML output path.
    #[arg(long)]
    out: PathBuf,
    /// Peak precision in bits.
    #[arg(long, default_value_t = 64, value_parser = clap::builder::TypedValueParser::map(
        clap::builder::PossibleValuesParser::new(["32", "64"]),
        |s| s.parse::<u32>().unwrap(),
    ))]
    precision: u32,
    /// Comma-separated MS levels to interleave.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    ms_levels: Vec<u32>,
    #[command(flatten)]
    gen: GenOpts,
}

#[derive(Args)]
struct InfoArgs {
    /// Store directory.
    store: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Query(a) => cmd_query(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Space(a) => cmd_space(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Info(a) => cmd_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn strip_choice(layout: &LayoutOpts) -> StripChoice {
    match layout.k {
        Some(k) => StripChoice::Count(k),
        None => StripChoice::RamBudget(layout.ram_budget_mb << 20),
    }
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let start = Instant::now();
    let manifest = match &a.input {
        Some(input) => {
            let opts = BuildOptions {
                ms_level: a.ms_level,
                resolution: a.grid_resolution,
                mz_range: None,
                strips: strip_choice(&a.layout),
                bb_width_da: a.layout.bb_width_da,
                params: a.layout.params(),
            };
            build_from_mzxml(input, &a.out, &opts)?
        }
        None => {
            let spec = a.gen.spec(a.ms_level);
            let k = match a.layout.k {
                Some(k) => k,
                None => {
                    let meta = spec.meta(1, a.layout.bb_width_da)?;
                    mzrtree::storage::choose_k(
                        meta.rows(),
                        meta.cols(),
                        spec.density,
                        a.layout.ram_budget_mb << 20,
                    )
                }
            };
            build_generated(&spec, &a.out, k, a.layout.bb_width_da, a.layout.params())?
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let size = Store::open(&a.out)?.sizes()?.total();
    print_summary(&manifest);
    println!("build_s\t{elapsed:.3}");
    println!("store_bytes\t{size}");
    Ok(())
}

fn print_summary(m: &StoreManifest) {
    let meta = &m.meta;
    println!("rows\t{}", meta.rows());
    println!("cols\t{}", meta.cols());
    println!("mz_range\t{}..{}", meta.mz_min, meta.mz_max);
    println!("resolution\t{}", meta.resolution);
    println!("ms_level\t{}", meta.ms_level);
    println!("strips\t{}", m.strips.len());
    println!("nnz\t{}", m.nnz);
    println!("density\t{:.6}", m.density());
    println!("bbs\t{} ({} dense, {} sparse)", m.bb_count, m.dense_bbs, m.sparse_bbs);
    println!("generation\t{}", m.generation);
}

fn parse_rect(s: &str) -> Result<QueryRect> {
    let parts: Vec<i64> = s
        .split(',')
        .map(|p| p.trim().parse::<i64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("bad rect {s:?}: {e}")))?;
    match parts[..] {
        [rt1, rt2, mz1, mz2] => QueryRect::try_new(rt1, rt2, mz1, mz2),
        _ => Err(Error::InvalidArgument(format!(
            "rect needs four values rt1,rt2,mz1,mz2, got {s:?}"
        ))),
    }
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let tree = MzRTree::open(&a.store)?;
    let meta = tree.meta();
    let workload = match a.workload {
        QueryWorkload::Chrom => Some(Workload::Chromatogram),
        QueryWorkload::Spectra => Some(Workload::Spectra),
        QueryWorkload::PepSmall => Some(Workload::PeptideSmall),
        QueryWorkload::PepLarge => Some(Workload::PeptideLarge),
        QueryWorkload::Rect => None,
    };
    let rect = match (workload, &a.rect) {
        (None, Some(r)) => parse_rect(r)?,
        (None, None) => return Err(Error::InvalidArgument("--workload rect needs --rect".into())),
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument("--rect is only valid with --workload rect".into()))
        }
        (Some(w), None) => {
            let mz = a.mz.unwrap_or((meta.mz_min + meta.mz_max) / 2.0);
            let row = a.row.unwrap_or(meta.rows() as i64 / 2);
            w.rect_at(meta, mz, row)
        }
    };
    let result = tree.range_query(rect)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match a.format {
        QueryFormat::Count => writeln!(out, "{}", result.entries.len())?,
        QueryFormat::Csv => write_entries_csv(&mut out, &tree, &result)?,
        QueryFormat::Json => {
            let json = serde_json::json!({
                "rect": { "rt1": rect.rt1, "rt2": rect.rt2, "mz1": rect.mz1, "mz2": rect.mz2 },
                "count": result.entries.len(),
                "total_intensity": result.total_intensity(),
                "bbs_touched": result.stats.bbs_touched,
                "nodes_visited": result.stats.nodes_visited,
                "bytes_read": result.stats.bytes_read,
                "elapsed_s": result.stats.elapsed.as_secs_f64(),
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&json)?)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_entries_csv(out: &mut impl Write, tree: &MzRTree, result: &QueryResult) -> Result<()> {
    let meta = tree.meta();
    writeln!(out, "row,col,rt,mz,intensity")?;
    for e in &result.entries {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.row,
            e.col,
            meta.rt_axis[e.row as usize],
            meta.mz_of_col(e.col),
            e.intensity
        )?;
    }
    Ok(())
}

fn parse_list<T>(names: &Option<Vec<String>>, all: &[T], parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>>
where
    T: Copy,
{
    match names {
        None => Ok(all.to_vec()),
        Some(names) => names
            .iter()
            .map(|n| parse(n).ok_or_else(|| Error::InvalidArgument(format!("unknown name {n:?}"))))
            .collect(),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        queries: a.queries,
        reps: a.reps,
        engines: parse_list(&a.engines, &EngineKind::ALL, EngineKind::from_name)?,
        workloads: parse_list(&a.workloads, &Workload::ALL, Workload::from_name)?,
    };
    if let Some(densities) = &a.sweep {
        let k = a.layout.k.unwrap_or(10);
        let points = density_sweep(
            &a.store,
            &a.gen.spec(1),
            densities,
            k,
            a.layout.bb_width_da,
            a.layout.params(),
            &cfg,
        )?;
        let text = match a.format {
            ReportFormat::Json => serde_json::to_string_pretty(&points)? + "\n",
            ReportFormat::Csv => {
                let mut s = String::from("density,nnz,engine,workload,mean_access_s,load_s\n");
                for p in &points {
                    for r in &p.report.rows {
                        s += &format!(
                            "{},{},{},{},{},{}\n",
                            p.density,
                            p.nnz,
                            r.engine.name(),
                            r.workload.name(),
                            r.mean_access_s,
                            r.load_s
                        );
                    }
                }
                s
            }
        };
        write_output(a.report.as_deref(), &text)?;
        if let Some(dir) = &a.plot {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("density.svg"), plot::density_chart(&points))?;
        }
        return Ok(());
    }

    let mut report = run_bench(&a.store, &cfg)?;
    if let Some(threads) = a.threads {
        let tree = MzRTree::open(&a.store)?;
        for &w in &cfg.workloads {
            report
                .throughput
                .push(run_throughput(&tree, w, cfg.queries, threads, cfg.reps)?);
        }
    }
    let text = match a.format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json() + "\n",
    };
    write_output(a.report.as_deref(), &text)?;
    if let Some(dir) = &a.plot {
        plot::write_report_plots(&report, dir)?;
    }
    Ok(())
}

fn cmd_space(a: SpaceArgs) -> Result<()> {
    for p in std::iter::once(&a.store).chain(a.mzxml.as_ref()) {
        if !p.exists() {
            return Err(Error::InvalidArgument(format!("{} does not exist", p.display())));
        }
    }
    let store = Store::open(&a.store)?;
    let r = space_report(&store, a.mzxml.as_deref())?;
    match a.format {
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&r)?),
        ReportFormat::Csv => {
            println!("store_bytes,mzxml_bytes,savings_pct,nnz,density,dense_bbs,sparse_bbs,dense_bytes,sparse_bytes");
            let opt = |v: Option<String>| v.unwrap_or_default();
            println!(
                "{},{},{},{},{},{},{},{},{}",
                r.store_bytes,
                opt(r.mzxml_bytes.map(|v| v.to_string())),
                opt(r.savings_pct.map(|v| format!("{v:.2}"))),
                r.nnz,
                r.density,
                r.dense_bbs,
                r.sparse_bbs,
                r.dense_bytes,
                r.sparse_bytes
            );
        }
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let enc = if a.precision == 32 {
        PeaksEncoding::F32
    } else {
        PeaksEncoding::F64
    };
    let bytes = match a.ms_levels[..] {
        [level] => emit_mzxml(generate(&a.gen.spec(level))?, enc, &a.out)?,
        _ => emit_mzxml(generate_mixed_levels(&a.gen.spec(1), &a.ms_levels)?, enc, &a.out)?,
    };
    println!("wrote {} bytes to {}", bytes, a.out.display());
    Ok(())
}

fn cmd_info(a: InfoArgs) -> Result<()> {
    let tree = MzRTree::open(&a.store)?;
    let m = tree.store().manifest();
    print_summary(m);
    let p = m.index_params;
    println!("index\td={} f={} height={} bbs={}", p.d, p.f, tree.index().height(), tree.index().len());
    println!("load_s\t{:.6}", tree.load_time().as_secs_f64());
    let s = tree.store().sizes()?;
    println!("bytes\tmanifest={} index={} strips={} total={}", s.manifest, s.index, s.strips, s.total());
    println!("source\t{}", m.source.kind);
    Ok(())
}
