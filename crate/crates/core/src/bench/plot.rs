//! Static SVG charts of benchmark reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{BenchReport, EngineKind, SweepPoint};
use crate::error::Result;
use crate::query::Workload;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 6] = ["#1b6ca8", "#d1495b", "#edae49", "#66a182", "#6d597a", "#2e4057"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-scale y axis covering `[lo, hi]` in whole decades.
struct LogAxis {
    lo: f64,
    hi: f64,
}

impl LogAxis {
    fn new(values: impl Iterator<Item = f64>) -> LogAxis {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in values.filter(|v| *v > 0.0) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return LogAxis { lo: -3.0, hi: 0.0 };
        }
        let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
        LogAxis {
            lo,
            hi: if hi > lo { hi } else { lo + 1.0 },
        }
    }

    fn y(&self, v: f64) -> f64 {
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let t = (v.max(10f64.powf(self.lo)).log10() - self.lo) / (self.hi - self.lo);
        HEIGHT - MARGIN_B - t * plot_h
    }

    fn draw(&self, svg: &mut String, label: &str) {
        let mut e = self.lo;
        while e <= self.hi {
            let y = self.y(10f64.powf(e));
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN_L}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">1e{e}</text>"##,
                WIDTH - MARGIN_R,
                MARGIN_L - 6.0,
                y + 4.0
            );
            e += 1.0;
        }
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{:.1}" font-size="12" transform="rotate(-90 18 {:.1})" text-anchor="middle">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(label)
        );
    }
}

fn open_svg(title: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    svg
}

fn legend(svg: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN_T + 10.0 + i as f64 * 20.0;
        let x = WIDTH - MARGIN_R + 16.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            y - 10.0,
            COLORS[i % COLORS.len()],
            x + 18.0,
            y,
            escape(name)
        );
    }
}

fn axes(svg: &mut String) {
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{:.1}" stroke="black"/><line x1="{MARGIN_L}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        HEIGHT - MARGIN_B,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    );
}

/// Grouped bars: one group per label, one bar per series, with optional
/// `(min, max)` whiskers. Values are plotted on a log scale.
fn grouped_bars(
    title: &str,
    y_label: &str,
    groups: &[String],
    series: &[&str],
    value: impl Fn(usize, usize) -> Option<(f64, Option<(f64, f64)>)>,
) -> String {
    let mut all = Vec::new();
    for g in 0..groups.len() {
        for s in 0..series.len() {
            if let Some((v, w)) = value(g, s) {
                all.push(v);
                if let Some((lo, hi)) = w {
                    all.extend([lo, hi]);
                }
            }
        }
    }
    let axis = LogAxis::new(all.into_iter());
    let mut svg = open_svg(title);
    axis.draw(&mut svg, y_label);
    axes(&mut svg);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let base_y = HEIGHT - MARGIN_B;
    for (g, label) in groups.iter().enumerate() {
        let gx = MARGIN_L + g as f64 * group_w + group_w * 0.1;
        for s in 0..series.len() {
            let Some((v, whisker)) = value(g, s) else { continue };
            let x = gx + s as f64 * bar_w;
            let y = axis.y(v);
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} {}: {v:.6}</title></rect>"#,
                bar_w * 0.9,
                (base_y - y).max(0.0),
                COLORS[s % COLORS.len()],
                escape(label),
                escape(series[s])
            );
            if let Some((lo, hi)) = whisker {
                let cx = x + bar_w * 0.45;
                let _ = writeln!(
                    svg,
                    r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                    axis.y(lo),
                    axis.y(hi)
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            base_y + 18.0,
            escape(label)
        );
    }
    legend(&mut svg, series);
    svg.push_str("</svg>\n");
    svg
}

/// Mean access time per sweep for every workload and engine, min/max whiskers.
pub fn access_chart(report: &BenchReport) -> String {
    let workloads = &report.config.workloads;
    let engines = &report.config.engines;
    let groups: Vec<String> = workloads.iter().map(|w| w.name().to_string()).collect();
    let names: Vec<&str> = engines.iter().map(|e| e.name()).collect();
    grouped_bars(
        "Access time per sweep",
        "seconds (log)",
        &groups,
        &names,
        |g, s| {
            report
                .row(engines[s], workloads[g])
                .map(|r| (r.mean_access_s, Some((r.min_access_s, r.max_access_s))))
        },
    )
}

/// Mean load time per engine.
pub fn load_chart(report: &BenchReport) -> String {
    let engines = &report.config.engines;
    let names: Vec<&str> = engines.iter().map(|e| e.name()).collect();
    grouped_bars(
        "Load time",
        "seconds (log)",
        &["load".to_string()],
        &names,
        |_, s| {
            report
                .rows
                .iter()
                .find(|r| r.engine == engines[s])
                .map(|r| (r.load_s, None))
        },
    )
}

/// mzRTree access time per workload against dataset density.
pub fn density_chart(points: &[SweepPoint]) -> String {
    let workloads: Vec<Workload> = points
        .first()
        .map(|p| p.report.config.workloads.clone())
        .unwrap_or_default();
    let value = |p: &SweepPoint, w: Workload| {
        p.report
            .row(EngineKind::MzRTree, w)
            .map(|r| r.mean_access_s)
    };
    let axis = LogAxis::new(
        points
            .iter()
            .flat_map(|p| workloads.iter().filter_map(move |&w| value(p, w))),
    );
    let mut svg = open_svg("mzRTree access time vs density");
    axis.draw(&mut svg, "seconds per sweep (log)");
    axes(&mut svg);
    let d_max = points.iter().map(|p| p.density).fold(0.0, f64::max).max(1e-9);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let x_of = |d: f64| MARGIN_L + d / d_max * plot_w;
    for p in points {
        let x = x_of(p.density);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{:.1}%</text>"#,
            HEIGHT - MARGIN_B + 18.0,
            p.density * 100.0
        );
    }
    for (i, &w) in workloads.iter().enumerate() {
        let pts: Vec<String> = points
            .iter()
            .filter_map(|p| value(p, w).map(|v| format!("{:.1},{:.1}", x_of(p.density), axis.y(v))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            COLORS[i % COLORS.len()]
        );
    }
    let names: Vec<&str> = workloads.iter().map(|w| w.name()).collect();
    legend(&mut svg, &names);
    svg.push_str("</svg>\n");
    svg
}

/// Writes `access.svg` and `load.svg` into `dir`.
pub fn write_report_plots(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (name, svg) in [("access.svg", access_chart(report)), ("load.svg", load_chart(report))] {
        let path = dir.join(name);
        std::fs::write(&path, svg)?;
        out.push(path);
    }
    Ok(out)
}
