use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::strategies::{Strategy, SweepReport};
use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str = "strategy,train_ratio,amputee_id,r2,seed";

/// One row of the results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub strategy: Strategy,
    pub train_ratio: f64,
    pub amputee_id: u32,
    pub r2: f64,
    pub seed: u64,
}

/// Per-amputee rows; floats use the shortest representation that parses back exactly.
pub fn results_csv(report: &SweepReport) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in &report.results {
        for s in &r.per_amputee {
            let _ = writeln!(out, "{},{},{},{},{}", r.strategy, r.train_ratio, s.amputee_id, s.r2, r.seed);
        }
    }
    out
}

pub fn parse_results_csv(text: &str, path: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RESULTS_HEADER => {}
        _ => {
            return Err(Error::Format {
                path: path.into(),
                line: 1,
                reason: format!("expected header `{RESULTS_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = |reason: String| Error::Format {
                path: path.into(),
                line: i + 1,
                reason,
            };
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != 5 {
                return Err(bad(format!("expected 5 cells, found {}", cells.len())));
            }
            Ok(ResultRow {
                strategy: cells[0].parse().map_err(|_| bad(format!("unknown strategy `{}`", cells[0])))?,
                train_ratio: cells[1].parse().map_err(|_| bad(format!("bad ratio `{}`", cells[1])))?,
                amputee_id: cells[2].parse().map_err(|_| bad(format!("bad id `{}`", cells[2])))?,
                r2: cells[3].parse().map_err(|_| bad(format!("bad r2 `{}`", cells[3])))?,
                seed: cells[4].parse().map_err(|_| bad(format!("bad seed `{}`", cells[4])))?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    strategy: Strategy,
    train_ratio: f64,
    mean: f64,
    std: f64,
    amputees: usize,
    seed: u64,
    config: &'a str,
}

#[derive(Serialize)]
struct Summary<'a> {
    aggregation: &'static str,
    results: Vec<SummaryRow<'a>>,
    provenance: &'a std::collections::BTreeMap<String, String>,
}

pub fn summary_json(report: &SweepReport) -> String {
    let summary = Summary {
        aggregation: "mean ± population std over amputees",
        results: report
            .results
            .iter()
            .map(|r| SummaryRow {
                strategy: r.strategy,
                train_ratio: r.train_ratio,
                mean: r.mean,
                std: r.std,
                amputees: r.per_amputee.len(),
                seed: r.seed,
                config: &r.config,
            })
            .collect(),
        provenance: &report.provenance,
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Table of `mean ± std` per strategy and ratio.
pub fn summary_markdown(report: &SweepReport) -> String {
    let mut out = String::from("# R² by training strategy\n\n");
    out.push_str("Mean ± population std over amputees.\n\n");
    out.push_str("| strategy | train ratio | R² |\n|---|---|---|\n");
    for r in &report.results {
        let _ = writeln!(out, "| {} | {} | {:.2} ± {:.2} |", r.strategy, r.train_ratio, r.mean, r.std);
    }
    out
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn color(s: Strategy) -> &'static str {
    match s {
        Strategy::Cross => "#888888",
        Strategy::Direct => "#1f77b4",
        Strategy::Refurbished => "#d62728",
    }
}

/// Mean R² against train ratio, one polyline per strategy present. A
/// strategy with a single ratio is drawn flat across the x range.
pub fn chart_svg(report: &SweepReport) -> String {
    let ratios: Vec<f64> = report.results.iter().map(|r| r.train_ratio).collect();
    let (x_lo, x_hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let means: Vec<f64> = report.results.iter().map(|r| r.mean).collect();
    let y_lo = means.iter().copied().fold(0.0, f64::min).floor();
    let y_hi = 1.0f64.max(means.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let span_x = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let px = |x: f64| MARGIN + (x - x_lo) / span_x * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{m:.2} {t:.2} V{b:.2} H{r:.2}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">train ratio</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">R²</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, st) in Strategy::ALL.iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = report.of(*st).map(|r| (r.train_ratio, r.mean)).collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() == 1 {
            pts = vec![(x_lo, pts[0].1), (x_hi, pts[0].1)];
        }
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline data-strategy="{st}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            coords.join(" "),
            color(*st)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="{}">{st}</text>"#,
            WIDTH - MARGIN - 80.0,
            MARGIN + 14.0 * i as f64,
            color(*st)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `results.csv`, `summary.json`, `summary.md` and `chart.svg`.
pub fn emit_report(report: &SweepReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    report.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    Ok(vec![
        write(out_dir.join("results.csv"), &results_csv(report))?,
        write(out_dir.join("summary.json"), &summary_json(report))?,
        write(out_dir.join("summary.md"), &summary_markdown(report))?,
        write(out_dir.join("chart.svg"), &chart_svg(report))?,
    ])
}
