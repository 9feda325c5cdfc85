//! Human-readable outputs: recall-curve plots, AP tables, reading lists.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluator::{write_metrics, MetricsRow, RecallCurve};
use crate::queries::QueryType;
use crate::ranker::{RankConfig, Ranking};
use crate::segmenter::Granularity;

const PANEL_WIDTH: u32 = 520;
const PANEL_HEIGHT: u32 = 380;

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

/// Rounds to two decimals, ties to even, for display.
pub fn round_half_even_2(x: f64) -> String {
    let scaled = x * 100.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let cents = if (frac - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    format!("{:.2}", cents / 100.0)
}

fn legend_label(config: &RankConfig) -> String {
    format!(
        "{} {}-{}",
        config.backend_id,
        config.qtype.short(),
        config.granularity.short()
    )
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Renders recall curves as SVG text, one panel per (dataset, task).
pub fn render_curve_plot(curves: &[RecallCurve]) -> Result<String> {
    let first = curves.first().ok_or(Error::EmptyInput("no curves to plot"))?;
    let grid: Vec<f64> = first.points.iter().map(|p| p.0).collect();
    if curves
        .iter()
        .any(|c| c.points.len() != grid.len() || c.points.iter().zip(&grid).any(|(p, g)| p.0 != *g))
    {
        return Err(Error::InvalidGrid);
    }

    let mut panels: BTreeMap<(String, String), Vec<&RecallCurve>> = BTreeMap::new();
    for c in curves {
        panels
            .entry((c.config.dataset.clone(), c.config.task.clone()))
            .or_default()
            .push(c);
    }
    let cols = panels.len().min(2);
    let rows = panels.len().div_ceil(cols);

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(
            &mut svg,
            (PANEL_WIDTH * cols as u32, PANEL_HEIGHT * rows as u32),
        )
        .into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let areas = root.split_evenly((rows, cols));
        for (((dataset, task), series), area) in panels.iter().zip(areas.iter()) {
            let mut chart = ChartBuilder::on(area)
                .caption(format!("{dataset}: {task}"), ("sans-serif", 18))
                .margin(12)
                .x_label_area_size(36)
                .y_label_area_size(44)
                .build_cartesian_2d(0f64..100f64, 0f64..1f64)
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc("% of data read")
                .y_desc("recall")
                .draw()
                .map_err(plot_err)?;
            for (i, curve) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                let points = std::iter::once((0.0, 0.0))
                    .chain(curve.points.iter().map(|&(p, r)| (p * 100.0, r)));
                chart
                    .draw_series(LineSeries::new(points, color.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(legend_label(&curve.config))
                    .legend(move |(x, y)| Rectangle::new([(x, y - 4), (x + 16, y + 4)], color.filled()));
            }
            chart
                .configure_series_labels()
                .position(SeriesLabelPosition::LowerRight)
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Writes the recall-curve plot as an SVG file.
pub fn emit_curve_plot(curves: &[RecallCurve], path: &Path) -> Result<()> {
    let svg = render_curve_plot(curves)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// AP matrix: rows are (backend, query type, granularity), columns are tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct ApTable {
    pub columns: Vec<String>,
    pub rows: Vec<ApTableRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApTableRow {
    pub backend: String,
    pub qtype: QueryType,
    pub granularity: Granularity,
    pub cells: Vec<Option<f64>>,
}

impl ApTableRow {
    /// "decl-sent" style label.
    pub fn label(&self) -> String {
        format!("{}-{}", self.qtype.short(), self.granularity.short())
    }
}

pub fn ap_table(results: &[MetricsRow]) -> Result<ApTable> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no results for the AP table"));
    }
    let mut columns: Vec<String> = Vec::new();
    for r in results {
        if !columns.contains(&r.config.task) {
            columns.push(r.config.task.clone());
        }
    }
    let mut rows: BTreeMap<(String, QueryType, Granularity), Vec<Option<f64>>> = BTreeMap::new();
    for r in results {
        let c = &r.config;
        let col = columns.iter().position(|t| *t == c.task).expect("column exists");
        rows.entry((c.backend_id.clone(), c.qtype, c.granularity))
            .or_insert_with(|| vec![None; columns.len()])[col] = Some(r.ap);
    }
    Ok(ApTable {
        columns,
        rows: rows
            .into_iter()
            .map(|((backend, qtype, granularity), cells)| ApTableRow {
                backend,
                qtype,
                granularity,
                cells,
            })
            .collect(),
    })
}

impl ApTable {
    fn display_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.backend.to_uppercase(), r.label()];
                cells.extend(
                    r.cells
                        .iter()
                        .map(|c| c.map_or_else(|| "-".to_string(), round_half_even_2)),
                );
                cells
            })
            .collect()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["model".to_string(), "query-length".to_string()];
        h.extend(self.columns.iter().cloned());
        h
    }

    /// Tab-separated display table (two-decimal AP, labelled mAP as in the
    /// published tables).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# AP per ranking (reported as mAP), rounded half-even to 2 decimals\n");
        out.push_str(&self.header().join("\t"));
        out.push('\n');
        for row in self.display_rows() {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Column-aligned plain-text table.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let body = self.display_rows();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                body.iter()
                    .map(|r| r[i].len())
                    .chain(std::iter::once(header[i].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let joined: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", joined.join("  ").trim_end());
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule);
        for row in &body {
            line(&mut out, row);
        }
        out
    }
}

/// Mean AP per (dataset, backend, granularity), averaged over tasks and
/// query types, as a display table.
pub fn average_table_text(results: &[MetricsRow]) -> String {
    let mut groups: BTreeMap<(String, String, Granularity), Vec<f64>> = BTreeMap::new();
    for r in results {
        let c = &r.config;
        groups
            .entry((c.dataset.clone(), c.backend_id.clone(), c.granularity))
            .or_default()
            .push(r.ap);
    }
    let mut out = String::from("dataset\tbackend\tgranularity\tmean_ap\tn\n");
    for ((dataset, backend, gran), aps) in groups {
        let mean = aps.iter().sum::<f64>() / aps.len() as f64;
        let _ = writeln!(
            out,
            "{dataset}\t{backend}\t{}\t{}\t{}",
            gran.short(),
            round_half_even_2(mean),
            aps.len()
        );
    }
    out
}

/// Writes `map_table.tsv`, `map_table.txt`, `map_average.tsv` and the
/// full-precision `metrics.tsv` companion into `out_dir`.
pub fn emit_tables(results: &[MetricsRow], out_dir: &Path) -> Result<ApTable> {
    let table = ap_table(results)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, body: String| {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("map_table.tsv", table.to_tsv())?;
    write("map_table.txt", table.to_text())?;
    write("map_average.tsv", average_table_text(results))?;
    write_metrics(&out_dir.join("metrics.tsv"), results)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadingRow {
    pub rank: usize,
    pub doc_id: String,
    pub score: f64,
    pub passage: String,
    pub gold: Option<bool>,
}

/// Ranked documents with the passage that produced each document's score.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingList {
    pub config: RankConfig,
    pub rows: Vec<ReadingRow>,
}

/// `passages` maps (doc_id, unit_index) to unit text; missing passages are
/// left empty.
pub fn reading_list(
    ranking: &Ranking,
    passages: &HashMap<(String, usize), String>,
    labels: Option<&HashMap<String, bool>>,
) -> ReadingList {
    ReadingList {
        config: ranking.config.clone(),
        rows: ranking
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| ReadingRow {
                rank: i + 1,
                doc_id: e.doc_id.clone(),
                score: e.score,
                passage: passages
                    .get(&(e.doc_id.clone(), e.argmax_unit))
                    .cloned()
                    .unwrap_or_default(),
                gold: labels.and_then(|l| l.get(&e.doc_id).copied()),
            })
            .collect(),
    }
}

pub fn write_reading_list(path: &Path, list: &ReadingList) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(io)?;
    w.write_record(["rank", "doc_id", "score", "passage", "gold"])
        .map_err(io)?;
    for r in &list.rows {
        let passage = r.passage.replace(['\n', '\r', '\t'], " ");
        w.write_record([
            r.rank.to_string(),
            r.doc_id.clone(),
            format!("{:?}", r.score),
            passage,
            r.gold.map_or_else(String::new, |g| u8::from(g).to_string()),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
