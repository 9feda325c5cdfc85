//! Ranked-retrieval metrics: recall after reading a proportion of the
//! ranking, average precision, and grouped means of AP.
//!
//! Reading a proportion `p` of `n` ranked documents means reading the top
//! `ceil(p * n)` of them, so any `p > 0` reads at least one document.
//! Average precision is the mean, over positive documents, of precision at
//! the rank where each positive appears (no interpolation).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::{RankConfig, Ranking};

/// Slack absorbed when `p * n` lands a rounding error above an integer.
const READ_EPSILON: f64 = 1e-9;

/// Proportions reported as columns of the metrics export.
pub const REPORTED_PROPORTIONS: [f64; 5] = [0.05, 0.10, 0.20, 0.30, 0.50];

/// Number of documents read for proportion `p` of `n`.
pub fn docs_to_read(p: f64, n: usize) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProportion(p));
    }
    let m = (p * n as f64 - READ_EPSILON).ceil().max(1.0) as usize;
    Ok(m.min(n))
}

/// Recall over a relevance vector (top first) after reading proportion `p`.
pub fn recall_at_relevance(relevance: &[bool], p: f64) -> Result<f64> {
    let positives = relevance.iter().filter(|&&r| r).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let m = docs_to_read(p, relevance.len())?;
    let found = relevance[..m].iter().filter(|&&r| r).count();
    Ok(found as f64 / positives as f64)
}

pub fn recall_at(ranking: &Ranking, labels: &HashMap<String, bool>, p: f64) -> Result<f64> {
    recall_at_relevance(&ranking.relevance(labels)?, p)
}

/// Average precision over a relevance vector, top first.
pub fn average_precision_relevance(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &r) in relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoPositives);
    }
    Ok(sum / hits as f64)
}

/// Expected AP of a uniformly random ranking of `n` documents with
/// `positives` relevant ones: `(H_n + (P-1)/(n-1) * (n - H_n)) / n`.
pub fn expected_random_ap(n: usize, positives: usize) -> f64 {
    assert!(positives >= 1 && positives <= n);
    let harmonic: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    if n == 1 {
        return 1.0;
    }
    let rest = (positives - 1) as f64 / (n - 1) as f64;
    (harmonic + rest * (n as f64 - harmonic)) / n as f64
}

/// Default grid 1%, 2%, ..., 100%.
pub fn default_grid() -> Vec<f64> {
    (1..=100).map(|k| k as f64 / 100.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty()
        || grid.iter().any(|&p| !(p > 0.0 && p <= 1.0))
        || grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidGrid);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub config: RankConfig,
    /// (proportion read, recall) pairs.
    pub points: Vec<(f64, f64)>,
    pub n_docs: usize,
    pub n_positives: usize,
}

pub fn recall_curve_relevance(
    config: RankConfig,
    relevance: &[bool],
    grid: &[f64],
) -> Result<RecallCurve> {
    check_grid(grid)?;
    let n_positives = relevance.iter().filter(|&&r| r).count();
    if n_positives == 0 {
        return Err(Error::NoPositives);
    }
    // cumulative hits so each grid point is O(1)
    let mut cumulative = Vec::with_capacity(relevance.len() + 1);
    cumulative.push(0usize);
    for &r in relevance {
        cumulative.push(cumulative.last().unwrap() + usize::from(r));
    }
    let points = grid
        .iter()
        .map(|&p| {
            let m = docs_to_read(p, relevance.len())?;
            Ok((p, cumulative[m] as f64 / n_positives as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RecallCurve {
        config,
        points,
        n_docs: relevance.len(),
        n_positives,
    })
}

pub fn recall_curve(
    ranking: &Ranking,
    labels: &HashMap<String, bool>,
    grid: &[f64],
) -> Result<RecallCurve> {
    recall_curve_relevance(ranking.config.clone(), &ranking.relevance(labels)?, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APResult {
    pub config: RankConfig,
    pub ap: f64,
}

pub fn average_precision(ranking: &Ranking, labels: &HashMap<String, bool>) -> Result<APResult> {
    Ok(APResult {
        config: ranking.config.clone(),
        ap: average_precision_relevance(&ranking.relevance(labels)?)?,
    })
}

/// Configuration dimension used to group AP values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Dataset,
    Task,
    Qtype,
    Granularity,
    Backend,
}

impl Dimension {
    pub fn value(self, config: &RankConfig) -> String {
        match self {
            Dimension::Dataset => config.dataset.clone(),
            Dimension::Task => config.task.clone(),
            Dimension::Qtype => config.qtype.to_string(),
            Dimension::Granularity => config.granularity.to_string(),
            Dimension::Backend => config.backend_id.clone(),
        }
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(Dimension::Dataset),
            "task" => Ok(Dimension::Task),
            "qtype" => Ok(Dimension::Qtype),
            "granularity" => Ok(Dimension::Granularity),
            "backend" => Ok(Dimension::Backend),
            other => Err(Error::BackendConfig(format!("unknown dimension `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    /// Values of the grouping dimensions, in the order requested.
    pub key: Vec<String>,
    pub mean: f64,
    pub count: usize,
}

impl fmt::Display for GroupMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {:.4} (n={})", self.key.join("/"), self.mean, self.count)
    }
}

/// Arithmetic mean of AP within each group sharing the `group_by` values.
pub fn mean_ap(results: &[APResult], group_by: &[Dimension]) -> Result<Vec<GroupMean>> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no AP results to group"));
    }
    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for r in results {
        let key = group_by.iter().map(|d| d.value(&r.config)).collect();
        groups.entry(key).or_default().push(r.ap);
    }
    Ok(groups
        .into_iter()
        .map(|(key, aps)| GroupMean {
            key,
            mean: aps.iter().sum::<f64>() / aps.len() as f64,
            count: aps.len(),
        })
        .collect())
}

/// One row of the metrics export.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub config: RankConfig,
    pub ap: f64,
    /// Recall at [`REPORTED_PROPORTIONS`].
    pub recalls: Vec<f64>,
}

pub fn metrics_row(ranking: &Ranking, labels: &HashMap<String, bool>) -> Result<MetricsRow> {
    let relevance = ranking.relevance(labels)?;
    Ok(MetricsRow {
        config: ranking.config.clone(),
        ap: average_precision_relevance(&relevance)?,
        recalls: REPORTED_PROPORTIONS
            .iter()
            .map(|&p| recall_at_relevance(&relevance, p))
            .collect::<Result<_>>()?,
    })
}

fn percent_label(p: f64) -> String {
    format!("recall@{}%", (p * 100.0).round() as u32)
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().delimiter(b'\t').from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Tab-separated metrics with full-precision values.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    let mut header: Vec<String> = ["dataset", "task", "qtype", "granularity", "backend", "ap"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(REPORTED_PROPORTIONS.iter().map(|&p| percent_label(p)));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        let c = &row.config;
        let mut rec = vec![
            c.dataset.clone(),
            c.task.clone(),
            c.qtype.to_string(),
            c.granularity.to_string(),
            c.backend_id.clone(),
            format!("{:?}", row.ap),
        ];
        rec.extend(row.recalls.iter().map(|r| format!("{r:?}")));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let display = path.display().to_string();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let malformed = |msg: String| Error::MalformedRecord {
            path: display.clone(),
            line: i + 2,
            msg,
        };
        if rec.len() != 6 + REPORTED_PROPORTIONS.len() {
            return Err(malformed(format!("expected {} columns", 6 + REPORTED_PROPORTIONS.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| malformed(format!("`{s}` is not a number")));
        rows.push(MetricsRow {
            config: RankConfig {
                dataset: rec[0].to_string(),
                task: rec[1].to_string(),
                qtype: rec[2].parse()?,
                granularity: rec[3].parse()?,
                backend_id: rec[4].to_string(),
            },
            ap: num(&rec[5])?,
            recalls: rec.iter().skip(6).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Long-format curve export: one `(config, p, recall)` row per point.
pub fn write_curves(path: &Path, curves: &[RecallCurve]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    w.write_record(["dataset", "task", "qtype", "granularity", "backend", "p", "recall"])
        .map_err(|e| csv_err(path, e))?;
    for curve in curves {
        let c = &curve.config;
        for &(p, r) in &curve.points {
            w.write_record([
                c.dataset.as_str(),
                c.task.as_str(),
                c.qtype.as_str(),
                c.granularity.as_str(),
                c.backend_id.as_str(),
                &format!("{p:?}"),
                &format!("{r:?}"),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a curve export back. Document and positive counts are not part of
/// the format and come back as zero.
pub fn read_curves(path: &Path) -> Result<Vec<RecallCurve>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let display = path.display().to_string();
    let mut curves: Vec<RecallCurve> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let malformed = |msg: String| Error::MalformedRecord {
            path: display.clone(),
            line: i + 2,
            msg,
        };
        if rec.len() != 7 {
            return Err(malformed("expected 7 columns".into()));
        }
        let config = RankConfig {
            dataset: rec[0].to_string(),
            task: rec[1].to_string(),
            qtype: rec[2].parse()?,
            granularity: rec[3].parse()?,
            backend_id: rec[4].to_string(),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| malformed(format!("`{s}` is not a number")));
        let point = (num(&rec[5])?, num(&rec[6])?);
        match curves.last_mut() {
            Some(last) if last.config == config => last.points.push(point),
            _ => curves.push(RecallCurve {
                config,
                points: vec![point],
                n_docs: 0,
                n_positives: 0,
            }),
        }
    }
    Ok(curves)
}
